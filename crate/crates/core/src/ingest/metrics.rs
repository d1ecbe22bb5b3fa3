use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dto::{Detector, Verdict};
use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dim {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Rank-statistic AUC; a tied positive/negative pair counts one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC-ROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (R_t − R_{t−1}) P_t` over distinct score
/// thresholds in decreasing order.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub aucroc: Option<f64>,
    pub aucpr: Option<f64>,
    /// Rates when the final threshold is applied to every score.
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    /// Rates of the decisions actually emitted online.
    pub decision_fpr: Option<f64>,
    pub decision_fnr: Option<f64>,
    pub dynamic_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub start: usize,
    /// `None` when the window holds a single class.
    pub aucroc: Option<f64>,
    pub mean_uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub global: GlobalMetrics,
    pub windows: Vec<WindowMetrics>,
    pub drift_markers: Vec<usize>,
    /// Set when every dynamically scored instance received the same shift
    /// magnitude, i.e. the shift generator ignores its input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_collapse: Option<bool>,
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn evaluate(verdicts: &[Verdict], labels: &[u8], window: usize, drift_markers: &[usize]) -> Result<EvalReport> {
    if verdicts.len() != labels.len() {
        return Err(Error::Dim {
            expected: verdicts.len(),
            actual: labels.len(),
        });
    }
    if verdicts.is_empty() {
        return Err(Error::Empty("no verdicts to evaluate".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("evaluation window must be positive".into()));
    }
    let scores: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    let final_threshold = verdicts.last().map_or(f64::INFINITY, |v| v.threshold);
    let count = |f: &dyn Fn(&Verdict, u8) -> bool| verdicts.iter().zip(labels).filter(|(v, &l)| f(v, l)).count();
    let global = GlobalMetrics {
        aucroc: auc_roc(&scores, labels).ok(),
        aucpr: auc_pr(&scores, labels).ok(),
        fpr: rate(count(&|v, l| l == 0 && v.score > final_threshold), neg),
        fnr: rate(count(&|v, l| l != 0 && v.score <= final_threshold), pos),
        decision_fpr: rate(count(&|v, l| l == 0 && v.is_anomaly()), neg),
        decision_fnr: rate(count(&|v, l| l != 0 && !v.is_anomaly()), pos),
        dynamic_fraction: count(&|v, _| v.detector == Detector::Dynamic) as f64 / verdicts.len() as f64,
    };
    let windows = (0..verdicts.len())
        .step_by(window)
        .map(|start| {
            let end = (start + window).min(verdicts.len());
            let slice = &verdicts[start..end];
            WindowMetrics {
                start,
                aucroc: auc_roc(&scores[start..end], &labels[start..end]).ok(),
                mean_uncertainty: slice.iter().map(|v| v.uncertainty).sum::<f64>() / slice.len() as f64,
            }
        })
        .collect();
    let norms: Vec<f64> = verdicts
        .iter()
        .filter(|v| v.detector == Detector::Dynamic)
        .filter_map(|v| v.shift_norm)
        .collect();
    let shift_collapse = (norms.len() >= 2).then(|| {
        let (lo, hi) = norms
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo <= 1e-9 * hi.abs().max(1.0)
    });
    Ok(EvalReport {
        global,
        windows,
        drift_markers: drift_markers.to_vec(),
        shift_collapse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(auc_roc(&[0.5, 0.5], &[1, 1]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(auc_pr(&[0.9, 0.2, 0.1], &[1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
        assert!(auc_pr(&[0.9, 0.1], &[0, 0]).is_err());
    }
}
