//! Synthetic streams, shingling, and the evaluation report.

use driftwatch::dto::{Decision, Detector, Verdict};
use driftwatch::ingest::{evaluate, shingle, synth_stream, DriftKind, DriftSpec, DEFAULT_SHINGLE_WIDTH};
use proptest::prelude::*;

/// Smallest and largest counts inside the central 99% of Binomial(n, p),
/// from the exact mass function.
fn binomial_99(n: usize, p: f64) -> (usize, usize) {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, n);
    for k in 0..=n {
        cdf += pmf;
        if lo.is_none() && cdf > 0.005 {
            lo = Some(k);
        }
        if cdf >= 0.995 {
            hi = k;
            break;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    (lo.unwrap(), hi)
}

#[test]
fn anomaly_count_is_binomial() {
    let (lo, hi) = binomial_99(10_000, 0.01);
    assert!(lo > 70 && hi < 130, "interval [{lo}, {hi}]");
    for seed in 0..10 {
        let spec = DriftSpec::random(DriftKind::Abrupt, 10_000, 5, 2, 0.01, seed);
        let s = synth_stream(&spec, seed).unwrap();
        let count = s.labels.unwrap().iter().filter(|&&l| l == 1).count();
        assert!((lo..=hi).contains(&count), "seed {seed}: {count} outside [{lo}, {hi}]");
    }
}

#[test]
fn anomalies_leave_the_three_sigma_box() {
    let spec = DriftSpec::random(DriftKind::Abrupt, 4000, 5, 2, 0.05, 1);
    let s = synth_stream(&spec, 2).unwrap();
    let ids = s.concept_ids.clone().unwrap();
    for ((x, &l), &c) in s.instances.iter().zip(s.labels.as_ref().unwrap()).zip(&ids) {
        if l == 1 {
            let concept = &spec.concepts[c];
            let sd = concept.marginal_std();
            assert!(x.iter().zip(&concept.mean).zip(&sd).any(|((v, m), s)| (v - m).abs() > 3.0 * s));
        }
    }
}

#[test]
fn clean_streams_carry_one_marker_per_change() {
    for k in 2..=4 {
        let spec = DriftSpec::random(DriftKind::Abrupt, 3000, 4, k, 0.0, 5);
        let s = synth_stream(&spec, 6).unwrap();
        assert!(s.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert_eq!(s.meta.drift_markers.len(), k - 1);
        assert!(s.meta.drift_markers.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn seeded_generation_is_deterministic() {
    let spec = DriftSpec::random(DriftKind::Gradual, 2000, 4, 3, 0.02, 7);
    assert_eq!(synth_stream(&spec, 8).unwrap(), synth_stream(&spec, 8).unwrap());
    assert_ne!(synth_stream(&spec, 8).unwrap(), synth_stream(&spec, 9).unwrap());
}

#[test]
fn recurrent_streams_revisit_a_concept() {
    for seed in 0..5 {
        let spec = DriftSpec::random(DriftKind::Recurrent, 3000, 4, 3, 0.0, seed);
        let ids = synth_stream(&spec, seed).unwrap().concept_ids.unwrap();
        let mut seen = vec![ids[0]];
        let mut repeated = false;
        for w in ids.windows(2) {
            if w[0] != w[1] {
                repeated |= seen.contains(&w[1]);
                seen.push(w[1]);
            }
        }
        assert!(repeated, "seed {seed}");
    }
}

#[test]
fn default_shingle_width_gives_ten_features() {
    let series: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
    let s = shingle(&series, None, DEFAULT_SHINGLE_WIDTH).unwrap();
    assert_eq!(s.dim(), 10);
    assert_eq!(s.len(), 41);
}

#[test]
fn point_anomaly_marks_every_covering_window() {
    let mut labels = vec![0u8; 12];
    labels[5] = 1;
    let s = shingle(&[0.0; 12], Some(&labels), 3).unwrap();
    let hot: Vec<usize> = s.labels.unwrap().iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![3, 4, 5]);
}

proptest! {
    #[test]
    fn shingles_count_and_recover_the_series(series in proptest::collection::vec(-1e3f64..1e3, 2..80), w in 2usize..12) {
        prop_assume!(w <= series.len());
        let s = shingle(&series, None, w).unwrap();
        prop_assert_eq!(s.len(), series.len() - w + 1);
        let col0: Vec<f64> = s.instances.iter().map(|r| r[0]).collect();
        prop_assert_eq!(&col0[..], &series[..series.len() - w + 1]);
    }
}

fn verdict(index: usize, score: f64) -> Verdict {
    Verdict {
        index: index as u64,
        score,
        recon_error: score,
        uncertainty: 0.0,
        threshold: 0.5,
        decision: if score > 0.5 { Decision::Anomaly } else { Decision::Normal },
        detector: Detector::Static,
        model_version: 0,
        shift_norm: None,
    }
}

#[test]
fn perfect_detector_and_single_window() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
    let vs: Vec<Verdict> = labels.iter().enumerate().map(|(i, &l)| verdict(i, if l == 1 { 0.9 } else { 0.1 })).collect();
    let rep = evaluate(&vs, &labels, 100, &[]).unwrap();
    assert_eq!(rep.global.aucroc, Some(1.0));
    assert_eq!(rep.global.decision_fpr, Some(0.0));
    assert_eq!(rep.windows.len(), 1);
    assert_eq!(rep.windows[0].aucroc, rep.global.aucroc);
}

#[test]
fn single_class_windows_report_null() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i == 99)).collect();
    let vs: Vec<Verdict> = (0..100).map(|i| verdict(i, i as f64 / 100.0)).collect();
    let rep = evaluate(&vs, &labels, 50, &[50]).unwrap();
    assert_eq!(rep.windows.len(), 2);
    assert_eq!(rep.windows[0].aucroc, None);
    assert_eq!(rep.windows[1].aucroc, Some(1.0));
    assert_eq!(rep.drift_markers, vec![50]);
    assert!(evaluate(&vs, &labels[..10], 50, &[]).is_err());
}
