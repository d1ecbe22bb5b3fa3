//! Uncertainty-calibrated anomaly scoring and the adaptive decision
//! threshold maintained over two bounded score windows.
//!
//! * `W_N` holds scores of recently accepted normal instances; its
//!   `τ`-quantile is the base threshold.
//! * `W_C` holds scores of uncertain instances that landed close to the base
//!   threshold; their median pulls the threshold via a regulariser.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{empirical_quantile, mad, median};

/// Bound on the calibration exponent.
pub const SCORE_EXPONENT_CAP: f64 = 30.0;

/// `A = R_e · exp(λ U (r_e − R_e))`, with the exponent clamped to
/// `±SCORE_EXPONENT_CAP`. The flag reports whether clamping happened.
pub fn anomaly_score(recon_error: f64, uncertainty: f64, pivot: f64, lambda: f64) -> (f64, bool) {
    if lambda == 0.0 || uncertainty == 0.0 {
        return (recon_error, false);
    }
    let raw = lambda * uncertainty * (pivot - recon_error);
    let exponent = raw.clamp(-SCORE_EXPONENT_CAP, SCORE_EXPONENT_CAP);
    (recon_error * exponent.exp(), exponent != raw)
}

pub fn update_pivot(pivot: f64, recon_error: f64, beta: f64) -> f64 {
    beta * pivot + (1.0 - beta) * recon_error
}

/// Smallest window score whose empirical CDF reaches `q`.
pub fn window_quantile(window: &[f64], q: f64) -> Result<f64> {
    empirical_quantile(window, q)
}

/// Candidate rule for `W_C`: uncertainty above the training maximum and a
/// score inside the closed band `[μ_a⁰ − δ, μ_a⁰ + δ]`.
pub fn admit_candidate(uncertainty: f64, score: f64, mu_t: f64, base_threshold: f64, delta: f64) -> bool {
    uncertainty > mu_t && score >= base_threshold - delta && score <= base_threshold + delta
}

/// `κ (μ_a⁰ − Â_m)`, or zero when there is no candidate median.
pub fn regularizer(base_threshold: f64, candidate_median: Option<f64>, kappa: f64) -> f64 {
    match candidate_median {
        Some(m) => kappa * (base_threshold - m),
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Anomaly,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Static,
    Dynamic,
}

/// Per-instance output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: u64,
    pub score: f64,
    pub recon_error: f64,
    pub uncertainty: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub detector: Detector,
    pub model_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_norm: Option<f64>,
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        self.decision == Decision::Anomaly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtoConfig {
    pub tau: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub ema_beta: f64,
    pub normal_window: usize,
    pub candidate_window: usize,
    pub warmup_min: usize,
}

impl Default for DtoConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            kappa: 0.8,
            lambda: 0.6,
            ema_beta: 0.99,
            normal_window: 64,
            candidate_window: 64,
            warmup_min: 16,
        }
    }
}

impl DtoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return bad(format!("ema_beta must lie in [0, 1], got {}", self.ema_beta));
        }
        if self.normal_window == 0 || self.candidate_window == 0 {
            return bad("window capacities must be positive".into());
        }
        if self.warmup_min == 0 || self.warmup_min > self.normal_window {
            return bad(format!(
                "warmup_min must lie in [1, {}], got {}",
                self.normal_window, self.warmup_min
            ));
        }
        Ok(())
    }
}

/// Streaming threshold state. Owned by a single consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub config: DtoConfig,
    pub pivot: f64,
    /// Largest uncertainty seen on the training set.
    pub mu_t: f64,
    /// Threshold used while `W_N` is warming up: the largest training score.
    pub bootstrap: f64,
    normal: VecDeque<f64>,
    candidates: VecDeque<f64>,
    base: Option<f64>,
    reg: f64,
    delta: f64,
    pub clamp_count: u64,
}

impl ThresholdState {
    pub fn new(config: DtoConfig, pivot: f64, mu_t: f64, bootstrap: f64) -> Result<Self> {
        config.validate()?;
        for (name, v) in [("pivot", pivot), ("mu_t", mu_t), ("bootstrap", bootstrap)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("threshold state {name}")));
            }
        }
        Ok(Self {
            normal: VecDeque::with_capacity(config.normal_window),
            candidates: VecDeque::with_capacity(config.candidate_window),
            config,
            pivot,
            mu_t,
            bootstrap,
            base: None,
            reg: 0.0,
            delta: 0.0,
            clamp_count: 0,
        })
    }

    pub fn normal_window(&self) -> Vec<f64> {
        self.normal.iter().copied().collect()
    }

    pub fn candidate_window(&self) -> Vec<f64> {
        self.candidates.iter().copied().collect()
    }

    pub fn in_warmup(&self) -> bool {
        self.normal.len() < self.config.warmup_min
    }

    /// `μ_a⁰`, once the normal window is past warm-up.
    pub fn base_threshold(&self) -> Option<f64> {
        self.base
    }

    pub fn regularization(&self) -> f64 {
        self.reg
    }

    /// Band half-width for candidate admission (MAD of `W_N`).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `μ_a* = μ_a⁰ + μ_a^r`, or the bootstrap value during warm-up.
    pub fn current_threshold(&self) -> f64 {
        match self.base {
            Some(b) => b + self.reg,
            None => self.bootstrap,
        }
    }

    /// Scores up to this value enter `W_N`. Admitting only scores below the
    /// live threshold would make each refreshed window a truncation of the
    /// previous one and drive the quantile down without bound, so the
    /// bootstrap value acts as a floor.
    pub fn admission_ceiling(&self) -> f64 {
        self.current_threshold().max(self.bootstrap)
    }

    /// Score with the current pivot and `λ`; counts exponent clamps.
    pub fn score(&mut self, recon_error: f64, uncertainty: f64) -> f64 {
        let (a, clamped) = anomaly_score(recon_error, uncertainty, self.pivot, self.config.lambda);
        if clamped {
            self.clamp_count += 1;
            if self.clamp_count.is_power_of_two() {
                warn!("anomaly score exponent clamped ({} times so far)", self.clamp_count);
            }
        }
        a
    }

    /// Score without touching counters.
    pub fn peek_score(&self, recon_error: f64, uncertainty: f64) -> f64 {
        anomaly_score(recon_error, uncertainty, self.pivot, self.config.lambda).0
    }

    pub fn decide(&self, score: f64) -> Decision {
        if score > self.current_threshold() {
            Decision::Anomaly
        } else {
            Decision::Normal
        }
    }

    /// Folds an emitted verdict into the windows, pivot, and threshold.
    /// Returns whether the score entered `W_N`.
    pub fn observe(&mut self, v: &Verdict) -> bool {
        let admitted = v.score <= self.admission_ceiling();
        if admitted {
            push_bounded(&mut self.normal, v.score, self.config.normal_window);
        }
        if let Some(base) = self.base {
            if admit_candidate(v.uncertainty, v.score, self.mu_t, base, self.delta) {
                push_bounded(&mut self.candidates, v.score, self.config.candidate_window);
            }
        }
        self.pivot = update_pivot(self.pivot, v.recon_error, self.config.ema_beta);
        self.refresh();
        admitted
    }

    /// Drops both windows; the threshold falls back to the bootstrap value.
    /// The pivot is kept.
    pub fn reinitialize_on_drift(&mut self) {
        self.normal.clear();
        self.candidates.clear();
        self.refresh();
    }

    pub fn set_bootstrap(&mut self, bootstrap: f64, mu_t: f64) {
        self.bootstrap = bootstrap;
        self.mu_t = mu_t;
        self.refresh();
    }

    fn refresh(&mut self) {
        let w = self.normal_window();
        if w.is_empty() {
            self.delta = 0.0;
        } else {
            self.delta = mad(&w).unwrap_or(0.0);
        }
        if self.in_warmup() {
            self.base = None;
            self.reg = 0.0;
            return;
        }
        let base = window_quantile(&w, self.config.tau).unwrap_or(self.bootstrap);
        let cand = self.candidate_window();
        let m = if cand.is_empty() { None } else { median(&cand).ok() };
        self.base = Some(base);
        self.reg = regularizer(base, m, self.config.kappa);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let st: Self = serde_json::from_str(s)?;
        st.config.validate()?;
        if st.normal.len() > st.config.normal_window || st.candidates.len() > st.config.candidate_window {
            return Err(Error::Config("threshold snapshot windows exceed capacity".into()));
        }
        Ok(st)
    }
}

fn push_bounded(w: &mut VecDeque<f64>, v: f64, cap: usize) {
    if w.len() == cap {
        w.pop_front();
    }
    w.push_back(v);
}
