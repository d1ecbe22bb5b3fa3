//! Two-stage training, per-instance scoring with uncertainty routing, and
//! uncertainty-triggered offline updates.

mod stream;

use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{ModelContainer, Persist};
use crate::dsd::{DsdConfig, DsdTrainer, Hypernetwork};
use crate::dto::{Decision, Detector, DtoConfig, ThresholdState, Verdict};
use crate::error::{Error, Result};
use crate::iec::{
    check_both_classes, concept_uncertainty, exposure_points, pseudo_label, resolve_mu_p, EvidentialClassifier, IecConfig, IecTrainer,
    PseudoLabel,
};
use crate::nn::Params;
use crate::scalar::Real;
use crate::scd::{fit_autoencoder, train_scd, Autoencoder, ScdConfig, Standardizer};

pub use stream::{offline_update_check, RunSummary, StreamRunner, UpdateMonitor, Updater};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scd: ScdConfig,
    pub iec: IecConfig,
    pub dsd: DsdConfig,
    pub dto: DtoConfig,
    /// Fraction of training rows labelled Positive by the error threshold.
    pub mu_p_proportion: f64,
    /// Uncertainty above which an instance is Unknown and routed to the
    /// dynamic detector.
    pub mu_e: f64,
    pub label_passes: usize,
    /// Update trigger mass as a fraction of the normal-window size.
    pub mu_o_frac: f64,
    /// Instances since the last update that force a new one.
    pub t_max: u64,
    /// Uncertainty value counted as one unit of trigger mass. `None` uses
    /// the uncertainty of the flat opinion `α = (1, 1)`, the largest value
    /// the classifier can produce.
    pub uncertainty_unit: Option<f64>,
    /// Fraction of a stream used as historical training data.
    pub history_ratio: f64,
    /// Recent raw instances kept for offline updates.
    pub update_buffer: usize,
    /// Keep only instances decided normal in the update buffer.
    pub buffer_normal_only: bool,
    pub update_epochs: usize,
    /// Instances scored by the old bundle while an update trains.
    pub swap_lag: u64,
    /// Retrain from scratch on the buffer instead of fine-tuning.
    pub full_retrain: bool,
    pub emit_shift_norm: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scd: ScdConfig::default(),
            iec: IecConfig::default(),
            dsd: DsdConfig::default(),
            dto: DtoConfig::default(),
            mu_p_proportion: 0.15,
            mu_e: 0.03,
            label_passes: 2,
            mu_o_frac: 0.3,
            t_max: 10_000,
            uncertainty_unit: None,
            history_ratio: 0.2,
            update_buffer: 1024,
            buffer_normal_only: false,
            update_epochs: 30,
            swap_lag: 64,
            full_retrain: false,
            emit_shift_norm: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Range checks. Bounds follow the searched ranges where known and
    /// otherwise only exclude values the algorithms cannot run with.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.dto.validate()?;
        let within = |name: &str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [{lo}, {hi}], got {v}")))
            }
        };
        within("mu_p_proportion", self.mu_p_proportion, 0.01, 0.5)?;
        within("mu_e", self.mu_e, 0.0, 0.19)?;
        within("mu_o_frac", self.mu_o_frac, 0.1, 1.0)?;
        within("history_ratio", self.history_ratio, 0.1, 0.8)?;
        within("iec.gamma", self.iec.gamma, 0.0, 10.0)?;
        within("iec.exposure_weight", self.iec.exposure_weight, 0.0, 10.0)?;
        within("iec.exposure_scale", self.iec.exposure_scale, 0.01, 100.0)?;
        within("scd.variance_threshold", self.scd.variance_threshold, 0.01, 1.0)?;
        within("dsd.static_lr_scale", self.dsd.static_lr_scale, 0.0, 1.0)?;
        for (name, a) in [("scd", &self.scd.adam), ("iec", &self.iec.adam), ("dsd", &self.dsd.adam)] {
            within(&format!("{name}.lr"), a.lr, 1e-4, 1.0)?;
            within(&format!("{name}.decay"), a.decay, 0.5, 1.0)?;
            within(&format!("{name}.beta1"), a.beta1, 0.0, 0.9999)?;
            within(&format!("{name}.beta2"), a.beta2, 0.0, 0.999999)?;
            within(&format!("{name}.eps"), a.eps, 1e-16, 1e-2)?;
        }
        if let Some(u) = self.uncertainty_unit {
            if !(u > 0.0 && u.is_finite()) {
                return bad(format!("uncertainty_unit must be > 0, got {u}"));
            }
        }
        if self.label_passes == 0 {
            return bad("label_passes must be >= 1".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be >= 1".into());
        }
        if self.update_buffer < 2 {
            return bad("update_buffer must hold at least 2 instances".into());
        }
        if self.scd.latent_dim == Some(0) {
            return bad("scd.latent_dim must be positive".into());
        }
        for (name, v) in [
            ("scd.encoder_layers", self.scd.encoder_layers),
            ("scd.epochs", self.scd.epochs),
            ("scd.batch_size", self.scd.batch_size),
            ("iec.epochs", self.iec.epochs),
            ("iec.batch_size", self.iec.batch_size),
            ("dsd.embed_dim", self.dsd.embed_dim),
            ("dsd.epochs", self.dsd.epochs),
            ("dsd.batch_size", self.dsd.batch_size),
            ("update_epochs", self.update_epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.iec.hidden.contains(&0) || self.dsd.shared_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// Accumulated uncertainty that triggers an offline update.
    pub fn update_mass_threshold(&self) -> f64 {
        let unit = self
            .uncertainty_unit
            .unwrap_or_else(|| concept_uncertainty(&[1.0f64, 1.0]).unwrap_or(1.0));
        self.mu_o_frac * self.dto.normal_window as f64 * unit
    }

    /// Number of leading rows used for training.
    pub fn history_len(&self, n: usize) -> usize {
        ((n as f64) * self.history_ratio).floor() as usize
    }
}

/// Everything needed to score a stream. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub standardizer: Standardizer,
    pub scd: Autoencoder<T>,
    pub iec: EvidentialClassifier<T>,
    pub dsd: Hypernetwork<T>,
    pub mu_p: f64,
    pub mu_e: f64,
    /// Largest training uncertainty.
    pub mu_t: f64,
    /// Largest training reconstruction error; seeds the pivot.
    pub pivot_init: f64,
    /// Largest training anomaly score; threshold during warm-up.
    pub bootstrap: f64,
    pub version: u64,
}

/// Detector outputs for one instance, before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub recon_error: f64,
    pub uncertainty: f64,
    pub detector: Detector,
    pub shift_norm: Option<f64>,
}

impl<T: Real> ModelBundle<T> {
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dim {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input instance".into()));
        }
        Ok(())
    }

    /// Uncertainty, then reconstruction by the static detector or, when the
    /// uncertainty exceeds `μ_e`, by the shifted one.
    pub fn assess(&self, x: &[f64]) -> Result<Assessment> {
        self.check_input(x)?;
        let z: Vec<T> = self.standardizer.apply(x)?.into_iter().map(T::of).collect();
        self.assess_standardized(&z)
    }

    fn assess_standardized(&self, z: &[T]) -> Result<Assessment> {
        let uncertainty = self.iec.evidential_forward(z)?.uncertainty.as_f64();
        if uncertainty > self.mu_e {
            let shift = self.dsd.generate_shift(z)?;
            let r = self.scd.reconstruct_shifted(&shift.as_refs(), z)?;
            Ok(Assessment {
                recon_error: r.error.as_f64(),
                uncertainty,
                detector: Detector::Dynamic,
                shift_norm: Some(shift.norm().as_f64()),
            })
        } else {
            Ok(Assessment {
                recon_error: self.scd.reconstruct(z)?.error.as_f64(),
                uncertainty,
                detector: Detector::Static,
                shift_norm: None,
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scd.first_non_finite().is_none()
            && self.iec.net.first_non_finite().is_none()
            && self.dsd.first_non_finite().is_none()
            && [self.mu_p, self.mu_t, self.pivot_init, self.bootstrap]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Fresh threshold state seeded from the training calibration.
    pub fn threshold_state(&self, cfg: &DtoConfig) -> Result<ThresholdState> {
        ThresholdState::new(cfg.clone(), self.pivot_init, self.mu_t, self.bootstrap)
    }

    /// Writes `bundle.json`, `scd.json`, `iec.json`, and `dsd.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut c = ModelContainer::new("bundle");
        c.put_vector("standardizer.mean", &self.standardizer.mean);
        c.put_vector("standardizer.std", &self.standardizer.std);
        for (k, v) in [
            ("mu_p", self.mu_p),
            ("mu_e", self.mu_e),
            ("mu_t", self.mu_t),
            ("pivot_init", self.pivot_init),
            ("bootstrap", self.bootstrap),
        ] {
            c.put_scalar(k, v);
        }
        c.meta.insert("model_version".into(), self.version.to_string());
        c.meta.insert("scalar".into(), std::any::type_name::<T>().into());
        c.save(dir.join("bundle.json"))?;
        self.scd.to_container()?.save(dir.join("scd.json"))?;
        self.iec.to_container()?.save(dir.join("iec.json"))?;
        self.dsd.to_container()?.save(dir.join("dsd.json"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let c = ModelContainer::load(dir.join("bundle.json"))?;
        c.expect_role("bundle")?;
        let standardizer = Standardizer {
            mean: c.vector("standardizer.mean")?,
            std: c.vector("standardizer.std")?,
        };
        let version = c
            .meta("model_version")?
            .parse()
            .map_err(|_| Error::Container("bad model_version".into()))?;
        let b = Self {
            scd: Autoencoder::from_container(&ModelContainer::load(dir.join("scd.json"))?)?,
            iec: EvidentialClassifier::from_container(&ModelContainer::load(dir.join("iec.json"))?)?,
            dsd: Hypernetwork::from_container(&ModelContainer::load(dir.join("dsd.json"))?)?,
            mu_p: c.scalar("mu_p")?,
            mu_e: c.scalar("mu_e")?,
            mu_t: c.scalar("mu_t")?,
            pivot_init: c.scalar("pivot_init")?,
            bootstrap: c.scalar("bootstrap")?,
            standardizer,
            version,
        };
        b.validate()?;
        Ok(b)
    }

    /// Cross-component shape checks.
    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        if self.standardizer.std.len() != d || self.standardizer.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Container("invalid standardizer".into()));
        }
        for (what, got) in [("autoencoder", self.scd.input_dim()), ("classifier", self.iec.input_dim())] {
            if got != d {
                return Err(Error::Container(format!("{what} expects {got} features, bundle has {d}")));
            }
        }
        self.dsd.validate_against(&self.scd)
    }
}

/// Score and decision for one instance against the current state, without
/// mutating anything.
pub fn peek_verdict<T: Real>(bundle: &ModelBundle<T>, state: &ThresholdState, x: &[f64], index: u64) -> Result<Verdict> {
    let a = bundle.assess(x)?;
    let score = state.peek_score(a.recon_error, a.uncertainty);
    Ok(make_verdict(bundle, state, a, score, index))
}

fn make_verdict<T>(bundle: &ModelBundle<T>, state: &ThresholdState, a: Assessment, score: f64, index: u64) -> Verdict {
    let threshold = state.current_threshold();
    Verdict {
        index,
        score,
        recon_error: a.recon_error,
        uncertainty: a.uncertainty,
        threshold,
        decision: if score > threshold {
            Decision::Anomaly
        } else {
            Decision::Normal
        },
        detector: a.detector,
        model_version: bundle.version,
        shift_norm: a.shift_norm,
    }
}

/// Scores one instance, folds it into the threshold state and the update
/// monitor, and reports whether an offline update is due.
pub fn score_instance<T: Real>(
    bundle: &ModelBundle<T>,
    state: &mut ThresholdState,
    monitor: &mut UpdateMonitor,
    x: &[f64],
    index: u64,
) -> Result<(Verdict, bool)> {
    let a = bundle.assess(x)?;
    let score = state.score(a.recon_error, a.uncertainty);
    let v = make_verdict(bundle, state, a, score, index);
    state.observe(&v);
    monitor.push(v.uncertainty, bundle.mu_e);
    Ok((v, monitor.should_update()))
}

fn standardize_all<T: Real>(s: &Standardizer, rows: &[Vec<f64>]) -> Result<Vec<Vec<T>>> {
    rows.iter()
        .map(|r| {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training row".into()));
            }
            Ok(s.apply(r)?.into_iter().map(T::of).collect())
        })
        .collect()
}

fn component_rng(seed: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k))
}

/// Trains a bundle on historical rows (raw feature scale).
pub fn train<T: Real>(historical: &[Vec<f64>], cfg: &PipelineConfig) -> Result<ModelBundle<T>> {
    cfg.validate()?;
    if historical.is_empty() {
        return Err(Error::Empty("no historical rows".into()));
    }
    let standardizer = Standardizer::fit(historical)?;
    let data: Vec<Vec<T>> = standardize_all(&standardizer, historical)?;
    let scd_cfg = ScdConfig {
        seed: cfg.seed,
        ..cfg.scd.clone()
    };
    let (scd, _) = train_scd(&data, &scd_cfg)?;
    let mut rng = component_rng(cfg.seed, 1);
    let iec = EvidentialClassifier::random(standardizer.dim(), &cfg.iec.hidden, &mut rng)?;
    let dsd = Hypernetwork::new(&scd, &cfg.dsd, &mut rng)?;
    let mut bundle = ModelBundle {
        standardizer,
        scd,
        iec,
        dsd,
        mu_p: 0.0,
        mu_e: cfg.mu_e,
        mu_t: 0.0,
        pivot_init: 0.0,
        bootstrap: 0.0,
        version: 0,
    };
    fit_second_stage(&mut bundle, &data, cfg, cfg.iec.epochs, cfg.dsd.epochs, &mut rng)?;
    calibrate(&mut bundle, &data, &cfg.dto)?;
    Ok(bundle)
}

fn probes_for<T: Real, R: Rng + ?Sized>(chunk: &[usize], data: &[Vec<T>], cfg: &IecConfig, rng: &mut R) -> Vec<Vec<T>> {
    if cfg.exposure_weight <= 0.0 {
        return Vec::new();
    }
    let rows: Vec<&[T]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
    exposure_points(&rows, cfg.exposure_scale, rng)
}

/// Pseudo-labels from the static detector, classifier training, then the
/// interleaved classifier fine-tune and hypernetwork fit.
fn fit_second_stage<T: Real, R: Rng + ?Sized>(
    b: &mut ModelBundle<T>,
    data: &[Vec<T>],
    cfg: &PipelineConfig,
    iec_epochs: usize,
    dsd_epochs: usize,
    rng: &mut R,
) -> Result<()> {
    let errors: Vec<T> = data
        .iter()
        .map(|x| b.scd.reconstruct(x).map(|r| r.error))
        .collect::<Result<_>>()?;
    let mu_p = resolve_mu_p(&errors, cfg.mu_p_proportion)?;
    b.mu_p = mu_p.as_f64();
    let mu_e = T::of(cfg.mu_e);
    let zero = T::zero();

    let pass1: Vec<PseudoLabel> = errors.iter().map(|&e| pseudo_label(e, zero, mu_p, mu_e)).collect();
    let labeled: Vec<(Vec<T>, PseudoLabel)> = data.iter().cloned().zip(pass1.iter().copied()).collect();
    check_both_classes(&labeled)?;
    let batch = cfg.iec.batch_size.max(1);
    let mut iec_trainer = IecTrainer::new(&b.iec, cfg.iec.gamma, cfg.iec.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..iec_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            iec_trainer.step(&mut b.iec, chunk.iter().map(|&i| (data[i].as_slice(), pass1[i])))?;
        }
        iec_trainer.end_epoch();
    }

    let mut dsd_trainer = DsdTrainer::new(&b.scd, &b.dsd, &cfg.dsd);
    for pass in 2..=cfg.label_passes.max(1) {
        let labels: Vec<PseudoLabel> = data
            .iter()
            .zip(&errors)
            .map(|(x, &e)| Ok(pseudo_label(e, b.iec.evidential_forward(x)?.uncertainty, mu_p, mu_e)))
            .collect::<Result<_>>()?;
        let pos = labels.iter().filter(|l| **l == PseudoLabel::Positive).count();
        let neg = labels.iter().filter(|l| **l == PseudoLabel::Negative).count();
        let fine_tune = pos > 0 && neg > 0;
        if !fine_tune {
            warn!("pass {pass} pseudo-labels hold {pos} positive and {neg} negative rows; classifier fine-tune skipped");
        }
        let last = pass == cfg.label_passes;
        let mut iec_trainer = IecTrainer::new(&b.iec, cfg.iec.gamma, cfg.iec.adam);
        let epochs = if last { dsd_epochs.max(iec_epochs) } else { iec_epochs };
        for epoch in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                if fine_tune && epoch < iec_epochs {
                    let probes = probes_for(chunk, data, &cfg.iec, rng);
                    iec_trainer.step_exposed(
                        &mut b.iec,
                        chunk.iter().map(|&i| (data[i].as_slice(), labels[i])),
                        &probes,
                        cfg.iec.exposure_weight,
                    )?;
                }
                if last && epoch < dsd_epochs {
                    dsd_trainer.step(&mut b.scd, &mut b.dsd, chunk.iter().map(|&i| data[i].as_slice()))?;
                }
            }
            iec_trainer.end_epoch();
            if last && epoch < dsd_epochs {
                dsd_trainer.end_epoch();
            }
        }
        debug!("pass {pass}: {pos} positive, {neg} negative, {} unknown", data.len() - pos - neg);
    }
    if cfg.label_passes == 1 {
        for _ in 0..dsd_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.dsd.batch_size.max(1)) {
                dsd_trainer.step(&mut b.scd, &mut b.dsd, chunk.iter().map(|&i| data[i].as_slice()))?;
            }
            dsd_trainer.end_epoch();
        }
    }
    Ok(())
}

/// Sets `μ_t`, the pivot seed, and the warm-up threshold from training rows.
fn calibrate<T: Real>(b: &mut ModelBundle<T>, data: &[Vec<T>], dto: &DtoConfig) -> Result<()> {
    let mut mu_t = 0.0f64;
    let mut pivot = 0.0f64;
    let mut scored = Vec::with_capacity(data.len());
    for x in data {
        let a = b.assess_standardized(x)?;
        mu_t = mu_t.max(a.uncertainty);
        pivot = pivot.max(b.scd.reconstruct(x)?.error.as_f64());
        scored.push(a);
    }
    let bootstrap = scored
        .iter()
        .map(|a| crate::dto::anomaly_score(a.recon_error, a.uncertainty, pivot, dto.lambda).0)
        .fold(0.0f64, f64::max);
    b.mu_t = mu_t;
    b.pivot_init = pivot;
    b.bootstrap = bootstrap;
    Ok(())
}

/// Fine-tunes a copy of `bundle` on recent raw instances (or retrains from
/// scratch when configured). The input bundle is untouched.
pub fn run_offline_update<T: Real>(
    bundle: &ModelBundle<T>,
    recent: &[Vec<f64>],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ModelBundle<T>> {
    if recent.len() < 2 {
        return Err(Error::Update("too few buffered instances".into()));
    }
    let mut next = if cfg.full_retrain {
        let c = PipelineConfig {
            seed,
            ..cfg.clone()
        };
        train(recent, &c).map_err(|e| Error::Update(e.to_string()))?
    } else {
        let mut b = bundle.clone();
        let data: Vec<Vec<T>> = standardize_all(&b.standardizer, recent)?;
        let mut rng = component_rng(seed, 2);
        let run = |b: &mut ModelBundle<T>, rng: &mut ChaCha8Rng| -> Result<()> {
            fit_autoencoder(&mut b.scd, &data, cfg.update_epochs, cfg.scd.batch_size, cfg.scd.adam, rng)?;
            // Exponential evidence has vanishing gradients where logits are
            // strongly negative, so a warm start cannot recover evidence for
            // a region it learned to treat as unfamiliar.
            b.iec = EvidentialClassifier::random(b.input_dim(), &cfg.iec.hidden, rng)?;
            fit_second_stage(b, &data, cfg, cfg.update_epochs, cfg.update_epochs, rng)?;
            calibrate(b, &data, &cfg.dto)
        };
        run(&mut b, &mut rng).map_err(|e| Error::Update(e.to_string()))?;
        b
    };
    next.version = bundle.version + 1;
    if !next.is_finite() {
        return Err(Error::Update("updated bundle has non-finite parameters".into()));
    }
    Ok(next)
}
