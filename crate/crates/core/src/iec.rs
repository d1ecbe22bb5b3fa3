//! Evidence controller: a small evidential classifier whose Dirichlet
//! opinion yields predictive probabilities and a mutual-information
//! concept uncertainty, trained on reconstruction-error pseudo-labels.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads, EXP_LOGIT_CAP};
use crate::scalar::Real;
use crate::stats;

/// Digamma function ψ(x) for `x > 0`.
pub fn digamma<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!("digamma needs a finite x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = T::zero();
    let ten = T::of(10.0);
    while x < ten {
        acc = acc - x.recip();
        x = x + T::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // ln x − 1/(2x) − Σ B₂ₖ / (2k x²ᵏ)
    let series = inv2
        * (T::of(1.0 / 12.0)
            - inv2
                * (T::of(1.0 / 120.0)
                    - inv2 * (T::of(1.0 / 252.0) - inv2 * (T::of(1.0 / 240.0) - inv2 * T::of(1.0 / 132.0)))));
    Ok(acc + x.ln() - T::of(0.5) * inv - series)
}

fn check_alpha<T: Real>(alpha: &[T]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::Empty("concentration vector".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > T::zero()) || !a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "concentration parameters must be finite and positive, got {a}"
        )));
    }
    Ok(())
}

/// Expected class probabilities under `Dir(α)`: `α_c / Σα`.
pub fn predictive_prob<T: Real>(alpha: &[T]) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    let s: T = alpha.iter().copied().sum();
    Ok(alpha.iter().map(|&a| a / s).collect())
}

/// Mutual information between the label and the class-probability vector
/// under `Dir(α)`:
/// `Σ p̂_c (ψ(α_c + 1) − ψ(S + 1)) − Σ p̂_c ln p̂_c`, clipped at zero.
pub fn concept_uncertainty<T: Real>(alpha: &[T]) -> Result<T> {
    check_alpha(alpha)?;
    let s: T = alpha.iter().copied().sum();
    let psi_s = digamma(s + T::one())?;
    let mut u = T::zero();
    for &a in alpha {
        let p = a / s;
        u = u + p * (digamma(a + T::one())? - psi_s) - p * p.ln();
    }
    debug_assert!(u > T::of(-1e-9), "mutual information {u} well below zero");
    Ok(u.max(T::zero()))
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Focal evidential loss `(1 − p̂_y)^γ (ln S − ln α_y)`.
pub fn focal_edl_loss<T: Real>(alpha: &[T], label: usize, gamma: T) -> Result<T> {
    check_alpha(alpha)?;
    check_label(label, alpha.len())?;
    let s: T = alpha.iter().copied().sum();
    let nll = s.ln() - alpha[label].ln();
    if gamma == T::zero() {
        return Ok(nll);
    }
    let p = alpha[label] / s;
    Ok((T::one() - p).powf(gamma) * nll)
}

/// Gradient of [`focal_edl_loss`] with respect to `α`.
pub fn focal_edl_grad<T: Real>(alpha: &[T], label: usize, gamma: T) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    check_label(label, alpha.len())?;
    let s: T = alpha.iter().copied().sum();
    let ay = alpha[label];
    let p = ay / s;
    let nll = s.ln() - ay.ln();
    let q = T::one() - p;
    let focal = if gamma == T::zero() { T::one() } else { q.powf(gamma) };
    // d focal / d p = −γ (1 − p)^(γ − 1)
    let dfocal_dp = if gamma == T::zero() || q == T::zero() {
        T::zero()
    } else {
        -gamma * q.powf(gamma - T::one())
    };
    Ok(alpha
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let is_y = if k == label { T::one() } else { T::zero() };
            let dnll = s.recip() - is_y / ay;
            let dp = is_y / s - ay / (s * s);
            dfocal_dp * dp * nll + focal * dnll
        })
        .collect())
}

/// `Σ_k ln α_k`; zero exactly at the flat opinion `α = 1`.
pub fn evidence_penalty<T: Real>(alpha: &[T]) -> Result<T> {
    check_alpha(alpha)?;
    Ok(alpha.iter().map(|a| a.ln()).sum())
}

/// Gradient of [`evidence_penalty`] with respect to `α`.
pub fn evidence_penalty_grad<T: Real>(alpha: &[T]) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    Ok(alpha.iter().map(|a| a.recip()).collect())
}

/// Off-sample probes: each row displaced in a uniformly random direction by
/// a radius drawn from `scale·√d·[0.5, 1.5]`.
pub fn exposure_points<T: Real, R: Rng + ?Sized>(rows: &[&[T]], scale: f64, rng: &mut R) -> Vec<Vec<T>> {
    rows.iter()
        .map(|x| {
            let dir: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = scale * (x.len() as f64).sqrt() * rng.random_range(0.5..1.5);
            x.iter()
                .zip(&dir)
                .map(|(&v, &u)| v + T::of(radius * u / norm))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PseudoLabel {
    Positive,
    Negative,
    Unknown,
}

impl PseudoLabel {
    /// Class index used by the classifier: Negative = 0, Positive = 1.
    pub fn class(self) -> Option<usize> {
        match self {
            PseudoLabel::Negative => Some(0),
            PseudoLabel::Positive => Some(1),
            PseudoLabel::Unknown => None,
        }
    }
}

/// Unknown when the controller is unsure; otherwise Positive for poorly
/// reconstructed inputs (`recon_err > μ_p`), Negative for the rest.
pub fn pseudo_label<T: Real>(recon_err: T, uncertainty: T, mu_p: T, mu_e: T) -> PseudoLabel {
    if uncertainty > mu_e {
        PseudoLabel::Unknown
    } else if recon_err > mu_p {
        PseudoLabel::Positive
    } else {
        PseudoLabel::Negative
    }
}

/// The `(1 − proportion)` empirical quantile of training errors, so that
/// roughly `proportion` of them label Positive.
pub fn resolve_mu_p<T: Real>(train_errors: &[T], proportion: f64) -> Result<T> {
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pseudo-label proportion must be in (0, 1), got {proportion}"
        )));
    }
    stats::empirical_quantile(train_errors, 1.0 - proportion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOpinion<T> {
    pub alpha: Vec<T>,
    pub strength: T,
    pub prob: Vec<T>,
    pub uncertainty: T,
    /// Some logit hit the evidence cap.
    pub clamped: bool,
}

impl<T: Real> DirichletOpinion<T> {
    pub fn from_alpha(alpha: Vec<T>) -> Result<Self> {
        let prob = predictive_prob(&alpha)?;
        let uncertainty = concept_uncertainty(&alpha)?;
        let strength = alpha.iter().copied().sum();
        Ok(Self {
            alpha,
            strength,
            prob,
            uncertainty,
            clamped: false,
        })
    }
}

/// Two-class evidential classifier; `α = exp(logits) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidentialClassifier<T> {
    pub net: Mlp<T>,
}

impl<T: Real> EvidentialClassifier<T> {
    pub fn new(net: Mlp<T>) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(Error::Shape(format!(
                "evidence head must emit 2 values, got {}",
                net.output_dim()
            )));
        }
        if net.layers()[net.depth() - 1].activation != Activation::Exponential {
            return Err(Error::InvalidArgument("evidence head must be exponential".into()));
        }
        Ok(Self { net })
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden);
        Self::new(Mlp::glorot(&dims, Activation::Relu, Activation::Exponential, rng)?)
    }

    /// All-zero parameters: evidence 1 for both classes everywhere.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden);
        Self::new(Mlp::zeros(&dims, Activation::Relu, Activation::Exponential)?)
    }

    fn dims(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn evidential_forward(&self, x: &[T]) -> Result<DirichletOpinion<T>> {
        let (evidence, tape) = self.net.forward(x)?;
        let cap = T::of(EXP_LOGIT_CAP);
        let clamped = tape
            .pre_activation(self.net.depth() - 1)
            .iter()
            .any(|&z| z >= cap);
        let alpha = evidence.into_iter().map(|e| e + T::one()).collect();
        let mut op = DirichletOpinion::from_alpha(alpha)?;
        op.clamped = clamped;
        Ok(op)
    }

    /// Mean focal loss over labelled rows (Unknown rows are skipped).
    pub fn mean_loss(&self, rows: &[(Vec<T>, PseudoLabel)], gamma: T) -> Result<T> {
        let mut sum = T::zero();
        let mut n = 0usize;
        for (x, label) in rows {
            if let Some(c) = label.class() {
                let op = self.evidential_forward(x)?;
                sum = sum + focal_edl_loss(&op.alpha, c, gamma)?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("no labelled rows".into()));
        }
        Ok(sum / T::of(n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IecConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the evidence penalty on off-sample probes; 0 disables it.
    pub exposure_weight: f64,
    /// Probe displacement in standardised units per `√d`.
    pub exposure_scale: f64,
}

impl Default for IecConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            gamma: 2.0,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            exposure_weight: 0.05,
            exposure_scale: 2.0,
        }
    }
}

/// Focal evidential loss of one labelled instance; accumulates `scale ·`
/// its gradient into `grads`.
pub fn evidential_loss_and_grads<T: Real>(
    clf: &EvidentialClassifier<T>,
    x: &[T],
    label: usize,
    gamma: T,
    scale: T,
    grads: &mut MlpGrads<T>,
) -> Result<T> {
    let (evidence, tape) = clf.net.forward(x)?;
    let alpha: Vec<T> = evidence.iter().map(|&e| e + T::one()).collect();
    let loss = focal_edl_loss(&alpha, label, gamma)?;
    let g: Vec<T> = focal_edl_grad(&alpha, label, gamma)?.into_iter().map(|v| v * scale).collect();
    clf.net.backward_into(&tape, &g, grads)?;
    Ok(loss)
}

/// `scale ·` the evidence penalty of one probe, with its gradient
/// accumulated into `grads`.
pub fn penalty_loss_and_grads<T: Real>(clf: &EvidentialClassifier<T>, x: &[T], scale: T, grads: &mut MlpGrads<T>) -> Result<T> {
    let (evidence, tape) = clf.net.forward(x)?;
    let alpha: Vec<T> = evidence.iter().map(|&e| e + T::one()).collect();
    let g: Vec<T> = evidence_penalty_grad(&alpha)?.into_iter().map(|v| v * scale).collect();
    clf.net.backward_into(&tape, &g, grads)?;
    Ok(scale * evidence_penalty(&alpha)?)
}

/// Optimiser state for incremental classifier training.
pub struct IecTrainer<T> {
    state: AdamState<T>,
    grads: MlpGrads<T>,
    gamma: T,
}

impl<T: Real> IecTrainer<T> {
    pub fn new(clf: &EvidentialClassifier<T>, gamma: f64, adam: AdamConfig) -> Self {
        Self {
            state: AdamState::new(&clf.net, adam),
            grads: MlpGrads::zeros_like(&clf.net),
            gamma: T::of(gamma),
        }
    }

    /// One Adam step on the mean focal loss of `batch`; Unknown rows are
    /// ignored. Returns the summed loss of the labelled rows.
    pub fn step<'a, I>(&mut self, clf: &mut EvidentialClassifier<T>, batch: I) -> Result<T>
    where
        I: IntoIterator<Item = (&'a [T], PseudoLabel)>,
        T: 'a,
    {
        self.step_exposed(clf, batch, &[], 0.0)
    }

    /// As [`IecTrainer::step`], adding `weight ×` the mean evidence penalty
    /// over `probes`.
    pub fn step_exposed<'a, I>(
        &mut self,
        clf: &mut EvidentialClassifier<T>,
        batch: I,
        probes: &[Vec<T>],
        weight: f64,
    ) -> Result<T>
    where
        I: IntoIterator<Item = (&'a [T], PseudoLabel)>,
        T: 'a,
    {
        self.grads.clear();
        let mut total = T::zero();
        let mut n = 0usize;
        for (x, label) in batch {
            let Some(c) = label.class() else { continue };
            let loss = evidential_loss_and_grads(clf, x, c, self.gamma, T::one(), &mut self.grads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged("non-finite evidential loss".into()));
            }
            total = total + loss;
            n += 1;
        }
        if n == 0 {
            return Ok(total);
        }
        self.grads.scale(T::one() / T::of(n as f64));
        if weight > 0.0 && !probes.is_empty() {
            let scale = T::of(weight / probes.len() as f64);
            for x in probes {
                penalty_loss_and_grads(clf, x, scale, &mut self.grads)?;
            }
        }
        adam_step(&mut clf.net, &self.grads, &mut self.state)?;
        Ok(total)
    }

    pub fn end_epoch(&mut self) {
        self.state.end_epoch();
    }
}

/// Rejects label sets missing either class.
pub fn check_both_classes<T>(labeled: &[(Vec<T>, PseudoLabel)]) -> Result<()> {
    let pos = labeled.iter().filter(|(_, l)| *l == PseudoLabel::Positive).count();
    let neg = labeled.iter().filter(|(_, l)| *l == PseudoLabel::Negative).count();
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positive, {neg} negative")));
    }
    Ok(())
}

/// Minibatch training on pseudo-labelled rows. Returns per-epoch mean loss.
pub fn train_iec<T: Real, R: Rng + ?Sized>(
    clf: &mut EvidentialClassifier<T>,
    labeled: &[(Vec<T>, PseudoLabel)],
    cfg: &IecConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    let rows: Vec<&(Vec<T>, PseudoLabel)> = labeled
        .iter()
        .filter(|(_, l)| *l != PseudoLabel::Unknown)
        .collect();
    let known: Vec<(Vec<T>, PseudoLabel)> = rows.iter().map(|r| (*r).clone()).collect();
    check_both_classes(&known)?;
    let mut trainer = IecTrainer::new(clf, cfg.gamma, cfg.adam);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = T::zero();
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let probes = if cfg.exposure_weight > 0.0 {
                let xs: Vec<&[T]> = chunk.iter().map(|&i| rows[i].0.as_slice()).collect();
                exposure_points(&xs, cfg.exposure_scale, rng)
            } else {
                Vec::new()
            };
            sum = sum
                + trainer.step_exposed(
                    clf,
                    chunk.iter().map(|&i| (rows[i].0.as_slice(), rows[i].1)),
                    &probes,
                    cfg.exposure_weight,
                )?;
        }
        trainer.end_epoch();
        history.push(sum / T::of(rows.len() as f64));
    }
    Ok(history)
}
