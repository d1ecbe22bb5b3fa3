//! Static detector: an autoencoder fitted to historical data whose
//! reconstruction error is the base anomaly signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Matrix, Mlp, MlpGrads, Params, Tape};
use crate::scalar::Real;

/// Mean squared deviation `Σ (xᵢ − yᵢ)² / n`.
pub fn recon_error<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Dim {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("reconstruction error of zero-length vectors".into()));
    }
    let sum: T = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::of(x.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult<T> {
    pub latent: Vec<T>,
    pub reconstruction: Vec<T>,
    pub error: T,
}

/// Per-feature affine standardisation fitted on historical data and frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Features with (near) zero spread keep unit scale.
    pub fn fit<T: Real>(rows: &[Vec<T>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("cannot fit a standardizer on no rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::Dim {
                    expected: d,
                    actual: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                let c = v.as_f64() - m;
                *s += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Dim {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(x
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| T::of((v.as_f64() - m) / s))
            .collect())
    }
}

/// Narrow ReLU layers with zero biases are often dead on the whole data
/// set from initialisation, which freezes every layer upstream.
pub const MIN_HIDDEN: usize = 8;

/// Layer widths from `input` down to `latent` over `layers` affine maps,
/// geometrically interpolated and rounded. Hidden layers are at least
/// [`MIN_HIDDEN`] wide.
pub fn layer_schedule(input: usize, latent: usize, layers: usize) -> Vec<usize> {
    let layers = layers.max(1);
    let ratio = latent as f64 / input as f64;
    let mut dims = Vec::with_capacity(layers + 1);
    dims.push(input);
    for i in 1..layers {
        let w = (input as f64 * ratio.powf(i as f64 / layers as f64)).round() as usize;
        dims.push(w.max(latent).max(MIN_HIDDEN));
    }
    dims.push(latent);
    dims
}

/// Smallest `k` whose top-`k` covariance eigenvalues hold at least
/// `variance_threshold` of the total variance, clamped to `[1, d - 1]`.
pub fn choose_latent_dim<T: Real>(data: &[Vec<T>], variance_threshold: f64) -> Result<usize> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    let cov = linalg::covariance(data)?;
    let d = cov.rows();
    let eig: Vec<f64> = linalg::symmetric_eigenvalues(&cov)?
        .into_iter()
        .map(|v| v.as_f64().max(0.0))
        .collect();
    let total: f64 = eig.iter().sum();
    if total <= f64::MIN_POSITIVE {
        return Ok(1);
    }
    let target = variance_threshold * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut k = d;
    for (i, e) in eig.iter().enumerate() {
        acc += e;
        if acc >= target {
            k = i + 1;
            break;
        }
    }
    Ok(if d > 1 { k.clamp(1, d - 1) } else { 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder<T> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeGrads<T> {
    pub encoder: MlpGrads<T>,
    pub decoder: MlpGrads<T>,
}

impl<T: Real> AeGrads<T> {
    pub fn zeros_like(ae: &Autoencoder<T>) -> Self {
        Self {
            encoder: MlpGrads::zeros_like(&ae.encoder),
            decoder: MlpGrads::zeros_like(&ae.decoder),
        }
    }

    pub fn clear(&mut self) {
        self.encoder.clear();
        self.decoder.clear();
    }

    /// Weight gradients of every layer, encoder first.
    pub fn weight_grads(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.encoder.weights.iter().chain(&self.decoder.weights)
    }
}

pub(crate) struct AeTape<T> {
    enc: Tape<T>,
    dec: Tape<T>,
    pub recon: Vec<T>,
}

impl<T: Real> Autoencoder<T> {
    pub fn new(encoder: Mlp<T>, decoder: Mlp<T>) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Shape(format!(
                "encoder emits {} latent dims, decoder expects {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::Shape(format!(
                "decoder emits {} dims for a {}-dim input",
                decoder.output_dim(),
                encoder.input_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    /// Symmetric Glorot-initialised autoencoder. ReLU hidden layers, linear
    /// latent code and linear output.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim < 2 {
            return Err(Error::InvalidArgument(
                "single-feature streams must be shingled before training".into(),
            ));
        }
        if latent_dim == 0 || latent_dim >= input_dim {
            return Err(Error::InvalidArgument(format!(
                "latent dim {latent_dim} must be in [1, {}]",
                input_dim - 1
            )));
        }
        let enc_dims = layer_schedule(input_dim, latent_dim, layers);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = Mlp::glorot(&enc_dims, Activation::Relu, Activation::Identity, rng)?;
        let decoder = Mlp::glorot(&dec_dims, Activation::Relu, Activation::Identity, rng)?;
        Self::new(encoder, decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Number of weight matrices, encoder then decoder.
    pub fn num_layers(&self) -> usize {
        self.encoder.depth() + self.decoder.depth()
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut s = self.encoder.weight_shapes();
        s.extend(self.decoder.weight_shapes());
        s
    }

    pub fn reconstruct(&self, x: &[T]) -> Result<ReconResult<T>> {
        let latent = self.encoder.predict(x)?;
        let reconstruction = self.decoder.predict(&latent)?;
        let error = recon_error(x, &reconstruction)?;
        Ok(ReconResult {
            latent,
            reconstruction,
            error,
        })
    }

    /// Reconstruction with per-layer additive weight shifts (`shifts.len()`
    /// equals [`Autoencoder::num_layers`]).
    pub fn reconstruct_shifted(&self, shifts: &[Option<&Matrix<T>>], x: &[T]) -> Result<ReconResult<T>> {
        let (es, ds) = self.split_shifts(shifts)?;
        let latent = self.encoder.predict_shifted(es, x)?;
        let reconstruction = self.decoder.predict_shifted(ds, &latent)?;
        let error = recon_error(x, &reconstruction)?;
        Ok(ReconResult {
            latent,
            reconstruction,
            error,
        })
    }

    fn split_shifts<'a, 'b>(
        &self,
        shifts: &'b [Option<&'a Matrix<T>>],
    ) -> Result<(&'b [Option<&'a Matrix<T>>], &'b [Option<&'a Matrix<T>>])> {
        if shifts.len() != self.num_layers() {
            return Err(Error::Shape(format!(
                "{} shift slots for {} autoencoder layers",
                shifts.len(),
                self.num_layers()
            )));
        }
        Ok(shifts.split_at(self.encoder.depth()))
    }

    pub(crate) fn forward_taped(&self, shifts: &[Option<&Matrix<T>>], x: &[T]) -> Result<AeTape<T>> {
        let (es, ds) = self.split_shifts(shifts)?;
        let (latent, enc) = self.encoder.forward_shifted(es, x)?;
        let (recon, dec) = self.decoder.forward_shifted(ds, &latent)?;
        Ok(AeTape {
            enc,
            dec,
            recon,
        })
    }

    /// Accumulates `scale · ∂recon_error(x, y)/∂θ` into `grads`.
    pub(crate) fn backward_taped(
        &self,
        tape: &AeTape<T>,
        x: &[T],
        scale: T,
        grads: &mut AeGrads<T>,
    ) -> Result<()> {
        let k = scale * T::of(2.0) / T::of(x.len() as f64);
        let dy: Vec<T> = tape
            .recon
            .iter()
            .zip(x)
            .map(|(&y, &xi)| k * (y - xi))
            .collect();
        let dz = self.decoder.backward_into(&tape.dec, &dy, &mut grads.decoder)?;
        self.encoder.backward_into(&tape.enc, &dz, &mut grads.encoder)?;
        Ok(())
    }

    pub fn unshifted(&self) -> Vec<Option<&Matrix<T>>> {
        vec![None; self.num_layers()]
    }

    pub fn mean_error(&self, data: &[Vec<T>]) -> Result<T> {
        if data.is_empty() {
            return Err(Error::Empty("no rows to evaluate".into()));
        }
        let mut sum = T::zero();
        for x in data {
            sum = sum + self.reconstruct(x)?.error;
        }
        Ok(sum / T::of(data.len() as f64))
    }
}

impl<T: Real> Params<T> for Autoencoder<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.encoder.blocks();
        b.extend(self.decoder.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.encoder.blocks_mut();
        b.extend(self.decoder.blocks_mut());
        b
    }
}

impl<T: Real> Params<T> for AeGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.encoder.blocks();
        b.extend(self.decoder.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.encoder.blocks_mut();
        b.extend(self.decoder.blocks_mut());
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScdConfig {
    /// `None` selects the latent size from explained variance.
    pub latent_dim: Option<usize>,
    pub variance_threshold: f64,
    /// Affine layers in the encoder (the decoder mirrors it).
    pub encoder_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ScdConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            variance_threshold: 0.7,
            encoder_layers: 3,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Reconstruction error of one instance; accumulates `scale ·` its
/// gradient into `grads`.
pub fn recon_loss_and_grads<T: Real>(ae: &Autoencoder<T>, x: &[T], scale: T, grads: &mut AeGrads<T>) -> Result<T> {
    let shifts = ae.unshifted();
    let tape = ae.forward_taped(&shifts, x)?;
    let loss = recon_error(x, &tape.recon)?;
    ae.backward_taped(&tape, x, scale, grads)?;
    Ok(loss)
}

/// Minibatch Adam on the mean reconstruction error. Returns the mean
/// training loss of each epoch.
pub fn fit_autoencoder<T: Real, R: Rng + ?Sized>(
    model: &mut Autoencoder<T>,
    data: &[Vec<T>],
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    if data.is_empty() {
        return Err(Error::Empty("no training rows".into()));
    }
    let d = model.input_dim();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(Error::Dim {
            expected: d,
            actual: bad.len(),
        });
    }
    let batch_size = batch_size.max(1);
    let mut state = AdamState::new(model, adam);
    let mut grads = AeGrads::zeros_like(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(batch_size) {
            grads.clear();
            let scale = T::one() / T::of(batch.len() as f64);
            for &i in batch {
                let loss = recon_loss_and_grads(model, &data[i], scale, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("non-finite reconstruction loss at epoch {epoch}")));
                }
                epoch_loss = epoch_loss + loss;
            }
            adam_step(model, &grads, &mut state).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged(format!("{what} at epoch {epoch}")),
                other => other,
            })?;
        }
        state.end_epoch();
        history.push(epoch_loss / T::of(data.len() as f64));
    }
    Ok(history)
}

/// Trains a fresh autoencoder on (already standardised) historical rows.
pub fn train_scd<T: Real>(data: &[Vec<T>], cfg: &ScdConfig) -> Result<(Autoencoder<T>, Vec<T>)> {
    let first = data
        .first()
        .ok_or_else(|| Error::Empty("no historical rows".into()))?;
    let d = first.len();
    let latent = match cfg.latent_dim {
        Some(k) => k,
        None if data.len() >= 2 => choose_latent_dim(data, cfg.variance_threshold)?,
        None => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Autoencoder::random(d, latent, cfg.encoder_layers, &mut rng)?;
    let history = fit_autoencoder(&mut model, data, cfg.epochs, cfg.batch_size, cfg.adam, &mut rng)?;
    Ok((model, history))
}
