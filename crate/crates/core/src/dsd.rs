//! Shift-aware detector: a hypernetwork that maps each instance to
//! additive weight shifts for the static autoencoder.
//!
//! For every shifted layer `n` with weight shape `N_in × N_out`:
//!
//! ```text
//! e⁽ⁿ⁾ = head⁽ⁿ⁾(shared(x))                 (d_e)
//! c⁽ⁿ⁾ = W₁⁽ⁿ⁾ e⁽ⁿ⁾ + b₁⁽ⁿ⁾                  (N_in)
//! K⁽ⁿ⁾ = c⁽ⁿ⁾ ⊗ w₂⁽ⁿ⁾ + B₂⁽ⁿ⁾ + B̄⁽ⁿ⁾        (N_in × N_out)
//! ```
//!
//! and the dynamic detector runs with `W⁽ⁿ⁾ + K⁽ⁿ⁾`. Biases are never shifted.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, dot, Activation, AdamConfig, AdamState, Matrix, Mlp, MlpGrads, Params, Tape};
use crate::scalar::Real;
use crate::scd::{recon_error, AeGrads, Autoencoder, ReconResult};

/// Which autoencoder layers receive a generated shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftTargets {
    All,
    Encoder,
    Decoder,
}

impl ShiftTargets {
    pub fn layer_indices<T: Real>(self, ae: &Autoencoder<T>) -> Vec<usize> {
        let e = ae.encoder.depth();
        let total = ae.num_layers();
        match self {
            ShiftTargets::All => (0..total).collect(),
            ShiftTargets::Encoder => (0..e).collect(),
            ShiftTargets::Decoder => (e..total).collect(),
        }
    }
}

impl std::str::FromStr for ShiftTargets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "encoder" => Ok(Self::Encoder),
            "decoder" => Ok(Self::Decoder),
            other => Err(Error::InvalidArgument(format!("unknown shift target set '{other}'"))),
        }
    }
}

/// Per-layer generator parameters (also reused as their gradient buffer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGenerator<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
    pub bias_bar: Matrix<T>,
}

impl<T: Real> ShiftGenerator<T> {
    fn zeros(n_in: usize, n_out: usize, embed: usize) -> Self {
        Self {
            w1: Matrix::zeros(n_in, embed),
            b1: vec![T::zero(); n_in],
            w2: Matrix::zeros(1, n_out),
            b2: Matrix::zeros(n_in, n_out),
            bias_bar: Matrix::zeros(n_in, n_out),
        }
    }

    pub fn target_shape(&self) -> (usize, usize) {
        self.b2.shape()
    }

    fn column(&self, e: &[T]) -> Vec<T> {
        (0..self.w1.rows())
            .map(|i| dot(self.w1.row(i), e) + self.b1[i])
            .collect()
    }

    fn kernel(&self, c: &[T]) -> Matrix<T> {
        let (rows, cols) = self.target_shape();
        let w2 = self.w2.row(0);
        Matrix::from_fn(rows, cols, |i, j| {
            c[i] * w2[j] + self.b2.get(i, j) + self.bias_bar.get(i, j)
        })
    }

    fn blocks(&self) -> [&[T]; 5] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.bias_bar.as_slice(),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [T]; 5] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.bias_bar.as_mut_slice(),
        ]
    }

    fn clear(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Additive weight deltas, one slot per autoencoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShift<T> {
    pub deltas: Vec<Option<Matrix<T>>>,
}

impl<T: Real> ParamShift<T> {
    pub fn none(layers: usize) -> Self {
        Self {
            deltas: vec![None; layers],
        }
    }

    pub fn as_refs(&self) -> Vec<Option<&Matrix<T>>> {
        self.deltas.iter().map(Option::as_ref).collect()
    }

    /// Frobenius norm over all deltas.
    pub fn norm(&self) -> T {
        self.deltas
            .iter()
            .flatten()
            .flat_map(|m| m.as_slice())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypernetwork<T> {
    pub shared: Mlp<T>,
    pub heads: Vec<Mlp<T>>,
    pub generators: Vec<ShiftGenerator<T>>,
    /// Autoencoder layer index shifted by each generator.
    pub targets: Vec<usize>,
    /// Total number of layers in the target autoencoder.
    pub target_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsdConfig {
    pub embed_dim: usize,
    pub shared_hidden: Vec<usize>,
    pub targets: ShiftTargets,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Keep the static autoencoder fixed while fitting the hypernetwork.
    pub freeze_static: bool,
    /// Learning-rate multiplier for the static weights in joint mode.
    pub static_lr_scale: f64,
}

impl Default for DsdConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            shared_hidden: vec![32, 32],
            targets: ShiftTargets::All,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            freeze_static: true,
            static_lr_scale: 0.1,
        }
    }
}

struct HyperTape<T> {
    shared: Tape<T>,
    heads: Vec<Tape<T>>,
    embeddings: Vec<Vec<T>>,
    columns: Vec<Vec<T>>,
}

impl<T: Real> Hypernetwork<T> {
    /// Random shared encoder and heads, zero output generators so the
    /// initial shift is exactly zero.
    pub fn new<R: Rng + ?Sized>(ae: &Autoencoder<T>, cfg: &DsdConfig, rng: &mut R) -> Result<Self> {
        let mut dims = vec![ae.input_dim()];
        dims.extend_from_slice(&cfg.shared_hidden);
        let shared = Mlp::glorot(&dims, Activation::Relu, Activation::Relu, rng)?;
        let feat = shared.output_dim();
        let targets = cfg.targets.layer_indices(ae);
        let shapes = ae.weight_shapes();
        let mut heads = Vec::with_capacity(targets.len());
        let mut generators = Vec::with_capacity(targets.len());
        for &t in &targets {
            heads.push(Mlp::glorot(&[feat, cfg.embed_dim], Activation::Identity, Activation::Identity, rng)?);
            let (n_in, n_out) = shapes[t];
            let mut g = ShiftGenerator::zeros(n_in, n_out, cfg.embed_dim);
            g.w1 = Matrix::glorot(n_in, cfg.embed_dim, rng);
            generators.push(g);
        }
        Ok(Self {
            shared,
            heads,
            generators,
            targets,
            target_layers: ae.num_layers(),
        })
    }

    /// Every parameter zero.
    pub fn zeros(ae: &Autoencoder<T>, cfg: &DsdConfig) -> Result<Self> {
        let mut dims = vec![ae.input_dim()];
        dims.extend_from_slice(&cfg.shared_hidden);
        let shared = Mlp::zeros(&dims, Activation::Relu, Activation::Relu)?;
        let feat = shared.output_dim();
        let targets = cfg.targets.layer_indices(ae);
        let shapes = ae.weight_shapes();
        let heads = targets
            .iter()
            .map(|_| Mlp::zeros(&[feat, cfg.embed_dim], Activation::Identity, Activation::Identity))
            .collect::<Result<Vec<_>>>()?;
        let generators = targets
            .iter()
            .map(|&t| ShiftGenerator::zeros(shapes[t].0, shapes[t].1, cfg.embed_dim))
            .collect();
        Ok(Self {
            shared,
            heads,
            generators,
            targets,
            target_layers: ae.num_layers(),
        })
    }

    pub fn num_shifted(&self) -> usize {
        self.targets.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.heads.first().map(|h| h.output_dim()).unwrap_or(0)
    }

    /// Checks that every generator emits the shape of its target layer.
    pub fn validate_against(&self, ae: &Autoencoder<T>) -> Result<()> {
        if self.target_layers != ae.num_layers() {
            return Err(Error::Shape(format!(
                "hypernetwork built for {} layers, autoencoder has {}",
                self.target_layers,
                ae.num_layers()
            )));
        }
        if self.shared.input_dim() != ae.input_dim() {
            return Err(Error::Dim {
                expected: ae.input_dim(),
                actual: self.shared.input_dim(),
            });
        }
        let shapes = ae.weight_shapes();
        for (g, &t) in self.generators.iter().zip(&self.targets) {
            let want = *shapes.get(t).ok_or_else(|| Error::Shape(format!("no layer {t}")))?;
            if g.target_shape() != want {
                return Err(Error::Shape(format!(
                    "generator for layer {t} emits {:?}, layer weight is {:?}",
                    g.target_shape(),
                    want
                )));
            }
        }
        Ok(())
    }

    /// Layer embedding `e⁽ⁿ⁾` for generator `n` (0-based).
    pub fn embed_layer(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        let head = self.heads.get(n).ok_or_else(|| {
            Error::InvalidArgument(format!("layer index {n} out of range 0..{}", self.heads.len()))
        })?;
        head.predict(&self.shared.predict(x)?)
    }

    pub fn generate_shift(&self, x: &[T]) -> Result<ParamShift<T>> {
        let feat = self.shared.predict(x)?;
        let mut shift = ParamShift::none(self.target_layers);
        for ((head, g), &t) in self.heads.iter().zip(&self.generators).zip(&self.targets) {
            let e = head.predict(&feat)?;
            let k = g.kernel(&g.column(&e));
            if !k.is_finite() {
                return Err(Error::NonFinite(format!("generated shift for layer {t}")));
            }
            shift.deltas[t] = Some(k);
        }
        Ok(shift)
    }

    fn generate_taped(&self, x: &[T]) -> Result<(ParamShift<T>, HyperTape<T>)> {
        let (feat, shared) = self.shared.forward(x)?;
        let mut shift = ParamShift::none(self.target_layers);
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut embeddings = Vec::with_capacity(self.heads.len());
        let mut columns = Vec::with_capacity(self.heads.len());
        for ((head, g), &t) in self.heads.iter().zip(&self.generators).zip(&self.targets) {
            let (e, tape) = head.forward(&feat)?;
            let c = g.column(&e);
            let k = g.kernel(&c);
            if !k.is_finite() {
                return Err(Error::NonFinite(format!("generated shift for layer {t}")));
            }
            shift.deltas[t] = Some(k);
            heads.push(tape);
            embeddings.push(e);
            columns.push(c);
        }
        Ok((
            shift,
            HyperTape {
                shared,
                heads,
                embeddings,
                columns,
            },
        ))
    }

    /// Backpropagates `∂L/∂K⁽ⁿ⁾` (taken from the autoencoder weight
    /// gradients of the shifted pass) into the hypernetwork.
    fn backward_taped(&self, tape: &HyperTape<T>, ae_grads: &AeGrads<T>, grads: &mut HyperGrads<T>) -> Result<()> {
        let weight_grads: Vec<&Matrix<T>> = ae_grads.weight_grads().collect();
        let mut dfeat = vec![T::zero(); self.shared.output_dim()];
        for (n, (g, &t)) in self.generators.iter().zip(&self.targets).enumerate() {
            let gk = weight_grads[t];
            let gg = &mut grads.generators[n];
            gg.bias_bar.add_assign(gk)?;
            gg.b2.add_assign(gk)?;
            let c = &tape.columns[n];
            let w2 = g.w2.row(0);
            let mut dc = vec![T::zero(); c.len()];
            {
                let dw2 = gg.w2.row_mut(0);
                for i in 0..gk.rows() {
                    let row = gk.row(i);
                    for j in 0..row.len() {
                        dw2[j] = dw2[j] + c[i] * row[j];
                    }
                    dc[i] = dot(row, w2);
                }
            }
            gg.w1.add_outer(&dc, &tape.embeddings[n]);
            for (b, &d) in gg.b1.iter_mut().zip(&dc) {
                *b = *b + d;
            }
            let de: Vec<T> = (0..g.w1.cols())
                .map(|k| (0..g.w1.rows()).fold(T::zero(), |acc, i| acc + g.w1.get(i, k) * dc[i]))
                .collect();
            let dh = self.heads[n].backward_into(&tape.heads[n], &de, &mut grads.heads[n])?;
            for (a, b) in dfeat.iter_mut().zip(dh) {
                *a = *a + b;
            }
        }
        self.shared.backward_into(&tape.shared, &dfeat, &mut grads.shared)?;
        Ok(())
    }
}

/// Gradient buffers shaped like a [`Hypernetwork`].
#[derive(Debug, Clone)]
pub struct HyperGrads<T> {
    pub shared: MlpGrads<T>,
    pub heads: Vec<MlpGrads<T>>,
    pub generators: Vec<ShiftGenerator<T>>,
}

impl<T: Real> HyperGrads<T> {
    pub fn zeros_like(h: &Hypernetwork<T>) -> Self {
        Self {
            shared: MlpGrads::zeros_like(&h.shared),
            heads: h.heads.iter().map(MlpGrads::zeros_like).collect(),
            generators: h
                .generators
                .iter()
                .map(|g| ShiftGenerator::zeros(g.w1.rows(), g.w2.cols(), g.w1.cols()))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.shared.clear();
        self.heads.iter_mut().for_each(MlpGrads::clear);
        self.generators.iter_mut().for_each(ShiftGenerator::clear);
    }

    pub fn scale(&mut self, k: T) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = *v * k);
        }
    }
}

impl<T: Real> Params<T> for Hypernetwork<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.shared.blocks();
        for h in &self.heads {
            b.extend(h.blocks());
        }
        for g in &self.generators {
            b.extend(g.blocks());
        }
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.shared.blocks_mut();
        for h in &mut self.heads {
            b.extend(h.blocks_mut());
        }
        for g in &mut self.generators {
            b.extend(g.blocks_mut());
        }
        b
    }
}

impl<T: Real> Params<T> for HyperGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.shared.blocks();
        for h in &self.heads {
            b.extend(h.blocks());
        }
        for g in &self.generators {
            b.extend(g.blocks());
        }
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.shared.blocks_mut();
        for h in &mut self.heads {
            b.extend(h.blocks_mut());
        }
        for g in &mut self.generators {
            b.extend(g.blocks_mut());
        }
        b
    }
}

/// Read-only view of the static detector with a shift applied. The base
/// autoencoder is never written to.
#[derive(Debug, Clone)]
pub struct DynamicDetector<'a, T> {
    base: &'a Autoencoder<T>,
    shift: ParamShift<T>,
}

impl<'a, T: Real> DynamicDetector<'a, T> {
    pub fn shift(&self) -> &ParamShift<T> {
        &self.shift
    }

    /// `W + ΔW` for every layer, encoder first.
    pub fn effective_weights(&self) -> Result<Vec<Matrix<T>>> {
        self.base
            .encoder
            .layers()
            .iter()
            .chain(self.base.decoder.layers())
            .zip(&self.shift.deltas)
            .map(|(l, d)| match d {
                Some(d) => l.weight.add(d),
                None => Ok(l.weight.clone()),
            })
            .collect()
    }

    pub fn reconstruct(&self, x: &[T]) -> Result<ReconResult<T>> {
        self.base.reconstruct_shifted(&self.shift.as_refs(), x)
    }
}

pub fn apply_shift<'a, T: Real>(base: &'a Autoencoder<T>, shift: ParamShift<T>) -> Result<DynamicDetector<'a, T>> {
    if shift.deltas.len() != base.num_layers() {
        return Err(Error::Shape(format!(
            "shift has {} slots, autoencoder has {} layers",
            shift.deltas.len(),
            base.num_layers()
        )));
    }
    for (i, (d, shape)) in shift.deltas.iter().zip(base.weight_shapes()).enumerate() {
        if let Some(d) = d {
            if d.shape() != shape {
                return Err(Error::Shape(format!(
                    "shift for layer {i} is {:?}, weight is {:?}",
                    d.shape(),
                    shape
                )));
            }
        }
    }
    Ok(DynamicDetector { base, shift })
}

/// Reconstruction under the instance-conditioned weights; also returns the
/// generated shift.
pub fn dynamic_reconstruct<T: Real>(
    base: &Autoencoder<T>,
    hyper: &Hypernetwork<T>,
    x: &[T],
) -> Result<(ReconResult<T>, ParamShift<T>)> {
    let shift = hyper.generate_shift(x)?;
    let r = base.reconstruct_shifted(&shift.as_refs(), x)?;
    Ok((r, shift))
}

/// Loss and gradients for one instance of the dynamic reconstruction
/// objective. Gradients are scaled by `scale` and accumulated.
pub fn dsd_loss_and_grads<T: Real>(
    base: &Autoencoder<T>,
    hyper: &Hypernetwork<T>,
    x: &[T],
    scale: T,
    hyper_grads: &mut HyperGrads<T>,
    sample_ae_grads: &mut AeGrads<T>,
) -> Result<T> {
    let (shift, htape) = hyper.generate_taped(x)?;
    let ae_tape = base.forward_taped(&shift.as_refs(), x)?;
    let loss = recon_error(x, &ae_tape.recon)?;
    sample_ae_grads.clear();
    base.backward_taped(&ae_tape, x, scale, sample_ae_grads)?;
    hyper.backward_taped(&htape, sample_ae_grads, hyper_grads)?;
    Ok(loss)
}

/// Optimiser state for the dynamic detector objective.
pub struct DsdTrainer<T> {
    hyper_state: AdamState<T>,
    hyper_grads: HyperGrads<T>,
    sample_grads: AeGrads<T>,
    static_state: Option<(AdamState<T>, AeGrads<T>)>,
}

impl<T: Real> DsdTrainer<T> {
    pub fn new(base: &Autoencoder<T>, hyper: &Hypernetwork<T>, cfg: &DsdConfig) -> Self {
        let static_state = (!cfg.freeze_static).then(|| {
            let adam = AdamConfig {
                lr: cfg.adam.lr * cfg.static_lr_scale,
                ..cfg.adam
            };
            (AdamState::new(base, adam), AeGrads::zeros_like(base))
        });
        Self {
            hyper_state: AdamState::new(hyper, cfg.adam),
            hyper_grads: HyperGrads::zeros_like(hyper),
            sample_grads: AeGrads::zeros_like(base),
            static_state,
        }
    }

    /// One Adam step on the mean dynamic reconstruction loss of `batch`.
    /// Returns the summed loss.
    pub fn step<'a, I>(&mut self, base: &mut Autoencoder<T>, hyper: &mut Hypernetwork<T>, batch: I) -> Result<T>
    where
        I: IntoIterator<Item = &'a [T]>,
        T: 'a,
    {
        let rows: Vec<&[T]> = batch.into_iter().collect();
        if rows.is_empty() {
            return Ok(T::zero());
        }
        let scale = T::one() / T::of(rows.len() as f64);
        self.hyper_grads.clear();
        if let Some((_, g)) = self.static_state.as_mut() {
            g.clear();
        }
        let mut total = T::zero();
        for x in rows {
            let loss = dsd_loss_and_grads(base, hyper, x, scale, &mut self.hyper_grads, &mut self.sample_grads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged("non-finite dynamic reconstruction loss".into()));
            }
            total = total + loss;
            if let Some((_, g)) = self.static_state.as_mut() {
                for (acc, s) in g.blocks_mut().into_iter().zip(self.sample_grads.blocks()) {
                    for (a, &v) in acc.iter_mut().zip(s) {
                        *a = *a + v;
                    }
                }
            }
        }
        adam_step(hyper, &self.hyper_grads, &mut self.hyper_state)?;
        if let Some((st, g)) = self.static_state.as_mut() {
            adam_step(base, g, st)?;
        }
        Ok(total)
    }

    pub fn end_epoch(&mut self) {
        self.hyper_state.end_epoch();
        if let Some((st, _)) = self.static_state.as_mut() {
            st.end_epoch();
        }
    }
}

/// Fits the hypernetwork (and, unless frozen, the static weights) to
/// minimise the dynamic reconstruction error. Returns per-epoch mean loss.
pub fn train_dsd<T: Real, R: Rng + ?Sized>(
    base: &mut Autoencoder<T>,
    hyper: &mut Hypernetwork<T>,
    data: &[Vec<T>],
    cfg: &DsdConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    if data.is_empty() {
        return Err(Error::Empty("no rows for the dynamic detector".into()));
    }
    hyper.validate_against(base)?;
    let mut trainer = DsdTrainer::new(base, hyper, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = T::zero();
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            sum = sum + trainer.step(base, hyper, chunk.iter().map(|&i| data[i].as_slice()))?;
        }
        trainer.end_epoch();
        history.push(sum / T::of(data.len() as f64));
    }
    Ok(history)
}
