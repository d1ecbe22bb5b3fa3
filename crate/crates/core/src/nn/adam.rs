use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.96,
        }
    }
}

/// First/second moment buffers mirroring a [`Params`] layout.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    epoch: u32,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Params<T> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let lens = params.block_lens();
        Self {
            config,
            m: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            epoch: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// `lr₀ · decay^epoch`.
    pub fn effective_lr(&self) -> f64 {
        self.config.lr * self.config.decay.powi(self.epoch as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or the layouts disagree.
pub fn adam_step<T, P, G>(params: &mut P, grads: &G, state: &mut AdamState<T>) -> Result<()>
where
    T: Real,
    P: Params<T> + ?Sized,
    G: Params<T> + ?Sized,
{
    let g_blocks = grads.blocks();
    if g_blocks.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} gradient blocks for {} optimizer blocks",
            g_blocks.len(),
            state.m.len()
        )));
    }
    for (i, (g, m)) in g_blocks.iter().zip(&state.m).enumerate() {
        if g.len() != m.len() {
            return Err(Error::Shape(format!(
                "gradient block {i} has {} values, expected {}",
                g.len(),
                m.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {i}")));
        }
    }
    let mut p_blocks = params.blocks_mut();
    if p_blocks.len() != g_blocks.len() || p_blocks.iter().zip(&g_blocks).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("parameter and gradient layouts differ".into()));
    }

    state.t += 1;
    let cfg = state.config;
    let lr = T::of(state.effective_lr());
    let (b1, b2, eps) = (T::of(cfg.beta1), T::of(cfg.beta2), T::of(cfg.eps));
    let bc1 = T::one() - b1.powi(state.t as i32);
    let bc2 = T::one() - b2.powi(state.t as i32);
    let one = T::one();

    for (((p, g), m), v) in p_blocks
        .iter_mut()
        .zip(&g_blocks)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
