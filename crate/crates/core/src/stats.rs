//! Order statistics over small in-memory samples.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Real;

fn sorted<T: Real>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Smallest sample `s` with empirical CDF `F(s) = #{vᵢ ≤ s} / n ≥ q`.
pub fn empirical_quantile<T: Real>(values: &[T], q: f64) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
    }
    let v = sorted(values);
    let n = v.len();
    let nf = n as f64;
    // k is the 1-based rank; start from the closed form and settle on the
    // exact floating-point definition.
    let mut k = ((q * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= q {
        k -= 1;
    }
    while k < n && (k as f64) / nf < q {
        k += 1;
    }
    Ok(v[k - 1])
}

/// Median with the midpoint convention for even sizes.
pub fn median<T: Real>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty sample".into()));
    }
    let v = sorted(values);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::of(2.0)
    })
}

/// Median absolute deviation `median(|vᵢ − median(v)|)`, unscaled.
pub fn mad<T: Real>(values: &[T]) -> Result<T> {
    let m = median(values)?;
    let dev: Vec<T> = values.iter().map(|&v| (v - m).abs()).collect();
    median(&dev)
}
