//! Small dense symmetric eigen-solver used for latent-size selection.

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Real;

/// Sample covariance (divisor `n - 1`) of row vectors.
pub fn covariance<T: Real>(rows: &[Vec<T>]) -> Result<Matrix<T>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dim {
            expected: d,
            actual: bad.len(),
        });
    }
    let nf = T::of(n as f64);
    let mean: Vec<T> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<T>() / nf)
        .collect();
    let mut cov = Matrix::zeros(d, d);
    for r in rows {
        let c: Vec<T> = r.iter().zip(&mean).map(|(&a, &m)| a - m).collect();
        cov.add_outer(&c, &c);
    }
    cov.scale(T::one() / T::of((n - 1) as f64));
    Ok(cov)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// in descending order.
pub fn symmetric_eigenvalues<T: Real>(m: &Matrix<T>) -> Result<Vec<T>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape(format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let mut a = m.clone();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        let diag: T = (0..n).map(|i| a.get(i, i) * a.get(i, i)).sum();
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(eig)
}
