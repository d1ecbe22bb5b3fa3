//! Dirichlet moments and mutual information against Monte-Carlo estimates
//! drawn through normalised Gamma variates.

use driftwatch::iec::{concept_uncertainty, digamma, predictive_prob};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

const SAMPLES: usize = 1_000_000;

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `(E[p], H(E[p]) − E[H(p)])` for `p ~ Dir(α)`.
fn monte_carlo(alpha: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let k = alpha.len();
    let mut mean = vec![0.0; k];
    let mut mean_entropy = 0.0;
    let mut p = vec![0.0; k];
    for _ in 0..SAMPLES {
        for (pi, g) in p.iter_mut().zip(&gammas) {
            *pi = rng.sample(g);
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        for (m, &v) in mean.iter_mut().zip(&p) {
            *m += v;
        }
        mean_entropy += entropy(&p);
    }
    mean.iter_mut().for_each(|m| *m /= SAMPLES as f64);
    let mi = entropy(&mean) - mean_entropy / SAMPLES as f64;
    (mean, mi)
}

#[test]
fn predictive_and_uncertainty_match_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let k = if case < 14 { 2 } else { 3 };
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..10.0)).collect();
        let (mean, mi) = monte_carlo(&alpha, &mut rng);
        let p = predictive_prob(&alpha).unwrap();
        for (a, b) in p.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-3, "alpha {alpha:?}: predictive {a} vs sampled {b}");
        }
        let u = concept_uncertainty(&alpha).unwrap();
        let rel = (u - mi).abs() / mi;
        assert!(rel <= 0.02, "alpha {alpha:?}: uncertainty {u} vs sampled {mi} (rel {rel:.4})");
    }
}

#[test]
fn symmetric_uncertainty_strictly_decreases_when_doubled() {
    let mut prev = f64::INFINITY;
    let mut a = 1.0;
    while a <= 4096.0 {
        let u = concept_uncertainty(&[a, a]).unwrap();
        assert!(u < prev, "U({a},{a}) = {u} not below {prev}");
        prev = u;
        a *= 2.0;
    }
}

#[test]
fn flat_opinion_has_closed_form_uncertainty() {
    // For α = (1, 1): H(½,½) − E[H(p)] with p ~ U(0,1) is ln 2 − ½.
    let u = concept_uncertainty(&[1.0, 1.0]).unwrap();
    assert!((u - (std::f64::consts::LN_2 - 0.5)).abs() < 1e-12);
}

#[test]
fn digamma_recurrence_and_known_values() {
    let euler = 0.577_215_664_901_532_9;
    assert!((digamma(1.0f64).unwrap() + euler).abs() < 1e-12);
    assert!((digamma(0.5f64).unwrap() + euler + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x: f64 = rng.random_range(0.01..50.0);
        let lhs = digamma(x + 1.0).unwrap();
        let rhs = digamma(x).unwrap() + 1.0 / x;
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0), "x = {x}");
    }
}
