//! Order statistics and ranking metrics against quadratic brute-force
//! definitions on random inputs, with and without ties.

use driftwatch::dto::window_quantile;
use driftwatch::ingest::{auc_pr, auc_roc};
use driftwatch::stats::{mad, median};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 60;
const TOL: f64 = 1e-9;

fn sample(rng: &mut ChaCha8Rng, seed: u64) -> Vec<f64> {
    let n = rng.random_range(1..=500);
    if seed % 3 == 0 {
        // heavy ties
        (0..n).map(|_| rng.random_range(0..12) as f64 * 0.25).collect()
    } else {
        (0..n).map(|_| rng.random_range(-50.0..50.0)).collect()
    }
}

/// Smallest sample value whose empirical CDF reaches `q`, by counting.
fn brute_quantile(v: &[f64], q: f64) -> f64 {
    let n = v.len() as f64;
    v.iter()
        .copied()
        .filter(|&s| v.iter().filter(|&&x| x <= s).count() as f64 / n >= q)
        .fold(f64::INFINITY, f64::min)
}

/// k-th smallest (0-based) by rank counting.
fn brute_kth(v: &[f64], k: usize) -> f64 {
    *v.iter()
        .find(|&&c| {
            let less = v.iter().filter(|&&x| x < c).count();
            let le = v.iter().filter(|&&x| x <= c).count();
            less <= k && k < le
        })
        .unwrap()
}

fn brute_median(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        brute_kth(v, n / 2)
    } else {
        (brute_kth(v, n / 2 - 1) + brute_kth(v, n / 2)) / 2.0
    }
}

fn brute_mad(v: &[f64]) -> f64 {
    let m = brute_median(v);
    brute_median(&v.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

/// Pairwise AUC with ½ credit for tied pairs.
fn brute_auc(s: &[f64], l: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in l.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in l.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            den += 1.0;
            if s[i] > s[j] {
                num += 1.0;
            } else if s[i] == s[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Average precision: Σ over distinct thresholds of ΔRecall · Precision,
/// each computed by scanning the whole set.
fn brute_ap(s: &[f64], l: &[u8]) -> f64 {
    let pos = l.iter().filter(|&&x| x == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let flagged = s.iter().filter(|&&x| x >= t).count() as f64;
        let tp = s.iter().zip(l).filter(|(&x, &y)| x >= t && y == 1).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / flagged;
        prev_recall = recall;
    }
    ap
}

#[test]
fn quantile_matches_counting_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = sample(&mut rng, seed);
        for qi in 1..=99 {
            let q = qi as f64 / 100.0;
            let got = window_quantile(&v, q).unwrap();
            let want = brute_quantile(&v, q);
            assert!((got - want).abs() <= TOL, "seed {seed} q {q}: {got} vs {want}");
        }
    }
}

#[test]
fn median_and_mad_match_rank_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let v = sample(&mut rng, seed);
        assert!((median(&v).unwrap() - brute_median(&v)).abs() <= TOL, "seed {seed}");
        assert!((mad(&v).unwrap() - brute_mad(&v)).abs() <= TOL, "seed {seed}");
    }
}

fn scored(rng: &mut ChaCha8Rng, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=500);
    let mut l: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    l[0] = 0;
    l[1] = 1;
    let s = if seed % 3 == 0 {
        (0..n).map(|_| rng.random_range(0..8) as f64).collect()
    } else {
        (0..n).map(|_| rng.random::<f64>()).collect()
    };
    (s, l)
}

#[test]
fn auc_roc_matches_pairwise_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (s, l) = scored(&mut rng, seed);
        let got = auc_roc(&s, &l).unwrap();
        let want = brute_auc(&s, &l);
        assert!((got - want).abs() <= TOL, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn auc_pr_matches_definitional_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (s, l) = scored(&mut rng, seed);
        let got = auc_pr(&s, &l).unwrap();
        let want = brute_ap(&s, &l);
        assert!((got - want).abs() <= TOL, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn metric_examples() {
    assert_eq!(auc_roc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
    assert_eq!(auc_roc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
    assert_eq!(auc_pr(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
    assert_eq!(auc_pr(&[0.9, 0.1, 0.3], &[1, 0, 0]).unwrap(), 1.0);
    assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
    assert!(auc_pr(&[0.1, 0.2], &[0, 0]).is_err());
}

fn distinct_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            proptest::collection::hash_set(-1_000_000i64..1_000_000, n)
                .prop_map(|s| s.into_iter().map(|v| v as f64 / 1000.0).collect::<Vec<f64>>()),
            proptest::collection::vec(0u8..2, n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform((s, l) in distinct_scores()) {
        let t: Vec<f64> = s.iter().map(|v| (v / 300.0).tanh() * 5.0 + v.powi(3) * 1e-6).collect();
        prop_assert!((auc_roc(&s, &l).unwrap() - auc_roc(&t, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_of_flipped_labels_is_complement((s, l) in distinct_scores()) {
        let f: Vec<u8> = l.iter().map(|v| 1 - v).collect();
        prop_assert!((auc_roc(&s, &l).unwrap() + auc_roc(&s, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_is_a_member_and_monotone_in_level(v in proptest::collection::vec(-1e3f64..1e3, 1..200), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ql = window_quantile(&v, lo).unwrap();
        let qh = window_quantile(&v, hi).unwrap();
        prop_assert!(v.contains(&ql));
        prop_assert!(ql <= qh);
    }
}
