//! Analytic gradients of every training objective against central finite
//! differences on small random networks.
//!
//! ReLU kinks make a finite difference meaningless when a perturbation
//! crosses one. A coordinate is treated as sitting on a kink when its
//! forward and backward one-sided differences disagree; such coordinates
//! are skipped and counted, and the count must stay small.

use driftwatch::dsd::{dsd_loss_and_grads, DsdConfig, HyperGrads, Hypernetwork, ShiftTargets};
use driftwatch::iec::{evidential_loss_and_grads, penalty_loss_and_grads, EvidentialClassifier};
use driftwatch::nn::{MlpGrads, Params};
use driftwatch::scd::{recon_loss_and_grads, AeGrads, Autoencoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const REL_TOL: f64 = 1e-4;
const H: f64 = 1e-5;
const CONFIGS: u64 = 120;

#[derive(Default, Debug)]
struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn flatten<P: Params<f64>>(p: &P) -> Vec<f64> {
    p.blocks().concat()
}

fn nudge<P: Params<f64>>(p: &mut P, k: usize, delta: f64) {
    let mut k = k;
    for b in p.blocks_mut() {
        if k < b.len() {
            b[k] += delta;
            return;
        }
        k -= b.len();
    }
    panic!("parameter index out of range");
}

/// Central difference, plus whether the one-sided slopes disagree.
fn central<P: Params<f64>>(p: &mut P, k: usize, f: &dyn Fn(&P) -> f64) -> (f64, bool) {
    let mid = f(p);
    nudge(p, k, H);
    let up = f(p);
    nudge(p, k, -2.0 * H);
    let down = f(p);
    nudge(p, k, H);
    let (fwd, bwd) = ((up - mid) / H, (mid - down) / H);
    ((up - down) / (2.0 * H), (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-2))
}

fn check<P: Params<f64>>(p: &mut P, analytic: &[f64], f: &dyn Fn(&P) -> f64, tally: &mut Tally, what: &str) {
    assert_eq!(analytic.len(), p.num_params(), "{what}: gradient layout");
    for (k, &g) in analytic.iter().enumerate() {
        let (n1, kink) = central(p, k, f);
        if kink {
            tally.skipped += 1;
            continue;
        }
        let e = rel_err(g, n1);
        tally.checked += 1;
        tally.worst = tally.worst.max(e);
        assert!(e <= REL_TOL, "{what}: parameter {k}: analytic {g:e}, numeric {n1:e}, rel {e:e}");
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tiny_ae(rng: &mut ChaCha8Rng) -> Autoencoder<f64> {
    let d = rng.random_range(2..=6);
    let latent = rng.random_range(1..d);
    let layers = rng.random_range(1..=3);
    Autoencoder::random(d, latent, layers, rng).unwrap()
}

fn finish(name: &str, t: &Tally) {
    eprintln!("{name}: {} coordinates checked, {} on kinks, worst rel err {:.2e}", t.checked, t.skipped, t.worst);
    assert!(t.checked > 0);
    assert!(t.skipped * 50 <= t.checked, "{name}: too many kink skips ({})", t.skipped);
}

#[test]
fn reconstruction_loss_gradients() {
    let mut t = Tally::default();
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ae = tiny_ae(&mut rng);
        randomize(&mut ae, &mut rng, 0.5);
        let x = gaussian(&mut rng, ae.input_dim());
        let mut g = AeGrads::zeros_like(&ae);
        recon_loss_and_grads(&ae, &x, 1.0, &mut g).unwrap();
        let analytic = flatten(&g);
        let f = |m: &Autoencoder<f64>| m.reconstruct(&x).unwrap().error;
        check(&mut ae, &analytic, &f, &mut t, &format!("recon seed {seed}"));
    }
    finish("reconstruction", &t);
}

#[test]
fn evidential_focal_loss_gradients() {
    let mut t = Tally::default();
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.random_range(1..=6);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=6)).collect();
        let mut clf = EvidentialClassifier::random(d, &hidden, &mut rng).unwrap();
        randomize(&mut clf.net, &mut rng, 0.5);
        let x = gaussian(&mut rng, d);
        let label = (seed % 2) as usize;
        let gamma = [0.0, 1.0, 2.0, 3.5][(seed / 2 % 4) as usize];
        let mut g = MlpGrads::zeros_like(&clf.net);
        evidential_loss_and_grads(&clf, &x, label, gamma, 1.0, &mut g).unwrap();
        let analytic = flatten(&g);
        let f = |m: &driftwatch::nn::Mlp<f64>| {
            let c = EvidentialClassifier::new(m.clone()).unwrap();
            let a = c.evidential_forward(&x).unwrap().alpha;
            driftwatch::iec::focal_edl_loss(&a, label, gamma).unwrap()
        };
        check(&mut clf.net, &analytic, &f, &mut t, &format!("focal seed {seed}"));
    }
    finish("focal evidential", &t);
}

#[test]
fn evidence_penalty_gradients() {
    let mut t = Tally::default();
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let d = rng.random_range(1..=6);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=6)).collect();
        let mut clf = EvidentialClassifier::random(d, &hidden, &mut rng).unwrap();
        randomize(&mut clf.net, &mut rng, 0.5);
        let x = gaussian(&mut rng, d);
        let mut g = MlpGrads::zeros_like(&clf.net);
        penalty_loss_and_grads(&clf, &x, 0.7, &mut g).unwrap();
        let analytic = flatten(&g);
        let f = |m: &driftwatch::nn::Mlp<f64>| {
            let c = EvidentialClassifier::new(m.clone()).unwrap();
            0.7 * driftwatch::iec::evidence_penalty(&c.evidential_forward(&x).unwrap().alpha).unwrap()
        };
        check(&mut clf.net, &analytic, &f, &mut t, &format!("penalty seed {seed}"));
    }
    finish("evidence penalty", &t);
}

fn randomize<P: Params<f64>>(p: &mut P, rng: &mut ChaCha8Rng, scale: f64) {
    for b in p.blocks_mut() {
        for v in b.iter_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Dynamic reconstruction loss through generated weight shifts: gradients
/// for every hypernetwork parameter and for the static weights the shift
/// is added to.
#[test]
fn dynamic_reconstruction_gradients() {
    let mut th = Tally::default();
    let mut ts = Tally::default();
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let mut ae = tiny_ae(&mut rng);
        randomize(&mut ae, &mut rng, 0.5);
        let cfg = DsdConfig {
            embed_dim: rng.random_range(1..=4),
            shared_hidden: (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect(),
            targets: [ShiftTargets::All, ShiftTargets::Encoder, ShiftTargets::Decoder][(seed % 3) as usize],
            ..Default::default()
        };
        let mut hyper = Hypernetwork::new(&ae, &cfg, &mut rng).unwrap();
        // non-zero output generators so every path carries signal
        randomize(&mut hyper, &mut rng, 0.3);
        let x = gaussian(&mut rng, ae.input_dim());

        let mut hg = HyperGrads::zeros_like(&hyper);
        let mut sg = AeGrads::zeros_like(&ae);
        let loss = dsd_loss_and_grads(&ae, &hyper, &x, 1.0, &mut hg, &mut sg).unwrap();
        let (r, _) = driftwatch::dsd::dynamic_reconstruct(&ae, &hyper, &x).unwrap();
        assert_eq!(loss, r.error);

        let analytic = flatten(&hg);
        let base = ae.clone();
        let f = |h: &Hypernetwork<f64>| driftwatch::dsd::dynamic_reconstruct(&base, h, &x).unwrap().0.error;
        check(&mut hyper, &analytic, &f, &mut th, &format!("hyper seed {seed}"));

        let analytic = flatten(&sg);
        let hyper_fixed = hyper.clone();
        let f = |m: &Autoencoder<f64>| driftwatch::dsd::dynamic_reconstruct(m, &hyper_fixed, &x).unwrap().0.error;
        check(&mut ae, &analytic, &f, &mut ts, &format!("static-under-shift seed {seed}"));
    }
    finish("hypernetwork", &th);
    finish("static weights under shift", &ts);
}
