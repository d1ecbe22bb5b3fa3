//! Forward and reverse passes of the dense stack and the shift generator
//! against hand-unrolled arithmetic.

use driftwatch::dsd::{apply_shift, dynamic_reconstruct, DsdConfig, Hypernetwork};
use driftwatch::nn::{Activation, Dense, Matrix, Mlp, Params};
use driftwatch::scd::Autoencoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn single(w: Matrix<f64>, b: Vec<f64>, act: Activation) -> Mlp<f64> {
    Mlp::new(vec![Dense::new(w, b, act).unwrap()]).unwrap()
}

#[test]
fn identity_and_relu_layers() {
    let id = single(Matrix::identity(2), vec![0.0; 2], Activation::Identity);
    assert_eq!(id.predict(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    let relu = single(Matrix::identity(2), vec![0.0; 2], Activation::Relu);
    assert_eq!(relu.predict(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
}

/// Row-vector convention: `y = act(x W + b)`.
fn naive_layer(x: &[f64], w: &Matrix<f64>, b: &[f64], relu: bool) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            let mut z = b[j];
            for (i, xi) in x.iter().enumerate() {
                z += xi * w.get(i, j);
            }
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

#[test]
fn two_layer_net_matches_naive_products() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, o) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..8));
        let net = Mlp::glorot(&[d, h, o], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut net = net;
        for b in net.blocks_mut() {
            b.iter_mut().for_each(|v| *v += 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        let x = gauss(&mut rng, d);
        let l = net.layers();
        let want = naive_layer(&naive_layer(&x, &l[0].weight, &l[0].bias, true), &l[1].weight, &l[1].bias, false);
        let got = net.predict(&x).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn backward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::glorot(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let (_, tape) = net.forward(&[0.3, -0.2, 0.9]).unwrap();
    let (g, gin) = net.backward(&tape, &[0.0, 0.0]).unwrap();
    assert!(g.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    assert!(gin.iter().all(|&v| v == 0.0));

    // loss = output_0 of a linear layer: dL/dW[:, 0] = x, dL/dW[:, 1] = 0
    let lin = single(Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap(), vec![0.1, 0.2], Activation::Identity);
    let (_, tape) = lin.forward(&[1.0, 2.0]).unwrap();
    let (g, gin) = lin.backward(&tape, &[1.0, 0.0]).unwrap();
    assert_eq!(g.weights[0].get(0, 0), 1.0);
    assert_eq!(g.weights[0].get(1, 0), 2.0);
    assert_eq!(g.weights[0].get(0, 1), 0.0);
    assert_eq!(g.biases[0], vec![1.0, 0.0]);
    assert_eq!(gin, vec![0.5, 2.0]);
}

fn small_pair(seed: u64) -> (Autoencoder<f64>, Hypernetwork<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ae = Autoencoder::random(5, 2, 2, &mut rng).unwrap();
    let cfg = DsdConfig {
        embed_dim: 3,
        shared_hidden: vec![6],
        ..Default::default()
    };
    let mut h = Hypernetwork::new(&ae, &cfg, &mut rng).unwrap();
    for b in h.blocks_mut() {
        b.iter_mut().for_each(|v| *v = 0.4 * rng.sample::<f64, _>(StandardNormal));
    }
    (ae, h, rng)
}

/// Embedding, column and kernel of every generator recomputed with plain
/// loops: `e = head(shared(x))`, `c = W₁ e + b₁`, `K = c w₂ᵀ + B₂ + B̄`.
#[test]
fn generated_kernels_match_unrolled_generator() {
    for seed in 0..20 {
        let (ae, h, mut rng) = small_pair(seed);
        let x = gauss(&mut rng, 5);
        let shift = h.generate_shift(&x).unwrap();
        let sl = h.shared.layers();
        let mut feat = x.clone();
        for l in sl {
            feat = naive_layer(&feat, &l.weight, &l.bias, true);
        }
        for (n, (&t, g)) in h.targets.iter().zip(&h.generators).enumerate() {
            let hl = &h.heads[n].layers()[0];
            let e = naive_layer(&feat, &hl.weight, &hl.bias, false);
            assert_eq!(h.embed_layer(&x, n).unwrap().len(), e.len());
            let (rows, cols) = g.target_shape();
            assert_eq!((rows, cols), ae.weight_shapes()[t]);
            let k = shift.deltas[t].as_ref().unwrap();
            for i in 0..rows {
                let c: f64 = (0..e.len()).map(|j| g.w1.get(i, j) * e[j]).sum::<f64>() + g.b1[i];
                for j in 0..cols {
                    let want = c * g.w2.get(0, j) + g.b2.get(i, j) + g.bias_bar.get(i, j);
                    assert!((k.get(i, j) - want).abs() <= 1e-12, "seed {seed} layer {t} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn embeddings_are_deterministic_and_layer_specific() {
    let (_, h, mut rng) = small_pair(9);
    let x = gauss(&mut rng, 5);
    assert_eq!(h.embed_layer(&x, 0).unwrap(), h.embed_layer(&x, 0).unwrap());
    assert_ne!(h.embed_layer(&x, 0).unwrap(), h.embed_layer(&x, 1).unwrap());
    assert!(h.embed_layer(&x, h.num_shifted()).is_err());
}

#[test]
fn shifting_never_writes_into_the_base() {
    let (ae, h, mut rng) = small_pair(4);
    let before = ae.clone();
    let x = gauss(&mut rng, 5);
    let first = apply_shift(&ae, h.generate_shift(&x).unwrap()).unwrap().reconstruct(&x).unwrap();
    let second = apply_shift(&ae, h.generate_shift(&x).unwrap()).unwrap().reconstruct(&x).unwrap();
    assert_eq!(first, second);
    assert_eq!(ae, before);
    let (r, _) = dynamic_reconstruct(&ae, &h, &x).unwrap();
    assert_eq!(r, first);
}
