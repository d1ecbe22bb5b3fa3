//! Small training runs of the three learned components.

use driftwatch::dsd::{dynamic_reconstruct, train_dsd, DsdConfig, Hypernetwork};
use driftwatch::iec::{train_iec, EvidentialClassifier, IecConfig, PseudoLabel};
use driftwatch::scd::{fit_autoencoder, train_scd, Autoencoder, ScdConfig};
use driftwatch::nn::AdamConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn constant_rows_reconstruct_almost_exactly() {
    let data = vec![vec![0.5, -0.25, 1.0]; 64];
    let cfg = ScdConfig {
        latent_dim: Some(1),
        epochs: 300,
        batch_size: 8,
        ..Default::default()
    };
    let (ae, hist) = train_scd(&data, &cfg).unwrap();
    assert!(*hist.last().unwrap() < 1e-3, "final loss {}", hist.last().unwrap());
    assert!(ae.reconstruct(&data[0]).unwrap().error < 1e-3);
}

#[test]
fn blob_loss_halves() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..500).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
        let cfg = ScdConfig {
            latent_dim: Some(1),
            epochs: 200,
            seed,
            ..Default::default()
        };
        let (ae, _) = train_scd(&data, &cfg).unwrap();
        // same seed and shape as the initialisation inside train_scd
        let initial = Autoencoder::random(2, 1, cfg.encoder_layers, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .mean_error(&data)
            .unwrap();
        let fin = ae.mean_error(&data).unwrap();
        assert!(fin < 0.5 * initial, "seed {seed}: {fin} vs {initial}");
    }
}

#[test]
fn single_row_is_memorised() {
    // one step per epoch: per-epoch decay would stop the walk at lr / (1 - decay)
    let data = vec![vec![0.3, -1.2, 0.8, 2.0]];
    let cfg = ScdConfig {
        latent_dim: Some(2),
        epochs: 1000,
        adam: AdamConfig {
            decay: 1.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let (ae, _) = train_scd(&data, &cfg).unwrap();
    assert!(ae.reconstruct(&data[0]).unwrap().error < 1e-3);
}

#[test]
fn zero_epochs_return_the_initialisation() {
    let data = vec![vec![0.3, -1.2, 0.8]; 10];
    let cfg = ScdConfig {
        latent_dim: Some(1),
        epochs: 0,
        seed: 9,
        ..Default::default()
    };
    let (ae, hist) = train_scd(&data, &cfg).unwrap();
    assert!(hist.is_empty());
    assert_eq!(ae, Autoencoder::random(3, 1, cfg.encoder_layers, &mut ChaCha8Rng::seed_from_u64(9)).unwrap());
}

fn two_blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, PseudoLabel)> {
    (0..n)
        .map(|i| {
            let (c, l) = if i % 2 == 0 { (-2.0, PseudoLabel::Negative) } else { (2.0, PseudoLabel::Positive) };
            (vec![c + 0.5 * normal(rng), c + 0.5 * normal(rng), 0.5 * normal(rng)], l)
        })
        .collect()
}

fn mean_uncertainty(clf: &EvidentialClassifier<f64>, rows: &[(Vec<f64>, PseudoLabel)]) -> f64 {
    mean(&rows.iter().map(|(x, _)| clf.evidential_forward(x).unwrap().uncertainty).collect::<Vec<_>>())
}

#[test]
fn classifier_separates_blobs_and_grows_confident() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = two_blobs(&mut rng, 400);
    let mut clf = EvidentialClassifier::random(3, &[16, 16], &mut rng).unwrap();
    let u0 = mean_uncertainty(&clf, &rows);
    let cfg = IecConfig {
        epochs: 60,
        ..Default::default()
    };
    train_iec(&mut clf, &rows, &cfg, &mut rng).unwrap();
    let correct = rows
        .iter()
        .filter(|(x, l)| {
            let p = clf.evidential_forward(x).unwrap().prob;
            let class = usize::from(p[1] > p[0]);
            Some(class) == l.class()
        })
        .count();
    let acc = correct as f64 / rows.len() as f64;
    assert!(acc >= 0.95, "accuracy {acc}");
    let u1 = mean_uncertainty(&clf, &rows);
    assert!(u1 < u0, "mean uncertainty {u1} not below initial {u0}");

    let mut train_u: Vec<f64> = rows.iter().map(|(x, _)| clf.evidential_forward(x).unwrap().uncertainty).collect();
    train_u.sort_by(f64::total_cmp);
    let median = train_u[train_u.len() / 2];
    let far = clf.evidential_forward(&[0.0, 0.0, 12.0]).unwrap().uncertainty;
    assert!(far > median, "off-sample probe {far} vs training median {median}");
}

#[test]
fn zero_epochs_leave_classifier_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = two_blobs(&mut rng, 50);
    let mut clf = EvidentialClassifier::random(3, &[8], &mut rng).unwrap();
    let before = clf.clone();
    let cfg = IecConfig {
        epochs: 0,
        ..Default::default()
    };
    assert!(train_iec(&mut clf, &rows, &cfg, &mut rng).unwrap().is_empty());
    assert_eq!(clf, before);
}

#[test]
fn single_class_labels_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<_> = two_blobs(&mut rng, 20)
        .into_iter()
        .map(|(x, _)| (x, PseudoLabel::Negative))
        .collect();
    let mut clf = EvidentialClassifier::random(3, &[8], &mut rng).unwrap();
    assert!(train_iec(&mut clf, &rows, &IecConfig::default(), &mut rng).is_err());
}

/// Rows near the line `offset + t·dir` in 4-D.
fn line_rows(rng: &mut ChaCha8Rng, dir: &[f64], offset: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let t = normal(rng);
            dir.iter().zip(offset).map(|(d, o)| o + d * t + 0.05 * normal(rng)).collect()
        })
        .collect()
}

fn dynamic_mean(ae: &Autoencoder<f64>, h: &Hypernetwork<f64>, data: &[Vec<f64>]) -> f64 {
    mean(&data.iter().map(|x| dynamic_reconstruct(ae, h, x).unwrap().0.error).collect::<Vec<_>>())
}

fn fitted_base(rng: &mut ChaCha8Rng, data: &[Vec<f64>]) -> Autoencoder<f64> {
    let mut ae = Autoencoder::random(4, 1, 2, rng).unwrap();
    fit_autoencoder(&mut ae, data, 200, 64, AdamConfig::default(), rng).unwrap();
    ae
}

fn dsd_cfg(epochs: usize) -> DsdConfig {
    DsdConfig {
        embed_dim: 4,
        shared_hidden: vec![16],
        epochs,
        ..Default::default()
    }
}

#[test]
fn hypernetwork_does_not_hurt_on_unchanged_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = [0.5, 0.5, 0.5, 0.5];
    let data = line_rows(&mut rng, &dir, &[0.0; 4], 400);
    let mut ae = fitted_base(&mut rng, &data);
    let stat = ae.mean_error(&data).unwrap();
    let mut h = Hypernetwork::new(&ae, &dsd_cfg(100), &mut rng).unwrap();
    train_dsd(&mut ae, &mut h, &data, &dsd_cfg(100), &mut rng).unwrap();
    let dynm = dynamic_mean(&ae, &h, &data);
    assert!(dynm <= 1.05 * stat, "dynamic {dynm} vs static {stat}");
}

#[test]
fn hypernetwork_adapts_to_a_mean_shifted_concept() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = line_rows(&mut rng, &[0.5, 0.5, 0.5, 0.5], &[0.0; 4], 400);
    let mut ae = fitted_base(&mut rng, &a);
    let b = line_rows(&mut rng, &[0.5, 0.5, 0.5, 0.5], &[1.5, -1.0, 0.5, 1.0], 400);
    let stat = ae.mean_error(&b).unwrap();
    let before = ae.clone();
    let mut h = Hypernetwork::new(&ae, &dsd_cfg(150), &mut rng).unwrap();
    train_dsd(&mut ae, &mut h, &b, &dsd_cfg(150), &mut rng).unwrap();
    assert_eq!(ae, before, "static weights are frozen by default");
    let dynm = dynamic_mean(&ae, &h, &b);
    assert!(dynm < 0.5 * stat, "dynamic {dynm} vs static {stat}");
}

#[test]
fn zero_epochs_leave_hypernetwork_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = line_rows(&mut rng, &[0.5; 4], &[0.0; 4], 20);
    let mut ae = Autoencoder::random(4, 1, 2, &mut rng).unwrap();
    let mut h = Hypernetwork::new(&ae, &dsd_cfg(0), &mut rng).unwrap();
    let (ae0, h0) = (ae.clone(), h.clone());
    train_dsd(&mut ae, &mut h, &data, &dsd_cfg(0), &mut rng).unwrap();
    assert_eq!(ae, ae0);
    assert_eq!(h, h0);
}
