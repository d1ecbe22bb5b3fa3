use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    Abrupt,
    Gradual,
    Incremental,
    Recurrent,
}

impl std::str::FromStr for DriftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abrupt" => Ok(Self::Abrupt),
            "gradual" => Ok(Self::Gradual),
            "incremental" => Ok(Self::Incremental),
            "recurrent" => Ok(Self::Recurrent),
            other => Err(Error::InvalidArgument(format!("unknown drift kind '{other}'"))),
        }
    }
}

/// Gaussian concept `x = mean + L z + scale·ε` with `z ~ N(0, I_r)` and
/// `ε ~ N(0, I_d)`; `loading` is `d × r`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub mean: Vec<f64>,
    pub loading: Vec<Vec<f64>>,
    pub scale: f64,
}

impl Concept {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal standard deviation per feature.
    pub fn marginal_std(&self) -> Vec<f64> {
        self.loading
            .iter()
            .map(|row| (row.iter().map(|v| v * v).sum::<f64>() + self.scale * self.scale).sqrt())
            .collect()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let rank = self.loading.first().map_or(0, Vec::len);
        let z: Vec<f64> = (0..rank).map(|_| rng.sample(StandardNormal)).collect();
        self.mean
            .iter()
            .zip(&self.loading)
            .map(|(m, row)| {
                let e: f64 = rng.sample(StandardNormal);
                m + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + self.scale * e
            })
            .collect()
    }

    /// Uniform over the `±6σ` box around the mean, rejecting points that lie
    /// inside the `±3σ` box in every feature.
    fn sample_anomaly<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.marginal_std();
        loop {
            let x: Vec<f64> = self
                .mean
                .iter()
                .zip(&sd)
                .map(|(m, s)| m + rng.random_range(-6.0..=6.0) * s)
                .collect();
            let inside = x.iter().zip(&self.mean).zip(&sd).all(|((v, m), s)| (v - m).abs() <= 3.0 * s);
            if !inside {
                return x;
            }
        }
    }

    fn lerp(&self, other: &Concept, t: f64) -> Concept {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        Concept {
            mean: self.mean.iter().zip(&other.mean).map(|(a, b)| mix(*a, *b)).collect(),
            loading: self
                .loading
                .iter()
                .zip(&other.loading)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(a, b)| mix(*a, *b)).collect())
                .collect(),
            scale: mix(self.scale, other.scale),
        }
    }

    /// Random concept with low-rank structure.
    pub fn random<R: Rng + ?Sized>(dim: usize, rank: usize, spread: f64, rng: &mut R) -> Self {
        Concept {
            mean: (0..dim).map(|_| rng.random_range(-spread..=spread)).collect(),
            loading: (0..dim)
                .map(|_| (0..rank).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
            scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub concepts: Vec<Concept>,
    pub n: usize,
    /// Duration bounds of a recurrent segment.
    pub segment_min: usize,
    pub segment_max: usize,
    pub anomaly_rate: f64,
    /// Length of a gradual or incremental transition.
    pub transition_width: usize,
}

impl DriftSpec {
    /// Spec with `k` random concepts in `dim` features. Recurrent segments
    /// last between one and four batches of 64.
    pub fn random(kind: DriftKind, n: usize, dim: usize, k: usize, anomaly_rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let rank = (dim / 3).max(1);
        let concepts = (0..k).map(|_| Concept::random(dim, rank, 3.0, &mut rng)).collect();
        Self {
            kind,
            concepts,
            n,
            segment_min: 64,
            segment_max: 256,
            anomaly_rate,
            transition_width: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.concepts.len() < 2 {
            return bad("a drifting stream needs at least two concepts");
        }
        let d = self.concepts[0].dim();
        if d == 0 || self.concepts.iter().any(|c| c.dim() != d || c.loading.len() != d) {
            return bad("concepts must share a positive dimension");
        }
        let rank = self.concepts[0].loading[0].len();
        if self.concepts.iter().any(|c| c.loading.iter().any(|r| r.len() != rank)) {
            return bad("concept loadings must share a rank");
        }
        if !(0.0..0.5).contains(&self.anomaly_rate) {
            return bad("anomaly rate must lie in [0, 0.5)");
        }
        if self.n < self.concepts.len() {
            return bad("stream shorter than the number of concepts");
        }
        if self.kind == DriftKind::Recurrent && (self.segment_min == 0 || self.segment_min > self.segment_max) {
            return bad("recurrent segments need 0 < segment_min <= segment_max");
        }
        Ok(())
    }
}

/// Generates the stream. Abrupt, gradual and incremental kinds visit each
/// concept once in equal segments; drift markers sit at segment starts
/// (the start of the transition for gradual and incremental kinds).
/// Recurrent streams cycle through the concepts with random durations.
pub fn synth_stream(spec: &DriftSpec, seed: u64) -> Result<LabeledStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.concepts.len();
    let mut markers = Vec::new();
    // Concept index (and for transitions, the mixing target) per instance.
    let mut plan: Vec<(usize, Option<(usize, f64)>)> = Vec::with_capacity(spec.n);
    match spec.kind {
        DriftKind::Recurrent => {
            let mut c = 0;
            while plan.len() < spec.n {
                if !plan.is_empty() {
                    markers.push(plan.len());
                }
                let len = rng.random_range(spec.segment_min..=spec.segment_max);
                for _ in 0..len.min(spec.n - plan.len()) {
                    plan.push((c, None));
                }
                c = (c + 1) % k;
            }
        }
        _ => {
            let seg = spec.n / k;
            let width = spec.transition_width.min(seg);
            for i in 0..spec.n {
                let c = (i / seg).min(k - 1);
                let into = i - c * seg;
                let transition = match spec.kind {
                    DriftKind::Abrupt => None,
                    _ if c + 1 < k && into >= seg - width && width > 0 => {
                        Some((c + 1, (into + width + 1 - seg) as f64 / (width + 1) as f64))
                    }
                    _ => None,
                };
                plan.push((c, transition));
            }
            for c in 1..k {
                let start = c * seg;
                markers.push(match spec.kind {
                    DriftKind::Abrupt => start,
                    _ => start - width,
                });
            }
        }
    }
    let mut instances = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut ids = Vec::with_capacity(spec.n);
    for (c, transition) in plan {
        let (concept, id) = match (spec.kind, transition) {
            (DriftKind::Gradual, Some((next, t))) => {
                if rng.random::<f64>() < t {
                    (spec.concepts[next].clone(), next)
                } else {
                    (spec.concepts[c].clone(), c)
                }
            }
            (DriftKind::Incremental, Some((next, t))) => (spec.concepts[c].lerp(&spec.concepts[next], t), c),
            _ => (spec.concepts[c].clone(), c),
        };
        let anomalous = rng.random::<f64>() < spec.anomaly_rate;
        instances.push(if anomalous {
            concept.sample_anomaly(&mut rng)
        } else {
            concept.sample(&mut rng)
        });
        labels.push(u8::from(anomalous));
        ids.push(id);
    }
    let mut s = LabeledStream::new(&format!("synthetic-{:?}", spec.kind).to_lowercase(), instances, Some(labels))?;
    s.meta.drift_markers = markers;
    s.concept_ids = Some(ids);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_abrupt_stream() {
        let spec = DriftSpec::random(DriftKind::Abrupt, 1000, 4, 2, 0.0, 1);
        let s = synth_stream(&spec, 3).unwrap();
        assert!(s.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert_eq!(s.meta.drift_markers, vec![500]);
        assert_eq!(s, synth_stream(&spec, 3).unwrap());
    }

    #[test]
    fn recurrent_revisits() {
        let spec = DriftSpec::random(DriftKind::Recurrent, 2000, 3, 2, 0.0, 1);
        let s = synth_stream(&spec, 9).unwrap();
        let ids = s.concept_ids.unwrap();
        let first_switch = ids.iter().position(|&c| c != ids[0]).unwrap();
        assert!(ids[first_switch..].contains(&ids[0]));
        assert!(s.meta.drift_markers.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gradual_and_incremental_markers() {
        for kind in [DriftKind::Gradual, DriftKind::Incremental] {
            let spec = DriftSpec::random(kind, 3000, 3, 3, 0.01, 2);
            let s = synth_stream(&spec, 4).unwrap();
            assert_eq!(s.meta.drift_markers, vec![500, 1500]);
            assert_eq!(s.len(), 3000);
        }
    }

    #[test]
    fn rejects_single_concept() {
        let mut spec = DriftSpec::random(DriftKind::Abrupt, 100, 3, 2, 0.0, 1);
        spec.concepts.truncate(1);
        assert!(synth_stream(&spec, 0).is_err());
    }
}
