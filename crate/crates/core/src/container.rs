//! Versioned JSON container for trained components.
//!
//! ```json
//! {
//!   "format": "driftwatch-model",
//!   "version": 1,
//!   "role": "scd" | "iec" | "dsd" | "bundle",
//!   "nets":    { name: { "layers": [ { "weight": { "rows", "cols", "data" },
//!                                      "bias": [...], "activation": "relu" } ] } },
//!   "tensors": { name: { "rows", "cols", "data" } },
//!   "vectors": { name: [...] },
//!   "scalars": { name: number },
//!   "meta":    { name: string }
//! }
//! ```
//!
//! Weight data is row-major, `rows = N_in`, `cols = N_out`. Values are
//! stored as float64 and written with shortest round-trip formatting, so
//! reading back reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsd::{Hypernetwork, ShiftGenerator};
use crate::error::{Error, Result};
use crate::iec::EvidentialClassifier;
use crate::nn::{Dense, Matrix, Mlp};
use crate::scalar::Real;
use crate::scd::Autoencoder;

pub const FORMAT: &str = "driftwatch-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub format: String,
    pub version: u32,
    pub role: String,
    #[serde(default)]
    pub nets: BTreeMap<String, Mlp<f64>>,
    #[serde(default)]
    pub tensors: BTreeMap<String, Matrix<f64>>,
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn cast_matrix<A: Real, B: Real>(m: &Matrix<A>) -> Result<Matrix<B>> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| B::of(v.as_f64())).collect())
}

fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|x| B::of(x.as_f64())).collect()
}

/// Rebuilds a network through the validating constructors.
fn cast_mlp<A: Real, B: Real>(net: &Mlp<A>) -> Result<Mlp<B>> {
    let layers = net
        .layers()
        .iter()
        .map(|l| Dense::new(cast_matrix(&l.weight)?, cast_vec(&l.bias), l.activation))
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers)
}

impl ModelContainer {
    pub fn new(role: &str) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            role: role.into(),
            nets: BTreeMap::new(),
            tensors: BTreeMap::new(),
            vectors: BTreeMap::new(),
            scalars: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Container(e.to_string()))?;
        if c.format != FORMAT {
            return Err(Error::Container(format!("unknown format '{}'", c.format)));
        }
        if c.version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn expect_role(&self, role: &str) -> Result<()> {
        if self.role != role {
            return Err(Error::Container(format!("expected role '{role}', found '{}'", self.role)));
        }
        Ok(())
    }

    pub fn put_net<T: Real>(&mut self, name: &str, net: &Mlp<T>) -> Result<()> {
        self.nets.insert(name.into(), cast_mlp(net)?);
        Ok(())
    }

    pub fn net<T: Real>(&self, name: &str) -> Result<Mlp<T>> {
        let net = self
            .nets
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing net '{name}'")))?;
        cast_mlp(net).map_err(|e| Error::Container(format!("net '{name}': {e}")))
    }

    pub fn put_tensor<T: Real>(&mut self, name: &str, m: &Matrix<T>) -> Result<()> {
        self.tensors.insert(name.into(), cast_matrix(m)?);
        Ok(())
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Matrix<T>> {
        let m = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing tensor '{name}'")))?;
        cast_matrix(m).map_err(|e| Error::Container(format!("tensor '{name}': {e}")))
    }

    pub fn put_vector<T: Real>(&mut self, name: &str, v: &[T]) {
        self.vectors.insert(name.into(), cast_vec(v));
    }

    pub fn vector<T: Real>(&self, name: &str) -> Result<Vec<T>> {
        let v = self
            .vectors
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing vector '{name}'")))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Container(format!("vector '{name}' has non-finite values")));
        }
        Ok(cast_vec(v))
    }

    pub fn put_scalar(&mut self, name: &str, v: f64) {
        self.scalars.insert(name.into(), v);
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Container(format!("missing scalar '{name}'")))
    }

    pub fn meta(&self, name: &str) -> Result<&str> {
        self.meta
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Container(format!("missing meta '{name}'")))
    }
}

/// Components that persist through a [`ModelContainer`].
pub trait Persist: Sized {
    const ROLE: &'static str;

    fn to_container(&self) -> Result<ModelContainer>;

    fn from_container(c: &ModelContainer) -> Result<Self>;
}

impl<T: Real> Persist for Autoencoder<T> {
    const ROLE: &'static str = "scd";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new(Self::ROLE);
        c.put_net("encoder", &self.encoder)?;
        c.put_net("decoder", &self.decoder)?;
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_role(Self::ROLE)?;
        Autoencoder::new(c.net("encoder")?, c.net("decoder")?)
    }
}

impl<T: Real> Persist for EvidentialClassifier<T> {
    const ROLE: &'static str = "iec";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new(Self::ROLE);
        c.put_net("evidence", &self.net)?;
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_role(Self::ROLE)?;
        EvidentialClassifier::new(c.net("evidence")?)
    }
}

impl<T: Real> Persist for Hypernetwork<T> {
    const ROLE: &'static str = "dsd";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new(Self::ROLE);
        c.put_net("shared", &self.shared)?;
        for (i, (h, g)) in self.heads.iter().zip(&self.generators).enumerate() {
            c.put_net(&format!("head.{i}"), h)?;
            c.put_tensor(&format!("gen.{i}.w1"), &g.w1)?;
            c.put_vector(&format!("gen.{i}.b1"), &g.b1);
            c.put_tensor(&format!("gen.{i}.w2"), &g.w2)?;
            c.put_tensor(&format!("gen.{i}.b2"), &g.b2)?;
            c.put_tensor(&format!("gen.{i}.bias_bar"), &g.bias_bar)?;
        }
        let targets: Vec<String> = self.targets.iter().map(usize::to_string).collect();
        c.meta.insert("targets".into(), targets.join(","));
        c.meta.insert("target_layers".into(), self.target_layers.to_string());
        let shapes: Vec<String> = self
            .generators
            .iter()
            .map(|g| format!("{}x{}", g.target_shape().0, g.target_shape().1))
            .collect();
        c.meta.insert("shapes".into(), shapes.join(","));
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_role(Self::ROLE)?;
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Container(format!("bad layer index '{s}'")))
        };
        let t = c.meta("targets")?;
        let targets: Vec<usize> = if t.is_empty() {
            Vec::new()
        } else {
            t.split(',').map(parse).collect::<Result<_>>()?
        };
        let target_layers = parse(c.meta("target_layers")?)?;
        let mut heads = Vec::with_capacity(targets.len());
        let mut generators = Vec::with_capacity(targets.len());
        for i in 0..targets.len() {
            heads.push(c.net(&format!("head.{i}"))?);
            let g = ShiftGenerator {
                w1: c.tensor(&format!("gen.{i}.w1"))?,
                b1: c.vector(&format!("gen.{i}.b1"))?,
                w2: c.tensor(&format!("gen.{i}.w2"))?,
                b2: c.tensor(&format!("gen.{i}.b2"))?,
                bias_bar: c.tensor(&format!("gen.{i}.bias_bar"))?,
            };
            let (rows, cols) = g.target_shape();
            if g.w1.rows() != rows || g.b1.len() != rows || g.w2.shape() != (1, cols) || g.bias_bar.shape() != (rows, cols) {
                return Err(Error::Container(format!("generator {i} has inconsistent shapes")));
            }
            generators.push(g);
        }
        if targets.iter().any(|&t| t >= target_layers) {
            return Err(Error::Container("shift target beyond layer count".into()));
        }
        Ok(Hypernetwork {
            shared: c.net("shared")?,
            heads,
            generators,
            targets,
            target_layers,
        })
    }
}
