pub mod config;
pub mod container;
pub mod dsd;
pub mod dto;
pub mod error;
pub mod ingest;
pub mod iec;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod scd;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Autoencoder = scd::Autoencoder<f64>;
pub type EvidentialClassifier = iec::EvidentialClassifier<f64>;
pub type Hypernetwork = dsd::Hypernetwork<f64>;
pub type ModelBundle = pipeline::ModelBundle<f64>;
pub type StreamRunner = pipeline::StreamRunner<f64>;
