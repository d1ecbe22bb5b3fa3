//! End-to-end runs used to benchmark the detector: train on the head of a
//! labelled stream, score every instance, and compare against the static
//! autoencoder alone.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use driftwatch::dto::{Detector, Verdict};
use driftwatch::error::Error;
use driftwatch::ingest::{auc_roc, load_csv, CsvSchema, LabeledStream};
use driftwatch::pipeline::{train, ModelBundle, PipelineConfig, RunSummary, StreamRunner, Updater};
use driftwatch::Result;

/// Bundled benchmark tables, each with a `label` column.
pub fn dataset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(format!("{name}.csv"))
}

pub fn load_dataset(name: &str) -> Result<LabeledStream> {
    load_csv(dataset_path(name), &CsvSchema::labeled("label"))
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub verdicts: Vec<Verdict>,
    /// Static autoencoder error of the initial bundle, never updated.
    pub frozen: Vec<f64>,
    pub summary: RunSummary,
    pub history: usize,
    pub train_time: Duration,
    pub score_time: Duration,
}

impl StreamRun {
    pub fn scores(&self) -> Vec<f64> {
        self.verdicts.iter().map(|v| v.score).collect()
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.verdicts.iter().map(|v| v.uncertainty).collect()
    }

    pub fn dynamic_fraction(&self) -> f64 {
        let n = self.verdicts.iter().filter(|v| v.detector == Detector::Dynamic).count();
        n as f64 / self.verdicts.len().max(1) as f64
    }

    /// Index of the first instance scored by a newer bundle after each swap.
    pub fn swaps(&self) -> Vec<u64> {
        self.verdicts
            .windows(2)
            .filter(|w| w[0].model_version != w[1].model_version)
            .map(|w| w[1].index)
            .collect()
    }
}

/// Trains on the configured history prefix and scores the whole stream,
/// prefix included.
pub fn run_stream(stream: &LabeledStream, cfg: &PipelineConfig) -> Result<StreamRun> {
    run_with(stream, cfg, None)
}

/// Same as [`run_stream`] with a replacement for the offline update.
pub fn run_with(stream: &LabeledStream, cfg: &PipelineConfig, updater: Option<Arc<Updater<f64>>>) -> Result<StreamRun> {
    let history = cfg.history_len(stream.len());
    let t0 = Instant::now();
    let bundle: ModelBundle<f64> = train(&stream.instances[..history], cfg)?;
    let train_time = t0.elapsed();
    let frozen = frozen_errors(&bundle, &stream.instances)?;
    let mut runner = match updater {
        Some(u) => StreamRunner::with_updater(bundle, cfg.clone(), u)?,
        None => StreamRunner::new(bundle, cfg.clone())?,
    };
    let t0 = Instant::now();
    let verdicts = stream.instances.iter().map(|x| runner.process(x)).collect::<Result<Vec<_>>>()?;
    let score_time = t0.elapsed();
    runner.flush();
    Ok(StreamRun {
        verdicts,
        frozen,
        summary: runner.summary().clone(),
        history,
        train_time,
        score_time,
    })
}

pub fn frozen_errors(bundle: &ModelBundle<f64>, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|x| Ok(bundle.scd.reconstruct(&bundle.standardizer.apply(x)?)?.error))
        .collect()
}

/// Mean AUCROC over consecutive windows of `[start, end)`; windows holding a
/// single class are skipped. `None` when every window is skipped.
pub fn windowed_auc(scores: &[f64], labels: &[u8], start: usize, end: usize, width: usize) -> Option<f64> {
    let aucs: Vec<f64> = (start..end)
        .step_by(width.max(1))
        .filter_map(|a| {
            let b = (a + width).min(end);
            auc_roc(&scores[a..b], &labels[a..b]).ok()
        })
        .collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    driftwatch::stats::median(v).unwrap_or(f64::NAN)
}

/// An updater that always fails, for exercising the fallback path.
pub fn refusing_updater() -> Arc<Updater<f64>> {
    Arc::new(|_, _, _| Err(Error::Update("refused".into())))
}
