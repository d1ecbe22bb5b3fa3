use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{run_offline_update, score_instance, ModelBundle, PipelineConfig};
use crate::dto::{Decision, ThresholdState, Verdict};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Update rule: fire when the accumulated high-uncertainty mass exceeds its
/// threshold or the model has gone `t_max` instances without an update.
pub fn offline_update_check(mass: f64, mass_threshold: f64, since_update: u64, t_max: u64) -> bool {
    mass > mass_threshold || since_update > t_max
}

/// Sliding sum of `1[U > μ_e] · U` over the most recent instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMonitor {
    capacity: usize,
    window: VecDeque<f64>,
    mass: f64,
    pub mass_threshold: f64,
    pub t_max: u64,
    /// Instances since the last completed update.
    pub since_update: u64,
    /// Instances to wait before the trigger may fire again.
    hold_off: u64,
}

impl UpdateMonitor {
    pub fn new(capacity: usize, mass_threshold: f64, t_max: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            window: VecDeque::with_capacity(capacity),
            mass: 0.0,
            mass_threshold,
            t_max,
            since_update: 0,
            hold_off: 0,
        }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self::new(cfg.dto.normal_window, cfg.update_mass_threshold(), cfg.t_max)
    }

    pub fn push(&mut self, uncertainty: f64, mu_e: f64) {
        let m = if uncertainty > mu_e { uncertainty } else { 0.0 };
        if self.window.len() == self.capacity {
            if let Some(old) = self.window.pop_front() {
                self.mass -= old;
            }
        }
        self.window.push_back(m);
        self.mass = (self.mass + m).max(0.0);
        if self.window.len() == 1 {
            self.mass = m;
        }
        self.since_update += 1;
        self.hold_off = self.hold_off.saturating_sub(1);
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Contributions currently in the window, oldest first.
    pub fn contributions(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    pub fn should_update(&self) -> bool {
        self.hold_off == 0 && offline_update_check(self.mass, self.mass_threshold, self.since_update, self.t_max)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.mass = 0.0;
        self.since_update = 0;
        self.hold_off = 0;
    }

    pub fn defer(&mut self, instances: u64) {
        self.hold_off = instances;
    }
}

/// Produces an updated bundle from the current one, the buffered raw
/// instances, and a seed.
pub type Updater<T> = dyn Fn(&ModelBundle<T>, &[Vec<f64>], u64) -> Result<ModelBundle<T>> + Send + Sync;

enum Job<T> {
    Running(JoinHandle<Result<ModelBundle<T>>>),
    Done(Result<ModelBundle<T>>),
}

struct Pending<T> {
    job: Job<T>,
    swap_at: u64,
}

impl<T> Pending<T> {
    fn settle(&mut self) {
        let job = std::mem::replace(&mut self.job, Job::Done(Err(Error::Update("update result taken".into()))));
        self.job = match job {
            Job::Running(h) => Job::Done(h.join().unwrap_or_else(|_| Err(Error::Update("update thread panicked".into())))),
            done => done,
        };
    }

    fn outcome(mut self) -> Result<ModelBundle<T>> {
        self.settle();
        match self.job {
            Job::Done(r) => r,
            Job::Running(_) => unreachable!("settled above"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instances: u64,
    pub updates: u64,
    pub failed_updates: u64,
    pub model_version: u64,
}

/// An update that finished training but had not been swapped in yet. A
/// successful result is saved under `pending/` next to the checkpoint.
#[derive(Serialize, Deserialize)]
struct PendingCheckpoint {
    swap_at: u64,
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct StreamCheckpoint {
    next_index: u64,
    state: ThresholdState,
    monitor: UpdateMonitor,
    buffer: Vec<Vec<f64>>,
    summary: RunSummary,
    #[serde(default)]
    pending: Option<PendingCheckpoint>,
}

/// Single-consumer stream scorer. Offline updates train on a snapshot in a
/// background thread; the new bundle replaces the old one between instances
/// exactly `swap_lag` instances after the trigger, so output does not depend
/// on thread timing.
pub struct StreamRunner<T: Real> {
    bundle: Arc<ModelBundle<T>>,
    state: ThresholdState,
    monitor: UpdateMonitor,
    buffer: VecDeque<Vec<f64>>,
    cfg: PipelineConfig,
    next_index: u64,
    pending: Option<Pending<T>>,
    updater: Arc<Updater<T>>,
    summary: RunSummary,
}

impl<T: Real> StreamRunner<T> {
    pub fn new(bundle: ModelBundle<T>, cfg: PipelineConfig) -> Result<Self> {
        let cfg2 = cfg.clone();
        let updater: Arc<Updater<T>> = Arc::new(move |b, recent, seed| run_offline_update(b, recent, &cfg2, seed));
        Self::with_updater(bundle, cfg, updater)
    }

    pub fn with_updater(bundle: ModelBundle<T>, cfg: PipelineConfig, updater: Arc<Updater<T>>) -> Result<Self> {
        cfg.validate()?;
        bundle.validate()?;
        let state = bundle.threshold_state(&cfg.dto)?;
        let summary = RunSummary {
            model_version: bundle.version,
            ..RunSummary::default()
        };
        Ok(Self {
            monitor: UpdateMonitor::from_config(&cfg),
            buffer: VecDeque::with_capacity(cfg.update_buffer),
            bundle: Arc::new(bundle),
            state,
            cfg,
            next_index: 0,
            pending: None,
            updater,
            summary,
        })
    }

    pub fn bundle(&self) -> &ModelBundle<T> {
        &self.bundle
    }

    pub fn state(&self) -> &ThresholdState {
        &self.state
    }

    pub fn monitor(&self) -> &UpdateMonitor {
        &self.monitor
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    pub fn update_in_flight(&self) -> bool {
        self.pending.is_some()
    }

    pub fn process(&mut self, x: &[f64]) -> Result<Verdict> {
        if self.pending.as_ref().is_some_and(|p| self.next_index >= p.swap_at) {
            self.complete_update();
        }
        let index = self.next_index;
        let (mut v, due) = score_instance(&self.bundle, &mut self.state, &mut self.monitor, x, index)?;
        if !self.cfg.emit_shift_norm {
            v.shift_norm = None;
        }
        if !self.cfg.buffer_normal_only || v.decision == Decision::Normal {
            if self.buffer.len() == self.cfg.update_buffer {
                self.buffer.pop_front();
            }
            self.buffer.push_back(x.to_vec());
        }
        self.next_index += 1;
        self.summary.instances += 1;
        if due && self.pending.is_none() {
            self.launch_update();
        }
        Ok(v)
    }

    fn launch_update(&mut self) {
        let snapshot = Arc::clone(&self.bundle);
        let recent: Vec<Vec<f64>> = self.buffer.iter().cloned().collect();
        let seed = self.cfg.seed.wrapping_add(1 + snapshot.version).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let updater = Arc::clone(&self.updater);
        info!(
            "offline update triggered at instance {} (mass {:.4}, {} since last update)",
            self.next_index,
            self.monitor.mass(),
            self.monitor.since_update
        );
        let handle = std::thread::spawn(move || updater(&snapshot, &recent, seed));
        self.pending = Some(Pending {
            job: Job::Running(handle),
            swap_at: self.next_index + self.cfg.swap_lag,
        });
    }

    fn complete_update(&mut self) {
        let Some(p) = self.pending.take() else { return };
        let outcome = p.outcome().and_then(|b| {
            if b.version <= self.bundle.version {
                return Err(Error::Update("updated bundle did not advance the version".into()));
            }
            if !b.is_finite() {
                return Err(Error::Update("updated bundle has non-finite parameters".into()));
            }
            b.validate()?;
            Ok(b)
        });
        match outcome {
            Ok(b) => {
                self.state.reinitialize_on_drift();
                self.state.set_bootstrap(b.bootstrap, b.mu_t);
                self.monitor.reset();
                self.summary.updates += 1;
                self.summary.model_version = b.version;
                info!("swapped in model version {} at instance {}", b.version, self.next_index);
                self.bundle = Arc::new(b);
            }
            Err(e) => {
                warn!("offline update failed, keeping version {}: {e}", self.bundle.version);
                self.summary.failed_updates += 1;
                self.monitor.defer(self.cfg.dto.normal_window as u64);
            }
        }
    }

    /// Waits for an in-flight update and applies it.
    pub fn flush(&mut self) {
        if self.pending.is_some() {
            self.complete_update();
        }
    }

    /// Scores every row, writing one NDJSON record per instance.
    pub fn run_ndjson<'a, W: Write, I: IntoIterator<Item = &'a Vec<f64>>>(&mut self, rows: I, mut out: W) -> Result<()> {
        for x in rows {
            let v = self.process(x)?;
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Bundle files plus `stream.json` (threshold state, monitor, buffer).
    /// An in-flight update is waited for but not swapped in early: its
    /// result is stored and applied at the same index after resuming.
    pub fn checkpoint(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.bundle.save(dir)?;
        let pending_dir = dir.join("pending");
        if pending_dir.exists() {
            std::fs::remove_dir_all(&pending_dir)?;
        }
        let pending = match self.pending.as_mut() {
            None => None,
            Some(p) => {
                p.settle();
                let error = match &p.job {
                    Job::Done(Ok(b)) => {
                        b.save(&pending_dir)?;
                        None
                    }
                    Job::Done(Err(e)) => Some(e.to_string()),
                    Job::Running(_) => unreachable!("settled above"),
                };
                Some(PendingCheckpoint { swap_at: p.swap_at, error })
            }
        };
        let cp = StreamCheckpoint {
            pending,
            next_index: self.next_index,
            state: self.state.clone(),
            monitor: self.monitor.clone(),
            buffer: self.buffer.iter().cloned().collect(),
            summary: self.summary.clone(),
        };
        std::fs::write(dir.join("stream.json"), serde_json::to_string(&cp)?)?;
        Ok(())
    }

    pub fn resume(dir: impl AsRef<Path>, cfg: PipelineConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let bundle = ModelBundle::load(dir)?;
        let cp: StreamCheckpoint = serde_json::from_str(&std::fs::read_to_string(dir.join("stream.json"))?)?;
        let mut r = Self::new(bundle, cfg)?;
        r.next_index = cp.next_index;
        r.state = cp.state;
        r.monitor = cp.monitor;
        r.buffer = cp.buffer.into();
        r.summary = cp.summary;
        r.pending = match cp.pending {
            None => None,
            Some(p) => {
                let outcome = match p.error {
                    Some(msg) => Err(Error::Update(msg)),
                    None => Ok(ModelBundle::load(dir.join("pending"))?),
                };
                Some(Pending {
                    job: Job::Done(outcome),
                    swap_at: p.swap_at,
                })
            }
        };
        Ok(r)
    }
}

impl<T: Real> Drop for StreamRunner<T> {
    fn drop(&mut self) {
        if let Some(p) = self.pending.take() {
            let _ = p.outcome();
        }
    }
}
