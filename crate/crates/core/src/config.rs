//! Flat `key = value` configuration text.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are the dotted names listed by [`PipelineConfig::entries`]; unknown
//! keys and duplicate assignments are errors. Later sources override
//! earlier ones only through explicit calls to [`PipelineConfig::set`].

use std::path::Path;
use std::str::FromStr;

use crate::dsd::ShiftTargets;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::pipeline::PipelineConfig;

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn targets_name(t: ShiftTargets) -> &'static str {
    match t {
        ShiftTargets::All => "all",
        ShiftTargets::Encoder => "encoder",
        ShiftTargets::Decoder => "decoder",
    }
}

fn set_adam(a: &mut AdamConfig, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "lr" => a.lr = parse(key, value)?,
        "decay" => a.decay = parse(key, value)?,
        "beta1" => a.beta1 = parse(key, value)?,
        "beta2" => a.beta2 = parse(key, value)?,
        "eps" => a.eps = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn adam_entries(out: &mut Vec<(String, String)>, prefix: &str, a: &AdamConfig) {
    for (k, v) in [("lr", a.lr), ("decay", a.decay), ("beta1", a.beta1), ("beta2", a.beta2), ("eps", a.eps)] {
        out.push((format!("{prefix}.{k}"), v.to_string()));
    }
}

/// Parses config text into `(line, key, value)` triples.
pub fn parse_assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some((first, _, _)) = out.iter().find(|(_, key, _)| key == k) {
            return Err(Error::Config(format!("line {}: '{k}' already set on line {first}", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Assigns one key. Values are typed but not range-checked here; call
    /// [`PipelineConfig::validate`] once all sources are applied.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "mu_p_proportion" => self.mu_p_proportion = parse(key, v)?,
            "mu_e" => self.mu_e = parse(key, v)?,
            "label_passes" => self.label_passes = parse(key, v)?,
            "mu_o_frac" => self.mu_o_frac = parse(key, v)?,
            "t_max" => self.t_max = parse(key, v)?,
            "uncertainty_unit" => {
                self.uncertainty_unit = if v == "max" { None } else { Some(parse(key, v)?) }
            }
            "history_ratio" => self.history_ratio = parse(key, v)?,
            "update_buffer" => self.update_buffer = parse(key, v)?,
            "buffer_normal_only" => self.buffer_normal_only = parse_bool(key, v)?,
            "update_epochs" => self.update_epochs = parse(key, v)?,
            "swap_lag" => self.swap_lag = parse(key, v)?,
            "full_retrain" => self.full_retrain = parse_bool(key, v)?,
            "emit_shift_norm" => self.emit_shift_norm = parse_bool(key, v)?,
            "scd.latent_dim" => self.scd.latent_dim = if v == "auto" { None } else { Some(parse(key, v)?) },
            "scd.variance_threshold" => self.scd.variance_threshold = parse(key, v)?,
            "scd.encoder_layers" => self.scd.encoder_layers = parse(key, v)?,
            "scd.epochs" => self.scd.epochs = parse(key, v)?,
            "scd.batch_size" => self.scd.batch_size = parse(key, v)?,
            "iec.hidden" => self.iec.hidden = parse_list(key, v)?,
            "iec.gamma" => self.iec.gamma = parse(key, v)?,
            "iec.epochs" => self.iec.epochs = parse(key, v)?,
            "iec.batch_size" => self.iec.batch_size = parse(key, v)?,
            "iec.exposure_weight" => self.iec.exposure_weight = parse(key, v)?,
            "iec.exposure_scale" => self.iec.exposure_scale = parse(key, v)?,
            "dsd.embed_dim" => self.dsd.embed_dim = parse(key, v)?,
            "dsd.shared_hidden" => self.dsd.shared_hidden = parse_list(key, v)?,
            "dsd.targets" => self.dsd.targets = v.parse().map_err(|_| Error::Config(format!("{key}: expected all, encoder or decoder, got '{v}'")))?,
            "dsd.epochs" => self.dsd.epochs = parse(key, v)?,
            "dsd.batch_size" => self.dsd.batch_size = parse(key, v)?,
            "dsd.freeze_static" => self.dsd.freeze_static = parse_bool(key, v)?,
            "dsd.static_lr_scale" => self.dsd.static_lr_scale = parse(key, v)?,
            "dto.tau" => self.dto.tau = parse(key, v)?,
            "dto.kappa" => self.dto.kappa = parse(key, v)?,
            "dto.lambda" => self.dto.lambda = parse(key, v)?,
            "dto.ema_beta" => self.dto.ema_beta = parse(key, v)?,
            "dto.normal_window" => self.dto.normal_window = parse(key, v)?,
            "dto.candidate_window" => self.dto.candidate_window = parse(key, v)?,
            "dto.warmup_min" => self.dto.warmup_min = parse(key, v)?,
            _ => {
                let handled = match key.split_once('.') {
                    Some(("scd", f)) => set_adam(&mut self.scd.adam, key, f, v)?,
                    Some(("iec", f)) => set_adam(&mut self.iec.adam, key, f, v)?,
                    Some(("dsd", f)) => set_adam(&mut self.dsd.adam, key, f, v)?,
                    _ => false,
                };
                if !handled {
                    return Err(Error::Config(format!("unknown key '{key}'")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        put("mu_p_proportion", self.mu_p_proportion.to_string());
        put("mu_e", self.mu_e.to_string());
        put("label_passes", self.label_passes.to_string());
        put("mu_o_frac", self.mu_o_frac.to_string());
        put("t_max", self.t_max.to_string());
        put("uncertainty_unit", self.uncertainty_unit.map_or_else(|| "max".into(), |u| u.to_string()));
        put("history_ratio", self.history_ratio.to_string());
        put("update_buffer", self.update_buffer.to_string());
        put("buffer_normal_only", self.buffer_normal_only.to_string());
        put("update_epochs", self.update_epochs.to_string());
        put("swap_lag", self.swap_lag.to_string());
        put("full_retrain", self.full_retrain.to_string());
        put("emit_shift_norm", self.emit_shift_norm.to_string());
        put("scd.latent_dim", self.scd.latent_dim.map_or_else(|| "auto".into(), |l| l.to_string()));
        put("scd.variance_threshold", self.scd.variance_threshold.to_string());
        put("scd.encoder_layers", self.scd.encoder_layers.to_string());
        put("scd.epochs", self.scd.epochs.to_string());
        put("scd.batch_size", self.scd.batch_size.to_string());
        put("iec.hidden", list(&self.iec.hidden));
        put("iec.gamma", self.iec.gamma.to_string());
        put("iec.epochs", self.iec.epochs.to_string());
        put("iec.batch_size", self.iec.batch_size.to_string());
        put("iec.exposure_weight", self.iec.exposure_weight.to_string());
        put("iec.exposure_scale", self.iec.exposure_scale.to_string());
        put("dsd.embed_dim", self.dsd.embed_dim.to_string());
        put("dsd.shared_hidden", list(&self.dsd.shared_hidden));
        put("dsd.targets", targets_name(self.dsd.targets).into());
        put("dsd.epochs", self.dsd.epochs.to_string());
        put("dsd.batch_size", self.dsd.batch_size.to_string());
        put("dsd.freeze_static", self.dsd.freeze_static.to_string());
        put("dsd.static_lr_scale", self.dsd.static_lr_scale.to_string());
        put("dto.tau", self.dto.tau.to_string());
        put("dto.kappa", self.dto.kappa.to_string());
        put("dto.lambda", self.dto.lambda.to_string());
        put("dto.ema_beta", self.dto.ema_beta.to_string());
        put("dto.normal_window", self.dto.normal_window.to_string());
        put("dto.candidate_window", self.dto.candidate_window.to_string());
        put("dto.warmup_min", self.dto.warmup_min.to_string());
        adam_entries(&mut out, "scd", &self.scd.adam);
        adam_entries(&mut out, "iec", &self.iec.adam);
        adam_entries(&mut out, "dsd", &self.dsd.adam);
        out
    }

    /// Resolved configuration in the same text format it is read from.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies config text on top of `self` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, k, v) in parse_assignments(text)? {
            self.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {line}: {}", e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    /// Defaults overridden by the text, then validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
