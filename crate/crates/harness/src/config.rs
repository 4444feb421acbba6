//! Experiment configuration: TOML with fixed sections, command-line
//! overrides, and a canonical hash.
//!
//! The hash covers every resolved field (defaults included) except
//! `run.out` and `run.threads`, which cannot change results. Fields are
//! flattened to `section.key = value` lines, sorted, and hashed with SHA-256.

use std::path::Path;

use gradguess::guess::GuessNorm;
use gradguess::rng::UniformRange;
use gradguess::{AdamParams, GuessOptions, OptimizerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub measure: MeasureSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
    pub out: String,
    /// Worker threads; 0 uses the machine default.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            seed: 0,
            out: "out".into(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `synth-clusters`, `digits`, `mnist`, `cifar` or `synth-cifar`.
    pub source: String,
    /// Directory for file-backed sources; empty means the source's default.
    pub path: String,
    /// Examples kept from the training split; 0 keeps all.
    pub train_size: usize,
    pub test_size: usize,
    /// synth-clusters only.
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    /// Held-out fraction for sources without a test split.
    pub test_fraction: f64,
    pub hflip: bool,
    pub crop_pad: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synth-clusters".into(),
            path: String::new(),
            train_size: 0,
            test_size: 0,
            classes: 4,
            dim: 16,
            per_class: 250,
            separation: 10.0,
            test_fraction: 0.2,
            hflip: false,
            crop_pad: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Number of weight layers.
    pub depth: usize,
    pub width: usize,
    pub bias: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            depth: 3,
            width: 64,
            bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub methods: Vec<String>,
    /// `sgd`, `adamw` or `stable-adamw`.
    pub optimizer: String,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub replicates: usize,
    /// `example`, `layer` or `none`.
    pub norm: String,
    pub svd_keep_top: bool,
    /// Self-sharpening noise: `centered` for U(-1, 1), `unit` for U(0, 1).
    pub noise: String,
    /// Evaluate the full training set every this many steps (0: per epoch only).
    pub eval_every: u64,
    /// Train accuracy whose first crossing is reported as steps-to-threshold.
    pub threshold: f64,
    pub checkpoint_every: u64,
    /// Log the training method's own oracle cosine each epoch, averaged over
    /// `measure.guesses` draws.
    pub log_cosine: bool,
    /// Log the effective rank of every weight matrix each epoch.
    pub log_rank: bool,
    /// Sweep grids.
    pub lr_grid: Vec<f64>,
    pub optimizers: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamParams::default();
        TrainSection {
            methods: vec!["backprop".into()],
            optimizer: "adamw".into(),
            momentum: 0.0,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            lr: 1e-3,
            batch_size: 64,
            epochs: 10,
            replicates: 1,
            norm: "example".into(),
            svd_keep_top: true,
            noise: "centered".into(),
            eval_every: 0,
            threshold: 0.0,
            checkpoint_every: 0,
            log_cosine: false,
            log_rank: false,
            lr_grid: vec![1e-2, 1e-3, 1e-4, 1e-5],
            optimizers: vec!["sgd".into(), "adamw".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    /// Methods measured (cosine, replications, onestep).
    pub methods: Vec<String>,
    /// Held-out examples used for cosine measurements.
    pub batch: usize,
    /// Single-guess draws averaged per cosine measurement.
    pub guesses: usize,
    /// Measure every this many epochs.
    pub every: u64,
    /// Backprop epochs before replication/one-step/subspace measurements.
    pub warmup_epochs: u64,
    pub ks: Vec<usize>,
    pub step_grid: Vec<f64>,
    pub m_grid: Vec<usize>,
    pub center: bool,
    pub powers: Vec<f64>,
    pub bias_k: Vec<u32>,
    pub bias_dim: usize,
    pub bias_replicates: usize,
    /// Independent batches / examples per measurement.
    pub repeats: usize,
    /// Replicates and batch size for the W^T bias-law check.
    pub law_replicates: usize,
    pub law_batch: usize,
    /// Momentum values for the multi-step slerp-control comparison (empty: skipped).
    pub momenta: Vec<f64>,
    /// Target cosine of the slerp control.
    pub slerp_cos: f64,
    /// Method the slerp control is compared against.
    pub compare: String,
}

impl Default for MeasureSection {
    fn default() -> Self {
        MeasureSection {
            methods: ["wt", "downstream:1", "act-mixing", "act-perturb", "directional"]
                .map(String::from)
                .to_vec(),
            batch: 256,
            guesses: 8,
            every: 1,
            warmup_epochs: 0,
            ks: gradguess::metrics::doubling_grid(8192),
            step_grid: gradguess::metrics::STEP_GRID.to_vec(),
            m_grid: vec![1, 2, 5, 10, 20, 50],
            center: true,
            powers: vec![0.5, 1.0, 2.0, 4.0],
            bias_k: vec![0, 1, 2, 3],
            bias_dim: 8,
            bias_replicates: 100_000,
            repeats: 1,
            law_replicates: 10_000,
            law_batch: 8,
            momenta: Vec::new(),
            slerp_cos: 0.03,
            compare: "wt".into(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: RunSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            measure: MeasureSection::default(),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {spec:?} is not key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| config_err(format!("override key {key:?} must be section.field")))?;
    let sec = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sec = sec
        .as_table_mut()
        .ok_or_else(|| config_err(format!("{section} is not a section")))?;
    sec.insert(field.to_string(), parse_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if self.model.depth < 2 || self.model.width == 0 {
            return Err(config_err("model.depth must be >= 2 and model.width >= 1"));
        }
        if t.batch_size == 0 || t.replicates == 0 {
            return Err(config_err("train.batch_size and train.replicates must be >= 1"));
        }
        if !(t.lr > 0.0) {
            return Err(config_err("train.lr must be > 0"));
        }
        if t.methods.is_empty() {
            return Err(config_err("train.methods is empty"));
        }
        crate::method::parse_methods(&t.methods)?;
        crate::method::parse_methods(&self.measure.methods)?;
        self.optimizer_kind(&t.optimizer)?;
        self.guess_options()?;
        Ok(())
    }

    pub fn optimizer_kind(&self, name: &str) -> Result<OptimizerKind> {
        let t = &self.train;
        let adam = AdamParams {
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
        };
        let kind = match name {
            "sgd" => OptimizerKind::Sgd { momentum: t.momentum },
            "adamw" => OptimizerKind::AdamW(adam),
            "stable-adamw" => OptimizerKind::StableAdamW(adam),
            other => {
                // Also accept explicit forms such as `sgd:0.9`.
                other
                    .parse()
                    .map_err(|e| config_err(format!("optimizer {other:?}: {e}")))?
            }
        };
        kind.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(kind)
    }

    pub fn guess_options(&self) -> Result<GuessOptions> {
        let norm: GuessNorm = self.train.norm.parse().map_err(|e| config_err(format!("{e}")))?;
        let uniform = match self.train.noise.as_str() {
            "centered" => UniformRange::Centered,
            "unit" => UniformRange::Unit,
            other => return Err(config_err(format!("unknown noise {other:?}"))),
        };
        Ok(GuessOptions {
            norm,
            uniform,
            svd_keep_top: self.train.svd_keep_top,
            mask: true,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sorted `section.key = value` lines that enter the hash.
    pub fn canonical_lines(&self) -> Vec<String> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.retain(|l| !l.starts_with("run.out =") && !l.starts_with("run.threads ="));
        lines.sort();
        lines
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in self.canonical_lines() {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First twelve hex digits of the hash.
    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
