//! Run configuration: one JSON document, layered as defaults ← file ←
//! `XMALIGN_SEED` ← command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xmalign_core::evaluation::EvalOptions;
use xmalign_core::synthdata::SynthSpec;
use xmalign_core::trainer::TrainConfig;
use xmalign_core::Error as CoreError;

use crate::error::{AppError, Result};
use crate::summarizer::{Backend, SummarizerConfig};

pub const SEED_ENV: &str = "XMALIGN_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: SynthSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub paths: Paths,
    pub summarizer: SummarizerConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out_dir>/embeddings.ndjson`.
    pub embeddings: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            data_dir: None,
            checkpoint: None,
            embeddings: None,
        }
    }
}

impl Paths {
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn embeddings(&self) -> PathBuf {
        self.embeddings.clone().unwrap_or_else(|| self.out_dir.join("embeddings.ndjson"))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub k_list: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_list: vec![32, 64, 128, 256],
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets a dotted key such as `train.lr`. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
pub fn set_key(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| AppError::Config(format!("cannot set {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(AppError::Config(format!("empty key {key:?}")))
}

/// Loads, layers and validates a configuration.
pub fn resolve(path: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
        if !file.is_object() {
            return Err(AppError::Config(format!("{}: top level must be an object", p.display())));
        }
        merge(&mut doc, file);
    }
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| AppError::Config(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
        set_key(&mut doc, "train.seed", &seed.to_string())?;
    }
    for (k, v) in overrides {
        set_key(&mut doc, k, v)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| AppError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Collects every problem, each prefixed with its section.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |section: &str, r: std::result::Result<(), CoreError>| match r {
            Ok(()) => {}
            Err(CoreError::Validation(v)) => problems.extend(v.into_iter().map(|m| format!("{section}: {m}"))),
            Err(e) => problems.push(format!("{section}: {e}")),
        };
        collect("data", self.data.validate());
        collect("train", self.train.validate());
        collect("eval", self.eval.validate());
        if self.train.encoder.input_dim != self.data.input_dim {
            problems.push(format!(
                "train.encoder.input_dim ({}) must equal data.input_dim ({})",
                self.train.encoder.input_dim, self.data.input_dim
            ));
        }
        if self.ablation.seeds.is_empty() {
            problems.push("ablation.seeds must not be empty".into());
        }
        if self.sweep.k_list.is_empty() || self.sweep.k_list.contains(&0) {
            problems.push("sweep.k_list must be a non-empty list of positive integers".into());
        }
        if self.summarizer.backend == Backend::Remote && self.summarizer.endpoint.is_none() {
            problems.push("summarizer.endpoint is required for the remote backend".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AppError::Config(problems.join("; ")))
        }
    }
}
