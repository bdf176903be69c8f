use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{build_task_stream, generate_synthetic, load_dataset, SyntheticSpec, TaskStream};
use crate::distill::LossWeights;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::exec::Exec;
use crate::learners::LearnerConfig;
use crate::sampler::{EpisodeSpec, SamplerConfig};
use crate::trainer::{BufferConfig, TrainConfig, Trainer};

/// Environment variable that overrides `train.seed`.
pub const SEED_ENV: &str = "ERD_SEED";

/// Where class data comes from: a dataset directory, or the synthetic
/// generator when no path is given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub n_meta_test: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_tasks: 8,
            classes_per_task: 5,
            n_meta_test: 20,
            seed: 0,
        }
    }
}

/// Full experiment description; the JSON form rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub stream: StreamConfig,
    pub learner: LearnerConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub sampler: SamplerConfig,
    pub buffer: BufferConfig,
    pub episode: EpisodeSpec,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Reads `path` (defaults when `None`), applies `ERD_SEED` if given, then
    /// every `key=value` override in order.
    pub fn load(path: Option<&Path>, env_seed: Option<&str>, sets: &[String]) -> Result<Self> {
        // overrides land on a fully populated tree so that nested keys such
        // as `buffer.policy.n_ex` exist before they are set
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file = serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            if !file.is_object() {
                return Err(Error::Config(format!("{}: top level must be an object", p.display())));
            }
            merge(&mut value, file);
        }
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
            set_path(&mut value, "train.seed", Value::from(seed))?;
        }
        for s in sets {
            apply_set(&mut value, s)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn trainer(&self, exec: Exec) -> Trainer {
        Trainer {
            train: self.train,
            learner: self.learner.clone(),
            weights: self.weights,
            sampler: self.sampler,
            episode: self.episode,
            buffer: self.buffer,
            eval: self.eval,
            exec,
        }
    }

    /// Loads or generates the classes and splits them into the task stream.
    pub fn build_stream(&self) -> Result<TaskStream> {
        let classes = match &self.data.path {
            Some(p) => load_dataset(p)?,
            None => generate_synthetic(&self.data.synthetic)?,
        };
        let s = &self.stream;
        build_task_stream(classes, s.n_tasks, s.classes_per_task, s.n_meta_test, s.seed)
    }

    /// Copy with every "auto" choice replaced by what it resolves to.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.buffer.selection = match self.buffer.selection.resolve(self.learner.kind) {
            crate::memory::Selection::Ntc => crate::trainer::SelectionChoice::Ntc,
            crate::memory::Selection::Random => crate::trainer::SelectionChoice::Random,
        };
        out
    }
}

/// Recursively overlays `patch` on `base`. Objects carrying a `kind` tag
/// replace the base object whole, since their fields depend on the tag.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses `key.path=value`. The value is read as JSON when it parses as
/// JSON and taken as a plain string otherwise.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key.trim(), value)
}

/// Sets a dotted path, creating intermediate objects as needed.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().unwrap()
            }
            _ => {
                return Err(Error::Config(format!(
                    "`{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}
