//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated
//! keys are rejected; missing keys take the defaults below. Optional values
//! accept `none`.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `data_dir` | `none` | directory holding train.txt, valid.txt, test.txt |
//! | `bundle` | `none` | preprocessed bundle, used instead of `data_dir` |
//! | `out` | `out` | output directory |
//! | `context` | `train` | context source splits: `train` or `train+valid` |
//! | `dim` | 256 | embedding dimension |
//! | `lr` | 0.005 | Adam learning rate |
//! | `l2` | 1e-7 | L2 coefficient on touched rows |
//! | `batch_size` | 512 | triples per step |
//! | `epochs` | 20 | maximum epochs |
//! | `layers` | 2 | aggregation layers |
//! | `adam_beta1` | 0.9 | |
//! | `adam_beta2` | 0.999 | |
//! | `adam_eps` | 1e-8 | |
//! | `lazy_adam` | true | update only rows with a nonzero gradient |
//! | `seed` | 42 | source of all randomness |
//! | `exclude_self` | false | drop each batch triple from its own context |
//! | `neighbor_cap` | `none` | sample at most this many context pairs per segment |
//! | `patience` | `none` | stop after this many epochs without improvement |
//! | `eval_mode` | `raw` | `raw` or `filtered` |
//! | `strict` | false | single-threaded fixed-order reductions |
//! | `threads` | 0 | worker threads, 0 for one per core |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aggre_core::{EvalMode, SplitFilter, TrainConfig};

use crate::error::{AppError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ContextPolicy {
    #[default]
    Train,
    TrainValid,
}

impl ContextPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ContextPolicy::Train => "train",
            ContextPolicy::TrainValid => "train+valid",
        }
    }

    pub fn splits(self) -> SplitFilter {
        match self {
            ContextPolicy::Train => SplitFilter::TRAIN_ONLY,
            ContextPolicy::TrainValid => SplitFilter::TRAIN_VALID,
        }
    }
}

impl FromStr for ContextPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(ContextPolicy::Train),
            "train+valid" => Ok(ContextPolicy::TrainValid),
            _ => Err(format!("expected train or train+valid, got {s:?}")),
        }
    }
}

pub fn parse_eval_mode(s: &str) -> Result<EvalMode, String> {
    match s {
        "raw" => Ok(EvalMode::Raw),
        "filtered" => Ok(EvalMode::Filtered),
        _ => Err(format!("expected raw or filtered, got {s:?}")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub out: PathBuf,
    pub context: ContextPolicy,
    pub train: TrainConfig,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            bundle: None,
            out: PathBuf::from("out"),
            context: ContextPolicy::Train,
            train: TrainConfig::default(),
            threads: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "data_dir",
    "bundle",
    "out",
    "context",
    "dim",
    "lr",
    "l2",
    "batch_size",
    "epochs",
    "layers",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lazy_adam",
    "seed",
    "exclude_self",
    "neighbor_cap",
    "patience",
    "eval_mode",
    "strict",
    "threads",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| AppError::Config(format!("{key}: cannot parse {raw:?}")))
}

fn optional<T: FromStr>(key: &str, raw: &str) -> Result<Option<T>> {
    if raw == "none" {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn opt_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data_dir" => self.data_dir = optional(key, raw)?,
            "bundle" => self.bundle = optional(key, raw)?,
            "out" => self.out = PathBuf::from(raw),
            "context" => self.context = raw.parse().map_err(|e| AppError::Config(format!("{key}: {e}")))?,
            "dim" => t.dim = value(key, raw)?,
            "lr" => t.learning_rate = value(key, raw)?,
            "l2" => t.l2_lambda = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "epochs" => t.max_epochs = value(key, raw)?,
            "layers" => t.num_layers = value(key, raw)?,
            "adam_beta1" => t.adam_beta1 = value(key, raw)?,
            "adam_beta2" => t.adam_beta2 = value(key, raw)?,
            "adam_eps" => t.adam_eps = value(key, raw)?,
            "lazy_adam" => t.lazy_adam = value(key, raw)?,
            "seed" => t.seed = value(key, raw)?,
            "exclude_self" => t.exclude_self = value(key, raw)?,
            "neighbor_cap" => t.neighbor_cap = optional(key, raw)?,
            "patience" => t.patience = optional(key, raw)?,
            "eval_mode" => t.eval_mode = parse_eval_mode(raw).map_err(|e| AppError::Config(format!("{key}: {e}")))?,
            "strict" => t.strict_determinism = value(key, raw)?,
            "threads" => self.threads = value(key, raw)?,
            _ => return Err(AppError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Overlays the assignments in `text` onto `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if seen.contains(&key) {
                return Err(AppError::Config(format!("line {}: key {key:?} given twice", i + 1)));
            }
            seen.push(key);
            self.set(key, raw).map_err(|e| match e {
                AppError::Config(m) => AppError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its resolved value, in documented order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| opt_text(&p.as_ref().map(|p| p.display().to_string()));
        let values = [
            path(&self.data_dir),
            path(&self.bundle),
            self.out.display().to_string(),
            self.context.name().to_string(),
            t.dim.to_string(),
            t.learning_rate.to_string(),
            t.l2_lambda.to_string(),
            t.batch_size.to_string(),
            t.max_epochs.to_string(),
            t.num_layers.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            t.adam_eps.to_string(),
            t.lazy_adam.to_string(),
            t.seed.to_string(),
            t.exclude_self.to_string(),
            opt_text(&t.neighbor_cap),
            opt_text(&t.patience),
            t.eval_mode.name().to_string(),
            t.strict_determinism.to_string(),
            self.threads.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data_dir.is_none() && self.bundle.is_none() {
            return Err(AppError::Config("either data_dir or bundle must be set".into()));
        }
        Ok(())
    }
}
