//! Run configuration (TOML). Every key has a default and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::SweepMethod;
use crate::optimizer::{AlgoVariant, Algorithm, LengthNorm, RewardMode, TrainerConfig};
use crate::persist;
use crate::tasks::{make_copy_task, InitSpec, TaskSpec};
use crate::utility::UtilityKind;

/// Relative output directories are resolved against this variable when set.
pub const OUTPUT_ROOT_VAR: &str = "CGRPO_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub task: TaskConfig,
    pub utility: UtilityConfig,
    pub algorithm: AlgorithmConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            task: TaskConfig::default(),
            utility: UtilityConfig::default(),
            algorithm: AlgorithmConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// `copy`, or `file` to load `path`.
    pub generator: String,
    pub path: Option<PathBuf>,
    pub vocab: usize,
    pub l_max: usize,
    pub prompts: usize,
    pub seed: u64,
    pub init: InitSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            generator: "copy".into(),
            path: None,
            vocab: 4,
            l_max: 4,
            prompts: 8,
            seed: 7,
            init: InitSpec::ReferencePrior {
                strength: 3.0,
                noise: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityConfig {
    pub kind: UtilityKind,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            kind: UtilityKind::LcsF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub algorithm: Algorithm,
    pub clip_epsilon: Option<f64>,
    pub kl_beta: f64,
    pub std_epsilon: f64,
    pub reward_mode: RewardMode,
    pub exclude_self: bool,
    pub length_norm: LengthNorm,
    pub inner_epochs: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let v = AlgoVariant::dr_grpo();
        Self {
            algorithm: v.algorithm,
            clip_epsilon: v.clip_epsilon,
            kl_beta: v.kl_beta,
            std_epsilon: v.std_epsilon,
            reward_mode: v.reward_mode,
            exclude_self: v.exclude_self,
            length_norm: v.length_norm,
            inner_epochs: 1,
        }
    }
}

impl AlgorithmConfig {
    pub fn variant(&self) -> AlgoVariant {
        AlgoVariant {
            algorithm: self.algorithm,
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
            std_epsilon: self.std_epsilon,
            reward_mode: self.reward_mode,
            exclude_self: self.exclude_self,
            length_norm: self.length_norm,
            force_std_normalization: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "G")]
    pub group_size: usize,
    /// Prompts per step; 0 uses every prompt.
    pub batch_size: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub eta_0: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Evaluate `L_C` and its gradient exactly at checkpoints.
    pub oracle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 32,
            batch_size: 0,
            horizon: 1000,
            eta_0: 1.0,
            checkpoint_every: 50,
            seed: 0,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    #[serde(rename = "G_eval")]
    pub g_eval: usize,
    /// Defaults to the training utility.
    pub kind_eval: Option<UtilityKind>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            g_eval: 32,
            kind_eval: None,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub g_set: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<SweepMethod>,
    /// Trained checkpoint; when absent and `train_inline` is set, a training
    /// run is performed first.
    pub checkpoint: Option<PathBuf>,
    pub train_inline: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            g_set: vec![4, 8, 16, 32],
            seeds: vec![0, 1, 2, 3, 4],
            methods: vec![SweepMethod::Mbr, SweepMethod::CgrpoTrained],
            checkpoint: None,
            train_inline: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&persist::read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.task.generator.as_str() {
            "copy" => {}
            "file" if self.task.path.is_some() => {}
            "file" => return Err(Error::Config("task.generator = \"file\" needs task.path".into())),
            other => return Err(Error::Config(format!("unknown task generator {other:?}"))),
        }
        if self.train.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be >= 1".into()));
        }
        if self.eval.g_eval < 2 {
            return Err(Error::Config(format!(
                "eval.G_eval must be >= 2, got {}",
                self.eval.g_eval
            )));
        }
        if let Some(s) = &self.sweep {
            if s.g_set.is_empty() {
                return Err(Error::Config("sweep.g_set must not be empty".into()));
            }
            if s.seeds.is_empty() {
                return Err(Error::Config("sweep.seeds must not be empty".into()));
            }
            if s.methods.is_empty() {
                return Err(Error::Config("sweep.methods must not be empty".into()));
            }
            if let Some(g) = s.g_set.iter().find(|&&g| g == 0) {
                return Err(Error::Config(format!("sweep.g_set entries must be >= 1, got {g}")));
            }
        }
        self.trainer_config().validate()
    }

    pub fn kind_eval(&self) -> UtilityKind {
        self.eval.kind_eval.unwrap_or(self.utility.kind)
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            utility: self.utility.kind,
            variant: self.algorithm.variant(),
            group_size: self.train.group_size,
            batch_size: self.train.batch_size,
            horizon: self.train.horizon,
            eta_0: self.train.eta_0,
            inner_epochs: self.algorithm.inner_epochs,
            seed: self.train.seed,
        }
    }

    pub fn build_task(&self) -> Result<TaskSpec> {
        let t = &self.task;
        match (t.generator.as_str(), &t.path) {
            ("file", Some(p)) => TaskSpec::load(p),
            _ => make_copy_task(t.vocab, t.l_max, t.prompts, t.seed, t.init),
        }
    }

    /// Output directory with the environment override applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    /// Canonical TOML rendering of the fully resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of [`RunConfig::to_toml`].
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
