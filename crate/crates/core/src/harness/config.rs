//! Experiment configuration (TOML, schema version 1).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{CmnistParams, Example2Params, SpuriousMode};
use crate::error::{Error, Result};
use crate::fmi::{FmiConfig, Strategy, TrainConfig, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
use crate::models::{Activation, Architecture, OptimizerKind};
use crate::stats::{DEFAULT_ALPHA, DEFAULT_SAMPLE_SIZE};

pub const SCHEMA_VERSION: u32 = 1;

/// Suffix on an Example 2 environment id that re-draws the background
/// independently of the animal at its marginal rate.
pub const INDEPENDENT_SUFFIX: &str = ":indep";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fmi,
    Erm,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fmi => "fmi",
            Method::Erm => "erm",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fmi" => Ok(Method::Fmi),
            "erm" => Ok(Method::Erm),
            "oracle" => Ok(Method::Oracle),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Example2,
    Example2s,
    CmnistSyn,
    CmnistIdx,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Example2 => "example2",
            Family::Example2s => "example2s",
            Family::CmnistSyn => "cmnist-syn",
            Family::CmnistIdx => "cmnist-idx",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example2" => Ok(Family::Example2),
            "example2s" => Ok(Family::Example2s),
            "cmnist-syn" => Ok(Family::CmnistSyn),
            "cmnist-idx" => Ok(Family::CmnistIdx),
            _ => Err(Error::Config(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best checkpoint on a 20% split held out from the training data.
    #[default]
    TrainingDomainValidation,
    /// Best checkpoint on a separate sample of the test environments (oracle selection).
    TestDomainValidation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Error,
    Accuracy,
}

/// A positive row count or the literal `"full"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    Rows(usize),
    Named(FullBatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullBatch {
    Full,
}

impl Default for BatchSize {
    fn default() -> Self {
        BatchSize::Rows(64)
    }
}

impl BatchSize {
    pub fn rows(self, n: usize) -> usize {
        match self {
            BatchSize::Rows(b) => b,
            BatchSize::Named(FullBatch::Full) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Rows per training environment (also the oracle's training size).
    pub n_train: usize,
    /// Rows per evaluation sample.
    pub n_test: usize,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub mixing_seed: u64,
    #[serde(default)]
    pub idx_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Relu,
        }
    }
}

fn default_steps() -> usize {
    5000
}
fn default_lr() -> f64 {
    0.01
}
fn default_checkpoint() -> usize {
    500
}
fn default_threshold() -> usize {
    DEFAULT_THRESHOLD
}
fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErmSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
}

impl Default for ErmSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: BatchSize::default(),
            lr: default_lr(),
            momentum: 0.0,
            checkpoint_every: default_checkpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmiSection {
    #[serde(default = "together")]
    pub strategy: Strategy,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default = "default_threshold")]
    pub threshold: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_lr")]
    pub sub_lr: f64,
    #[serde(default = "default_lr")]
    pub main_lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
}

fn together() -> Strategy {
    Strategy::Together
}

impl Default for FmiSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Together,
            steps: default_steps(),
            batch_size: BatchSize::default(),
            threshold: DEFAULT_THRESHOLD,
            buffer_capacity: DEFAULT_CAPACITY,
            sub_lr: default_lr(),
            main_lr: default_lr(),
            momentum: 0.0,
            checkpoint_every: default_checkpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GofSection {
    pub n: usize,
    pub alpha: f64,
}

impl Default for GofSection {
    fn default() -> Self {
        Self {
            n: DEFAULT_SAMPLE_SIZE,
            alpha: DEFAULT_ALPHA,
        }
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub family: Family,
    pub train_envs: Vec<String>,
    pub test_envs: Vec<String>,
    #[serde(default)]
    pub validation_env: Option<String>,
    pub methods: Vec<Method>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub metric: Metric,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fmi: FmiSection,
    #[serde(default)]
    pub erm: ErmSection,
    #[serde(default)]
    pub gof: GofSection,
}

/// A parsed environment id.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    Example2(Example2Params),
    Cmnist(f64),
}

fn optimizer(momentum: f64) -> OptimizerKind {
    if momentum > 0.0 {
        OptimizerKind::SgdMomentum { momentum }
    } else {
        OptimizerKind::Sgd
    }
}

/// Interpret an environment id.
///
/// Example 2 ids are `E0`, `E1`, `E2`, optionally with `:indep`;
/// Colored-MNIST ids are colour-flip probabilities such as `0.9`.
pub fn env_kind(family: Family, env: &str, label_noise: f64, mixing_seed: u64) -> Result<EnvKind> {
    match family {
        Family::Example2 | Family::Example2s => {
            let (base, spurious) = match env.strip_suffix(INDEPENDENT_SUFFIX) {
                Some(base) => (base, SpuriousMode::Independent),
                None => (env, SpuriousMode::Observational),
            };
            let mut p = Example2Params::standard(base).map_err(|e| Error::Config(e.to_string()))?;
            p.scramble = family == Family::Example2s;
            p.label_noise = label_noise;
            p.mixing_seed = mixing_seed;
            p.spurious = spurious;
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok(EnvKind::Example2(p))
        }
        Family::CmnistSyn | Family::CmnistIdx => {
            let e: f64 = env
                .parse()
                .map_err(|_| Error::Config(format!("colour-flip environment {env:?} is not a number")))?;
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("colour flip {e} outside [0, 1]")));
            }
            Ok(EnvKind::Cmnist(e))
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form; insensitive to TOML formatting.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.train_envs.is_empty() {
            return bad("at least one training environment is required".into());
        }
        if self.test_envs.is_empty() {
            return bad("at least one test environment is required".into());
        }
        if let Some(t) = self.test_envs.iter().find(|t| self.train_envs.contains(t)) {
            return bad(format!("test environment {t:?} is also a training environment"));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return bad("duplicate method".into());
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if !(0.0..0.5).contains(&self.data.label_noise) {
            return bad(format!("label_noise {}", self.data.label_noise));
        }
        if self.family == Family::CmnistIdx && (self.data.idx_images.is_none() || self.data.idx_labels.is_none()) {
            return bad("cmnist-idx needs data.idx_images and data.idx_labels".into());
        }
        for env in self.all_envs() {
            self.env_kind(env)?;
        }
        if let Some(v) = &self.validation_env {
            if self.train_envs.contains(v) {
                return bad(format!("validation environment {v:?} is a training environment"));
            }
        }
        for (name, steps, every, batch) in [
            ("erm", self.erm.steps, self.erm.checkpoint_every, self.erm.batch_size),
            ("fmi", self.fmi.steps, self.fmi.checkpoint_every, self.fmi.batch_size),
        ] {
            if steps == 0 || every == 0 || batch == BatchSize::Rows(0) {
                return bad(format!(
                    "{name}: steps, checkpoint_every and batch_size must be positive"
                ));
            }
        }
        for (name, lr, m) in [
            ("erm.lr", self.erm.lr, self.erm.momentum),
            ("fmi.sub_lr", self.fmi.sub_lr, self.fmi.momentum),
            ("fmi.main_lr", self.fmi.main_lr, self.fmi.momentum),
        ] {
            if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&m) {
                return bad(format!("{name} = {lr} with momentum {m}"));
            }
        }
        if self.fmi.threshold == 0 || self.fmi.buffer_capacity < self.fmi.threshold {
            return bad("fmi: need 0 < threshold <= buffer_capacity".into());
        }
        if self.gof.n == 0 || !(self.gof.alpha > 0.0 && self.gof.alpha < 1.0) {
            return bad(format!("gof: n {} alpha {}", self.gof.n, self.gof.alpha));
        }
        self.architecture(1)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn all_envs(&self) -> impl Iterator<Item = &String> {
        self.train_envs
            .iter()
            .chain(&self.test_envs)
            .chain(&self.validation_env)
    }

    /// Interpret an environment id under this config's family.
    pub fn env_kind(&self, env: &str) -> Result<EnvKind> {
        env_kind(self.family, env, self.data.label_noise, self.data.mixing_seed)
    }

    pub fn input_dim(&self) -> usize {
        match self.family {
            Family::Example2 | Family::Example2s => Example2Params::default().dim(),
            Family::CmnistSyn => CmnistParams::default().dim(),
            Family::CmnistIdx => 2 * 28 * 28,
        }
    }

    pub fn architecture(&self, input: usize) -> Architecture {
        Architecture {
            input,
            hidden: self.model.hidden.clone(),
            classes: 2,
            activation: self.model.activation,
        }
    }

    pub fn erm_train_config(&self, n: usize) -> TrainConfig {
        TrainConfig {
            steps: self.erm.steps,
            batch_size: self.erm.batch_size.rows(n),
            lr: self.erm.lr,
            optimizer: optimizer(self.erm.momentum),
            checkpoint_every: self.erm.checkpoint_every,
        }
    }

    pub fn fmi_config(&self, n: usize, seed: u64) -> FmiConfig {
        FmiConfig {
            strategy: self.fmi.strategy,
            steps: self.fmi.steps,
            batch_size: self.fmi.batch_size.rows(n),
            threshold: self.fmi.threshold,
            buffer_capacity: self.fmi.buffer_capacity,
            sub_lr: self.fmi.sub_lr,
            main_lr: self.fmi.main_lr,
            optimizer: optimizer(self.fmi.momentum),
            checkpoint_every: self.fmi.checkpoint_every,
            seed,
        }
    }
}
