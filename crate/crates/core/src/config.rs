//! Run configuration: a sectioned `key = value` file (TOML syntax) layered
//! under command-line overrides.
//!
//! ```toml
//! [distributions]
//! k = 19
//! log_base = "e"        # or "10"
//!
//! [divergence]
//! lambda = 0.5
//!
//! [gate]
//! tau = 1.0
//! decay_base = 0.95
//! difficulty_weight = 1.0
//! reset_on_trigger = true
//!
//! [retrieval]
//! max_units = 16
//! merged_cap = 32
//! focus_tokens = 8
//!
//! [paths]
//! store_root = "cards"
//! corpus_docs = "corpus/docs"
//! corpus_git = "corpus/git.jsonl"
//! corpus_traj = "corpus/trajectories"
//! ```
//!
//! Unknown sections or keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{LogBase, DEFAULT_TOP_K};
use crate::divergence::DEFAULT_LAMBDA;
use crate::gate::GateConfig;
use crate::retrieval::{DEFAULT_FOCUS_TOKENS, DEFAULT_MAX_UNITS, DEFAULT_MERGED_CAP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionSection {
    pub k: usize,
    pub log_base: LogBase,
}

impl Default for DistributionSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            log_base: LogBase::E,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSection {
    pub lambda: f64,
}

impl Default for DivergenceSection {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub max_units: usize,
    pub merged_cap: usize,
    pub focus_tokens: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            max_units: DEFAULT_MAX_UNITS,
            merged_cap: DEFAULT_MERGED_CAP,
            focus_tokens: DEFAULT_FOCUS_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_docs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_git: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_traj: Option<PathBuf>,
}

/// Every tunable knob of a run. Serialized as-is into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub distributions: DistributionSection,
    pub divergence: DivergenceSection,
    pub gate: GateConfig,
    pub retrieval: RetrievalSection,
    pub paths: PathSection,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub decay_base: Option<f64>,
    pub difficulty_weight: Option<f64>,
    pub reset_on_trigger: Option<bool>,
    pub log_base: Option<LogBase>,
    pub max_units: Option<usize>,
    pub store_root: Option<PathBuf>,
    pub corpus_docs: Option<PathBuf>,
    pub corpus_git: Option<PathBuf>,
    pub corpus_traj: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults, then the optional file, then overrides.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.k => self.distributions.k);
        set!(o.log_base => self.distributions.log_base);
        set!(o.lambda => self.divergence.lambda);
        set!(o.tau => self.gate.tau);
        set!(o.decay_base => self.gate.decay_base);
        set!(o.difficulty_weight => self.gate.difficulty_weight);
        set!(o.reset_on_trigger => self.gate.reset_on_trigger);
        set!(o.max_units => self.retrieval.max_units);
        if o.store_root.is_some() {
            self.paths.store_root = o.store_root.clone();
        }
        if o.corpus_docs.is_some() {
            self.paths.corpus_docs = o.corpus_docs.clone();
        }
        if o.corpus_git.is_some() {
            self.paths.corpus_git = o.corpus_git.clone();
        }
        if o.corpus_traj.is_some() {
            self.paths.corpus_traj = o.corpus_traj.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.distributions.k == 0 {
            return Err(ConfigError::Invalid("k must be >= 1".into()));
        }
        let lambda = self.divergence.lambda;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        self.gate
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.retrieval;
        if r.max_units == 0 || r.merged_cap == 0 || r.focus_tokens == 0 {
            return Err(ConfigError::Invalid(
                "max_units, merged_cap and focus_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
