//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::appcards::{canonicalize, parse_card, render_card, AppCard};
use crate::config::RunConfig;
use crate::distributions::LogBase;
use crate::divergence::{info_gain, InfoGainReport};
use crate::dump::StepRecord;
use crate::gate::AppAccumulator;
use crate::harness::Action;

/// Error body returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub prior: Vec<StepRecord>,
    pub posterior: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_base: Option<LogBase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordRequest {
    pub js_star_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStatus {
    pub accumulator: AppAccumulator,
    pub should_trigger: bool,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardText {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub ok: bool,
    /// Whether the input was already in canonical form.
    pub canonical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardSummary {
    pub app_name: String,
    pub version: u32,
    pub entries: usize,
}

impl CardSummary {
    pub fn of(card: &AppCard) -> Self {
        Self {
            app_name: card.app_name().to_string(),
            version: card.version(),
            entries: card.entries().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardView {
    pub card: AppCard,
    pub rendered: String,
}

impl CardView {
    pub fn of(card: AppCard) -> Self {
        let rendered = render_card(&card);
        Self { card, rendered }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub task: String,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRequest {
    pub base_prompt: String,
    pub task: String,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub prompt: String,
}

fn default_limit() -> usize {
    3
}

/// Corpus locations; unset fields fall back to the server's configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub git: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub app: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<InfoGainReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub force: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub focus: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_units: Option<usize>,
    /// Caller-held gate state; the server's own accumulator is used when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accumulator: Option<AppAccumulator>,
    #[serde(default)]
    pub corpora: CorpusPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub card: AppCard,
    pub rendered: String,
    pub accumulator: AppAccumulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRequest {
    /// Episode log text (JSONL).
    pub log: String,
    /// Run retrieval with the configured corpora when a gate fires.
    #[serde(default)]
    pub retrieve: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("{side}[{index}] (step {step}): {source}")]
    Step {
        side: &'static str,
        index: usize,
        step: usize,
        source: crate::distributions::DistributionError,
    },
    #[error(transparent)]
    Divergence(#[from] crate::divergence::DivergenceError),
}

impl ScoreRequest {
    /// Scores the transition, with request fields overriding `config`.
    pub fn evaluate(&self, config: &RunConfig) -> Result<InfoGainReport, ScoreError> {
        let k = self.k.unwrap_or(config.distributions.k);
        let base = self.log_base.unwrap_or(config.distributions.log_base);
        let lambda = self.lambda.unwrap_or(config.divergence.lambda);
        let convert = |records: &[StepRecord], side: &'static str| {
            records
                .iter()
                .enumerate()
                .map(|(index, r)| {
                    r.to_step(k, base).map_err(|source| ScoreError::Step {
                        side,
                        index,
                        step: r.step,
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let prior = convert(&self.prior, "prior")?;
        let posterior = convert(&self.posterior, "posterior")?;
        Ok(info_gain(&prior, &posterior, lambda)?)
    }
}

/// Parses `text` and checks that rendering gives back its canonical form.
pub fn validate_card_text(text: &str) -> ValidateResponse {
    match parse_card(text) {
        Ok(card) => {
            let rendered = render_card(&card);
            let ok = rendered == canonicalize(text);
            ValidateResponse {
                ok,
                canonical: ok && rendered == text,
                error: (!ok).then(|| ApiError {
                    error: "NonCanonicalRoundTrip".into(),
                    message: "re-rendered card differs from the canonical input".into(),
                }),
            }
        }
        Err(e) => ValidateResponse {
            ok: false,
            canonical: false,
            error: Some(ApiError {
                error: e.kind().into(),
                message: e.to_string(),
            }),
        },
    }
}
