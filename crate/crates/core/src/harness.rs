//! Episode replay: observe, act, score, gate, retrieve, inject, over
//! recorded transition logs or a pluggable model client.
//!
//! Logs are JSONL, one transition per line:
//!
//! ```text
//! {"episode": {"id": "gallery-expense", "task": "..."}}        (optional)
//! {"state": {...}, "action": {"kind": "tap_by_text", "text": "Gallery"},
//!  "next_state": {...}, "prior": [step records], "posterior": [step records]}
//! ```
//!
//! Step records use the dump format of [`crate::dump`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::appcards::{inject, select_cards, CardStore};
use crate::config::RunConfig;
use crate::distributions::{DistributionError, StepDistribution};
use crate::divergence::{info_gain, DivergenceError, InfoGainReport};
use crate::dump::StepRecord;
use crate::gate::{GateBook, GateError};
use crate::retrieval::{
    retrieve_and_update, Consolidator, RetrievalError, RetrievalRequest, SourceClient,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("episode log has no transitions")]
    EmptyLog,
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("invalid model output ({side} step {step}): {reason}")]
    InvalidModelOutput {
        side: &'static str,
        step: usize,
        reason: String,
        /// The offending output, serialized, for debugging.
        raw: String,
    },
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    TapByIndex { index: u32 },
    TapByText { text: String },
    InputText { text: String },
    Swipe { direction: Direction },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::TapByIndex { .. } => "tap_by_index",
            Action::TapByText { .. } => "tap_by_text",
            Action::InputText { .. } => "input_text",
            Action::Swipe { .. } => "swipe",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::TapByIndex { index } => write!(f, "tap_by_index({index})"),
            Action::TapByText { text } => write!(f, "tap_by_text({text})"),
            Action::InputText { text } => write!(f, "input_text({text})"),
            Action::Swipe { direction } => write!(f, "swipe({})", direction.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiState {
    pub state_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot_ref: Option<String>,
    pub a11y_text: String,
    pub app_id: String,
}

impl UiState {
    pub fn new(
        state_id: impl Into<String>,
        app_id: impl Into<String>,
        a11y_text: impl Into<String>,
    ) -> Self {
        Self {
            state_id: state_id.into(),
            screenshot_ref: None,
            a11y_text: a11y_text.into(),
            app_id: app_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.state_id.is_empty() {
            return Err(HarnessError::InvalidTransition("empty state_id".into()));
        }
        if self.app_id.is_empty() {
            return Err(HarnessError::InvalidTransition(format!(
                "state {:?} has an empty app_id",
                self.state_id
            )));
        }
        if self.a11y_text.trim().is_empty() {
            return Err(HarnessError::InvalidTransition(format!(
                "state {:?} has an empty a11y_text",
                self.state_id
            )));
        }
        Ok(())
    }
}

/// One scored-to-be transition with its prior and posterior predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: UiState,
    pub action: Action,
    pub next_state: UiState,
    pub prior_steps: Vec<StepDistribution>,
    pub posterior_steps: Vec<StepDistribution>,
}

impl TransitionRecord {
    pub fn new(
        state: UiState,
        action: Action,
        next_state: UiState,
        prior_steps: Vec<StepDistribution>,
        posterior_steps: Vec<StepDistribution>,
    ) -> Result<Self, HarnessError> {
        let record = Self {
            state,
            action,
            next_state,
            prior_steps,
            posterior_steps,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.state.validate()?;
        self.next_state.validate()?;
        if self.prior_steps.is_empty() || self.posterior_steps.is_empty() {
            return Err(HarnessError::InvalidTransition(
                "prior and posterior step lists must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// The accumulator key.
    pub fn app_id(&self) -> &str {
        &self.state.app_id
    }

    pub fn to_log_record(&self) -> LogRecord {
        LogRecord {
            state: self.state.clone(),
            action: self.action.clone(),
            next_state: self.next_state.clone(),
            prior: self.prior_steps.iter().map(StepRecord::from_step).collect(),
            posterior: self
                .posterior_steps
                .iter()
                .map(StepRecord::from_step)
                .collect(),
        }
    }
}

/// A transition line as stored in an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub state: UiState,
    pub action: Action,
    pub next_state: UiState,
    pub prior: Vec<StepRecord>,
    pub posterior: Vec<StepRecord>,
}

impl LogRecord {
    pub fn to_transition(&self, config: &RunConfig) -> Result<TransitionRecord, HarnessError> {
        let convert = |records: &[StepRecord], side: &str| {
            records
                .iter()
                .map(|r| {
                    r.to_step(config.distributions.k, config.distributions.log_base)
                        .map_err(|e: DistributionError| {
                            HarnessError::InvalidTransition(format!("{side} step {}: {e}", r.step))
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        TransitionRecord::new(
            self.state.clone(),
            self.action.clone(),
            self.next_state.clone(),
            convert(&self.prior, "prior")?,
            convert(&self.posterior, "posterior")?,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    episode: EpisodeMeta,
}

/// Where a log stopped being readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFault {
    pub line: usize,
    pub message: String,
}

/// A parsed episode log. `fault` is set when reading stopped early at an
/// unreadable line; `records` then holds every complete record before it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub meta: Option<EpisodeMeta>,
    pub records: Vec<LogRecord>,
    pub fault: Option<LogFault>,
}

/// Reads a JSONL episode log, keeping the readable prefix of a damaged one.
/// Fails only when not a single transition could be read.
pub fn read_episode_log(text: &str) -> Result<EpisodeLog, HarnessError> {
    let mut log = EpisodeLog::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if log.meta.is_none() && log.records.is_empty() {
            if let Ok(meta) = serde_json::from_str::<MetaLine>(line) {
                log.meta = Some(meta.episode);
                continue;
            }
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(record) => log.records.push(record),
            Err(e) => {
                log.fault = Some(LogFault {
                    line: line_no,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    if log.records.is_empty() {
        return Err(match log.fault {
            Some(f) => HarnessError::Log {
                line: f.line,
                message: f.message,
            },
            None => HarnessError::EmptyLog,
        });
    }
    Ok(log)
}

/// Serializes transitions as an episode log.
pub fn write_episode_log(meta: Option<&EpisodeMeta>, transitions: &[TransitionRecord]) -> String {
    let mut out = String::new();
    if let Some(meta) = meta {
        out.push_str(&serde_json::json!({ "episode": meta }).to_string());
        out.push('\n');
    }
    for t in transitions {
        out.push_str(&serde_json::to_string(&t.to_log_record()).expect("log record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    /// 1-based position in the episode.
    pub step: usize,
    pub app_id: String,
    pub state_id: String,
    pub next_state_id: String,
    pub action: Action,
    pub gain: InfoGainReport,
    pub weight: f64,
    pub u_after: f64,
    pub prior_steps: Vec<StepDistribution>,
    pub posterior_steps: Vec<StepDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub step: usize,
    pub app_id: String,
    pub u_before: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionSource {
    /// A card produced by retrieval at this step.
    Retrieved,
    /// The store's existing card, in gate-only replays.
    Existing,
}

/// A card that subsequent prompt assembly would receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub step: usize,
    pub app_id: String,
    pub version: u32,
    pub source: InjectionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Complete,
    Partial { failed_step: usize, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<EpisodeMeta>,
    pub config: RunConfig,
    pub transitions: Vec<TransitionOutcome>,
    pub u_trace: BTreeMap<String, Vec<f64>>,
    pub gate_events: Vec<GateEvent>,
    pub injections: Vec<Injection>,
    pub status: EpisodeStatus,
}

impl EpisodeReport {
    fn new(episode: Option<EpisodeMeta>, config: &RunConfig) -> Self {
        Self {
            episode,
            config: config.clone(),
            transitions: Vec::new(),
            u_trace: BTreeMap::new(),
            gate_events: Vec::new(),
            injections: Vec::new(),
            status: EpisodeStatus::Complete,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == EpisodeStatus::Complete
    }

    pub fn final_u(&self, app_id: &str) -> Option<f64> {
        self.u_trace.get(app_id).and_then(|t| t.last().copied())
    }

    /// Re-checks the report against itself: recomputed scores, trace
    /// lengths, and gate soundness. Returns every violation found.
    pub fn verify(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let lambda = self.config.divergence.lambda;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.transitions {
            *counts.entry(t.app_id.as_str()).or_default() += 1;
            match info_gain(&t.prior_steps, &t.posterior_steps, lambda) {
                Ok(fresh) => {
                    if (fresh.js_bits - t.gain.js_bits).abs() > 1e-9 {
                        problems.push(format!(
                            "step {}: stored js {} but recomputed {}",
                            t.step, t.gain.js_bits, fresh.js_bits
                        ));
                    }
                }
                Err(e) => problems.push(format!("step {}: cannot rescore: {e}", t.step)),
            }
            let sum: f64 = t.gain.contributions.iter().map(|(_, c)| c).sum();
            if (sum - t.gain.js_bits).abs() > 1e-9 {
                problems.push(format!(
                    "step {}: contributions sum to {sum}, js is {}",
                    t.step, t.gain.js_bits
                ));
            }
        }
        for (app, n) in &counts {
            let len = self.u_trace.get(*app).map_or(0, Vec::len);
            if len != *n {
                problems.push(format!("{app}: {n} transitions but {len} trace values"));
            }
        }
        let tau = self.config.gate.tau;
        for event in &self.gate_events {
            if event.u_before.is_nan() || event.u_before <= tau {
                problems.push(format!(
                    "step {}: gate fired with U = {} not above tau = {tau}",
                    event.step, event.u_before
                ));
            }
            if self.config.gate.reset_on_trigger {
                let after = self
                    .transitions
                    .iter()
                    .find(|t| t.step == event.step && t.app_id == event.app_id)
                    .map(|t| t.u_after);
                if after != Some(0.0) {
                    problems.push(format!(
                        "step {}: U is {after:?} after a resetting trigger",
                        event.step
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Plain-text overview: status, final U per app, gate events and
    /// injections.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        match &self.status {
            EpisodeStatus::Complete => {
                out.push_str(&format!("status: complete ({} transitions)\n", self.transitions.len()))
            }
            EpisodeStatus::Partial { failed_step, error } => out.push_str(&format!(
                "status: partial ({} transitions replayed, failed at step {failed_step}: {error})\n",
                self.transitions.len()
            )),
        }
        for (app, trace) in &self.u_trace {
            let u = trace.last().copied().unwrap_or(0.0);
            out.push_str(&format!(
                "app {app}: U={u} after {} transitions\n",
                trace.len()
            ));
        }
        out.push_str(&format!("gate events: {}\n", self.gate_events.len()));
        for e in &self.gate_events {
            out.push_str(&format!(
                "  step {} app {} U={}\n",
                e.step, e.app_id, e.u_before
            ));
        }
        out.push_str(&format!("cards injected: {}\n", self.injections.len()));
        for i in &self.injections {
            let source = match i.source {
                InjectionSource::Retrieved => "retrieved",
                InjectionSource::Existing => "existing",
            };
            out.push_str(&format!(
                "  step {} app {} v{} ({source})\n",
                i.step, i.app_id, i.version
            ));
        }
        out
    }
}

/// Sources and consolidation used when a gate fires. Without clients the
/// replay runs gate-only: triggers are acknowledged and the store is left
/// alone.
#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub clients: &'a [Arc<dyn SourceClient>],
    pub consolidator: &'a dyn Consolidator,
}

struct Replayer<'a> {
    config: &'a RunConfig,
    retrieval: Option<Retrieval<'a>>,
    report: EpisodeReport,
}

impl Replayer<'_> {
    fn step(
        &mut self,
        step: usize,
        t: &TransitionRecord,
        book: &mut GateBook,
        store: &mut CardStore,
    ) -> Result<(), HarnessError> {
        t.validate()?;
        let gate = &self.config.gate;
        let gain = info_gain(
            &t.prior_steps,
            &t.posterior_steps,
            self.config.divergence.lambda,
        )?;
        let app = t.app_id().to_string();
        let acc = book.entry(&app);
        let mut next = acc.clone();
        let weight = next.record(gain.js_star_bits, gate)?;

        let mut event = None;
        let mut injection = None;
        if next.should_trigger(gate) {
            event = Some(GateEvent {
                step,
                app_id: app.clone(),
                u_before: next.u_value(),
            });
            match self.retrieval.filter(|r| !r.clients.is_empty()) {
                Some(r) => {
                    let request = RetrievalRequest {
                        app_id: &app,
                        gate,
                        report: Some(&gain),
                        actions: std::slice::from_ref(&t.action),
                        clients: r.clients,
                        consolidator: r.consolidator,
                        limits: self.config.retrieval,
                        force: false,
                        extra_focus: &[],
                    };
                    let card = retrieve_and_update(&request, &mut next, store)?;
                    injection = Some((card.version(), InjectionSource::Retrieved));
                }
                None => {
                    next.mark_triggered(gate)?;
                    injection = store
                        .current(&app)
                        .map(|c| (c.version(), InjectionSource::Existing));
                }
            }
        }

        let u_after = next.u_value();
        *acc = next;
        self.report
            .u_trace
            .entry(app.clone())
            .or_default()
            .push(u_after);
        self.report.gate_events.extend(event);
        if let Some((version, source)) = injection {
            self.report.injections.push(Injection {
                step,
                app_id: app.clone(),
                version,
                source,
            });
        }
        self.report.transitions.push(TransitionOutcome {
            step,
            app_id: app,
            state_id: t.state.state_id.clone(),
            next_state_id: t.next_state.state_id.clone(),
            action: t.action.clone(),
            gain,
            weight,
            u_after,
            prior_steps: t.prior_steps.clone(),
            posterior_steps: t.posterior_steps.clone(),
        });
        Ok(())
    }

    fn fail(&mut self, step: usize, error: impl fmt::Display) {
        tracing::warn!(step, "replay stopped: {error}");
        self.report.status = EpisodeStatus::Partial {
            failed_step: step,
            error: error.to_string(),
        };
    }
}

/// Replays transitions in order through scoring, gating and retrieval.
/// Never aborts: a failing transition ends the replay with a partial report
/// holding everything before it. `book` and `store` keep the state of every
/// completed transition.
pub fn replay(
    episode: &[TransitionRecord],
    config: &RunConfig,
    retrieval: Option<Retrieval<'_>>,
    book: &mut GateBook,
    store: &mut CardStore,
) -> EpisodeReport {
    let mut r = Replayer {
        config,
        retrieval,
        report: EpisodeReport::new(None, config),
    };
    if episode.is_empty() {
        r.fail(1, HarnessError::EmptyLog);
    }
    for (i, t) in episode.iter().enumerate() {
        if let Err(e) = r.step(i + 1, t, book, store) {
            r.fail(i + 1, e);
            break;
        }
    }
    r.report
}

/// Like [`replay`], converting log records on the fly. A damaged log tail
/// yields a partial report after the readable records.
pub fn replay_log(
    log: &EpisodeLog,
    config: &RunConfig,
    retrieval: Option<Retrieval<'_>>,
    book: &mut GateBook,
    store: &mut CardStore,
) -> EpisodeReport {
    let mut r = Replayer {
        config,
        retrieval,
        report: EpisodeReport::new(log.meta.clone(), config),
    };
    for (i, record) in log.records.iter().enumerate() {
        let step = i + 1;
        let outcome = record
            .to_transition(config)
            .and_then(|t| r.step(step, &t, book, store));
        if let Err(e) = outcome {
            r.fail(step, e);
            return r.report;
        }
    }
    if let Some(fault) = &log.fault {
        r.fail(
            log.records.len() + 1,
            format!("log unreadable from line {}: {}", fault.line, fault.message),
        );
    }
    r.report
}

/// Unvalidated model output for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStep {
    pub entries: Vec<(String, f64)>,
    pub other_mass: f64,
}

/// A model predicting descriptions of the next interface.
pub trait ModelClient: Send + Sync {
    fn prior(&self, state: &UiState, action: &Action) -> Result<Vec<RawStep>, HarnessError>;

    fn posterior(
        &self,
        state: &UiState,
        action: &Action,
        next_state: &UiState,
    ) -> Result<Vec<RawStep>, HarnessError>;
}

const MOCK_VOCAB: [&str; 24] = [
    "screen", "list", "button", "dialog", "menu", "settings", "note", "save", "search", "album",
    "photo", "expense", "amount", "date", "contact", "map", "route", "recipe", "video", "play",
    "share", "delete", "confirm", "back",
];

/// Deterministic stand-in model: each call's output is a pure function of
/// the seed, the state ids and the action.
#[derive(Debug, Clone)]
pub struct MockModel {
    seed: u64,
    steps: usize,
}

impl Default for MockModel {
    fn default() -> Self {
        Self { seed: 0, steps: 4 }
    }
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl MockModel {
    pub fn new(seed: u64, steps: usize) -> Self {
        Self {
            seed,
            steps: steps.max(1),
        }
    }

    fn generate(&self, parts: &[&str]) -> Vec<RawStep> {
        let seed = self.seed.to_string();
        let mut all = vec![seed.as_str()];
        all.extend_from_slice(parts);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&all));
        (0..self.steps)
            .map(|_| {
                let n = rng.random_range(2..=8);
                let mut vocab = MOCK_VOCAB;
                vocab.shuffle(&mut rng);
                let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let other_mass = if rng.random_bool(0.5) {
                    rng.random_range(0.0..0.3)
                } else {
                    0.0
                };
                let total: f64 = weights.iter().sum();
                let entries = vocab
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| (t.to_string(), w / total * (1.0 - other_mass)))
                    .collect();
                RawStep {
                    entries,
                    other_mass,
                }
            })
            .collect()
    }
}

impl ModelClient for MockModel {
    fn prior(&self, state: &UiState, action: &Action) -> Result<Vec<RawStep>, HarnessError> {
        Ok(self.generate(&["prior", &state.state_id, &action.to_string()]))
    }

    fn posterior(
        &self,
        state: &UiState,
        action: &Action,
        next_state: &UiState,
    ) -> Result<Vec<RawStep>, HarnessError> {
        Ok(self.generate(&[
            "posterior",
            &state.state_id,
            &action.to_string(),
            &next_state.state_id,
        ]))
    }
}

fn validate_output(
    side: &'static str,
    raw: Vec<RawStep>,
) -> Result<Vec<StepDistribution>, HarnessError> {
    let quarantine = |step: usize, reason: String, raw: &[RawStep]| {
        let raw = serde_json::to_string(raw).unwrap_or_else(|_| format!("{raw:?}"));
        tracing::warn!(side, step, %raw, "quarantined model output");
        HarnessError::InvalidModelOutput {
            side,
            step,
            reason,
            raw,
        }
    };
    if raw.is_empty() {
        return Err(quarantine(0, "no steps".into(), &raw));
    }
    raw.iter()
        .enumerate()
        .map(|(i, s)| {
            StepDistribution::new(i, s.entries.clone(), s.other_mass)
                .map_err(|e| quarantine(i, e.to_string(), &raw))
        })
        .collect()
}

/// Asks the model for prior and posterior, builds the transition and
/// scores it. Gate state is not touched.
pub fn live_step(
    model: &dyn ModelClient,
    state: &UiState,
    action: &Action,
    next_state: &UiState,
    lambda: f64,
) -> Result<(TransitionRecord, InfoGainReport), HarnessError> {
    let prior = validate_output("prior", model.prior(state, action)?)?;
    let posterior = validate_output("posterior", model.posterior(state, action, next_state)?)?;
    let record = TransitionRecord::new(
        state.clone(),
        action.clone(),
        next_state.clone(),
        prior,
        posterior,
    )?;
    let report = info_gain(&record.prior_steps, &record.posterior_steps, lambda)?;
    Ok((record, report))
}

/// Selects the cards relevant to `task` and appends them to `base_prompt`.
pub fn assemble_prompt(base_prompt: &str, task: &str, store: &CardStore, limit: usize) -> String {
    inject(base_prompt, &select_cards(task, store, limit))
}
