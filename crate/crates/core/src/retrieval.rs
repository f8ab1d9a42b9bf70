//! Gate-triggered retrieval: build a focused query from the divergence
//! report, fetch knowledge units from pluggable sources (documentation,
//! repository history, past trajectories), and consolidate them into a new
//! AppCard version.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::appcards::{
    infer_category, AppCard, CardEntry, CardError, CardStore, Category, StoreError, TitleStyle,
};
use crate::config::RetrievalSection;
use crate::distributions::OTHER;
use crate::divergence::InfoGainReport;
use crate::gate::{AppAccumulator, GateConfig, GateError};
use crate::harness::{read_episode_log, Action};
use crate::text::{word_list, words};

pub const DEFAULT_MAX_UNITS: usize = 16;
pub const DEFAULT_MERGED_CAP: usize = 32;
pub const DEFAULT_FOCUS_TOKENS: usize = 8;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("gate has not fired: U = {u} does not exceed tau = {tau}")]
    GateNotTriggered { u: f64, tau: f64 },
    #[error("query has no focus terms")]
    EmptyFocus,
    #[error("source {source_name} unavailable: {reason}")]
    SourceUnavailable { source_name: String, reason: String },
    #[error("malformed corpus file {file}: {reason}")]
    MalformedCorpus { file: PathBuf, reason: String },
    #[error("source {source_name} returned a {found} unit but serves {expected}")]
    KindMismatch {
        source_name: String,
        expected: SourceKind,
        found: SourceKind,
    },
    #[error("invalid knowledge unit: {0}")]
    InvalidUnit(String),
    #[error("no knowledge units to consolidate")]
    NoUnits,
    #[error("consolidator failed: {0}")]
    ConsolidatorFailure(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gate(#[from] GateError),
}

impl RetrievalError {
    /// Whether retrying the same call may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, RetrievalError::SourceUnavailable { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RetrievalError::GateNotTriggered { .. } => "GateNotTriggered",
            RetrievalError::EmptyFocus => "EmptyFocus",
            RetrievalError::SourceUnavailable { .. } => "SourceUnavailable",
            RetrievalError::MalformedCorpus { .. } => "MalformedCorpus",
            RetrievalError::KindMismatch { .. } => "KindMismatch",
            RetrievalError::InvalidUnit(_) => "InvalidUnit",
            RetrievalError::NoUnits => "NoUnits",
            RetrievalError::ConsolidatorFailure(_) => "ConsolidatorFailure",
            RetrievalError::Store(_) => "StoreError",
            RetrievalError::Gate(_) => "GateError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    WebDocs,
    GitHistory,
    Trajectories,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::WebDocs => "web_docs",
            SourceKind::GitHistory => "git_history",
            SourceKind::Trajectories => "trajectories",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub source_kind: SourceKind,
    pub locator: String,
    pub excerpt: String,
    pub relevance: f64,
}

impl KnowledgeUnit {
    pub fn new(
        source_kind: SourceKind,
        locator: impl Into<String>,
        excerpt: impl Into<String>,
        relevance: f64,
    ) -> Result<Self, RetrievalError> {
        let excerpt = excerpt.into();
        if excerpt.trim().is_empty() {
            return Err(RetrievalError::InvalidUnit("empty excerpt".into()));
        }
        if !(0.0..=1.0).contains(&relevance) {
            return Err(RetrievalError::InvalidUnit(format!(
                "relevance {relevance} outside [0, 1]"
            )));
        }
        Ok(Self {
            source_kind,
            locator: locator.into(),
            excerpt,
            relevance,
        })
    }

    /// `kind:locator`, the form used in card provenance.
    pub fn citation(&self) -> String {
        format!("{}:{}", self.source_kind, self.locator)
    }
}

/// Descending relevance, then `(source_kind, locator)`.
pub fn sort_units(units: &mut [KnowledgeUnit]) {
    units.sort_by(|a, b| {
        b.relevance
            .total_cmp(&a.relevance)
            .then_with(|| a.source_kind.cmp(&b.source_kind))
            .then_with(|| a.locator.cmp(&b.locator))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub app_id: String,
    pub u_value: f64,
    pub tau: f64,
    pub focus_terms: Vec<String>,
    pub max_units: usize,
    #[serde(default)]
    pub forced: bool,
}

impl RetrievalQuery {
    pub fn focus_set(&self) -> BTreeSet<String> {
        self.focus_terms.iter().flat_map(|t| words(t)).collect()
    }
}

fn normalize_term(token: &str) -> Option<String> {
    // Strip common sub-word markers before lowercasing.
    let t = token
        .trim()
        .trim_start_matches(['\u{2581}', '\u{120}'])
        .trim()
        .to_lowercase();
    t.chars().any(char::is_alphanumeric).then_some(t)
}

fn push_unique(terms: &mut Vec<String>, term: String) {
    if !terms.contains(&term) {
        terms.push(term);
    }
}

fn focus_terms(report: Option<&InfoGainReport>, actions: &[Action], top_n: usize) -> Vec<String> {
    let mut terms = Vec::new();
    if let Some(report) = report {
        let mut contribs: Vec<&(String, f64)> = report
            .contributions
            .iter()
            .filter(|(t, c)| t != OTHER && *c > 0.0)
            .collect();
        contribs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (token, _) in contribs.into_iter().take(top_n) {
            if let Some(t) = normalize_term(token) {
                push_unique(&mut terms, t);
            }
        }
    }
    for action in actions {
        push_unique(&mut terms, action.name().to_string());
    }
    terms
}

/// Query for a fired gate: the report's top contributing tokens (without
/// the residual bucket) followed by the recent action names.
pub fn build_query(
    acc: &AppAccumulator,
    config: &GateConfig,
    report: &InfoGainReport,
    recent_actions: &[Action],
    top_n: usize,
    max_units: usize,
) -> Result<RetrievalQuery, RetrievalError> {
    if !acc.should_trigger(config) {
        return Err(RetrievalError::GateNotTriggered {
            u: acc.u_value(),
            tau: config.tau,
        });
    }
    let focus_terms = focus_terms(Some(report), recent_actions, top_n);
    if focus_terms.is_empty() {
        return Err(RetrievalError::EmptyFocus);
    }
    Ok(RetrievalQuery {
        app_id: acc.app_id().to_string(),
        u_value: acc.u_value(),
        tau: config.tau,
        focus_terms,
        max_units: max_units.max(1),
        forced: false,
    })
}

/// Query that bypasses the gate. Focus comes from the report and actions if
/// given, then `extra_terms`, then the words of the app id.
pub fn build_forced_query(
    acc: &AppAccumulator,
    config: &GateConfig,
    report: Option<&InfoGainReport>,
    recent_actions: &[Action],
    extra_terms: &[String],
    top_n: usize,
    max_units: usize,
) -> Result<RetrievalQuery, RetrievalError> {
    let mut focus = focus_terms(report, recent_actions, top_n);
    for term in extra_terms.iter().filter_map(|t| normalize_term(t)) {
        push_unique(&mut focus, term);
    }
    for w in word_list(acc.app_id()) {
        push_unique(&mut focus, w);
    }
    if focus.is_empty() {
        return Err(RetrievalError::EmptyFocus);
    }
    Ok(RetrievalQuery {
        app_id: acc.app_id().to_string(),
        u_value: acc.u_value(),
        tau: config.tau,
        focus_terms: focus,
        max_units: max_units.max(1),
        forced: true,
    })
}

/// A pluggable knowledge source.
pub trait SourceClient: Send + Sync {
    fn kind(&self) -> SourceKind;

    /// Short name for diagnostics.
    fn name(&self) -> String {
        self.kind().to_string()
    }

    /// Units relevant to the query, any order, any count.
    fn fetch_units(&self, query: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError>;
}

/// Calls `client`, checks that every unit is of the client's kind, and
/// returns at most `query.max_units` units sorted by relevance.
pub fn fetch(
    client: &dyn SourceClient,
    query: &RetrievalQuery,
) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
    let mut units = client.fetch_units(query)?;
    if let Some(bad) = units.iter().find(|u| u.source_kind != client.kind()) {
        return Err(RetrievalError::KindMismatch {
            source_name: client.name(),
            expected: client.kind(),
            found: bad.source_kind,
        });
    }
    sort_units(&mut units);
    units.truncate(query.max_units);
    Ok(units)
}

/// Fraction of the excerpt's words that are focus terms.
pub fn term_relevance(focus: &BTreeSet<String>, text: &str) -> f64 {
    let all = word_list(text);
    if all.is_empty() {
        return 0.0;
    }
    let hits = all.iter().filter(|w| focus.contains(*w)).count();
    (hits as f64 / all.len() as f64).clamp(0.0, 1.0)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_html(text: &str) -> String {
    static BLOCKS: OnceLock<Regex> = OnceLock::new();
    static TAGS: OnceLock<Regex> = OnceLock::new();
    static BREAKS: OnceLock<Regex> = OnceLock::new();
    let blocks = BLOCKS.get_or_init(|| {
        Regex::new(r"(?is)<(script|style)\b.*?</(script|style)>").expect("valid regex")
    });
    let breaks = BREAKS.get_or_init(|| {
        Regex::new(r"(?i)</?(p|div|br|li|h[1-6]|tr|section|article)\b[^>]*>").expect("valid regex")
    });
    let tags = TAGS.get_or_init(|| Regex::new(r"<[^>]*>").expect("valid regex"));
    let text = blocks.replace_all(text, "");
    let text = breaks.replace_all(&text, "\n\n");
    let text = tags.replace_all(&text, "");
    text.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(collapse_whitespace(&current.join(" ")));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(collapse_whitespace(&current.join(" ")));
    }
    out
}

fn unavailable(name: &str, reason: impl fmt::Display) -> RetrievalError {
    RetrievalError::SourceUnavailable {
        source_name: name.to_string(),
        reason: reason.to_string(),
    }
}

/// Local documentation corpus: a directory of `.txt`, `.md` and `.html`
/// files, one unit per matching paragraph.
#[derive(Debug, Clone)]
pub struct DocsClient {
    root: PathBuf,
}

impl DocsClient {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl SourceClient for DocsClient {
    fn kind(&self) -> SourceKind {
        SourceKind::WebDocs
    }

    fn name(&self) -> String {
        format!("docs:{}", self.root.display())
    }

    fn fetch_units(&self, query: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
        if !self.root.is_dir() {
            return Err(unavailable(&self.name(), "corpus directory does not exist"));
        }
        let focus = query.focus_set();
        let mut units = Vec::new();
        for entry in WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| unavailable(&self.name(), e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            let is_html = matches!(ext.as_deref(), Some("html" | "htm"));
            if !entry.file_type().is_file()
                || !(is_html || matches!(ext.as_deref(), Some("txt" | "md")))
            {
                continue;
            }
            let raw = fs::read(path).map_err(|e| unavailable(&self.name(), e))?;
            let text = String::from_utf8(raw).map_err(|_| RetrievalError::MalformedCorpus {
                file: path.to_path_buf(),
                reason: "not valid UTF-8".into(),
            })?;
            let text = if is_html { strip_html(&text) } else { text };
            let rel = path.strip_prefix(&self.root).unwrap_or(path);
            let rel = rel.to_string_lossy().replace('\\', "/");
            for (i, para) in paragraphs(&text).into_iter().enumerate() {
                let relevance = term_relevance(&focus, &para);
                if relevance > 0.0 {
                    units.push(KnowledgeUnit::new(
                        SourceKind::WebDocs,
                        format!("{rel}#p{}", i + 1),
                        para,
                        relevance,
                    )?);
                }
            }
        }
        Ok(units)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitRecord {
    commit: String,
    message: String,
    #[serde(default)]
    files: Vec<String>,
}

/// Repository history export: JSONL of `{"commit", "message", "files"}`,
/// one unit per matching commit.
#[derive(Debug, Clone)]
pub struct GitLogClient {
    path: PathBuf,
}

impl GitLogClient {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl SourceClient for GitLogClient {
    fn kind(&self) -> SourceKind {
        SourceKind::GitHistory
    }

    fn name(&self) -> String {
        format!("git:{}", self.path.display())
    }

    fn fetch_units(&self, query: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
        let text = fs::read_to_string(&self.path).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => RetrievalError::MalformedCorpus {
                file: self.path.clone(),
                reason: "not valid UTF-8".into(),
            },
            _ => unavailable(&self.name(), e),
        })?;
        let focus = query.focus_set();
        let mut units = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: CommitRecord =
                serde_json::from_str(line).map_err(|e| RetrievalError::MalformedCorpus {
                    file: self.path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
            let excerpt = collapse_whitespace(&record.message);
            if excerpt.is_empty() {
                continue;
            }
            let scored = format!("{excerpt} {}", record.files.join(" "));
            let relevance = term_relevance(&focus, &scored);
            if relevance > 0.0 {
                units.push(KnowledgeUnit::new(
                    SourceKind::GitHistory,
                    record.commit,
                    excerpt,
                    relevance,
                )?);
            }
        }
        Ok(units)
    }
}

/// Past episodes in the replay-log format, one unit per matching episode
/// summarizing its task, apps and actions.
#[derive(Debug, Clone)]
pub struct TrajectoryClient {
    root: PathBuf,
}

impl TrajectoryClient {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn log_files(&self) -> Result<Vec<PathBuf>, RetrievalError> {
        if self.root.is_file() {
            return Ok(vec![self.root.clone()]);
        }
        if !self.root.is_dir() {
            return Err(unavailable(
                &self.name(),
                "trajectory directory does not exist",
            ));
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| unavailable(&self.name(), e))?;
            if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "jsonl")
            {
                files.push(entry.into_path());
            }
        }
        Ok(files)
    }
}

/// One-paragraph description of an episode log.
pub fn summarize_episode(path: &Path, text: &str) -> Result<(String, String), RetrievalError> {
    let log = read_episode_log(text).map_err(|e| RetrievalError::MalformedCorpus {
        file: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let id = log.meta.as_ref().and_then(|m| m.id.clone()).unwrap_or(stem);
    let mut apps: Vec<&str> = Vec::new();
    for r in &log.records {
        for app in [r.state.app_id.as_str(), r.next_state.app_id.as_str()] {
            if !apps.contains(&app) {
                apps.push(app);
            }
        }
    }
    let actions: Vec<String> = log.records.iter().map(|r| r.action.to_string()).collect();
    let mut summary = String::new();
    if let Some(task) = log.meta.as_ref().and_then(|m| m.task.as_deref()) {
        summary.push_str(&format!("Task {task}. "));
    }
    summary.push_str(&format!("Apps {}. ", apps.join(", ")));
    summary.push_str(&format!("Actions {}.", actions.join(" -> ")));
    Ok((id, collapse_whitespace(&summary)))
}

impl SourceClient for TrajectoryClient {
    fn kind(&self) -> SourceKind {
        SourceKind::Trajectories
    }

    fn name(&self) -> String {
        format!("trajectories:{}", self.root.display())
    }

    fn fetch_units(&self, query: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
        let focus = query.focus_set();
        let mut units = Vec::new();
        for path in self.log_files()? {
            let text = fs::read_to_string(&path).map_err(|e| RetrievalError::MalformedCorpus {
                file: path.clone(),
                reason: e.to_string(),
            })?;
            let (id, summary) = summarize_episode(&path, &text)?;
            let relevance = term_relevance(&focus, &summary);
            if relevance > 0.0 {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
                let locator = format!("{}#{id}", name.unwrap_or_default());
                units.push(KnowledgeUnit::new(
                    SourceKind::Trajectories,
                    locator,
                    summary,
                    relevance,
                )?);
            }
        }
        Ok(units)
    }
}

/// The reference clients for whichever corpus paths are given.
pub fn local_clients(
    docs: Option<&Path>,
    git: Option<&Path>,
    trajectories: Option<&Path>,
) -> Vec<Arc<dyn SourceClient>> {
    let mut clients: Vec<Arc<dyn SourceClient>> = Vec::new();
    if let Some(p) = docs {
        clients.push(Arc::new(DocsClient::new(p)));
    }
    if let Some(p) = git {
        clients.push(Arc::new(GitLogClient::new(p)));
    }
    if let Some(p) = trajectories {
        clients.push(Arc::new(TrajectoryClient::new(p)));
    }
    clients
}

/// Retry wrapper for network-backed sources: retries transient failures
/// with exponential backoff.
pub struct RetryingClient<C> {
    inner: C,
    attempts: u32,
    base_delay: Duration,
}

impl<C: SourceClient> RetryingClient<C> {
    /// Three attempts, backoff starting at 200 ms.
    pub fn new(inner: C) -> Self {
        Self::with_policy(inner, 3, Duration::from_millis(200))
    }

    pub fn with_policy(inner: C, attempts: u32, base_delay: Duration) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            base_delay,
        }
    }
}

impl<C: SourceClient> SourceClient for RetryingClient<C> {
    fn kind(&self) -> SourceKind {
        self.inner.kind()
    }

    fn name(&self) -> String {
        self.inner.name()
    }

    fn fetch_units(&self, query: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
        let mut attempt = 0;
        loop {
            match self.inner.fetch_units(query) {
                Err(e) if e.is_transient() && attempt + 1 < self.attempts => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    tracing::debug!(source = %self.inner.name(), attempt, ?delay, "retrying: {e}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub type ConsolidatorResult = Result<AppCard, Box<dyn std::error::Error + Send + Sync>>;

/// Turns fetched units into a card draft.
pub trait Consolidator: Send + Sync {
    fn consolidate(&self, app_id: &str, units: &[KnowledgeUnit]) -> ConsolidatorResult;
}

/// Deterministic consolidator: one entry per distinct excerpt, grouped by
/// inferred category in the fixed category order.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateConsolidator;

const MAX_TITLE_WORDS: usize = 6;

/// Title and body for an excerpt. `Title: body` excerpts split at the
/// separator; otherwise the title is the excerpt's first clause.
fn title_and_body(excerpt: &str) -> (String, String, TitleStyle) {
    if let Some(inner) = excerpt.strip_prefix("**") {
        if let Some(pos) = inner.find(":**") {
            let title = inner[..pos].trim();
            let body = inner[pos + 3..].trim();
            if !title.is_empty() && !body.is_empty() {
                return (title.to_string(), body.to_string(), TitleStyle::Bold);
            }
        }
    }
    if let Some(pos) = excerpt.find(": ") {
        let title = excerpt[..pos].trim();
        let body = excerpt[pos + 2..].trim();
        if !title.is_empty() && !body.is_empty() && !title.starts_with("**") {
            return (title.to_string(), body.to_string(), TitleStyle::Plain);
        }
    }
    let clause = excerpt
        .split(['.', ';', ',', '!', '?', ':'])
        .map(str::trim)
        .find(|c| !c.is_empty())
        .unwrap_or(excerpt);
    let title: Vec<&str> = clause
        .split_whitespace()
        .map(|w| w.trim_start_matches('*'))
        .filter(|w| !w.is_empty())
        .take(MAX_TITLE_WORDS)
        .collect();
    let title = if title.is_empty() {
        "Note".to_string()
    } else {
        title.join(" ")
    };
    (title, excerpt.trim().to_string(), TitleStyle::Plain)
}

/// Makes an excerpt safe as a single-line card body.
fn as_body(text: &str) -> String {
    collapse_whitespace(text)
}

impl Consolidator for TemplateConsolidator {
    fn consolidate(&self, app_id: &str, units: &[KnowledgeUnit]) -> ConsolidatorResult {
        // Exact-excerpt dedup, keeping first-seen order and all locators.
        let mut order: Vec<String> = Vec::new();
        let mut sources: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for unit in units {
            let excerpt = as_body(&unit.excerpt);
            if excerpt.is_empty() {
                continue;
            }
            let cites = sources.entry(excerpt.clone()).or_default();
            if cites.is_empty() {
                order.push(excerpt);
            }
            let citation = unit.citation();
            if !cites.contains(&citation) {
                cites.push(citation);
            }
        }

        let mut by_category: BTreeMap<Category, Vec<CardEntry>> = BTreeMap::new();
        for excerpt in order {
            let (title, body, style) = title_and_body(&excerpt);
            let category = infer_category(&title, &body);
            let entry = CardEntry::new(title.clone(), body.clone())
                .and_then(|e| e.with_style(style))
                .or_else(|_| CardEntry::new(sanitize_title(&title), body.clone()))
                .map_err(|e: CardError| format!("cannot build entry from {excerpt:?}: {e}"))?
                .with_category(category)
                .with_sources(sources.remove(&excerpt).unwrap_or_default());
            by_category.entry(category).or_default().push(entry);
        }

        let entries: Vec<CardEntry> = Category::ALL
            .iter()
            .flat_map(|c| by_category.remove(c).unwrap_or_default())
            .collect();
        let mut provenance: Vec<String> = units.iter().map(KnowledgeUnit::citation).collect();
        provenance.dedup();
        let card = AppCard::new(app_id, entries)?.with_provenance(provenance);
        Ok(card)
    }
}

fn sanitize_title(title: &str) -> String {
    let t = title.replace(": ", " ").replace('*', "");
    let t = collapse_whitespace(&t);
    if t.is_empty() {
        "Note".into()
    } else {
        t
    }
}

/// Runs `consolidator` and checks that every entry cites at least one of the
/// input units.
pub fn consolidate(
    app_id: &str,
    units: &[KnowledgeUnit],
    consolidator: &dyn Consolidator,
) -> Result<AppCard, RetrievalError> {
    if units.is_empty() {
        return Err(RetrievalError::NoUnits);
    }
    let card = consolidator
        .consolidate(app_id, units)
        .map_err(|e| RetrievalError::ConsolidatorFailure(e.to_string()))?;
    let known: BTreeSet<String> = units.iter().map(KnowledgeUnit::citation).collect();
    for entry in card.entries() {
        if entry.sources().is_empty() {
            return Err(RetrievalError::ConsolidatorFailure(format!(
                "entry {:?} cites no source",
                entry.title()
            )));
        }
        if let Some(unknown) = entry.sources().iter().find(|s| !known.contains(*s)) {
            return Err(RetrievalError::ConsolidatorFailure(format!(
                "entry {:?} cites unknown source {unknown:?}",
                entry.title()
            )));
        }
    }
    if card.app_name() != app_id {
        return Err(RetrievalError::ConsolidatorFailure(format!(
            "card is for {:?}, expected {app_id:?}",
            card.app_name()
        )));
    }
    Ok(card)
}

/// Everything `retrieve_and_update` needs besides the mutable state.
pub struct RetrievalRequest<'a> {
    pub app_id: &'a str,
    pub gate: &'a GateConfig,
    pub report: Option<&'a InfoGainReport>,
    pub actions: &'a [Action],
    pub clients: &'a [Arc<dyn SourceClient>],
    pub consolidator: &'a dyn Consolidator,
    pub limits: RetrievalSection,
    /// Skip the gate check; the accumulator is then left untouched.
    pub force: bool,
    pub extra_focus: &'a [String],
}

/// Query every source, merge and consolidate the results, store the new
/// card version and acknowledge the gate. Either all of that happens or,
/// on error, neither `store` nor `acc` changes.
pub fn retrieve_and_update(
    request: &RetrievalRequest<'_>,
    acc: &mut AppAccumulator,
    store: &mut CardStore,
) -> Result<AppCard, RetrievalError> {
    if acc.app_id() != request.app_id {
        return Err(RetrievalError::InvalidUnit(format!(
            "accumulator is for {:?}, request for {:?}",
            acc.app_id(),
            request.app_id
        )));
    }
    let limits = &request.limits;
    let query = if request.force {
        build_forced_query(
            acc,
            request.gate,
            request.report,
            request.actions,
            request.extra_focus,
            limits.focus_tokens,
            limits.max_units,
        )?
    } else {
        if !acc.should_trigger(request.gate) {
            return Err(RetrievalError::GateNotTriggered {
                u: acc.u_value(),
                tau: request.gate.tau,
            });
        }
        let report = request.report.ok_or(RetrievalError::EmptyFocus)?;
        build_query(
            acc,
            request.gate,
            report,
            request.actions,
            limits.focus_tokens,
            limits.max_units,
        )?
    };

    let results: Vec<Result<Vec<KnowledgeUnit>, RetrievalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = request
            .clients
            .iter()
            .map(|client| {
                let query = &query;
                s.spawn(move || fetch(client.as_ref(), query))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("source fetch panicked"))
            .collect()
    });
    let mut units = Vec::new();
    for result in results {
        units.extend(result?);
    }
    sort_units(&mut units);
    units.truncate(limits.merged_cap);

    let mut card = consolidate(request.app_id, &units, request.consolidator)?;
    card.add_provenance(format!(
        "query: u={} tau={} focus=[{}]",
        query.u_value,
        query.tau,
        query.focus_terms.join(", ")
    ));
    if query.forced {
        card.add_provenance("forced retrieval (gate check bypassed)");
    }

    let mut next_acc = acc.clone();
    if !query.forced || next_acc.should_trigger(request.gate) {
        next_acc.mark_triggered(request.gate)?;
    }
    let stored = store.put(card)?;
    *acc = next_acc;
    Ok(stored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Action;

    fn report(contribs: &[(&str, f64)]) -> InfoGainReport {
        InfoGainReport {
            js_bits: contribs.iter().map(|c| c.1).sum(),
            js_star_bits: contribs.iter().map(|c| c.1).sum(),
            prior_other: 0.0,
            posterior_other: 0.0,
            lambda_used: 0.5,
            contributions: contribs.iter().map(|(t, c)| (t.to_string(), *c)).collect(),
        }
    }

    fn fired() -> (AppAccumulator, GateConfig) {
        let config = GateConfig::new(0.4, 1.0, 1.0, true).unwrap();
        let mut acc = AppAccumulator::new("Markor");
        acc.record(0.5, &config).unwrap();
        (acc, config)
    }

    #[test]
    fn query_focus_terms() {
        let (acc, config) = fired();
        let q = build_query(
            &acc,
            &config,
            &report(&[("note", 0.1), ("save", 0.3), (OTHER, 0.5)]),
            &[Action::TapByText {
                text: "Save".into(),
            }],
            8,
            16,
        )
        .unwrap();
        assert_eq!(q.focus_terms, ["save", "note", "tap_by_text"]);
        assert_eq!(q.u_value, 0.5);
        assert_eq!(q.tau, 0.4);
    }

    #[test]
    fn other_only_report_falls_back_to_actions() {
        let (acc, config) = fired();
        let q = build_query(
            &acc,
            &config,
            &report(&[(OTHER, 0.4), ("a", 0.0)]),
            &[Action::Swipe {
                direction: crate::harness::Direction::Up,
            }],
            8,
            16,
        )
        .unwrap();
        assert_eq!(q.focus_terms, ["swipe"]);
    }

    #[test]
    fn query_requires_fired_gate() {
        let config = GateConfig::default();
        let acc = AppAccumulator::new("x");
        assert!(matches!(
            build_query(&acc, &config, &report(&[("a", 0.1)]), &[], 8, 16),
            Err(RetrievalError::GateNotTriggered { .. })
        ));
    }

    #[test]
    fn consolidate_single_unit() {
        let unit = KnowledgeUnit::new(
            SourceKind::WebDocs,
            "a.txt#p1",
            "CreateNote: tap + then Save",
            0.5,
        )
        .unwrap();
        let card = consolidate("Markor", &[unit], &TemplateConsolidator).unwrap();
        assert_eq!(card.entries().len(), 1);
        assert_eq!(card.entries()[0].title(), "CreateNote");
        assert_eq!(card.entries()[0].sources(), ["web_docs:a.txt#p1"]);
        assert!(matches!(
            consolidate("Markor", &[], &TemplateConsolidator),
            Err(RetrievalError::NoUnits)
        ));
    }

    #[test]
    fn clause_titles_for_plain_excerpts() {
        let (t, b, _) = title_and_body("Markor stores notes as plain files. Sync is manual.");
        assert_eq!(t, "Markor stores notes as plain files");
        assert_eq!(b, "Markor stores notes as plain files. Sync is manual.");
    }

    struct Flaky {
        failures: std::sync::atomic::AtomicU32,
    }

    impl SourceClient for Flaky {
        fn kind(&self) -> SourceKind {
            SourceKind::WebDocs
        }
        fn fetch_units(&self, _: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
            use std::sync::atomic::Ordering;
            if self.failures.fetch_sub(1, Ordering::SeqCst) > 0 {
                Err(unavailable("flaky", "timeout"))
            } else {
                Ok(vec![])
            }
        }
    }

    #[test]
    fn retry_policy() {
        let (acc, config) = fired();
        let q = build_query(&acc, &config, &report(&[("a", 0.1)]), &[], 8, 16).unwrap();
        let ok = RetryingClient::with_policy(Flaky { failures: 2.into() }, 3, Duration::ZERO);
        assert!(fetch(&ok, &q).is_ok());
        let failing = RetryingClient::with_policy(Flaky { failures: 3.into() }, 3, Duration::ZERO);
        assert!(fetch(&failing, &q).unwrap_err().is_transient());
    }

    struct WrongKind;

    impl SourceClient for WrongKind {
        fn kind(&self) -> SourceKind {
            SourceKind::GitHistory
        }
        fn fetch_units(&self, _: &RetrievalQuery) -> Result<Vec<KnowledgeUnit>, RetrievalError> {
            Ok(vec![
                KnowledgeUnit::new(SourceKind::WebDocs, "x", "y", 0.1).unwrap()
            ])
        }
    }

    #[test]
    fn fetch_enforces_source_isolation() {
        let (acc, config) = fired();
        let q = build_query(&acc, &config, &report(&[("a", 0.1)]), &[], 8, 16).unwrap();
        assert!(matches!(
            fetch(&WrongKind, &q),
            Err(RetrievalError::KindMismatch { .. })
        ));
    }

    #[test]
    fn html_is_stripped() {
        let text = strip_html("<html><style>p{}</style><p>Tap &amp; hold</p><p>Second</p></html>");
        assert_eq!(paragraphs(&text), ["Tap & hold", "Second"]);
    }
}
