//! HTTP/JSON front end for `curio-core`.
//!
//! | method | path                      | body               | returns            |
//! |--------|---------------------------|--------------------|--------------------|
//! | GET    | /v1/health                |                    | `{"status":"ok"}`  |
//! | GET    | /v1/config                |                    | RunConfig          |
//! | POST   | /v1/score                 | ScoreRequest       | InfoGainReport     |
//! | GET    | /v1/gate                  |                    | GateBook           |
//! | GET    | /v1/gate/{app}            |                    | GateStatus         |
//! | PUT    | /v1/gate/{app}            | AppAccumulator     | GateStatus         |
//! | POST   | /v1/gate/{app}/record     | RecordRequest      | GateStatus         |
//! | POST   | /v1/gate/{app}/trigger    |                    | GateStatus         |
//! | GET    | /v1/cards                 |                    | [CardSummary]      |
//! | POST   | /v1/cards                 | CardText           | CardView           |
//! | GET    | /v1/cards/{app}           |                    | CardView           |
//! | POST   | /v1/cards/validate        | CardText           | ValidateResponse   |
//! | POST   | /v1/cards/render          | CardText           | CardView           |
//! | POST   | /v1/cards/select          | SelectRequest      | [CardView]         |
//! | POST   | /v1/prompt                | PromptRequest      | PromptResponse     |
//! | POST   | /v1/retrieve              | RetrieveRequest    | RetrieveResponse   |
//! | POST   | /v1/replay                | ReplayRequest      | EpisodeReport      |
//!
//! Errors come back as `{"error": kind, "message": text}`.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use curio_core::api::{
    validate_card_text, ApiError, CardSummary, CardText, CardView, GateStatus, PromptRequest,
    PromptResponse, RecordRequest, ReplayRequest, RetrieveRequest, RetrieveResponse, ScoreRequest,
    SelectRequest, ValidateResponse,
};
use curio_core::appcards::{parse_card, select_cards, CardError, CardStore, StoreError};
use curio_core::config::RunConfig;
use curio_core::divergence::InfoGainReport;
use curio_core::gate::{AppAccumulator, GateBook, GateError};
use curio_core::harness::{
    assemble_prompt, read_episode_log, replay_log, EpisodeReport, Retrieval,
};
use curio_core::retrieval::{
    local_clients, retrieve_and_update, RetrievalError, RetrievalRequest, TemplateConsolidator,
};

#[derive(Debug)]
pub struct ServiceError {
    status: StatusCode,
    body: ApiError,
}

impl ServiceError {
    pub fn new(status: StatusCode, kind: impl Into<String>, message: impl ToString) -> Self {
        Self {
            status,
            body: ApiError {
                error: kind.into(),
                message: message.to_string(),
            },
        }
    }

    fn bad_request(kind: &str, message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, kind, message)
    }

    fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(kind = %self.body.error, "{}", self.body.message);
        }
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request("BadRequest", e.body_text())
    }
}

impl From<CardError> for ServiceError {
    fn from(e: CardError) -> Self {
        Self::bad_request(e.kind(), e)
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnsafeAppName(_) => Self::bad_request("UnsafeAppName", e),
            StoreError::Card { .. } => Self::bad_request("InvalidCard", e),
            other => Self::internal(other),
        }
    }
}

impl From<GateError> for ServiceError {
    fn from(e: GateError) -> Self {
        match e {
            GateError::TriggerWithoutThreshold { .. } => {
                Self::new(StatusCode::CONFLICT, "GateNotTriggered", e)
            }
            GateError::NegativeGain(_) => Self::bad_request("NegativeGain", e),
            GateError::InconsistentState(_) => Self::bad_request("InconsistentState", e),
            GateError::InvalidConfig(_) => Self::bad_request("InvalidConfig", e),
        }
    }
}

impl From<RetrievalError> for ServiceError {
    fn from(e: RetrievalError) -> Self {
        if let RetrievalError::Gate(g) = e {
            return g.into();
        }
        let status = match &e {
            RetrievalError::GateNotTriggered { .. } => StatusCode::CONFLICT,
            RetrievalError::SourceUnavailable { .. } => StatusCode::SERVICE_UNAVAILABLE,
            RetrievalError::EmptyFocus
            | RetrievalError::MalformedCorpus { .. }
            | RetrievalError::NoUnits => StatusCode::UNPROCESSABLE_ENTITY,
            RetrievalError::Store(StoreError::UnsafeAppName(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e)
    }
}

/// JSON body extractor whose rejections use the service error format.
#[derive(FromRequest)]
#[from_request(via(Json), rejection(ServiceError))]
pub struct Body<T>(pub T);

/// Shared server state. Lock order is gate book, then store.
pub struct AppState {
    config: RunConfig,
    book: Mutex<GateBook>,
    store: RwLock<CardStore>,
}

impl AppState {
    /// Opens the card store at `config.paths.store_root`, or keeps cards in
    /// memory when no root is configured.
    pub fn new(config: RunConfig) -> Result<Self, StoreError> {
        let store = match &config.paths.store_root {
            Some(root) => CardStore::open(root)?,
            None => CardStore::in_memory(),
        };
        Ok(Self::with_store(config, store))
    }

    pub fn with_store(config: RunConfig, store: CardStore) -> Self {
        Self {
            config,
            book: Mutex::new(GateBook::new()),
            store: RwLock::new(store),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn book(&self) -> MutexGuard<'_, GateBook> {
        self.book.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn status(&self, acc: AppAccumulator) -> GateStatus {
        GateStatus {
            should_trigger: acc.should_trigger(&self.config.gate),
            tau: self.config.gate.tau,
            accumulator: acc,
        }
    }

    fn retrieve(&self, req: RetrieveRequest) -> Result<RetrieveResponse, ServiceError> {
        let paths = &self.config.paths;
        let pick = |given: &Option<String>, fallback: &Option<PathBuf>| {
            given
                .as_ref()
                .map(PathBuf::from)
                .or_else(|| fallback.clone())
        };
        let docs = pick(&req.corpora.docs, &paths.corpus_docs);
        let git = pick(&req.corpora.git, &paths.corpus_git);
        let traj = pick(&req.corpora.trajectories, &paths.corpus_traj);
        let clients = local_clients(docs.as_deref(), git.as_deref(), traj.as_deref());
        if clients.is_empty() {
            return Err(ServiceError::bad_request(
                "NoCorpora",
                "no corpus paths in the request or the server configuration",
            ));
        }
        let mut limits = self.config.retrieval;
        if let Some(n) = req.max_units {
            limits.max_units = n.max(1);
        }

        let mut book = self.book();
        let caller_held = req.accumulator.is_some();
        let mut acc = match req.accumulator {
            Some(acc) => acc,
            None => book
                .get(&req.app)
                .cloned()
                .unwrap_or_else(|| AppAccumulator::new(&req.app)),
        };
        if acc.app_id() != req.app {
            return Err(ServiceError::bad_request(
                "AppMismatch",
                format!(
                    "accumulator is for {:?}, request for {:?}",
                    acc.app_id(),
                    req.app
                ),
            ));
        }
        let request = RetrievalRequest {
            app_id: &req.app,
            gate: &self.config.gate,
            report: req.report.as_ref(),
            actions: &req.actions,
            clients: &clients,
            consolidator: &TemplateConsolidator,
            limits,
            force: req.force,
            extra_focus: &req.focus,
        };
        let card = {
            let mut store = self.store.write().unwrap_or_else(|p| p.into_inner());
            retrieve_and_update(&request, &mut acc, &mut store)?
        };
        if !caller_held {
            book.insert(acc.clone());
        }
        let view = CardView::of(card);
        Ok(RetrieveResponse {
            card: view.card,
            rendered: view.rendered,
            accumulator: acc,
        })
    }

    fn replay(&self, req: ReplayRequest) -> Result<EpisodeReport, ServiceError> {
        let log =
            read_episode_log(&req.log).map_err(|e| ServiceError::bad_request("InvalidLog", e))?;
        let paths = &self.config.paths;
        let clients = if req.retrieve {
            local_clients(
                paths.corpus_docs.as_deref(),
                paths.corpus_git.as_deref(),
                paths.corpus_traj.as_deref(),
            )
        } else {
            Vec::new()
        };
        let retrieval = Retrieval {
            clients: &clients,
            consolidator: &TemplateConsolidator,
        };
        let mut store = self.store.write().unwrap_or_else(|p| p.into_inner());
        Ok(replay_log(
            &log,
            &self.config,
            Some(retrieval),
            &mut GateBook::new(),
            &mut store,
        ))
    }
}

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<Json<T>, ServiceError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", get(config))
        .route("/v1/score", post(score))
        .route("/v1/gate", get(gate_book))
        .route("/v1/gate/{app}", get(gate_get).put(gate_put))
        .route("/v1/gate/{app}/record", post(gate_record))
        .route("/v1/gate/{app}/trigger", post(gate_trigger))
        .route("/v1/cards", get(cards_list).post(cards_put))
        .route("/v1/cards/validate", post(cards_validate))
        .route("/v1/cards/render", post(cards_render))
        .route("/v1/cards/select", post(cards_select))
        .route("/v1/cards/{app}", get(cards_get))
        .route("/v1/prompt", post(prompt))
        .route("/v1/retrieve", post(retrieve))
        .route("/v1/replay", post(replay))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn config(State(s): Shared) -> Json<RunConfig> {
    Json(s.config.clone())
}

async fn score(State(s): Shared, Body(req): Body<ScoreRequest>) -> ApiResult<InfoGainReport> {
    req.evaluate(&s.config)
        .map(Json)
        .map_err(|e| ServiceError::bad_request("InvalidInput", e))
}

async fn gate_book(State(s): Shared) -> Json<GateBook> {
    Json(s.book().clone())
}

async fn gate_get(State(s): Shared, UrlPath(app): UrlPath<String>) -> ApiResult<GateStatus> {
    let acc = s.book().get(&app).cloned().ok_or_else(|| {
        ServiceError::new(
            StatusCode::NOT_FOUND,
            "UnknownApp",
            format!("no gate state for {app:?}"),
        )
    })?;
    Ok(Json(s.status(acc)))
}

async fn gate_put(
    State(s): Shared,
    UrlPath(app): UrlPath<String>,
    Body(acc): Body<AppAccumulator>,
) -> ApiResult<GateStatus> {
    if acc.app_id() != app {
        return Err(ServiceError::bad_request(
            "AppMismatch",
            format!("accumulator is for {:?}", acc.app_id()),
        ));
    }
    s.book().insert(acc.clone());
    Ok(Json(s.status(acc)))
}

async fn gate_record(
    State(s): Shared,
    UrlPath(app): UrlPath<String>,
    Body(req): Body<RecordRequest>,
) -> ApiResult<GateStatus> {
    let acc = {
        let mut book = s.book();
        let acc = book.entry(&app);
        acc.record(req.js_star_bits, &s.config.gate)?;
        acc.clone()
    };
    Ok(Json(s.status(acc)))
}

async fn gate_trigger(State(s): Shared, UrlPath(app): UrlPath<String>) -> ApiResult<GateStatus> {
    let acc = {
        let mut book = s.book();
        let mut acc = book
            .get(&app)
            .cloned()
            .unwrap_or_else(|| AppAccumulator::new(&app));
        acc.mark_triggered(&s.config.gate)?;
        book.insert(acc.clone());
        acc
    };
    Ok(Json(s.status(acc)))
}

async fn cards_list(State(s): Shared) -> Json<Vec<CardSummary>> {
    let store = s.store.read().unwrap_or_else(|p| p.into_inner());
    Json(store.current_cards().map(CardSummary::of).collect())
}

async fn cards_put(State(s): Shared, Body(req): Body<CardText>) -> ApiResult<CardView> {
    let card = parse_card(&req.text)?;
    let stored = s
        .store
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .put(card)?;
    Ok(Json(CardView::of(stored)))
}

async fn cards_get(State(s): Shared, UrlPath(app): UrlPath<String>) -> ApiResult<CardView> {
    let store = s.store.read().unwrap_or_else(|p| p.into_inner());
    let card = store.current(&app).cloned().ok_or_else(|| {
        ServiceError::new(
            StatusCode::NOT_FOUND,
            "UnknownApp",
            format!("no card for {app:?}"),
        )
    })?;
    Ok(Json(CardView::of(card)))
}

async fn cards_validate(Body(req): Body<CardText>) -> Json<ValidateResponse> {
    Json(validate_card_text(&req.text))
}

async fn cards_render(Body(req): Body<CardText>) -> ApiResult<CardView> {
    Ok(Json(CardView::of(parse_card(&req.text)?)))
}

async fn cards_select(State(s): Shared, Body(req): Body<SelectRequest>) -> Json<Vec<CardView>> {
    let store = s.store.read().unwrap_or_else(|p| p.into_inner());
    Json(
        select_cards(&req.task, &store, req.limit)
            .into_iter()
            .map(CardView::of)
            .collect(),
    )
}

async fn prompt(State(s): Shared, Body(req): Body<PromptRequest>) -> ApiResult<PromptResponse> {
    if req.base_prompt.is_empty() {
        return Err(ServiceError::bad_request(
            "EmptyPrompt",
            "base_prompt must be non-empty",
        ));
    }
    let store = s.store.read().unwrap_or_else(|p| p.into_inner());
    Ok(Json(PromptResponse {
        prompt: assemble_prompt(&req.base_prompt, &req.task, &store, req.limit),
    }))
}

async fn blocking<T, F>(state: Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(ServiceError::internal)?
        .map(Json)
}

async fn retrieve(
    State(s): Shared,
    Body(req): Body<RetrieveRequest>,
) -> ApiResult<RetrieveResponse> {
    blocking(s, move |s| s.retrieve(req)).await
}

async fn replay(State(s): Shared, Body(req): Body<ReplayRequest>) -> ApiResult<EpisodeReport> {
    blocking(s, move |s| s.replay(req)).await
}

/// Serves `router(state)` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
