//! Async client for `curio-service`.
//!
//! ```no_run
//! # async fn demo() -> Result<(), curio_client::ClientError> {
//! let client = curio_client::CurioClient::new("http://127.0.0.1:8787")?;
//! let status = client.record("Gallery", 0.4).await?;
//! println!("U = {}", status.accumulator.u_value());
//! # Ok(())
//! # }
//! ```

use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;

use curio_core::api::{
    ApiError, CardSummary, CardText, CardView, GateStatus, PromptRequest, PromptResponse,
    RecordRequest, ReplayRequest, RetrieveRequest, RetrieveResponse, ScoreRequest, SelectRequest,
    ValidateResponse,
};
use curio_core::config::RunConfig;
use curio_core::divergence::InfoGainReport;
use curio_core::gate::{AppAccumulator, GateBook};
use curio_core::harness::EpisodeReport;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid base url {0:?}")]
    BaseUrl(String),
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("{status}: {error}: {message}")]
    Api {
        status: StatusCode,
        error: String,
        message: String,
    },
}

impl ClientError {
    /// Error kind reported by the server, if the server answered.
    pub fn api_kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } => Some(error),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
            ClientError::BaseUrl(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurioClient {
    http: reqwest::Client,
    base: Url,
}

impl CurioClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        Self::with_http(base_url, reqwest::Client::new())
    }

    pub fn with_http(base_url: &str, http: reqwest::Client) -> Result<Self, ClientError> {
        let mut base =
            Url::parse(base_url).map_err(|_| ClientError::BaseUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::BaseUrl(base_url.to_string()));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        Ok(Self { http, base })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in constructor")
            .pop_if_empty()
            .push("v1")
            .extend(segments);
        url
    }

    async fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        segments: &[&str],
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, self.url(segments));
        if let Some(body) = body {
            req = req.json(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&text) {
            Ok(e) => ClientError::Api {
                status,
                error: e.error,
                message: e.message,
            },
            Err(_) => ClientError::Api {
                status,
                error: "Http".into(),
                message: text,
            },
        })
    }

    async fn get<T: DeserializeOwned>(&self, segments: &[&str]) -> Result<T, ClientError> {
        self.call(Method::GET, segments, None::<&()>).await
    }

    async fn post<T: DeserializeOwned>(
        &self,
        segments: &[&str],
        body: &(impl Serialize + ?Sized),
    ) -> Result<T, ClientError> {
        self.call(Method::POST, segments, Some(body)).await
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.get::<serde_json::Value>(&["health"]).await.map(drop)
    }

    pub async fn config(&self) -> Result<RunConfig, ClientError> {
        self.get(&["config"]).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<InfoGainReport, ClientError> {
        self.post(&["score"], req).await
    }

    pub async fn gate_book(&self) -> Result<GateBook, ClientError> {
        self.get(&["gate"]).await
    }

    pub async fn gate(&self, app: &str) -> Result<GateStatus, ClientError> {
        self.get(&["gate", app]).await
    }

    pub async fn set_gate(&self, acc: &AppAccumulator) -> Result<GateStatus, ClientError> {
        self.call(Method::PUT, &["gate", acc.app_id()], Some(acc))
            .await
    }

    pub async fn record(&self, app: &str, js_star_bits: f64) -> Result<GateStatus, ClientError> {
        self.post(&["gate", app, "record"], &RecordRequest { js_star_bits })
            .await
    }

    pub async fn trigger(&self, app: &str) -> Result<GateStatus, ClientError> {
        self.call(Method::POST, &["gate", app, "trigger"], None::<&()>)
            .await
    }

    pub async fn cards(&self) -> Result<Vec<CardSummary>, ClientError> {
        self.get(&["cards"]).await
    }

    pub async fn card(&self, app: &str) -> Result<CardView, ClientError> {
        self.get(&["cards", app]).await
    }

    pub async fn put_card(&self, text: &str) -> Result<CardView, ClientError> {
        self.post(&["cards"], &card_text(text)).await
    }

    pub async fn validate_card(&self, text: &str) -> Result<ValidateResponse, ClientError> {
        self.post(&["cards", "validate"], &card_text(text)).await
    }

    pub async fn render_card(&self, text: &str) -> Result<CardView, ClientError> {
        self.post(&["cards", "render"], &card_text(text)).await
    }

    pub async fn select_cards(
        &self,
        task: &str,
        limit: usize,
    ) -> Result<Vec<CardView>, ClientError> {
        let req = SelectRequest {
            task: task.to_string(),
            limit,
        };
        self.post(&["cards", "select"], &req).await
    }

    pub async fn prompt(&self, req: &PromptRequest) -> Result<PromptResponse, ClientError> {
        self.post(&["prompt"], req).await
    }

    pub async fn retrieve(&self, req: &RetrieveRequest) -> Result<RetrieveResponse, ClientError> {
        self.post(&["retrieve"], req).await
    }

    pub async fn replay(&self, log: &str, retrieve: bool) -> Result<EpisodeReport, ClientError> {
        let req = ReplayRequest {
            log: log.to_string(),
            retrieve,
        };
        self.post(&["replay"], &req).await
    }
}

fn card_text(text: &str) -> CardText {
    CardText {
        text: text.to_string(),
    }
}
