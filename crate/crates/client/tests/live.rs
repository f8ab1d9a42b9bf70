use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use curio_client::{ClientError, CurioClient};
use curio_core::api::{PromptRequest, RetrieveRequest, ScoreRequest};
use curio_core::config::RunConfig;
use curio_core::dump::parse_dump;
use curio_core::gate::{AppAccumulator, GateConfig};
use curio_service::{serve, AppState};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn read(rel: &str) -> String {
    fs::read_to_string(fixture(rel)).unwrap()
}

async fn spawn(config: RunConfig) -> CurioClient {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = Arc::new(AppState::new(config).unwrap());
    tokio::spawn(serve(listener, state));
    CurioClient::new(&format!("http://{addr}")).unwrap()
}

fn corpus_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.paths.corpus_docs = Some(fixture("corpus/docs"));
    config.paths.corpus_git = Some(fixture("corpus/git.jsonl"));
    config.paths.corpus_traj = Some(fixture("corpus/trajectories"));
    config
}

#[tokio::test]
async fn scores_and_gates_over_the_wire() {
    let client = spawn(RunConfig::default()).await;
    client.health().await.unwrap();
    assert_eq!(client.config().await.unwrap(), RunConfig::default());

    let records = |rel: &str| {
        parse_dump(&read(rel))
            .unwrap()
            .into_iter()
            .map(|(_, r)| r)
            .collect()
    };
    let req = ScoreRequest {
        prior: records("dumps/prior.jsonl"),
        posterior: records("dumps/posterior.jsonl"),
        lambda: None,
        k: None,
        log_base: None,
    };
    let report = client.score(&req).await.unwrap();
    assert_eq!(report, req.evaluate(&RunConfig::default()).unwrap());

    let status = client.record("Gallery", report.js_star_bits).await.unwrap();
    assert_eq!(status.accumulator.u_value(), report.js_star_bits);
    let err = client.trigger("Gallery").await.unwrap_err();
    assert_eq!(err.api_kind(), Some("GateNotTriggered"));
    assert_eq!(err.status().map(|s| s.as_u16()), Some(409));

    let mut acc = AppAccumulator::new("Gallery");
    acc.record(1.5, &GateConfig::default()).unwrap();
    assert!(client.set_gate(&acc).await.unwrap().should_trigger);
    let fired = client.trigger("Gallery").await.unwrap();
    assert_eq!(fired.accumulator.trigger_count(), 1);
    assert_eq!(client.gate_book().await.unwrap().len(), 1);
}

#[tokio::test]
async fn cards_round_trip_through_the_server() {
    let client = spawn(RunConfig::default()).await;
    let text = read("cards/Pro_Expense.card");
    assert!(client.validate_card(&text).await.unwrap().ok);
    let stored = client.put_card(&text).await.unwrap();
    assert_eq!(stored.card.version(), 1);
    assert_eq!(client.card("Pro Expense").await.unwrap(), stored);
    assert_eq!(client.cards().await.unwrap().len(), 1);
    assert_eq!(
        client.render_card(&text).await.unwrap().rendered,
        stored.rendered
    );

    let picked = client.select_cards("log an expense", 3).await.unwrap();
    assert_eq!(picked.len(), 1);
    let prompt = client
        .prompt(&PromptRequest {
            base_prompt: "Base.".into(),
            task: "log an expense".into(),
            limit: 3,
        })
        .await
        .unwrap();
    assert!(prompt.prompt.contains("### Pro Expense:"));

    match client.card("Nope").await {
        Err(ClientError::Api { status, error, .. }) => {
            assert_eq!(status.as_u16(), 404);
            assert_eq!(error, "UnknownApp");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn forced_retrieval_and_replay() {
    let client = spawn(corpus_config()).await;
    let req = RetrieveRequest {
        app: "Markor".into(),
        report: None,
        actions: Vec::new(),
        force: true,
        focus: vec!["note".into()],
        max_units: Some(4),
        accumulator: None,
        corpora: Default::default(),
    };
    let resp = client.retrieve(&req).await.unwrap();
    assert_eq!(resp.card.app_name(), "Markor");
    assert!(resp.card.entries().len() <= 4);
    assert_eq!(resp.accumulator.u_value(), 0.0);

    let report = client
        .replay(&read("episodes/identity.jsonl"), false)
        .await
        .unwrap();
    assert!(report.is_complete());
    assert!(report.gate_events.is_empty());
}

#[test]
fn rejects_unusable_base_urls() {
    assert!(matches!(
        CurioClient::new("not a url"),
        Err(ClientError::BaseUrl(_))
    ));
    assert!(matches!(
        CurioClient::new("mailto:x@y"),
        Err(ClientError::BaseUrl(_))
    ));
    CurioClient::new("http://localhost:1/prefix").unwrap();
}

#[tokio::test]
async fn connection_failures_are_http_errors() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = CurioClient::new(&format!("http://{addr}")).unwrap();
    assert!(matches!(client.health().await, Err(ClientError::Http(_))));
}
