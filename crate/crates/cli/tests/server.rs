use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mcrd_cli::server::router;
use mcrd_core::query::checkpoint_id;
use mcrd_core::synth::{generate, SynthConfig, SynthCorpus};
use mcrd_core::trainer::Trainer;
use mcrd_core::{QueryEngine, QueryRequest, QueryResponse, TrainConfig};
use serde_json::Value;
use tower::ServiceExt;

fn setup() -> &'static (SynthCorpus, Arc<QueryEngine>) {
    static S: OnceLock<(SynthCorpus, Arc<QueryEngine>)> = OnceLock::new();
    S.get_or_init(|| {
        let corpus = generate(&SynthConfig {
            dim: 8,
            train_targets: 30,
            seen_pairs: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            ..TrainConfig::default()
        };
        config.encoder.input_dim = 8;
        config.encoder.hidden_dim = 8;
        let mut t = Trainer::new(config, corpus.lexicon.clone()).unwrap();
        t.train(&corpus.train, None, |_| {}).unwrap();
        let id = checkpoint_id(&t.checkpoint());
        let engine = Arc::new(QueryEngine::new(t.into_model(), id));
        (corpus, engine)
    })
}

fn app() -> Router {
    router(setup().1.clone())
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/query")
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap()
}

#[tokio::test]
async fn health_reports_vocab_size() {
    let (status, body) = send(app(), Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["vocab"], setup().0.lexicon.vocab.len());
}

#[tokio::test]
async fn query_matches_engine() {
    let (corpus, engine) = setup();
    let description = corpus.seen_pairs[0].1.clone();
    let body = serde_json::json!({ "description": description, "top_k": 5 }).to_string();
    let (status, bytes) = send(app(), post(body)).await;
    assert_eq!(status, StatusCode::OK);
    let resp: QueryResponse = serde_json::from_slice(&bytes).unwrap();
    let mut req = QueryRequest::new(description);
    req.top_k = 5;
    assert_eq!(resp, engine.query(&req).unwrap());
    assert_eq!(resp.results.len(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_queries_agree() {
    let description = setup().0.seen_pairs[1].1.clone();
    let body = serde_json::json!({ "description": description, "initial_letter": "m" }).to_string();
    let tasks: Vec<_> = (0..100)
        .map(|_| {
            let body = body.clone();
            tokio::spawn(async move { send(app(), post(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, bytes) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(bytes);
    }
    assert!(bodies.iter().all(|b| *b == bodies[0]));
}

#[tokio::test]
async fn malformed_json_is_a_bad_request() {
    for body in [r#"{"description": "a b""#, r#"{"top_k": 3}"#, r#"{"description": "a", "k": 1}"#, "[]"] {
        let (status, bytes) = send(app(), post(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        let msg = v["error"].as_str().unwrap();
        assert!(msg.starts_with("invalid request body"), "{msg}");
    }
    let (_, bytes) = send(app(), post(r#"{"description": "a b""#)).await;
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert!(v["error"].as_str().unwrap().contains("line 1"), "{v}");
}

#[tokio::test]
async fn invalid_requests_are_bad_requests() {
    let cases = [
        r#"{"description": " ... "}"#,
        r#"{"description": "a b", "top_k": 0}"#,
        r#"{"description": "a b", "top_k": 1001}"#,
        r#"{"description": "a b", "pos": "adverbial"}"#,
        r#"{"description": "a b", "initial_letter": "ab"}"#,
    ];
    for body in cases {
        let (status, bytes) = send(app(), post(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn unknown_route_and_method() {
    let (status, _) = send(app(), Request::get("/query").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    let (status, _) = send(app(), Request::get("/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
