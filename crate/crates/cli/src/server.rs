//! HTTP front end over one immutable [`QueryEngine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mcrd_core::{QueryEngine, QueryRequest};
use serde_json::json;

pub fn router(engine: Arc<QueryEngine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .with_state(engine)
}

pub async fn serve(engine: Arc<QueryEngine>, bind: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, checkpoint = engine.checkpoint(), "serving");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health(State(engine): State<Arc<QueryEngine>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "vocab": engine.model().vocab().len() }))
}

async fn query(State(engine): State<Arc<QueryEngine>>, body: Bytes) -> Response {
    let request: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let result = tokio::task::spawn_blocking(move || engine.query(&request)).await;
    match result {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(e)) if e.is_client_error() => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => {
            tracing::error!(error = %e, "query failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("query task failed: {e}")),
    }
}
