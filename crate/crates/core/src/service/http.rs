use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use super::{RequestId, Service, ServiceConfig, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::bad_request(format!("body: {e}")))
}

/// Runs `f` off the async executor; inserts sync to disk and queries are CPU bound.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))?
        .map(Json)
}

async fn post_producers(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<serde_json::Value> {
    let producer: crate::registry::ProducerIdentity = parse(&body)?;
    blocking(svc, move |s| {
        let id = producer.producer_id.clone();
        s.register_producer(producer)?;
        Ok(serde_json::json!({ "producer_id": id }))
    })
    .await
}

async fn post_entries(
    State(svc): State<Arc<Service>>,
    body: Bytes,
) -> Reply<super::InsertResponse> {
    let entry = parse(&body)?;
    blocking(svc, move |s| s.insert(entry)).await
}

async fn post_query(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<super::QueryResponse> {
    let req: super::QueryRequest = parse(&body)?;
    blocking(svc, move |s| s.query(&req)).await
}

async fn post_share(
    State(svc): State<Arc<Service>>,
    Path(request_id): Path<String>,
    body: Bytes,
) -> Reply<super::ShareStatus> {
    let id: RequestId = request_id.parse()?;
    let msg: super::ShareExchangeMessage = parse(&body)?;
    blocking(svc, move |s| s.submit_share(id, &msg)).await
}

async fn get_health(State(svc): State<Arc<Service>>) -> Json<super::Health> {
    Json(svc.health())
}

async fn get_stats(State(svc): State<Arc<Service>>) -> Json<super::ServiceStats> {
    Json(svc.stats())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/producers", post(post_producers))
        .route("/entries", post(post_entries))
        .route("/query", post(post_query))
        .route("/decrypt/{request_id}/shares", post(post_share))
        .route("/health", get(get_health))
        .route("/stats", get(get_stats))
        .with_state(service)
}

/// Binds `config.listen` and serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> Result<(), ServiceError> {
    let service = Arc::new(Service::from_config(config)?);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| ServiceError::internal(format!("bind {}: {e}", config.listen)))?;
    let ttl = config.result_ttl_secs.max(1);
    let sweeper = service.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(std::time::Duration::from_secs(ttl));
        loop {
            tick.tick().await;
            sweeper.purge_expired();
        }
    });
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))
}
