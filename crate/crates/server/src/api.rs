//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::project::{SelectionRequest, StoredCustomization};
use crate::service::{Service, SimulateRequest};
use hoicraft_core::recommend::DesignIntent;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::warn!("{self}");
        }
        (status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, ServiceError>;

/// Every request body is a JSON object; serde alone would also accept arrays for structs.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ServiceError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ServiceError::InvalidBody(e.to_string()))?;
    if !value.is_object() {
        return Err(ServiceError::InvalidBody("expected a JSON object".into()));
    }
    serde_json::from_value(value).map_err(|e| ServiceError::InvalidBody(e.to_string()))
}

/// Runs blocking service work (file I/O, live LLM calls) off the async workers.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Storage(format!("worker failed: {e}")))?
}

fn ok<T: serde::Serialize>(status: StatusCode, value: T) -> ApiResult {
    Ok((status, Json(value)).into_response())
}

async fn health(State(svc): State<Arc<Service>>) -> Response {
    Json(json!({"status": "ok", "llm": format!("{:?}", svc.gateway().mode())})).into_response()
}

async fn list_projects(State(svc): State<Arc<Service>>) -> ApiResult {
    let ids = blocking(svc, |s| s.list_projects()).await?;
    ok(StatusCode::OK, json!({ "projects": ids }))
}

async fn create_project(State(svc): State<Arc<Service>>, bytes: Bytes) -> ApiResult {
    let project = blocking(svc, move |s| s.create_project(&bytes)).await?;
    ok(StatusCode::CREATED, project)
}

async fn get_project(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(svc, move |s| s.get_project(&id)).await?)
}

async fn put_intent(State(svc): State<Arc<Service>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let intent: DesignIntent = body(&bytes)?;
    ok(StatusCode::OK, blocking(svc, move |s| s.set_intent(&id, intent)).await?)
}

async fn put_selection(State(svc): State<Arc<Service>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let req: SelectionRequest = body(&bytes)?;
    ok(StatusCode::OK, blocking(svc, move |s| s.set_selection(&id, &req)).await?)
}

async fn put_customization(
    State(svc): State<Arc<Service>>,
    Path((id, pid)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let c: StoredCustomization = body(&bytes)?;
    ok(StatusCode::OK, blocking(svc, move |s| s.set_customization(&id, &pid, c)).await?)
}

async fn post_mapping(State(svc): State<Arc<Service>>, Path((id, pid)): Path<(String, String)>) -> ApiResult {
    ok(StatusCode::OK, blocking(svc, move |s| s.run_mapping(&id, &pid)).await?)
}

async fn post_simulate(State(svc): State<Arc<Service>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let req: SimulateRequest = body(&bytes)?;
    ok(StatusCode::OK, blocking(svc, move |s| s.simulate(&id, req)).await?)
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/intent", put(put_intent))
        .route("/projects/{id}/selection", put(put_selection))
        .route("/projects/{id}/parts/{pid}/customization", put(put_customization))
        .route("/projects/{id}/parts/{pid}/mapping", post(post_mapping))
        .route("/projects/{id}/simulate", post(post_simulate))
        .with_state(svc)
}

/// Binds and serves until ctrl-c.
pub async fn serve(svc: Arc<Service>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
