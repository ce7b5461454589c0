//! JSON-over-HTTP routes.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgdebate::env::{HopRecord, Verdict};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::service::{DebateRequest, Neighbor, ScoreReport, Service, ServiceError};
use crate::sessions::Session;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    /// Index of the first unwalkable hop, for rejected arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgumentRequest {
    pub hops: Vec<HopRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub verdict: Verdict,
}

#[derive(Debug, Default, Deserialize)]
pub struct ViewParams {
    #[serde(default)]
    pub blind: bool,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, hop) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            ServiceError::NoModel => (StatusCode::CONFLICT, None),
            ServiceError::InvalidPath { hop, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(*hop)),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, None),
            ServiceError::Internal(e) => {
                log::error!("{e:#}");
                (StatusCode::INTERNAL_SERVER_ERROR, None)
            }
        };
        let body = ErrorBody {
            error: self.0.to_string(),
            hop,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs model work off the async executor.
async fn blocking<T, F>(service: &Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let service = Arc::clone(service);
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError(ServiceError::Internal(e.into())))?
        .map_err(ApiError)
}

async fn create_debate(
    State(service): State<Arc<Service>>,
    Query(view): Query<ViewParams>,
    Json(request): Json<DebateRequest>,
) -> ApiResult<Session> {
    let session = blocking(&service, move |s| s.debate(&request)).await?;
    Ok(Json(session.view(view.blind)))
}

async fn neighbors(State(service): State<Arc<Service>>, Path(entity): Path<String>) -> ApiResult<Vec<Neighbor>> {
    Ok(Json(service.neighbors(&entity)?))
}

async fn add_argument(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
    Json(request): Json<ArgumentRequest>,
) -> ApiResult<Session> {
    let session = blocking(&service, move |s| s.add_argument(&id, &request.hops)).await?;
    Ok(Json(session.view(view.blind)))
}

async fn set_verdict(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(request): Json<VerdictRequest>,
) -> ApiResult<Session> {
    let session = blocking(&service, move |s| s.set_verdict(&id, request.verdict)).await?;
    Ok(Json(session))
}

async fn session(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
) -> ApiResult<Session> {
    Ok(Json(service.session(&id)?.view(view.blind)))
}

async fn score(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<ScoreReport> {
    Ok(Json(service.score(&id)?))
}

async fn sessions(State(service): State<Arc<Service>>, Query(view): Query<ViewParams>) -> Json<Vec<Session>> {
    Json(service.sessions().iter().map(|s| s.view(view.blind)).collect())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/debate", post(create_debate))
        .route("/graph/neighbors/{entity}", get(neighbors))
        .route("/session/{id}", get(session))
        .route("/session/{id}/argument", post(add_argument))
        .route("/session/{id}/verdict", post(set_verdict))
        .route("/session/{id}/score", get(score))
        .route("/sessions", get(sessions))
        .layer(CorsLayer::permissive())
        .with_state(service)
}
