//! Read-only HTTP interface over a pipeline artifact.
//!
//! Every handler is a thin adapter around [`QueryEngine`]; responses are JSON
//! and errors carry `{"code", "message"}` with the status of the underlying
//! [`QueryError`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use skillgraph::query::{request_config, Page, QueryEngine, QueryError, WhatIfProfile};

/// Default `top` for ranked lists.
pub const DEFAULT_TOP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: "bad_request".into(),
                message: message.into(),
            },
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        Self {
            status: StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            body: ErrorBody {
                code: e.code().into(),
                message: e.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Params = Query<HashMap<String, String>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn param<T: FromStr>(params: &HashMap<String, String>, key: &str) -> Result<Option<T>, String> {
    params
        .get(key)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| format!("`{key}` has invalid value `{v}`")))
        .transpose()
}

fn page(params: &HashMap<String, String>) -> Result<Page, ApiError> {
    let limit = param(params, "limit").map_err(QueryError::BadPagination)?;
    let offset = param(params, "offset").map_err(QueryError::BadPagination)?;
    Ok(Page::new(limit, offset)?)
}

fn top(params: &HashMap<String, String>) -> Result<usize, ApiError> {
    Ok(param(params, "top").map_err(QueryError::BadPagination)?.unwrap_or(DEFAULT_TOP))
}

fn thresholds(
    engine: &QueryEngine,
    tau: Option<usize>,
    phi: Option<f64>,
) -> Result<skillgraph::ThresholdConfig, ApiError> {
    Ok(request_config(tau, phi, &engine.artifact().default_config)?)
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    digest: &'a str,
    #[serde(flatten)]
    meta: &'a skillgraph::query::ArtifactMeta,
    default_config: &'a skillgraph::ThresholdConfig,
}

async fn meta(State(e): State<Arc<QueryEngine>>) -> Response {
    Json(Meta {
        digest: e.digest(),
        meta: &e.artifact().meta,
        default_config: &e.artifact().default_config,
    })
    .into_response()
}

async fn jobs(State(e): State<Arc<QueryEngine>>, Query(p): Params) -> ApiResult<Vec<skillgraph::query::JobSummary>> {
    let query = p.get("query").map(String::as_str).unwrap_or("");
    Ok(Json(e.search_jobs(query, &page(&p)?)?))
}

async fn job(State(e): State<Arc<QueryEngine>>, Path(id): Path<String>) -> ApiResult<skillgraph::query::JobDetail> {
    Ok(Json(e.job_detail(&id)?))
}

async fn job_transitions(
    State(e): State<Arc<QueryEngine>>,
    Path(id): Path<String>,
    Query(p): Params,
) -> ApiResult<skillgraph::query::TransitionList> {
    let tau = param(&p, "tau").map_err(QueryError::BadThreshold)?;
    let phi = param(&p, "phi").map_err(QueryError::BadThreshold)?;
    // Resolve the job first so an unknown id is a 404 regardless of thresholds.
    e.job_detail(&id)?;
    let cfg = thresholds(&e, tau, phi)?;
    Ok(Json(e.list_transitions_for_job(&id, &cfg, &page(&p)?)?))
}

/// `POST /what-if` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub activities: Vec<String>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub tau: Option<usize>,
    #[serde(default)]
    pub phi: Option<f64>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: Option<usize>,
}

async fn what_if(State(e): State<Arc<QueryEngine>>, body: Bytes) -> ApiResult<skillgraph::query::TransitionList> {
    let req: WhatIfRequest = serde_json::from_slice(&body).map_err(|err| ApiError::bad_request(err.to_string()))?;
    let cfg = thresholds(&e, req.tau, req.phi)?;
    let profile = WhatIfProfile {
        activities: req.activities,
        rho: req.rho,
    };
    Ok(Json(e.what_if(&profile, &cfg, &Page::new(req.limit, req.offset)?)?))
}

async fn bridge(State(e): State<Arc<QueryEngine>>, Query(p): Params) -> Result<Response, ApiError> {
    Ok(Json(e.bridge_skills(top(&p)?)).into_response())
}

async fn safe_harbors(State(e): State<Arc<QueryEngine>>, Query(p): Params) -> Result<Response, ApiError> {
    Ok(Json(e.safe_harbors(top(&p)?)).into_response())
}

async fn sensitivity(State(e): State<Arc<QueryEngine>>) -> Response {
    Json(e.sensitivity()).into_response()
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        body: ErrorBody {
            code: "not_found".into(),
            message: "no such endpoint".into(),
        },
    }
}

pub fn router(engine: Arc<QueryEngine>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/jobs", get(jobs))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/transitions", get(job_transitions))
        .route("/what-if", post(what_if))
        .route("/skills/bridge", get(bridge))
        .route("/safe-harbors", get(safe_harbors))
        .route("/sensitivity", get(sensitivity))
        .fallback(not_found)
        .with_state(engine)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, engine: Arc<QueryEngine>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(engine)).await
}
