//! HTTP JSON service over a loaded pipeline.
//!
//! Handlers are thin adapters: each one calls the matching [`Pipeline`]
//! operation inside `spawn_blocking` and serializes the result.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::pipeline::{BinRef, ErrorKind, Pipeline, PipelineError, Stages};
use crate::signal_io::{read_csv_record, read_wfdb16_record, IndexEntry, RecordStore, SignalIoError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// Immutable pipeline plus a version tag. Replaced wholesale on reload.
#[derive(Debug)]
pub struct PipelineHandle {
    pub pipeline: Pipeline,
    pub version: String,
}

#[derive(Debug)]
pub struct ServiceState {
    handle: RwLock<Arc<PipelineHandle>>,
    store: RwLock<RecordStore>,
}

impl ServiceState {
    pub fn new(pipeline: Pipeline, version: impl Into<String>, store: RecordStore) -> Arc<Self> {
        Arc::new(ServiceState {
            handle: RwLock::new(Arc::new(PipelineHandle { pipeline, version: version.into() })),
            store: RwLock::new(store),
        })
    }

    pub fn handle(&self) -> Arc<PipelineHandle> {
        self.handle.read().expect("handle lock").clone()
    }

    /// Atomically replaces the pipeline; in-flight requests keep the old one.
    pub fn swap(&self, pipeline: Pipeline, version: impl Into<String>) {
        *self.handle.write().expect("handle lock") = Arc::new(PipelineHandle { pipeline, version: version.into() });
    }
}

/// JSON error body `{error, code, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: ErrorKind::Validation.code(), detail: detail.into() }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let kind = e.kind();
        let status = match kind {
            ErrorKind::Validation => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::ZeroProbability => StatusCode::CONFLICT,
            ErrorKind::Remote => StatusCode::BAD_GATEWAY,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, code: kind.code(), detail: e.to_string() }
    }
}

impl From<SignalIoError> for ApiError {
    fn from(e: SignalIoError) -> Self {
        PipelineError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let error = self.status.canonical_reason().unwrap_or("error").to_lowercase();
        let body = json!({ "error": error, "code": self.code, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> ApiResult {
    serde_json::to_value(v).map(Json).map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        detail: e.to_string(),
    })
}

async fn blocking<F>(state: Arc<ServiceState>, f: F) -> ApiResult
where
    F: FnOnce(&ServiceState) -> ApiResult + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state)).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        detail: e.to_string(),
    })?
}

#[derive(Debug, Serialize)]
struct RecordSummary<'a> {
    record_id: &'a str,
    #[serde(flatten)]
    entry: &'a IndexEntry,
}

async fn health(State(s): State<Arc<ServiceState>>) -> ApiResult {
    let h = s.handle();
    let records = s.store.read().expect("store lock").len();
    Ok(Json(json!({ "status": "ok", "version": h.version, "records": records })))
}

async fn list_records(State(s): State<Arc<ServiceState>>) -> ApiResult {
    let store = s.store.read().expect("store lock");
    let rows: Vec<RecordSummary> = store
        .record_ids()
        .map(|id| RecordSummary { record_id: id, entry: store.entry(id).expect("listed id") })
        .collect();
    to_value(&rows)
}

async fn get_record(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    blocking(s, move |s| {
        let rec = s.store.read().expect("store lock").load_record(&id)?;
        Ok(Json(json!({
            "record_id": rec.record_id,
            "patient_id": rec.patient_id,
            "acquired_at": rec.acquired_at,
            "sampling_rate_hz": rec.sampling_rate_hz,
            "lead_names": rec.lead_names,
            "num_samples": rec.num_samples(),
        })))
    })
    .await
}

/// Upload body. `files` maps file names to base64 contents: either one
/// `.csv` file or a WFDB `.hea` header with its signal files.
#[derive(Debug, Deserialize)]
pub struct UploadRequest {
    pub files: IndexMap<String, String>,
    #[serde(default)]
    pub record_id: Option<String>,
    #[serde(default)]
    pub sampling_rate_hz: Option<f64>,
    #[serde(default)]
    pub lead_names: Vec<String>,
    #[serde(default)]
    pub patient_id: Option<String>,
    #[serde(default)]
    pub acquired_at: Option<i64>,
}

fn decode_upload(req: &UploadRequest) -> Result<crate::signal_io::EcgRecord, ApiError> {
    let dir = tempfile::tempdir().map_err(|e| PipelineError::io(Path::new("upload"), e))?;
    let mut header = None;
    let mut csv = None;
    for (name, b64) in &req.files {
        let base = Path::new(name)
            .file_name()
            .filter(|b| !b.is_empty())
            .ok_or_else(|| ApiError::bad_request(format!("bad file name {name:?}")))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| ApiError::bad_request(format!("{name}: invalid base64: {e}")))?;
        let path = dir.path().join(base);
        std::fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("hea") => header = Some(path),
            Some("csv") => csv = Some(path),
            _ => {}
        }
    }
    let mut rec = match (header, csv) {
        (Some(h), _) => read_wfdb16_record(&h)?,
        (None, Some(c)) => {
            let rate =
                req.sampling_rate_hz.ok_or_else(|| ApiError::bad_request("CSV upload needs sampling_rate_hz"))?;
            read_csv_record(&c, rate, &req.lead_names)?
        }
        (None, None) => return Err(ApiError::bad_request("upload needs a .csv file or a .hea header")),
    };
    if let Some(id) = &req.record_id {
        rec.record_id = id.clone();
    }
    if let Some(pid) = &req.patient_id {
        rec = rec.with_patient(pid.clone(), req.acquired_at);
    }
    Ok(rec)
}

async fn post_record(State(s): State<Arc<ServiceState>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: UploadRequest = parse(&body)?;
    let Json(v) = blocking(s, move |s| {
        let rec = decode_upload(&req)?;
        let id = s.store.write().expect("store lock").store_record(&rec).map_err(|e| match e {
            SignalIoError::DuplicateRecordId(id) => ApiError {
                status: StatusCode::CONFLICT,
                code: "duplicate_record",
                detail: format!("record {id:?} already stored"),
            },
            other => other.into(),
        })?;
        Ok(Json(json!({ "record_id": id })))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn biomarkers(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    blocking(s, move |s| {
        let h = s.handle();
        let store = s.store.read().expect("store lock");
        let vector = h.pipeline.vectors.vector(&store, &id)?;
        let evidence = h.pipeline.model.evidence(&vector)?;
        Ok(Json(json!({ "vector": vector, "evidence": evidence })))
    })
    .await
}

async fn posterior(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    blocking(s, move |s| {
        let h = s.handle();
        let ev = h.pipeline.evidence(&s.store.read().expect("store lock"), &id)?;
        to_value(&h.pipeline.posterior(&ev)?)
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub overrides: IndexMap<String, BinRef>,
}

async fn whatif(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let req: WhatIfRequest = parse(&body)?;
    blocking(s, move |s| {
        let h = s.handle();
        let ev = h.pipeline.evidence(&s.store.read().expect("store lock"), &id)?;
        to_value(&h.pipeline.whatif(&ev, &req.overrides)?)
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct CounterfactualRequest {
    pub target: String,
    #[serde(default)]
    pub max_edits: Option<usize>,
}

async fn counterfactual(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let req: CounterfactualRequest = parse(&body)?;
    blocking(s, move |s| {
        let h = s.handle();
        let ev = h.pipeline.evidence(&s.store.read().expect("store lock"), &id)?;
        to_value(&h.pipeline.counterfactual(&ev, &req.target, req.max_edits)?)
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct ExplainRequest {
    pub query: String,
    #[serde(default)]
    pub fallback_enabled: Option<bool>,
}

async fn explain(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let req: ExplainRequest = parse(&body)?;
    blocking(s, move |s| {
        let h = s.handle();
        let store = s.store.read().expect("store lock");
        let pool = h.pipeline.vectors.pool(&store);
        let e = h.pipeline.explain_record(&store, &pool, &id, &req.query, Stages::FULL, req.fallback_enabled)?;
        tracing::info!(
            record = %id,
            hr = e.payload.hallucination_score,
            used_fallback = e.payload.used_fallback,
            "explanation served"
        );
        to_value(&e)
    })
    .await
}

async fn graph(State(s): State<Arc<ServiceState>>) -> ApiResult {
    to_value(s.handle().pipeline.network())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let origin = state.handle().pipeline.config.cors_origin.clone();
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match origin.and_then(|o| HeaderValue::from_str(&o).ok()) {
        Some(o) => cors.allow_origin(AllowOrigin::exact(o)),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/health", get(health))
        .route("/records", get(list_records).post(post_record))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/biomarkers", get(biomarkers))
        .route("/records/{id}/posterior", get(posterior))
        .route("/records/{id}/whatif", post(whatif))
        .route("/records/{id}/counterfactual", post(counterfactual))
        .route("/records/{id}/explain", post(explain))
        .route("/graph", get(graph))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<ServiceState>, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::BindFailure { addr: addr.to_string(), source })?;
    let local: SocketAddr = listener.local_addr().map_err(ServiceError::Serve)?;
    tracing::info!(%local, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}
