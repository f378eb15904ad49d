//! HTTP inference service.
//!
//! - `POST /predict` with a PNG or JPEG body returns
//!   `{"predictions": [{"label", "score"} x3], "model_id", "latency_ms"}`.
//! - `GET /healthz` reports whether the model has finished loading.
//!
//! Errors are JSON `{"error": kind, "message": text}`: 400 for empty or
//! undecodable bodies, 413 above the body cap, 503 while loading.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bombus_core::ensemble::{sum_softmax, top_k, ProbabilityMatrix};
use bombus_core::model::TrainedModel;
use serde::Serialize;

use crate::artifact::load_with_id;
use crate::imaging::decode;
use crate::{sha256_hex, Result};

pub const DEFAULT_MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

/// One model or a softmax-sum ensemble, immutable once loaded.
pub struct Predictor {
    members: Vec<TrainedModel>,
    model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelScore {
    pub label: String,
    pub score: f64,
}

impl Predictor {
    /// Load artifacts; more than one directory forms a softmax-sum ensemble.
    pub fn load(dirs: &[PathBuf]) -> Result<Self> {
        if dirs.is_empty() {
            return Err(crate::Error::Usage("no model directories given".into()));
        }
        let mut members = Vec::with_capacity(dirs.len());
        let mut ids = Vec::with_capacity(dirs.len());
        for d in dirs {
            let (m, id) = load_with_id(d)?;
            members.push(m);
            ids.push(id);
        }
        Self::from_models(members, ids)
    }

    pub fn from_models(members: Vec<TrainedModel>, ids: Vec<String>) -> Result<Self> {
        let first = members.first().ok_or(bombus_core::Error::EmptyInput)?;
        for m in &members[1..] {
            first.catalog().ensure_same_order(m.catalog())?;
        }
        let model_id = if ids.len() == 1 { ids[0].clone() } else { sha256_hex(ids.join("+").as_bytes())[..16].to_string() };
        Ok(Predictor { members, model_id })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Top-3 labels with their summed softmax scores, best first.
    pub fn predict_bytes(&self, bytes: &[u8]) -> Result<Vec<LabelScore>> {
        let raw = decode(bytes)?;
        let ids = vec!["upload".to_string()];
        let mut matrices = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let image = bombus_core::image::standardize(&raw, m.model().backbone().input_geometry())?;
            let row = m.model().predict_one(&image)?;
            matrices.push(ProbabilityMatrix::new(ids.clone(), m.catalog().clone(), row)?);
        }
        let sums = sum_softmax(&matrices)?;
        let k = self.members[0].catalog().len().min(3);
        let top = top_k(&sums, k)?.remove(0);
        Ok(top.ranked_labels.into_iter().zip(top.scores).map(|(label, score)| LabelScore { label, score }).collect())
    }
}

/// Shared handle; empty until a model is loaded.
#[derive(Clone, Default)]
pub struct ServiceState {
    slot: Arc<RwLock<Option<Arc<Predictor>>>>,
}

impl ServiceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ready(predictor: Predictor) -> Self {
        let s = Self::new();
        s.set(predictor);
        s
    }

    pub fn set(&self, predictor: Predictor) {
        *self.slot.write().expect("state lock") = Some(Arc::new(predictor));
    }

    pub fn get(&self) -> Option<Arc<Predictor>> {
        self.slot.read().expect("state lock").clone()
    }

    /// Load in a background thread. The returned handle yields the load result.
    pub fn load_in_background(&self, dirs: Vec<PathBuf>) -> std::thread::JoinHandle<Result<()>> {
        let state = self.clone();
        std::thread::spawn(move || {
            state.set(Predictor::load(&dirs)?);
            Ok(())
        })
    }
}

#[derive(Serialize)]
struct PredictResponse<'a> {
    predictions: Vec<LabelScore>,
    model_id: &'a str,
    latency_ms: f64,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: kind, message: message.into() })).into_response()
}

pub fn router(state: ServiceState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

async fn healthz(State(state): State<ServiceState>) -> Response {
    match state.get() {
        Some(p) => Json(serde_json::json!({"status": "ready", "model_id": p.model_id()})).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"status": "loading"}))).into_response(),
    }
}

async fn predict(State(state): State<ServiceState>, body: std::result::Result<Bytes, BytesRejection>) -> Response {
    let Some(predictor) = state.get() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", "model is still loading");
    };
    let body = match body {
        Ok(b) => b,
        Err(r) if r.status() == StatusCode::PAYLOAD_TOO_LARGE => {
            return error(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", r.body_text())
        }
        Err(r) => return error(StatusCode::BAD_REQUEST, "bad_request", r.body_text()),
    };
    if body.is_empty() {
        return error(StatusCode::BAD_REQUEST, "invalid_image", "empty request body");
    }
    let start = Instant::now();
    let p = predictor.clone();
    match tokio::task::spawn_blocking(move || p.predict_bytes(&body)).await {
        Ok(Ok(predictions)) => {
            let latency_ms = start.elapsed().as_secs_f64() * 1e3;
            Json(PredictResponse { predictions, model_id: predictor.model_id(), latency_ms }).into_response()
        }
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.kind(), e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

/// Bind and serve until the process ends. Loading happens in the background.
pub async fn serve(bind: &str, dirs: Vec<PathBuf>, max_body_bytes: usize) -> Result<()> {
    let listener =
        tokio::net::TcpListener::bind(bind).await.map_err(|e| crate::Error::io(std::path::Path::new(bind), e))?;
    let state = ServiceState::new();
    let loader = state.load_in_background(dirs);
    let addr = listener.local_addr().map_err(|e| crate::Error::io(std::path::Path::new(bind), e))?;
    println!("{}", serde_json::json!({"listening": addr.to_string()}));
    tokio::spawn(async move {
        if let Ok(Err(e)) = tokio::task::spawn_blocking(move || loader.join()).await.map(|j| j.unwrap_or(Ok(()))) {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            std::process::exit(1);
        }
    });
    axum::serve(listener, router(state, max_body_bytes))
        .await
        .map_err(|e| crate::Error::io(std::path::Path::new(bind), e))
}
