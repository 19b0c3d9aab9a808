//! Minimal HTTP prediction service: a loaded model bundle plus calibrated
//! per-locale thresholds behind three endpoints.
//!
//! POST /predict — JSON in, JSON out; GET /healthz; GET /version.
//! The model and calibration are loaded once and shared immutably, so the
//! response for a given request is a pure function of (bundle,
//! calibration, request).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use localeq_model::{checkpoint, ModelBundle, ModelError};

/// Calibrated operating thresholds, as written by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub target_precision: f64,
    pub thresholding: String,
    /// Per-locale operating thresholds keyed by locale code.
    pub per_locale: BTreeMap<String, f64>,
    /// Fallback threshold for locales without a calibrated entry.
    pub global: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            target_precision: 0.8,
            thresholding: "default".to_string(),
            per_locale: BTreeMap::new(),
            global: 0.5,
        }
    }
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading calibration {}", path.display()))?;
        serde_json::from_str(&raw)
            .with_context(|| format!("parsing calibration {}", path.display()))
    }

    pub fn threshold_for(&self, locale_code: &str) -> f64 {
        self.per_locale
            .get(locale_code)
            .copied()
            .unwrap_or(self.global)
    }
}

pub struct ServerState {
    pub bundle: ModelBundle,
    pub calibration: Calibration,
}

#[derive(Debug, Deserialize)]
struct PredictRequest {
    locale: String,
    query: String,
    threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ScoredPt {
    name: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct PredictResponse {
    product_types: Vec<ScoredPt>,
    refused: bool,
    locale_known: bool,
    model_version: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    let body = serde_json::to_string(&ErrorBody {
        error: message.into(),
    })
    .expect("error body");
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        body,
    )
        .into_response()
}

/// Computes the prediction response for one request; shared by the HTTP
/// handler and the in-process equivalence tests.
pub fn predict_body(
    state: &ServerState,
    locale: &str,
    query: &str,
    threshold: Option<f64>,
) -> Result<String, (u16, String)> {
    let query = query.trim();
    if query.is_empty() {
        return Err((422, "query is empty".to_string()));
    }
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err((422, format!("threshold {t} outside [0, 1]")));
        }
    }
    let effective = threshold.unwrap_or_else(|| state.calibration.threshold_for(locale));
    let prediction = state
        .bundle
        .predict(query, locale, effective)
        .map_err(|e| match e {
            ModelError::NoHeadForLocale(_) => (422, e.to_string()),
            other => (500, other.to_string()),
        })?;
    let response = PredictResponse {
        product_types: prediction
            .items
            .iter()
            .map(|&(pt, score)| ScoredPt {
                name: state.bundle.pts.name(pt).to_string(),
                score,
            })
            .collect(),
        refused: prediction.items.is_empty(),
        locale_known: prediction.locale_known,
        model_version: state.bundle.model_version(),
    };
    Ok(serde_json::to_string(&response).expect("response body"))
}

async fn handle_predict(
    State(state): State<Arc<ServerState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.split(';').next().unwrap_or("").trim() == "application/json")
        .unwrap_or(false);
    if !is_json {
        return error_response(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "content-type must be application/json",
        );
    }
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error_response(StatusCode::BAD_REQUEST, format!("malformed body: {e}"))
        }
    };
    match predict_body(&state, &request.locale, &request.query, request.threshold) {
        Ok(body) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response(),
        Err((status, message)) => error_response(
            StatusCode::from_u16(status).expect("valid status"),
            message,
        ),
    }
}

async fn handle_healthz() -> &'static str {
    "ok"
}

async fn handle_version(State(state): State<Arc<ServerState>>) -> Response {
    let body = serde_json::json!({ "model_version": state.bundle.model_version() });
    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "application/json")],
        body.to_string(),
    )
        .into_response()
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/predict", post(handle_predict))
        .route("/healthz", get(handle_healthz))
        .route("/version", get(handle_version))
        .with_state(state)
}

/// Binds and serves until the process is terminated.
pub fn serve(bundle_path: &Path, calibration_path: Option<&Path>, bind: &str) -> Result<()> {
    let bundle = checkpoint::load(bundle_path)
        .with_context(|| format!("loading checkpoint {}", bundle_path.display()))?;
    let calibration = match calibration_path {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    let state = Arc::new(ServerState {
        bundle,
        calibration,
    });
    let addr: SocketAddr = bind
        .parse()
        .with_context(|| format!("invalid bind address {bind:?}"))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("serving on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .await
            .context("server loop")
    })
}
