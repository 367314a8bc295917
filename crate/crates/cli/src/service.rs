//! HTTP inference service.
//!
//! | method | path           | body / query            | response                                   |
//! |--------|----------------|-------------------------|--------------------------------------------|
//! | GET    | `/api/health`  |                         | `{status, checkpoint_id}`                  |
//! | POST   | `/api/edit`    | `{image: b64 png, text}`| `{image, attention[4], attributes, timings}`|
//! | GET    | `/api/samples` | `?n=8&seed=0`           | `{samples: [{image, caption}]}`            |
//! | POST   | `/api/embed`   | `{text}`                | `{embedding: [300 floats]}`                |
//!
//! Errors are JSON `{error, detail}` with status 400 (malformed request),
//! 413 (image over 4 MB) or 500 (`{error, incident_id}`; details are logged).

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use filmedgan::data::CaptionedSample;
use filmedgan::imageio;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::{Bundle, Timings};
use crate::stages::source_samples;

pub const MAX_IMAGE_BYTES: usize = 4 * 1024 * 1024;
/// Transport cap; base64 inflates payloads by 4/3, so a 4 MB image fits.
const MAX_BODY_BYTES: usize = 8 * 1024 * 1024;
const MAX_SAMPLES: usize = 64;

pub struct AppState {
    pub bundle: Bundle,
    /// Gallery pool; synthetic sprites are generated per request when `None`.
    pub gallery: Option<Vec<CaptionedSample>>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(&'static str, String),
    TooLarge(usize),
    Internal(anyhow::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(code, detail) => {
                (StatusCode::BAD_REQUEST, Json(json!({ "error": code, "detail": detail }))).into_response()
            }
            ApiError::TooLarge(n) => (
                StatusCode::PAYLOAD_TOO_LARGE,
                Json(json!({ "error": "image_too_large", "detail": format!("{n} bytes exceeds {MAX_IMAGE_BYTES}") })),
            )
                .into_response(),
            ApiError::Internal(e) => {
                let incident = uuid::Uuid::new_v4().to_string();
                log::error!("incident {incident}: {e:#}");
                (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "internal", "incident_id": incident })))
                    .into_response()
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
struct EditRequest {
    image: String,
    text: String,
}

#[derive(Serialize)]
struct EditResponse {
    image: String,
    attention: Vec<String>,
    attributes: Option<BTreeMap<String, String>>,
    timings: Timings,
}

#[derive(Deserialize)]
struct EmbedRequest {
    text: String,
}

#[derive(Deserialize)]
struct SamplesQuery {
    n: Option<String>,
    seed: Option<String>,
}

fn parse_json<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest("malformed_body", e.to_string()))
}

fn check_text(text: &str) -> Result<(), ApiError> {
    if filmedgan::text::words(text).is_empty() {
        return Err(ApiError::BadRequest("empty_text", "text has no words".into()));
    }
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> anyhow::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.into()))?
        .map_err(ApiError::Internal)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "checkpoint_id": s.bundle.checkpoint_id }))
}

async fn edit(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<EditResponse> {
    let req: EditRequest = parse_json(&body)?;
    check_text(&req.text)?;
    let png = B64
        .decode(req.image.trim())
        .map_err(|e| ApiError::BadRequest("invalid_base64", e.to_string()))?;
    if png.len() > MAX_IMAGE_BYTES {
        return Err(ApiError::TooLarge(png.len()));
    }
    let image = imageio::decode_png(&png, Some(s.bundle.resolution()))
        .map_err(|e| ApiError::BadRequest("invalid_image", e.to_string()))?;
    blocking(move || {
        let out = s.bundle.edit(&image, &req.text)?;
        let attention = out
            .attention
            .iter()
            .map(|m| Ok(B64.encode(imageio::encode_gray_png(&m.values, m.h, m.w)?)))
            .collect::<anyhow::Result<_>>()?;
        Ok(EditResponse {
            image: B64.encode(imageio::encode_png(&out.image)?),
            attention,
            attributes: out.attributes.map(|a| a.into_iter().collect()),
            timings: out.timings,
        })
    })
    .await
    .map(Json)
}

async fn embed(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<serde_json::Value> {
    let req: EmbedRequest = parse_json(&body)?;
    check_text(&req.text)?;
    blocking(move || Ok(json!({ "embedding": s.bundle.embed(&req.text)?.data }))).await.map(Json)
}

fn parse_param(name: &str, v: Option<&str>, default: usize) -> Result<usize, ApiError> {
    match v {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::BadRequest("invalid_query", format!("{name}={v:?} is not a non-negative integer"))),
    }
}

async fn samples(State(s): State<Arc<AppState>>, Query(q): Query<SamplesQuery>) -> ApiResult<serde_json::Value> {
    let n = parse_param("n", q.n.as_deref(), 8)?;
    let seed = parse_param("seed", q.seed.as_deref(), 0)? as u64;
    if n == 0 || n > MAX_SAMPLES {
        return Err(ApiError::BadRequest("invalid_query", format!("n must be in 1..={MAX_SAMPLES}")));
    }
    blocking(move || {
        let picked: Vec<CaptionedSample> = pick_samples(&s, n, seed)?;
        let items = picked
            .iter()
            .map(|p| Ok(json!({ "image": B64.encode(imageio::encode_png(&p.image)?), "caption": p.caption })))
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(json!({ "samples": items }))
    })
    .await
    .map(Json)
}

fn pick_samples(s: &AppState, n: usize, seed: u64) -> anyhow::Result<Vec<CaptionedSample>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let res = s.bundle.resolution();
    match &s.gallery {
        Some(pool) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Ok(pool.choose_multiple(&mut rng, n).cloned().collect())
        }
        None => source_samples(None, n, seed, res),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/edit", post(edit))
        .route("/api/samples", get(samples))
        .route("/api/embed", post(embed))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(state: AppState, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("serving checkpoint {} on http://{}", state.bundle.checkpoint_id, listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
