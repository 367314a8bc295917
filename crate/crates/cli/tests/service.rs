mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use filmedgan::checkpoint::archive;
use filmedgan::imageio;
use filmedgan_cli::service::{router, AppState};
use filmedgan_cli::Bundle;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(gallery: bool) -> (tempfile::TempDir, Arc<AppState>, String) {
    let dir = tempfile::tempdir().unwrap();
    let data = common::tiny_checkpoint(dir.path());
    let png = B64.encode(imageio::encode_png(&data.test[0].image).unwrap());
    let bundle = Bundle::load(&dir.path().join("ckpt")).unwrap();
    let gallery = gallery.then(|| data.all().cloned().collect());
    (dir, Arc::new(AppState { bundle, gallery }), png)
}

async fn call(s: &Arc<AppState>, req: Request<Body>) -> (StatusCode, Value) {
    let res = router(s.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(path: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(path).header("content-type", "application/json").body(body.into()).unwrap()
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn health_reports_checkpoint() {
    let (_d, s, _) = state(false);
    let (status, v) = call(&s, get("/api/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["checkpoint_id"], s.bundle.checkpoint_id.as_str());
}

#[tokio::test]
async fn edit_returns_four_maps_deterministically() {
    let (_d, s, png) = state(false);
    let body = json!({ "image": png, "text": "the lady is wearing a red long-sleeved blouse" }).to_string();
    let (status, a) = call(&s, post("/api/edit", body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    assert_eq!(a["attention"].as_array().unwrap().len(), 4);
    for m in a["attention"].as_array().unwrap() {
        let (_, h, w) = imageio::decode_gray_png(&B64.decode(m.as_str().unwrap()).unwrap()).unwrap();
        assert_eq!((h, w), (8, 4));
    }
    let img = imageio::decode_png(&B64.decode(a["image"].as_str().unwrap()).unwrap(), None).unwrap();
    assert_eq!((img.h, img.w), common::RES);
    assert_eq!(a["attributes"].as_object().unwrap().len(), 4);
    assert!(a["timings"]["generate_ms"].as_f64().unwrap() >= 0.0);
    let (_, b) = call(&s, post("/api/edit", body)).await;
    assert_eq!(a["image"], b["image"]);
    assert_eq!(a["attention"], b["attention"]);
}

#[tokio::test]
async fn edit_resizes_other_resolutions() {
    let (_d, s, _) = state(false);
    let big = filmedgan::film::ImageTensor { c: 3, h: 64, w: 40, values: vec![0.2; 3 * 64 * 40] };
    let body = json!({ "image": B64.encode(imageio::encode_png(&big).unwrap()), "text": "a man" }).to_string();
    let (status, _) = call(&s, post("/api/edit", body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn malformed_requests_are_400_with_reason() {
    let (_d, s, png) = state(false);
    let cases = [
        ("{not json".to_string(), "malformed_body"),
        (json!({ "image": png }).to_string(), "malformed_body"),
        (json!({ "image": "@@@", "text": "a red dress" }).to_string(), "invalid_base64"),
        (json!({ "image": B64.encode(b"not a png"), "text": "a red dress" }).to_string(), "invalid_image"),
        (json!({ "image": png, "text": "  ,. " }).to_string(), "empty_text"),
    ];
    for (body, reason) in cases {
        let (status, v) = call(&s, post("/api/edit", body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["error"], reason);
    }
}

#[tokio::test]
async fn oversized_images_are_413() {
    let (_d, s, _) = state(false);
    let huge = B64.encode(vec![0u8; 4 * 1024 * 1024 + 1]);
    let (status, v) = call(&s, post("/api/edit", json!({ "image": huge, "text": "a dress" }).to_string())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(v["error"], "image_too_large");
    let (status, _) = call(&s, post("/api/edit", vec![b' '; 9 * 1024 * 1024])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn embed_returns_300_values() {
    let (_d, s, _) = state(false);
    let (status, v) = call(&s, post("/api/embed", json!({ "text": "the man is wearing a blue t-shirt" }).to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["embedding"].as_array().unwrap().len(), 300);
    let (status, _) = call(&s, post("/api/embed", "{}")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn samples_from_dataset_and_synthetic() {
    for gallery in [true, false] {
        let (_d, s, _) = state(gallery);
        let (status, v) = call(&s, get("/api/samples?n=3&seed=5")).await;
        assert_eq!(status, StatusCode::OK);
        let items = v["samples"].as_array().unwrap();
        assert_eq!(items.len(), 3);
        assert!(items[0]["caption"].as_str().unwrap().contains("wearing"));
        let (_, again) = call(&s, get("/api/samples?n=3&seed=5")).await;
        assert_eq!(v, again);
    }
    let (_d, s, _) = state(false);
    for q in ["n=0", "n=abc", "n=1000"] {
        let (status, v) = call(&s, get(&format!("/api/samples?{q}"))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{q}");
        assert_eq!(v["error"], "invalid_query");
    }
}

#[tokio::test]
async fn internal_failures_carry_an_incident_id() {
    let (_d, s, png) = state(false);
    let mut broken = Bundle::load(&_d.path().join("ckpt")).unwrap();
    broken.embedding.word_vectors.value.iter_mut().for_each(|v| *v = f32::NAN);
    let s2 = Arc::new(AppState { bundle: broken, gallery: None });
    let (status, v) = call(&s2, post("/api/edit", json!({ "image": png, "text": "a red dress" }).to_string())).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["incident_id"].as_str().unwrap().len() >= 32);
    drop(s);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn requests_never_mutate_the_model() {
    let (_d, s, png) = state(false);
    let before = archive::digest(&s.bundle.generator);
    let body = json!({ "image": png, "text": "the man is wearing a green dress" }).to_string();
    let mut handles = Vec::new();
    for _ in 0..1000 {
        let (s, body) = (s.clone(), body.clone());
        handles.push(tokio::spawn(async move { call(&s, post("/api/edit", body)).await.0 }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(before, archive::digest(&s.bundle.generator));
}
