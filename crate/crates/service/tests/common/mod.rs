#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lesion_triage_core::raster::{PixelBox, RgbImage};
use lesion_triage_core::DiseaseClass;
use lesion_triage_service::{ScanResult, ServiceConfig, ServiceError, Triage, Triaged};
use serde_json::Value;
use tower::ServiceExt;

pub const TOKEN: &str = "s3cret";
pub const BOUNDARY: &str = "----lt-test-boundary";

pub fn config(dir: &std::path::Path, workers: usize) -> ServiceConfig {
    let mut c = ServiceConfig::new(dir.join("models"), dir.join("store.sqlite3"));
    c.review_token = Some(TOKEN.into());
    c.workers = workers;
    c
}

pub fn png_bytes(seed: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(16, 12, |x, y| image::Rgb([seed, x as u8 * 9, y as u8 * 13]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub const VALID_Q: &str =
    r#"{"age_band":"18-30","country":"US","symptoms":["none_other"],"last_contact":"under1mo"}"#;

pub fn multipart(image: Option<&[u8]>, questionnaire: Option<&str>) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    if let Some(q) = questionnaire {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"questionnaire\"\r\nContent-Type: application/json\r\n\r\n{q}\r\n").as_bytes(),
        );
    }
    if let Some(img) = image {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"scan.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(img);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn json(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

pub async fn submit(app: &Router, image: Option<&[u8]>, q: Option<&str>) -> (StatusCode, Value) {
    let (ct, body) = multipart(image, q);
    let req = Request::post("/v1/scans").header(header::CONTENT_TYPE, ct).body(Body::from(body)).unwrap();
    json(app, req).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    json(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn authed(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut b = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let body = body.map_or(Body::empty(), |v| Body::from(v.to_string()));
    json(app, b.header(header::CONTENT_TYPE, "application/json").body(body).unwrap()).await
}

/// Polls until the submission leaves Pending or the deadline passes.
pub async fn poll(app: &Router, id: &str, deadline: Duration) -> Value {
    let start = std::time::Instant::now();
    loop {
        let (_, v) = get(app, &format!("/v1/scans/{id}")).await;
        if v["status"] != "Pending" || start.elapsed() > deadline {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Answers every image with one fixed class, or fails when `fail` is set.
pub struct FixedTriage {
    pub class: DiseaseClass,
    pub fail: bool,
}

impl Triage for FixedTriage {
    fn triage(&self, image: &RgbImage) -> Result<Triaged, ServiceError> {
        if self.fail {
            return Err(ServiceError::BadRequest("stub failure".into()));
        }
        let probabilities: BTreeMap<String, f64> = DiseaseClass::ALL
            .iter()
            .map(|&c| (c.token().to_string(), if c == self.class { 0.9 } else { 0.02 }))
            .collect();
        Ok(Triaged {
            result: ScanResult {
                final_class: self.class,
                confidence: 0.9,
                initial_class: self.class,
                initial_confidence: 0.8,
                probabilities,
                bbox: PixelBox::full(image.width(), image.height()),
                stages: vec![],
            },
            overlay: image.clone(),
        })
    }
}

pub fn fixed(class: DiseaseClass) -> Arc<dyn Triage> {
    Arc::new(FixedTriage { class, fail: false })
}
