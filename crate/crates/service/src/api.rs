//! HTTP+JSON endpoints.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/v1/scans` | multipart `image` + `questionnaire` (JSON) → 202 |
//! | GET | `/v1/scans/{id}` | status, result and education entry |
//! | GET | `/v1/scans/{id}/saliency.png` | heatmap overlay |
//! | GET | `/v1/analytics/summary?from=&to=` | usage cross-tab |
//! | GET | `/v1/education/{class}` | education entry |
//! | POST | `/v1/education/reload` | re-read content file (bearer) |
//! | GET | `/v1/review/queue?offset=&limit=` | unverified augmented records (bearer) |
//! | POST | `/v1/review/{id}` | verdict (bearer) |
//! | GET | `/v1/records/{id}/image` | record image (bearer) |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use lesion_triage_core::{DiseaseClass, ImageRecord};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::analytics::summarize;
use crate::config::ServiceConfig;
use crate::education::Education;
use crate::error::{Result, ServiceError};
use crate::questionnaire::Questionnaire;
use crate::store::{timestamp, Status, Store, Submission, Verdict};
use crate::worker::JobQueue;

/// Slack on top of the image limit for the questionnaire part and multipart framing.
const FORM_OVERHEAD_BYTES: usize = 64 * 1024;
pub const MAX_QUEUE_PAGE: usize = 100;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub education: Arc<Education>,
    pub config: Arc<ServiceConfig>,
    pub jobs: JobQueue,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UndecodableImage(_)
            | ServiceError::InvalidRange
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::InvalidQuestionnaire(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotAugmented(_) | ServiceError::AlreadyReviewed(_) => StatusCode::CONFLICT,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        if let ServiceError::InvalidQuestionnaire(field) = &self {
            body["field"] = json!(field);
        }
        let mut resp = (status, Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, "Bearer".parse().unwrap());
        }
        resp
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_upload_bytes + FORM_OVERHEAD_BYTES;
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/v1/scans", post(submit_scan))
        .route("/v1/scans/{id}", get(get_scan))
        .route("/v1/scans/{id}/saliency.png", get(get_saliency))
        .route("/v1/analytics/summary", get(analytics_summary))
        .route("/v1/education/reload", post(reload_education))
        .route("/v1/education/{class}", get(get_education))
        .route("/v1/review/queue", get(review_queue))
        .route("/v1/review/{id}", post(review_verdict))
        .route("/v1/records/{id}/image", get(record_image))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn multipart_error(limit: usize) -> impl Fn(MultipartError) -> ServiceError {
    move |e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ServiceError::PayloadTooLarge { limit }
        } else {
            ServiceError::BadRequest(e.body_text())
        }
    }
}

async fn submit_scan(State(s): State<AppState>, mut form: Multipart) -> Result<impl IntoResponse> {
    let limit = s.config.max_upload_bytes;
    let err = multipart_error(limit);
    let (mut image, mut questionnaire): (Option<Bytes>, Option<String>) = (None, None);
    while let Some(field) = form.next_field().await.map_err(&err)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(&err)?),
            Some("questionnaire") => questionnaire = Some(field.text().await.map_err(&err)?),
            _ => {}
        }
    }
    let bytes = image.ok_or_else(|| ServiceError::BadRequest("missing `image` part".into()))?;
    if bytes.len() > limit {
        return Err(ServiceError::PayloadTooLarge { limit });
    }
    let questionnaire = Questionnaire::parse(
        questionnaire
            .as_deref()
            .ok_or_else(|| ServiceError::InvalidQuestionnaire("questionnaire".into()))?,
    )?;
    let extension = decode_check(&bytes)?;

    let store = s.store.clone();
    let submission = tokio::task::spawn_blocking(move || -> Result<(Submission, bool)> {
        let stored = store.put_image(&bytes, extension)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let sub = store.insert_submission(&id, &stored.sha256, &questionnaire, Utc::now())?;
        Ok((sub, stored.duplicate))
    })
    .await
    .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let (sub, duplicate) = submission;
    s.jobs.enqueue(sub.id.clone());
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, format!("/v1/scans/{}", sub.id))],
        Json(json!({
            "id": sub.id,
            "status": sub.status,
            "created_at": timestamp(sub.created_at),
            "duplicate_image": duplicate,
        })),
    ))
}

/// Returns the file extension for a decodable PNG or JPEG upload.
fn decode_check(bytes: &[u8]) -> Result<&'static str> {
    if bytes.is_empty() {
        return Err(ServiceError::UndecodableImage("empty upload".into()));
    }
    let format = image::guess_format(bytes).map_err(|e| ServiceError::UndecodableImage(e.to_string()))?;
    let ext = match format {
        image::ImageFormat::Png => "png",
        image::ImageFormat::Jpeg => "jpg",
        other => return Err(ServiceError::UndecodableImage(format!("unsupported format {other:?}"))),
    };
    image::load_from_memory_with_format(bytes, format).map_err(|e| ServiceError::UndecodableImage(e.to_string()))?;
    Ok(ext)
}

/// JSON view of a submission, with the result and education entry once classified.
pub fn submission_view(sub: &Submission, education: &Education) -> Value {
    let mut v = json!({
        "id": sub.id,
        "status": sub.status,
        "created_at": timestamp(sub.created_at),
        "updated_at": timestamp(sub.updated_at),
        "questionnaire": sub.questionnaire,
    });
    if let (Status::Classified, Some(r)) = (sub.status, &sub.result) {
        let mut result = serde_json::to_value(r).expect("serializable");
        result["final_class_name"] = json!(r.final_class.display_name());
        result["saliency_url"] = json!(format!("/v1/scans/{}/saliency.png", sub.id));
        v["result"] = result;
        v["education"] = serde_json::to_value(education.get(r.final_class)).expect("serializable");
    }
    if let Some(e) = &sub.error {
        v["error"] = json!(e);
    }
    v
}

async fn get_scan(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>> {
    let sub = s.store.submission(&id)?;
    Ok(Json(submission_view(&sub, &s.education)))
}

async fn get_saliency(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let sub = s.store.submission(&id)?;
    if sub.status != Status::Classified {
        return Err(ServiceError::NotFound(format!("{id}/saliency.png")));
    }
    let bytes = tokio::fs::read(s.store.saliency_path(&id))
        .await
        .map_err(|_| ServiceError::NotFound(format!("{id}/saliency.png")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct Range {
    from: Option<String>,
    to: Option<String>,
}

/// RFC 3339 timestamp, or a plain date meaning the start (`end = false`) or
/// end of that UTC day.
fn parse_bound(s: &str, end: bool) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| ServiceError::BadRequest(format!("`{s}` is neither RFC 3339 nor YYYY-MM-DD")))?;
    let t = if end {
        d.and_hms_micro_opt(23, 59, 59, 999_999)
    } else {
        d.and_hms_opt(0, 0, 0)
    };
    Ok(t.expect("valid time").and_utc())
}

async fn analytics_summary(State(s): State<AppState>, Query(r): Query<Range>) -> Result<Json<Value>> {
    let from = r.from.as_deref().filter(|v| !v.is_empty()).map(|v| parse_bound(v, false)).transpose()?;
    let to = r.to.as_deref().filter(|v| !v.is_empty()).map(|v| parse_bound(v, true)).transpose()?;
    if let (Some(a), Some(b)) = (from, to) {
        if a > b {
            return Err(ServiceError::InvalidRange);
        }
    }
    let entries = s.store.questionnaires_between(from, to)?;
    Ok(Json(serde_json::to_value(summarize(&entries, from, to)).expect("serializable")))
}

async fn get_education(State(s): State<AppState>, Path(class): Path<String>) -> Result<Json<Value>> {
    let class: DiseaseClass = class.parse().map_err(|_| ServiceError::NotFound(class.clone()))?;
    Ok(Json(serde_json::to_value(s.education.get(class)).expect("serializable")))
}

fn authorize(s: &AppState, headers: &HeaderMap) -> Result<()> {
    let expected = s.config.review_token.as_deref().ok_or(ServiceError::Unauthorized)?;
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ServiceError::Unauthorized)?;
    // Length-independent comparison of the token bytes.
    let matches = given.len() == expected.len()
        && given.bytes().zip(expected.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0;
    if matches {
        Ok(())
    } else {
        Err(ServiceError::Unauthorized)
    }
}

async fn reload_education(State(s): State<AppState>, headers: HeaderMap) -> Result<Json<Value>> {
    authorize(&s, &headers)?;
    s.education.reload()?;
    Ok(Json(json!({ "status": "reloaded" })))
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

fn review_item(s: &AppState, r: &ImageRecord) -> Value {
    let base_url = r
        .base_id
        .as_ref()
        .filter(|b| s.store.record(b).is_ok())
        .map(|b| format!("/v1/records/{b}/image"));
    json!({
        "record": r,
        "image_url": format!("/v1/records/{}/image", r.id),
        "base_image_url": base_url,
        "recipe": { "recipe_id": r.recipe_id, "base_id": r.base_id },
    })
}

async fn review_queue(State(s): State<AppState>, headers: HeaderMap, Query(p): Query<Page>) -> Result<Json<Value>> {
    authorize(&s, &headers)?;
    let offset = p.offset.unwrap_or(0);
    let limit = p.limit.unwrap_or(20).clamp(1, MAX_QUEUE_PAGE);
    let (total, records) = s.store.review_queue(offset, limit)?;
    let items: Vec<Value> = records.iter().map(|r| review_item(&s, r)).collect();
    Ok(Json(json!({ "total": total, "offset": offset, "limit": limit, "items": items })))
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    verdict: Verdict,
    reviewer: String,
    #[serde(default)]
    note: String,
}

async fn review_verdict(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>> {
    authorize(&s, &headers)?;
    let v: VerdictBody = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    if v.reviewer.trim().is_empty() {
        return Err(ServiceError::BadRequest("reviewer must not be empty".into()));
    }
    let record = s.store.review(&id, v.verdict, &v.reviewer, &v.note)?;
    let audit = s.store.audit_log(&id)?;
    Ok(Json(json!({
        "record": record,
        "training_eligible": record.is_training_eligible(),
        "audit": audit,
    })))
}

async fn record_image(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Result<Response> {
    authorize(&s, &headers)?;
    let (_, path) = s.store.record(&id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::NotFound(path.display().to_string()))?;
    let mime = match image::guess_format(&bytes) {
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        _ => "image/png",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
