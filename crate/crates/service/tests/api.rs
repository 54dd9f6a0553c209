mod common;

use std::collections::HashSet;
use std::time::Duration;

use common::*;
use lesion_triage_core::DiseaseClass;
use lesion_triage_service::{router, start, Status};

#[tokio::test]
async fn submission_is_accepted_and_stays_pending_without_workers() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(config(dir.path(), 0), fixed(DiseaseClass::HerpesEruption)).unwrap();
    let app = router(state);
    let (status, body) = submit(&app, Some(&png_bytes(1)), Some(VALID_Q)).await;
    assert_eq!(status, 202);
    assert_eq!(body["status"], "Pending");
    let id = body["id"].as_str().unwrap();
    let (status, scan) = get(&app, &format!("/v1/scans/{id}")).await;
    assert_eq!(status, 200);
    assert_eq!(scan["status"], "Pending");
    assert!(scan.get("result").is_none() && scan.get("education").is_none());
    assert_eq!(scan["questionnaire"]["country"], "US");
    let (status, _) = send(&app, axum::http::Request::get(format!("/v1/scans/{id}/saliency.png")).body(axum::body::Body::empty()).unwrap()).await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn classified_result_embeds_matching_education() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(start(config(dir.path(), 1), fixed(DiseaseClass::HerpesEruption)).unwrap());
    let (_, body) = submit(&app, Some(&png_bytes(2)), Some(VALID_Q)).await;
    let id = body["id"].as_str().unwrap().to_string();
    let scan = poll(&app, &id, Duration::from_secs(10)).await;
    assert_eq!(scan["status"], "Classified");
    assert_eq!(scan["result"]["final_class"], "hsv");
    assert_eq!(scan["education"]["class"], "hsv");
    let (_, edu) = get(&app, "/v1/education/hsv").await;
    assert_eq!(scan["education"], edu);
    assert_eq!(scan["result"]["saliency_url"], format!("/v1/scans/{id}/saliency.png"));
    assert!(scan["created_at"].as_str().unwrap() <= scan["updated_at"].as_str().unwrap());

    let req = axum::http::Request::get(format!("/v1/scans/{id}/saliency.png")).body(axum::body::Body::empty()).unwrap();
    let (status, png) = send(&app, req).await;
    assert_eq!(status, 200);
    assert_eq!(image::load_from_memory(&png).unwrap().width(), 16);
}

#[tokio::test]
async fn failures_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let triage = std::sync::Arc::new(FixedTriage { class: DiseaseClass::NonDiseased, fail: true });
    let app = router(start(config(dir.path(), 1), triage).unwrap());
    let (_, body) = submit(&app, Some(&png_bytes(3)), Some(VALID_Q)).await;
    let scan = poll(&app, body["id"].as_str().unwrap(), Duration::from_secs(10)).await;
    assert_eq!(scan["status"], "Failed");
    assert!(scan["error"].as_str().unwrap().contains("stub failure"));
    assert!(scan.get("result").is_none());
}

#[tokio::test]
async fn rejects_bad_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 0);
    cfg.max_upload_bytes = 2_000;
    let app = router(start(cfg, fixed(DiseaseClass::NonDiseased)).unwrap());

    let (s, b) = submit(&app, Some(&[]), Some(VALID_Q)).await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (400, "UndecodableImage"));
    let (s, b) = submit(&app, Some(b"definitely not an image"), Some(VALID_Q)).await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (400, "UndecodableImage"));
    let mut truncated = png_bytes(4);
    truncated.truncate(truncated.len() / 2);
    let (s, b) = submit(&app, Some(&truncated), Some(VALID_Q)).await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (400, "UndecodableImage"));

    let big = vec![0x89u8; 3_000];
    let (s, b) = submit(&app, Some(&big), Some(VALID_Q)).await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (413, "PayloadTooLarge"));
    let huge = vec![0u8; 200_000];
    let (s, b) = submit(&app, Some(&huge), Some(VALID_Q)).await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (413, "PayloadTooLarge"));

    let bad_q = r#"{"age_band":"18-30","country":"ZZ","symptoms":["none_other"],"last_contact":"never"}"#;
    let (s, b) = submit(&app, Some(&png_bytes(5)), Some(bad_q)).await;
    assert_eq!(s, 422);
    assert_eq!((b["error"].as_str().unwrap(), b["field"].as_str().unwrap()), ("InvalidQuestionnaire", "country"));
    let (s, b) = submit(&app, Some(&png_bytes(5)), None).await;
    assert_eq!((s.as_u16(), b["field"].as_str().unwrap()), (422, "questionnaire"));
    let (s, _) = submit(&app, None, Some(VALID_Q)).await;
    assert_eq!(s, 400);

    let (s, b) = get(&app, "/v1/scans/nope").await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (404, "NotFound"));
    assert_eq!(lesion_triage_service::Store::open(dir.path().join("store.sqlite3")).unwrap().count_submissions().unwrap(), 0);
}

#[tokio::test]
async fn thousand_sequential_submissions_are_all_stored() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(config(dir.path(), 0), fixed(DiseaseClass::NonDiseased)).unwrap();
    let store = state.store.clone();
    let app = router(state);
    let mut ids = HashSet::new();
    for i in 0..1000u32 {
        let (s, b) = submit(&app, Some(&png_bytes((i % 251) as u8)), Some(VALID_Q)).await;
        assert_eq!(s, 202);
        ids.insert(b["id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.len(), 1000);
    assert_eq!(store.count_submissions().unwrap(), 1000);
    for id in &ids {
        assert_eq!(store.submission(id).unwrap().status, Status::Pending);
    }
    assert_eq!(store.pending_ids().unwrap().len(), 1000);
}

#[tokio::test]
async fn repeat_uploads_are_stored_once() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(config(dir.path(), 0), fixed(DiseaseClass::NonDiseased)).unwrap();
    let store = state.store.clone();
    let app = router(state);
    let bytes = png_bytes(9);
    let (_, a) = submit(&app, Some(&bytes), Some(VALID_Q)).await;
    let (_, b) = submit(&app, Some(&bytes), Some(VALID_Q)).await;
    assert_eq!(a["duplicate_image"], false);
    assert_eq!(b["duplicate_image"], true);
    assert_ne!(a["id"], b["id"]);
    let sha = store.submission(a["id"].as_str().unwrap()).unwrap().image_sha256;
    assert_eq!(store.submission(b["id"].as_str().unwrap()).unwrap().image_sha256, sha);
    assert_eq!(store.upload_count(&sha).unwrap(), 2);
    let stored = store.image_path(&sha).unwrap();
    assert_eq!(std::fs::read(&stored).unwrap(), bytes);
    assert!(stored.file_name().unwrap().to_str().unwrap().starts_with(&sha));
    let files = walk(store.image_dir()).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(files, 1);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[tokio::test]
async fn restart_keeps_and_resumes_submissions() {
    let dir = tempfile::tempdir().unwrap();
    let mut ids = Vec::new();
    {
        let app = router(start(config(dir.path(), 0), fixed(DiseaseClass::GenitalWarts)).unwrap());
        for i in 0..3 {
            let (_, b) = submit(&app, Some(&png_bytes(100 + i)), Some(VALID_Q)).await;
            ids.push(b["id"].as_str().unwrap().to_string());
        }
    }
    {
        let app = router(start(config(dir.path(), 1), fixed(DiseaseClass::GenitalWarts)).unwrap());
        for id in &ids {
            let scan = poll(&app, id, Duration::from_secs(10)).await;
            assert_eq!(scan["status"], "Classified", "{id}");
        }
    }
    let app = router(start(config(dir.path(), 0), fixed(DiseaseClass::PenileCancer)).unwrap());
    for id in &ids {
        let (_, scan) = get(&app, &format!("/v1/scans/{id}")).await;
        assert_eq!(scan["status"], "Classified");
        assert_eq!(scan["result"]["final_class"], "warts");
        assert_eq!(scan["education"]["class"], "warts");
    }
}
