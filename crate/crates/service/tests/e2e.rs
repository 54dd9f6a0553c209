//! Submission to classified result on small models trained here.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use lesion_triage_core::augment::TransformConfig;
use lesion_triage_core::synth::{lesion_scene, subject_scene};
use lesion_triage_core::DiseaseClass;
use lesion_triage_service::{router, start, PipelineTriage};
use lesion_triage_vision::{train_classifier, train_segmenter, ClsModelConfig, LabeledImage, SegModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train_models(dir: &std::path::Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs: Vec<_> = (0..8)
        .map(|_| {
            let s = subject_scene(32, 1, &mut rng);
            (s.image, s.subject_mask)
        })
        .collect();
    let seg_cfg = SegModelConfig { input_size: 32, depth: 2, base_channels: 8, epochs: 8, learning_rate: 0.01, batch_size: 4, seed: 1 };
    train_segmenter(&pairs, &seg_cfg).unwrap().save(dir).unwrap();

    let samples: Vec<_> = DiseaseClass::ALL
        .iter()
        .flat_map(|&c| (0..3).map(move |i| (c, i)))
        .map(|(c, i)| LabeledImage { id: format!("{c}{i}"), image: lesion_scene(c, 32, 0, &mut rng).image, class: c })
        .collect();
    let cls_cfg = ClsModelConfig { epochs: 10, optimizer_epsilon: 1e-3, batch_size: 6, seed: 3, ..ClsModelConfig::small(32) };
    train_classifier(&samples, &cls_cfg, &TransformConfig::identity()).unwrap().save(dir).unwrap();
}

fn encode(img: &image::RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submit_poll_classified_with_education() {
    let dir = tempfile::tempdir().unwrap();
    let model_dir = dir.path().join("models");
    train_models(&model_dir);
    let triage = Arc::new(PipelineTriage::load(&model_dir).unwrap());
    let app = router(start(config(dir.path(), 1), triage).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scene = lesion_scene(DiseaseClass::SyphiliticChancre, 64, 1, &mut rng);
    let started = Instant::now();
    let (status, body) = submit(&app, Some(&encode(&scene.image)), Some(VALID_Q)).await;
    assert_eq!(status, 202);
    let scan = poll(&app, body["id"].as_str().unwrap(), Duration::from_secs(10)).await;
    let elapsed = started.elapsed();
    assert_eq!(scan["status"], "Classified", "{scan}");
    assert!(elapsed < Duration::from_secs(10), "{elapsed:?}");

    let class = scan["result"]["final_class"].as_str().unwrap();
    assert_eq!(scan["education"]["class"], class);
    let p: f64 = scan["result"]["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-6);
    let stages: Vec<_> = scan["result"]["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, lesion_triage_vision::pipeline::STAGES);
    let url = scan["result"]["saliency_url"].as_str().unwrap();
    let (s, png) = send(&app, axum::http::Request::get(url).body(axum::body::Body::empty()).unwrap()).await;
    assert_eq!(s, 200);
    assert_eq!(image::load_from_memory(&png).unwrap().width(), 64);
}
