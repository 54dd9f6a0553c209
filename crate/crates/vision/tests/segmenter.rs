use image::Rgb;
use lesion_triage_core::raster::{mask_iou, BinaryMask, RgbImage};
use lesion_triage_core::synth::subject_scene;
use lesion_triage_vision::segmenter::load_strict_mask;
use lesion_triage_vision::{train_segmenter, SegModel, SegModelConfig, VisionError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(epochs: usize) -> SegModelConfig {
    SegModelConfig {
        input_size: 32,
        depth: 2,
        base_channels: 8,
        epochs,
        learning_rate: 0.01,
        batch_size: 4,
        seed: 3,
    }
}

fn white_ellipse() -> (RgbImage, BinaryMask) {
    let mask = BinaryMask::from_fn(32, 32, |x, y| {
        let (dx, dy) = ((x as f64 - 15.5) / 10.0, (y as f64 - 15.5) / 7.0);
        dx * dx + dy * dy <= 1.0
    });
    let img = RgbImage::from_fn(32, 32, |x, y| if mask.get(x, y) { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) });
    (img, mask)
}

#[test]
fn memorizes_a_single_pair() {
    let pair = white_ellipse();
    let model = train_segmenter(std::slice::from_ref(&pair), &small_config(80)).unwrap();
    let predicted = model.segment(&pair.0).unwrap();
    assert!(mask_iou(&predicted, &pair.1).unwrap() >= 0.99);
    let losses = model.epoch_losses();
    assert!(losses.last().unwrap() <= losses.first().unwrap());

    // Trained on ellipse-on-black: a black frame carries almost no subject.
    let black = RgbImage::new(32, 32);
    let m = model.segment(&black).unwrap();
    assert!((m.count() as f64) < 0.05 * 1024.0);
}

#[test]
fn training_is_deterministic_and_loss_falls() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..8)
        .map(|_| {
            let s = subject_scene(32, 2, &mut rng);
            (s.image, s.subject_mask)
        })
        .collect();
    let a = train_segmenter(&pairs, &small_config(12)).unwrap();
    let b = train_segmenter(&pairs, &small_config(12)).unwrap();
    for (x, y) in a.epoch_losses().iter().zip(b.epoch_losses()) {
        assert!((x - y).abs() <= 1e-6);
    }
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let l = a.epoch_losses();
    assert!(median(&l[l.len() - 5..]) < median(&l[..5]));
    assert_eq!(a.training_hash(), b.training_hash());
}

#[test]
fn output_is_binary_and_sized_like_input() {
    let model = SegModel::new(small_config(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (w, h) in [(32, 32), (50, 20), (7, 41)] {
        let s = subject_scene(64, 1, &mut rng);
        let img = image::imageops::resize(&s.image, w, h, image::imageops::FilterType::Nearest);
        let m = model.segment(&img).unwrap();
        assert_eq!(m.dimensions(), (w, h));
        assert!(m.as_raw().iter().all(|&v| v <= 1));
    }
}

#[test]
fn save_load_round_trip() {
    let pair = white_ellipse();
    let model = train_segmenter(std::slice::from_ref(&pair), &small_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = SegModel::load(dir.path()).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.probabilities(&pair.0).unwrap(), model.probabilities(&pair.0).unwrap());
    assert!(matches!(SegModel::load(dir.path().join("missing")), Err(VisionError::ModelNotLoaded(_))));
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(train_segmenter(&[], &small_config(1)), Err(VisionError::EmptyTrainingSet)));
    let mut cfg = small_config(1);
    cfg.input_size = 30;
    assert!(matches!(SegModel::new(cfg), Err(VisionError::InvalidConfig(_))));

    let dir = tempfile::tempdir().unwrap();
    let gray = image::GrayImage::from_fn(4, 4, |x, _| image::Luma([if x == 0 { 128 } else { 255 }]));
    let path = dir.path().join("m.png");
    gray.save(&path).unwrap();
    assert!(matches!(load_strict_mask(&path), Err(VisionError::NonBinaryMask(_))));
    let ok = image::GrayImage::from_fn(4, 4, |x, _| image::Luma([if x == 0 { 0 } else { 255 }]));
    ok.save(&path).unwrap();
    assert_eq!(load_strict_mask(&path).unwrap().count(), 12);
}
