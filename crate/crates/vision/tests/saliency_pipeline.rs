use candle_core::Tensor;
use lesion_triage_core::augment::TransformConfig;
use lesion_triage_core::raster::{BinaryMask, PixelBox, RgbImage};
use lesion_triage_core::synth::lesion_scene;
use lesion_triage_core::{Dataset, DiseaseClass, ImageRecord, Label, Source};
use lesion_triage_vision::pipeline::{crop_masked, refine_with_subject_mask, STAGES};
use lesion_triage_vision::{
    evaluate, gradcam_pp, refine_and_classify, salient_bbox, train_classifier, ClsModel, ClsModelConfig,
    LabeledImage, SaliencyMap, SegModel, SegModelConfig, VisionError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained_model() -> (ClsModel, Vec<LabeledImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let samples: Vec<_> = DiseaseClass::ALL
        .iter()
        .flat_map(|&c| (0..2).map(move |i| (c, i)))
        .map(|(c, i)| LabeledImage {
            id: format!("{c}-{i}"),
            image: lesion_scene(c, 32, 0, &mut rng).image,
            class: c,
        })
        .collect();
    let cfg = ClsModelConfig {
        epochs: 25,
        optimizer_epsilon: 1e-3,
        batch_size: 6,
        seed: 2,
        ..ClsModelConfig::small(32)
    };
    (train_classifier(&samples, &cfg, &TransformConfig::identity()).unwrap(), samples)
}

#[test]
fn saliency_is_normalized_and_image_sized() {
    let (model, samples) = trained_model();
    for s in samples.iter().take(4) {
        let map = gradcam_pp(&model, &s.image, s.class).unwrap();
        assert_eq!(map.dimensions(), s.image.dimensions());
        assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(map.is_zero() || (map.max() - 1.0).abs() < 1e-6);
    }
    let map = gradcam_pp(&model, &samples[0].image, samples[0].class).unwrap();
    assert!(!map.is_zero());
}

#[test]
fn zero_head_row_gives_zero_map() {
    let (model, samples) = trained_model();
    let target = DiseaseClass::SyphiliticChancre;
    {
        let data = model.varmap().data().lock().unwrap();
        let w = &data["head.weight"];
        let mut rows: Vec<Vec<f32>> = w.as_tensor().to_vec2().unwrap();
        rows[target.index()].iter_mut().for_each(|v| *v = 0.0);
        let (r, c) = (rows.len(), rows[0].len());
        let flat: Vec<f32> = rows.concat();
        w.set(&Tensor::from_vec(flat, (r, c), w.device()).unwrap()).unwrap();
    }
    let map = gradcam_pp(&model, &samples[0].image, target).unwrap();
    assert!(map.is_zero());
    assert_eq!(map.max(), 0.0);
}

#[test]
fn pipeline_composes_its_stages() {
    let (model, samples) = trained_model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scene = lesion_scene(DiseaseClass::GenitalWarts, 32, 2, &mut rng);
    let before = scene.image.clone();
    let result = refine_with_subject_mask(&model, &scene.image, &scene.subject_mask, 0.5).unwrap();
    assert_eq!(scene.image, before);

    let order: Vec<_> = result.stages.iter().map(|s| s.stage).collect();
    assert_eq!(order, STAGES);

    assert_eq!(result.initial, model.classify(&scene.image).unwrap());
    let map = gradcam_pp(&model, &scene.image, result.initial.predicted()).unwrap();
    assert_eq!(result.saliency, map);
    assert_eq!(result.bbox, salient_bbox(&map, 0.5, &scene.subject_mask).unwrap());
    let crop = crop_masked(&scene.image, &scene.subject_mask, result.bbox);
    assert_eq!(result.refined, model.classify(&crop).unwrap());
    assert_eq!(result.final_class, result.refined.predicted());

    let again = refine_with_subject_mask(&model, &scene.image, &scene.subject_mask, 0.5).unwrap();
    assert_eq!(again.bbox, result.bbox);
    assert_eq!(again.refined, result.refined);
    let _ = samples;
}

#[test]
fn full_frame_box_reclassifies_the_masked_image() {
    let (model, samples) = trained_model();
    let img = &samples[3].image;
    let (w, h) = img.dimensions();
    let full = BinaryMask::filled(w, h);
    // A uniform map marks every pixel salient, so the box is the whole frame.
    let uniform = SaliencyMap::from_raw(w, h, vec![1.0; (w * h) as usize]);
    assert_eq!(salient_bbox(&uniform, 0.5, &full).unwrap(), PixelBox::full(w, h));
    assert_eq!(crop_masked(img, &full, PixelBox::full(w, h)), *img);

    // With a tiny threshold nearly every pixel with any saliency qualifies.
    let result = refine_with_subject_mask(&model, img, &full, 1e-6).unwrap();
    if result.bbox == PixelBox::full(w, h) {
        assert_eq!(result.refined, result.initial);
    }
    assert_eq!(result.refined, model.classify(&crop_masked(img, &full, result.bbox)).unwrap());
}

#[test]
fn pipeline_rejects_bad_arguments() {
    let (model, samples) = trained_model();
    let img = &samples[0].image;
    let (w, h) = img.dimensions();
    for t in [0.0, 1.0, -0.1, 1.5] {
        assert!(refine_with_subject_mask(&model, img, &BinaryMask::filled(w, h), t).is_err());
    }
    let err = refine_with_subject_mask(&model, img, &BinaryMask::new(w, h), 0.5).unwrap_err();
    assert!(err.to_string().contains("bbox"), "{err}");
    assert!(refine_with_subject_mask(&model, img, &BinaryMask::filled(w + 1, h), 0.5).is_err());
}

#[test]
fn evaluation_matches_independent_tally() {
    let (model, _) = trained_model();
    let seg = SegModel::new(SegModelConfig {
        input_size: 32,
        depth: 2,
        base_channels: 4,
        ..SegModelConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut records = Vec::new();
    for (i, &c) in DiseaseClass::ALL.iter().cycle().take(12).enumerate() {
        let scene = lesion_scene(c, 32, 0, &mut rng);
        let path = format!("v{i:02}.png");
        scene.image.save(dir.path().join(&path)).unwrap();
        records.push(ImageRecord::new(format!("v{i:02}"), path, Label::Class(c), Source::Clinician, 32, 32));
    }
    records.reverse();
    let ds = Dataset::new(records.clone()).with_root(dir.path());

    match evaluate(&seg, &model, &ds, 0.5, 0.95) {
        Ok(ev) => {
            let ids: Vec<_> = ev.entries.iter().map(|e| e.image_id.clone()).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(ids, sorted);
            for (mode, report) in [(false, &ev.initial), (true, &ev.refined)] {
                for row in &report.rows {
                    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                    for e in &ev.entries {
                        let p = if mode { e.refined_pred } else { e.initial_pred };
                        tp += (p == row.class && e.label == row.class) as u64;
                        fp += (p == row.class && e.label != row.class) as u64;
                        fn_ += (p != row.class && e.label == row.class) as u64;
                    }
                    assert_eq!((row.counts.tp, row.counts.fp, row.counts.fn_), (tp, fp, fn_));
                    assert_eq!(row.counts.total(), 12);
                }
            }
            for (e, r) in ev.entries.iter().zip(records.iter().rev()) {
                let img = image::open(dir.path().join(&r.path)).unwrap().to_rgb8();
                let direct = refine_and_classify(&seg, &model, &img, 0.5).unwrap();
                assert_eq!(e.refined_pred, direct.final_class);
            }
        }
        Err(e) => panic!("{e}"),
    }

    let mut bad = records.clone();
    bad[0].path = "missing.png".into();
    let err = evaluate(&seg, &model, &Dataset::new(bad).with_root(dir.path()), 0.5, 0.95).unwrap_err();
    assert!(matches!(err, VisionError::Image { .. }));
}

fn oracle_bbox(map: &SaliencyMap, t: f64, mask: &BinaryMask) -> Option<PixelBox> {
    let (w, h) = map.dimensions();
    let cut = t as f32 * map.max();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    let mut any_subject = false;
    let (mut sx0, mut sy0, mut sx1, mut sy1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            any_subject = true;
            sx0 = sx0.min(x);
            sy0 = sy0.min(y);
            sx1 = sx1.max(x + 1);
            sy1 = sy1.max(y + 1);
            if map.get(x, y) >= cut {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if !any_subject {
        return None;
    }
    let (x0, y0, x1, y1) = if x1 == 0 { (sx0, sy0, sx1, sy1) } else { (x0, y0, x1, y1) };
    let mx = ((x1 - x0) as f64 * 0.1).ceil() as u32;
    let my = ((y1 - y0) as f64 * 0.1).ceil() as u32;
    Some(PixelBox {
        x0: x0.saturating_sub(mx),
        y0: y0.saturating_sub(my),
        x1: (x1 + mx).min(w),
        y1: (y1 + my).min(h),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn salient_bbox_matches_scan(
        values in proptest::collection::vec(0.0f32..1.0, 12 * 9),
        bits in proptest::collection::vec(any::<bool>(), 12 * 9),
        t in 0.01f64..0.99,
    ) {
        let map = SaliencyMap::from_raw(12, 9, values);
        let mask = BinaryMask::from_fn(12, 9, |x, y| bits[(y * 12 + x) as usize]);
        match oracle_bbox(&map, t, &mask) {
            Some(expected) => {
                let got = salient_bbox(&map, t, &mask).unwrap();
                prop_assert_eq!(got, expected);
                prop_assert!(got.x1 <= 12 && got.y1 <= 9 && got.x0 < got.x1 && got.y0 < got.y1);
            }
            None => prop_assert!(matches!(salient_bbox(&map, t, &mask), Err(VisionError::EmptySubjectMask))),
        }
    }
}

#[test]
fn crop_is_subimage_with_background_zeroed() {
    let img = RgbImage::from_fn(10, 8, |x, y| image::Rgb([x as u8 * 20, y as u8 * 30, 9]));
    let mask = BinaryMask::from_fn(10, 8, |x, _| x % 2 == 0);
    let b = PixelBox { x0: 2, y0: 1, x1: 7, y1: 5 };
    let c = crop_masked(&img, &mask, b);
    assert_eq!(c.dimensions(), (5, 4));
    for (x, y, p) in c.enumerate_pixels() {
        let expected = if (x + 2) % 2 == 0 { *img.get_pixel(x + 2, y + 1) } else { image::Rgb([0, 0, 0]) };
        assert_eq!(*p, expected);
    }
}
