//! segment → classify → saliency → box → crop → re-classify.

use std::time::{Duration, Instant};

use image::Rgb;
use lesion_triage_core::raster::{BinaryMask, DimensionMismatch, PixelBox, RgbImage};
use lesion_triage_core::{ClassProbabilities, DiseaseClass};
use serde::{Serialize, Serializer};

use crate::classifier::ClsModel;
use crate::error::{Result, VisionError};
use crate::saliency::{gradcam_pp, SaliencyMap};
use crate::segmenter::SegModel;

pub const DEFAULT_SALIENCY_THRESHOLD: f64 = 0.5;
/// Fraction of the box extent added on each side.
pub const BBOX_MARGIN: f64 = 0.1;
pub const STAGES: [&str; 6] = ["segment", "classify_initial", "saliency", "bbox", "crop", "classify_refined"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    #[serde(rename = "duration_ms", serialize_with = "millis")]
    pub duration: Duration,
}

fn millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

#[derive(Debug, Clone)]
pub struct ClassificationResult {
    pub initial: ClassProbabilities,
    pub saliency: SaliencyMap,
    pub subject_mask: BinaryMask,
    pub bbox: PixelBox,
    pub refined: ClassProbabilities,
    pub final_class: DiseaseClass,
    pub stages: Vec<StageTiming>,
}

/// Box around pixels with `saliency ≥ threshold · max` that lie on the
/// subject; the subject's own box when there are none. The box is grown by
/// [`BBOX_MARGIN`] and clipped to the image.
pub fn salient_bbox(map: &SaliencyMap, threshold: f64, subject_mask: &BinaryMask) -> Result<PixelBox> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(VisionError::InvalidConfig(format!("saliency threshold {threshold} outside (0, 1)")));
    }
    if map.dimensions() != subject_mask.dimensions() {
        return Err(VisionError::InvalidConfig(
            DimensionMismatch {
                left: map.dimensions(),
                right: subject_mask.dimensions(),
            }
            .to_string(),
        ));
    }
    let subject_box = subject_mask.bounding_box().ok_or(VisionError::EmptySubjectMask)?;
    let cut = threshold as f32 * map.max();
    let (w, h) = map.dimensions();
    let hot = BinaryMask::from_fn(w, h, |x, y| subject_mask.get(x, y) && map.get(x, y) >= cut);
    let tight = hot.bounding_box().unwrap_or(subject_box);
    Ok(tight.expand(BBOX_MARGIN, w, h))
}

/// Crops to `bbox`, blacking out pixels outside the subject mask.
pub fn crop_masked(image: &RgbImage, subject_mask: &BinaryMask, bbox: PixelBox) -> RgbImage {
    RgbImage::from_fn(bbox.width(), bbox.height(), |x, y| {
        let (sx, sy) = (bbox.x0 + x, bbox.y0 + y);
        if subject_mask.get(sx, sy) {
            *image.get_pixel(sx, sy)
        } else {
            Rgb([0, 0, 0])
        }
    })
}

struct Trace(Vec<StageTiming>);

impl Trace {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.at_stage(stage))?;
        self.0.push(StageTiming {
            stage,
            duration: start.elapsed(),
        });
        Ok(out)
    }
}

pub fn refine_and_classify(
    seg: &SegModel,
    cls: &ClsModel,
    image: &RgbImage,
    threshold: f64,
) -> Result<ClassificationResult> {
    let mut trace = Trace(Vec::with_capacity(STAGES.len()));
    let mask = trace.run("segment", || seg.segment(image))?;
    refine(cls, image, mask, threshold, trace)
}

/// The pipeline with a known subject mask in place of the segmenter; the
/// trace still lists the segment stage.
pub fn refine_with_subject_mask(
    cls: &ClsModel,
    image: &RgbImage,
    subject_mask: &BinaryMask,
    threshold: f64,
) -> Result<ClassificationResult> {
    let mut trace = Trace(Vec::with_capacity(STAGES.len()));
    let mask = trace.run("segment", || {
        if subject_mask.dimensions() != image.dimensions() {
            return Err(VisionError::InvalidConfig("subject mask does not match image".into()));
        }
        Ok(subject_mask.clone())
    })?;
    refine(cls, image, mask, threshold, trace)
}

fn refine(
    cls: &ClsModel,
    image: &RgbImage,
    mask: BinaryMask,
    threshold: f64,
    mut trace: Trace,
) -> Result<ClassificationResult> {
    let initial = trace.run("classify_initial", || cls.classify(image))?;
    let saliency = trace.run("saliency", || gradcam_pp(cls, image, initial.predicted()))?;
    let bbox = trace.run("bbox", || salient_bbox(&saliency, threshold, &mask))?;
    let crop = trace.run("crop", || Ok(crop_masked(image, &mask, bbox)))?;
    let refined = trace.run("classify_refined", || cls.classify(&crop))?;
    Ok(ClassificationResult {
        final_class: refined.predicted(),
        initial,
        saliency,
        subject_mask: mask,
        bbox,
        refined,
        stages: trace.0,
    })
}
