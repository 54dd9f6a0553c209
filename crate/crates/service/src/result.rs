use std::collections::BTreeMap;
use std::path::Path;

use lesion_triage_core::raster::{PixelBox, RgbImage};
use lesion_triage_core::{ClassProbabilities, DiseaseClass};
use lesion_triage_vision::pipeline::{refine_and_classify, DEFAULT_SALIENCY_THRESHOLD};
use lesion_triage_vision::{heatmap_overlay, ClassificationResult, ClsModel, SegModel};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub duration_ms: f64,
}

/// Stored outcome of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub final_class: DiseaseClass,
    pub confidence: f64,
    pub initial_class: DiseaseClass,
    pub initial_confidence: f64,
    /// Refined probabilities keyed by class token.
    pub probabilities: BTreeMap<String, f64>,
    pub bbox: PixelBox,
    pub stages: Vec<StageTime>,
}

fn by_token(p: &ClassProbabilities) -> BTreeMap<String, f64> {
    DiseaseClass::ALL.iter().map(|&c| (c.token().to_string(), p.prob(c))).collect()
}

impl From<&ClassificationResult> for ScanResult {
    fn from(r: &ClassificationResult) -> Self {
        Self {
            final_class: r.final_class,
            confidence: r.refined.confidence(),
            initial_class: r.initial.predicted(),
            initial_confidence: r.initial.confidence(),
            probabilities: by_token(&r.refined),
            bbox: r.bbox,
            stages: r
                .stages
                .iter()
                .map(|s| StageTime {
                    stage: s.stage.to_string(),
                    duration_ms: s.duration.as_secs_f64() * 1000.0,
                })
                .collect(),
        }
    }
}

/// A finished scan: the stored result plus the saliency overlay image.
#[derive(Debug, Clone)]
pub struct Triaged {
    pub result: ScanResult,
    pub overlay: RgbImage,
}

/// Whatever turns an uploaded image into a triage result.
pub trait Triage: Send + Sync + 'static {
    fn triage(&self, image: &RgbImage) -> Result<Triaged>;
}

/// The segment, classify, saliency and refine pipeline on loaded models.
pub struct PipelineTriage {
    pub segmenter: SegModel,
    pub classifier: ClsModel,
    pub threshold: f64,
}

impl PipelineTriage {
    /// Loads both models from one directory.
    pub fn load(model_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = model_dir.as_ref();
        Ok(Self {
            segmenter: SegModel::load(dir)?,
            classifier: ClsModel::load(dir)?,
            threshold: DEFAULT_SALIENCY_THRESHOLD,
        })
    }
}

impl Triage for PipelineTriage {
    fn triage(&self, image: &RgbImage) -> Result<Triaged> {
        let r = refine_and_classify(&self.segmenter, &self.classifier, image, self.threshold)?;
        Ok(Triaged {
            overlay: heatmap_overlay(image, &r.saliency),
            result: ScanResult::from(&r),
        })
    }
}
