use lesion_triage_core::eval::{score_predictions, EvalError, PredictionEntry, Report, ScoreMode};
use lesion_triage_core::{Dataset, Label};

use crate::classifier::ClsModel;
use crate::error::{load_rgb, Result, VisionError};
use crate::pipeline::refine_and_classify;
use crate::segmenter::SegModel;

/// Per-image predictions on a validation set, scored both ways.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Sorted by image id.
    pub entries: Vec<PredictionEntry>,
    pub initial: Report,
    pub refined: Report,
}

impl Evaluation {
    pub fn report(&self, mode: ScoreMode) -> &Report {
        match mode {
            ScoreMode::Initial => &self.initial,
            ScoreMode::Refined => &self.refined,
        }
    }
}

/// Runs the full pipeline on every record of `validation` and scores the
/// initial and refined predictions.
pub fn evaluate(
    seg: &SegModel,
    cls: &ClsModel,
    validation: &Dataset,
    threshold: f64,
    ci_level: f64,
) -> Result<Evaluation> {
    let mut records: Vec<_> = validation.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let Label::Class(label) = r.label else {
            return Err(VisionError::IneligibleRecord(r.id.clone()));
        };
        let run = || -> Result<PredictionEntry> {
            let image = load_rgb(validation.resolve(&r.path))?;
            let result = refine_and_classify(seg, cls, &image, threshold)?;
            Ok(PredictionEntry {
                image_id: r.id.clone(),
                label,
                initial_pred: result.initial.predicted(),
                refined_pred: result.final_class,
                confidence: result.refined.confidence(),
            })
        };
        entries.push(run().map_err(|e| e.for_image(&r.id))?);
    }
    score_entries(entries, ci_level)
}

/// Scores an existing prediction log both ways.
pub fn score_entries(entries: Vec<PredictionEntry>, ci_level: f64) -> Result<Evaluation> {
    let to_err = |e: EvalError| VisionError::InvalidConfig(e.to_string());
    let initial = score_predictions(&entries, ScoreMode::Initial, ci_level).map_err(to_err)?;
    let refined = score_predictions(&entries, ScoreMode::Refined, ci_level).map_err(to_err)?;
    Ok(Evaluation {
        entries,
        initial,
        refined,
    })
}
