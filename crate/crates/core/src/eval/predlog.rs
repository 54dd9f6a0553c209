use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::reference::f1_discrepancy_notes;
use super::{compute_metrics, confusion_counts, overall_accuracy, EvalError, Report};
use crate::class::DiseaseClass;

/// One line of the per-image prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub image_id: String,
    pub label: DiseaseClass,
    pub initial_pred: DiseaseClass,
    pub refined_pred: DiseaseClass,
    /// Confidence of the refined prediction.
    pub confidence: f64,
}

/// Which of the two pipeline predictions to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Initial,
    Refined,
}

impl ScoreMode {
    pub const BOTH: [ScoreMode; 2] = [ScoreMode::Initial, ScoreMode::Refined];

    pub fn token(self) -> &'static str {
        match self {
            ScoreMode::Initial => "initial",
            ScoreMode::Refined => "refined",
        }
    }

    pub fn pick(self, entry: &PredictionEntry) -> DiseaseClass {
        match self {
            ScoreMode::Initial => entry.initial_pred,
            ScoreMode::Refined => entry.refined_pred,
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initial" => Ok(ScoreMode::Initial),
            "refined" => Ok(ScoreMode::Refined),
            other => Err(EvalError::InvalidArgs(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

pub fn write_prediction_log<W: Write>(writer: W, entries: &[PredictionEntry]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(e).map_err(|e| EvalError::Log(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Log(e.to_string()))
}

pub fn read_prediction_log<R: Read>(reader: R) -> Result<Vec<PredictionEntry>, EvalError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(|e| EvalError::Log(e.to_string())))
        .collect()
}

/// Scores one prediction column of a log into a six-row report. Entries are
/// ordered by image id first so the result does not depend on log order.
pub fn score_predictions(
    entries: &[PredictionEntry],
    mode: ScoreMode,
    ci_level: f64,
) -> Result<Report, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted: Vec<&PredictionEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let preds: Vec<DiseaseClass> = sorted.iter().map(|e| mode.pick(e)).collect();
    let labels: Vec<DiseaseClass> = sorted.iter().map(|e| e.label).collect();

    let rows = DiseaseClass::ALL
        .iter()
        .map(|&c| compute_metrics(confusion_counts(&preds, &labels, c)?, ci_level))
        .collect::<Result<Vec<_>, _>>()?;
    let overall = overall_accuracy(&rows).ok();
    let mut notes = f1_discrepancy_notes(&rows);
    for row in &rows {
        for undefined in row.undefined_metrics() {
            notes.push(format!("{}: {undefined}", row.class.display_name()));
        }
    }
    Ok(Report {
        mode: Some(mode),
        rows,
        overall_accuracy: overall,
        notes,
    })
}
