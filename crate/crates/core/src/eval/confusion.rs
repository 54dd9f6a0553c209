use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::class::DiseaseClass;

/// One-vs-rest tally for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub class: DiseaseClass,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(class: DiseaseClass, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { class, tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Number of images whose true label is this class.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }
}

pub fn confusion_counts(
    predictions: &[DiseaseClass],
    labels: &[DiseaseClass],
    class: DiseaseClass,
) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut c = ConfusionCounts::new(class, 0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}
