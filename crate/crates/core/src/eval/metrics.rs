use serde::{Deserialize, Serialize};

use super::{exact_binomial_ci, ConfusionCounts, EvalError};
use crate::class::DiseaseClass;

/// Per-class diagnostic metrics. A metric is `None` when its denominator is
/// zero; it is never silently reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub class: DiseaseClass,
    pub n_images: u64,
    pub counts: ConfusionCounts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub recall_ci: Option<(f64, f64)>,
    pub precision_ci: Option<(f64, f64)>,
    pub specificity_ci: Option<(f64, f64)>,
    pub ci_level: f64,
}

impl MetricRow {
    /// Names of the metrics that could not be computed.
    pub fn undefined_metrics(&self) -> Vec<EvalError> {
        [
            ("recall", self.recall),
            ("precision", self.precision),
            ("specificity", self.specificity),
            ("f1", self.f1),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_none())
        .map(|(name, _)| EvalError::UndefinedMetric(name))
        .collect()
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Recall = TP/(TP+FN), precision = TP/(TP+FP), specificity = TN/(TN+FP),
/// F1 = harmonic mean of precision and recall, each with a Clopper–Pearson
/// interval on its own binomial proportion.
pub fn compute_metrics(counts: ConfusionCounts, ci_level: f64) -> Result<MetricRow, EvalError> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(EvalError::InvalidArgs(format!("ci_level={ci_level}")));
    }
    let ConfusionCounts { tp, fp, tn, fn_, .. } = counts;
    let ci = |s: u64, n: u64| -> Result<Option<(f64, f64)>, EvalError> {
        if n == 0 {
            Ok(None)
        } else {
            exact_binomial_ci(s, n, ci_level).map(Some)
        }
    };
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) => Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
        _ => None,
    };
    Ok(MetricRow {
        class: counts.class,
        n_images: counts.positives(),
        counts,
        recall,
        precision,
        specificity: ratio(tn, tn + fp),
        f1,
        recall_ci: ci(tp, tp + fn_)?,
        precision_ci: ci(tp, tp + fp)?,
        specificity_ci: ci(tn, tn + fp)?,
        ci_level,
    })
}

/// Unweighted mean of the defined per-class F1 scores.
pub fn overall_accuracy(rows: &[MetricRow]) -> Result<f64, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyRows);
    }
    let f1s: Vec<f64> = rows.iter().filter_map(|r| r.f1).collect();
    if f1s.is_empty() {
        return Err(EvalError::UndefinedMetric("f1"));
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tp: u64, fp: u64, tn: u64, fn_: u64) -> MetricRow {
        compute_metrics(ConfusionCounts::new(DiseaseClass::GenitalWarts, tp, fp, tn, fn_), 0.95).unwrap()
    }

    #[test]
    fn warts_row() {
        let r = row(43, 7, 187, 2);
        assert!((r.recall.unwrap() - 0.9556).abs() < 5e-4);
        assert!((r.precision.unwrap() - 0.860).abs() < 5e-4);
        assert!((r.specificity.unwrap() - 0.964).abs() < 5e-4);
        // Harmonic mean evaluated directly: 2 * 0.86 * (43/45) / (0.86 + 43/45).
        let (p, rc) = (0.86f64, 43.0f64 / 45.0);
        let hm = 2.0 * p * rc / (p + rc);
        assert!((r.f1.unwrap() - hm).abs() < 1e-12);
        assert!((hm - 0.905).abs() < 5e-4);
        assert_eq!(r.n_images, 45);
    }

    #[test]
    fn zero_denominators_are_null() {
        let r = row(0, 0, 10, 0);
        assert_eq!(r.recall, None);
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(r.undefined_metrics().len(), 3);
    }

    #[test]
    fn overall() {
        assert_eq!(overall_accuracy(&[]), Err(EvalError::EmptyRows));
        let r = row(3, 1, 5, 1);
        assert_eq!(overall_accuracy(std::slice::from_ref(&r)).unwrap(), r.f1.unwrap());
    }
}
