//! Diagnostic-test evaluation: one-vs-rest confusion counts, recall,
//! precision, specificity and F1 with exact binomial confidence intervals,
//! macro-averaged F1 ("overall accuracy"), and Table-style report rendering.

mod ci;
mod confusion;
mod metrics;
mod predlog;
pub mod reference;
mod report;

pub use ci::exact_binomial_ci;
pub use confusion::{confusion_counts, ConfusionCounts};
pub use metrics::{compute_metrics, overall_accuracy, MetricRow};
pub use predlog::{read_prediction_log, score_predictions, write_prediction_log, PredictionEntry, ScoreMode};
pub use report::{csv_lines, parse_csv_report, render_report, round_half_up, JsonReport, Report, ReportFormat, ReportLine};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    EmptyInput,
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("metric `{0}` is undefined (zero denominator)")]
    UndefinedMetric(&'static str),
    #[error("no metric rows")]
    EmptyRows,
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("prediction log: {0}")]
    Log(String),
}
