use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricRow, ScoreMode};
use crate::class::DiseaseClass;

/// Scored rows plus the macro-F1 overall accuracy and any advisory notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Option<ScoreMode>,
    pub rows: Vec<MetricRow>,
    pub overall_accuracy: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(EvalError::UnknownFormat(s.to_string())),
        }
    }
}

/// Rounds half away from zero at `decimals` places. A 1e-9 nudge absorbs
/// binary representation error so exact decimal ties round up.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let rounded = (scaled + 0.5 + 1e-9).floor() / scale;
    rounded.copysign(x)
}

/// Flat, rounded view of a [`MetricRow`]; the JSON rows and CSV lines share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub class: DiseaseClass,
    pub n_images: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub recall: Option<f64>,
    pub recall_low: Option<f64>,
    pub recall_high: Option<f64>,
    pub precision: Option<f64>,
    pub precision_low: Option<f64>,
    pub precision_high: Option<f64>,
    pub specificity: Option<f64>,
    pub specificity_low: Option<f64>,
    pub specificity_high: Option<f64>,
    pub f1: Option<f64>,
}

impl ReportLine {
    pub fn from_row(row: &MetricRow) -> Self {
        let r = |v: Option<f64>| v.map(|x| round_half_up(x, 3));
        let lo = |ci: Option<(f64, f64)>| r(ci.map(|c| c.0));
        let hi = |ci: Option<(f64, f64)>| r(ci.map(|c| c.1));
        Self {
            class: row.class,
            n_images: row.n_images,
            tp: row.counts.tp,
            fp: row.counts.fp,
            tn: row.counts.tn,
            fn_: row.counts.fn_,
            recall: r(row.recall),
            recall_low: lo(row.recall_ci),
            recall_high: hi(row.recall_ci),
            precision: r(row.precision),
            precision_low: lo(row.precision_ci),
            precision_high: hi(row.precision_ci),
            specificity: r(row.specificity),
            specificity_low: lo(row.specificity_ci),
            specificity_high: hi(row.specificity_ci),
            f1: r(row.f1),
        }
    }
}

/// Document shape of the JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub mode: Option<ScoreMode>,
    pub ci_level: f64,
    pub rows: Vec<ReportLine>,
    pub overall_accuracy: Option<f64>,
    pub notes: Vec<String>,
}

impl JsonReport {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Log(e.to_string()))
    }
}

/// Parses the CSV format back into its lines.
pub fn parse_csv_report(text: &str) -> Result<Vec<ReportLine>, EvalError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| EvalError::Log(e.to_string())))
        .collect()
}

pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Json => json(report),
        ReportFormat::Csv => csv_lines(&report.rows.iter().map(ReportLine::from_row).collect::<Vec<_>>()),
    }
}

/// CSV rendering of already-rounded lines.
pub fn csv_lines(lines: &[ReportLine]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for line in lines {
        w.serialize(line).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

fn ci_level(report: &Report) -> f64 {
    report.rows.first().map_or(0.95, |r| r.ci_level)
}

fn json(report: &Report) -> String {
    let doc = JsonReport {
        mode: report.mode,
        ci_level: ci_level(report),
        rows: report.rows.iter().map(ReportLine::from_row).collect(),
        overall_accuracy: report.overall_accuracy.map(|x| round_half_up(x, 3)),
        notes: report.notes.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

fn fmt3(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

fn cell(point: Option<f64>, ci: Option<(f64, f64)>) -> String {
    match (point, ci) {
        (Some(p), Some((lo, hi))) => format!("{} ({} - {})", fmt3(p), fmt3(lo), fmt3(hi)),
        (Some(p), None) => fmt3(p),
        _ => "n/a".to_string(),
    }
}

fn markdown(report: &Report) -> String {
    let n: u64 = report.rows.iter().map(|r| r.n_images).sum();
    let pct = round_half_up(ci_level(report) * 100.0, 1);
    let pct = if pct.fract() == 0.0 { format!("{pct:.0}") } else { format!("{pct}") };
    let mut s = String::new();
    if let Some(mode) = report.mode {
        let _ = writeln!(s, "Scored predictions: {mode}\n");
    }
    let _ = writeln!(
        s,
        "| Class | No. Images (n={n}) | True Positive | False Positive | True Negative | False Negative | \
         Recall or Sensitivity ({pct}% CI) | Precision ({pct}% CI) | Specificity ({pct}% CI) | F1-Score |"
    );
    s.push_str("|---|---:|---:|---:|---:|---:|---|---|---|---:|\n");
    for r in &report.rows {
        let c = &r.counts;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.class.display_name(),
            r.n_images,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            cell(r.recall, r.recall_ci),
            cell(r.precision, r.precision_ci),
            cell(r.specificity, r.specificity_ci),
            r.f1.map_or("n/a".to_string(), fmt3),
        );
    }
    let overall = report.overall_accuracy.map_or("n/a".to_string(), fmt3);
    let _ = writeln!(s, "\nOverall accuracy (mean F1): {overall}");
    if !report.notes.is_empty() {
        s.push_str("\nNotes:\n");
        for note in &report.notes {
            let _ = writeln!(s, "- {note}");
        }
    }
    s
}
