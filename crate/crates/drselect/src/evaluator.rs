//! Ground-truth construction from real qrels, per-method scoring with Kendall
//! tau and the selection drop, and report emission (CSV, JSON, Markdown).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::data::{DrId, DrRanking, Qrels, Run};
use crate::metrics::{self, EvalMeasure, MetricsError};

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("no runs provided")]
    NoRuns,
    #[error("no method results to report")]
    EmptyReport,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Per-retriever mean measure over real queries and the ranking it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scores: BTreeMap<DrId, f64>,
    pub ranking: DrRanking,
}

/// Builds the ground truth by evaluating every retriever's run against the
/// real qrels.
pub fn ground_truth(
    runs: &BTreeMap<DrId, Run>,
    qrels: &Qrels,
    measure: &EvalMeasure,
) -> Result<GroundTruth, EvaluatorError> {
    if runs.is_empty() {
        return Err(EvaluatorError::NoRuns);
    }
    let mut scores = BTreeMap::new();
    for (dr_id, run) in runs {
        scores.insert(dr_id.clone(), metrics::mean_metric(run, qrels, measure)?);
    }
    let ranking = DrRanking::from_scores(
        "ground_truth",
        scores.iter().map(|(d, s)| (d.clone(), *s)).collect(),
    );
    Ok(GroundTruth { scores, ranking })
}

/// One method's outcome on one collection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub kendall_tau: f64,
    pub delta_e: f64,
    pub selected: DrId,
}

/// Scores a predicted retriever ranking against the ground truth. delta_e is
/// returned on the ground-truth score scale, unscaled.
pub fn evaluate_method(
    predicted: &DrRanking,
    gt: &GroundTruth,
) -> Result<MethodResult, EvaluatorError> {
    let tau = metrics::kendall_tau(predicted, &gt.ranking)?;
    let delta = metrics::delta_e(&gt.scores, predicted)?;
    Ok(MethodResult {
        kendall_tau: tau,
        delta_e: delta,
        selected: predicted.top().unwrap_or_default().to_string(),
    })
}

/// Results of every method on every collection, methods as rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    /// (method, collection) -> result.
    pub cells: BTreeMap<(String, String), MethodResult>,
}

impl Report {
    pub fn insert(
        &mut self,
        method: impl Into<String>,
        collection: impl Into<String>,
        result: MethodResult,
    ) {
        self.cells.insert((method.into(), collection.into()), result);
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.cells.keys().map(|(m, _)| m.as_str()).collect();
        out.dedup();
        out
    }

    pub fn collections(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.cells.keys().map(|(_, c)| c.as_str()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn row(&self, method: &str, collections: &[&str], metric: Metric) -> (Vec<Option<f64>>, f64) {
        let values: Vec<Option<f64>> = collections
            .iter()
            .map(|c| {
                self.cells
                    .get(&(method.to_string(), c.to_string()))
                    .map(|r| metric.pick(r))
            })
            .collect();
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let avg = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        (values, avg)
    }
}

#[derive(Debug, Clone, Copy)]
enum Metric {
    Tau,
    DeltaE,
}

impl Metric {
    fn pick(self, r: &MethodResult) -> f64 {
        match self {
            // delta_e reported in measure percentage points
            Metric::Tau => r.kendall_tau,
            Metric::DeltaE => r.delta_e * 100.0,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Tau => "kendall_tau",
            Metric::DeltaE => "delta_e",
        }
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => String::new(),
    }
}

/// CSV report: one row per (method, metric), collections as columns plus Avrg.
pub fn emit_csv(report: &Report) -> Result<String, EvaluatorError> {
    if report.cells.is_empty() {
        return Err(EvaluatorError::EmptyReport);
    }
    let collections = report.collections();
    let mut out = String::new();
    write!(out, "method,metric").unwrap();
    for c in &collections {
        write!(out, ",{c}").unwrap();
    }
    writeln!(out, ",Avrg").unwrap();
    for method in report.methods() {
        for metric in [Metric::Tau, Metric::DeltaE] {
            let (values, avg) = report.row(method, &collections, metric);
            write!(out, "{method},{}", metric.label()).unwrap();
            for v in values {
                write!(out, ",{}", fmt_cell(v)).unwrap();
            }
            writeln!(out, ",{avg:.4}").unwrap();
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    collections: BTreeMap<&'a str, &'a MethodResult>,
    avg_kendall_tau: f64,
    avg_delta_e: f64,
}

/// JSON report: per-method cell details plus averages.
pub fn emit_json(report: &Report) -> Result<String, EvaluatorError> {
    if report.cells.is_empty() {
        return Err(EvaluatorError::EmptyReport);
    }
    let collections = report.collections();
    let mut rows = Vec::new();
    for method in report.methods() {
        let cells: BTreeMap<&str, &MethodResult> = report
            .cells
            .iter()
            .filter(|((m, _), _)| m == method)
            .map(|((_, c), r)| (c.as_str(), r))
            .collect();
        let (_, avg_tau) = report.row(method, &collections, Metric::Tau);
        let (_, avg_delta) = report.row(method, &collections, Metric::DeltaE);
        rows.push(JsonRow {
            method,
            collections: cells,
            avg_kendall_tau: avg_tau,
            avg_delta_e: avg_delta,
        });
    }
    Ok(format!("{}\n", serde_json::to_string_pretty(&rows).unwrap()))
}

/// Markdown report: one table per metric, methods as rows.
pub fn emit_markdown(report: &Report) -> Result<String, EvaluatorError> {
    if report.cells.is_empty() {
        return Err(EvaluatorError::EmptyReport);
    }
    let collections = report.collections();
    let mut out = String::new();
    for (metric, title) in [(Metric::Tau, "Kendall tau"), (Metric::DeltaE, "Delta e")] {
        writeln!(out, "## {title}\n").unwrap();
        write!(out, "| method |").unwrap();
        for c in &collections {
            write!(out, " {c} |").unwrap();
        }
        writeln!(out, " Avrg |").unwrap();
        write!(out, "|---|").unwrap();
        for _ in &collections {
            write!(out, "---|").unwrap();
        }
        writeln!(out, "---|").unwrap();
        for method in report.methods() {
            let (values, avg) = report.row(method, &collections, metric);
            write!(out, "| {method} |").unwrap();
            for v in values {
                write!(out, " {} |", fmt_cell(v)).unwrap();
            }
            writeln!(out, " {avg:.4} |").unwrap();
        }
        writeln!(out).unwrap();
    }
    Ok(out)
}
