//! Score tables with the averaging used to summarize benchmark runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub metric: String,
    pub score: f64,
}

/// Per-model score table. The average is the arithmetic mean of every
/// metric row (a task with two metrics contributes twice), kept at full
/// precision and rounded only when rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub rows: Vec<ReportRow>,
    pub average: f64,
    /// Items that could not be scored (context overflow); surfaced in the
    /// rendered footer.
    #[serde(default)]
    pub overflow_items: usize,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, rows: Vec<ReportRow>, overflow_items: usize) -> Result<Self> {
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let average = table_average(&scores)?;
        Ok(Self {
            model: model.into(),
            rows,
            average,
            overflow_items,
        })
    }
}

/// Arithmetic mean over metric rows.
pub fn table_average(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidData("average over zero rows".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Render a column-per-model comparison table. Every report must carry the
/// same (task, metric) row set in the same order; task names are shown once
/// per group, scores at 4 decimals, with a final `Average:` row.
pub fn render_report(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidData("no reports to render".into()));
    }
    let key: Vec<(String, String)> = reports[0]
        .rows
        .iter()
        .map(|r| (r.task.clone(), r.metric.clone()))
        .collect();
    for rep in &reports[1..] {
        let other: Vec<(String, String)> = rep
            .rows
            .iter()
            .map(|r| (r.task.clone(), r.metric.clone()))
            .collect();
        if other != key {
            return Err(Error::InvalidData(format!(
                "report {} has row set {:?}, expected {:?}",
                rep.model, other, key
            )));
        }
    }

    let task_width = key
        .iter()
        .map(|(t, _)| t.len())
        .chain(["Average:".len(), "Tasks".len()])
        .max()
        .unwrap();
    let metric_width = key
        .iter()
        .map(|(_, m)| m.len())
        .chain(std::iter::once("Metric".len()))
        .max()
        .unwrap();
    let col_widths: Vec<usize> = reports
        .iter()
        .map(|r| r.model.len().max(6))
        .collect();

    let mut out = String::new();
    out.push_str(&format!("{:<task_width$}  {:<metric_width$}", "Tasks", "Metric"));
    for (r, w) in reports.iter().zip(&col_widths) {
        out.push_str(&format!("  {:>w$}", r.model, w = w));
    }
    out.push('\n');

    let mut prev_task: Option<&str> = None;
    for (i, (task, metric)) in key.iter().enumerate() {
        let shown = if prev_task == Some(task.as_str()) {
            ""
        } else {
            task.as_str()
        };
        prev_task = Some(task.as_str());
        out.push_str(&format!("{shown:<task_width$}  {metric:<metric_width$}"));
        for (r, w) in reports.iter().zip(&col_widths) {
            out.push_str(&format!("  {:>w$.4}", r.rows[i].score, w = w));
        }
        out.push('\n');
    }

    out.push_str(&format!("{:<task_width$}  {:<metric_width$}", "Average:", ""));
    for (r, w) in reports.iter().zip(&col_widths) {
        out.push_str(&format!("  {:>w$.4}", r.average, w = w));
    }
    out.push('\n');

    let overflow: usize = reports.iter().map(|r| r.overflow_items).sum();
    if overflow > 0 {
        out.push_str(&format!(
            "({overflow} item(s) exceeded the model context and scored as incorrect)\n"
        ));
    }
    Ok(out)
}
