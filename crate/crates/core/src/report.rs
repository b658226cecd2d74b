//! Cross-run comparison tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::agent::MetricScope;
use crate::error::{Error, Result};
use crate::sim::RunSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub aoi: f64,
    /// Percentage change against the first run; negative is better.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scope: MetricScope,
    pub rows: Vec<CompareRow>,
}

pub fn format_pct(pct: f64) -> String {
    if pct.abs() < 0.05 {
        "0.0%".to_string()
    } else {
        format!("{pct:+.1}%")
    }
}

/// Compares the headline AoI of each run with the first one.
pub fn compare(runs: &[(String, RunSummary)]) -> Result<Comparison> {
    let (_, base) = runs.first().ok_or_else(|| Error::Config("nothing to compare".into()))?;
    if let Some((label, _)) = runs.iter().find(|(_, r)| r.metric_scope != base.metric_scope) {
        return Err(Error::Config(format!("run {label} uses a different metric scope")));
    }
    if base.headline_aoi <= 0.0 {
        return Err(Error::Config("baseline AoI must be positive".into()));
    }
    let rows = runs
        .iter()
        .map(|(label, r)| CompareRow {
            label: label.clone(),
            aoi: r.headline_aoi,
            delta_pct: (r.headline_aoi - base.headline_aoi) / base.headline_aoi * 100.0,
        })
        .collect();
    Ok(Comparison { scope: base.metric_scope, rows })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,aoi,delta_pct\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.label, r.aoi, format_pct(r.delta_pct));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<width$}  {:>10}  {:>8}\n", "run", "aoi", "change");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>10.3}  {:>8}", r.label, r.aoi, format_pct(r.delta_pct));
        }
        s
    }
}

/// Reads the summary from a run directory or a `summary.json` path.
pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let summary = doc.get("summary").cloned().unwrap_or(doc);
    Ok(serde_json::from_value(summary)?)
}
