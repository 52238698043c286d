//! CSV and JSON serialization of Monte Carlo summaries.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::montecarlo::{EstimatorSummary, MonteCarloReport};
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

const CSV_HEADER: &[&str] = &[
    "scenario",
    "estimator",
    "component",
    "truth",
    "bias",
    "sd",
    "mc_se",
    "raw_bias",
    "raw_sd",
    "outliers_removed",
    "failed",
    "used",
    "reps",
    "n",
    "seed",
    "scenario_failure",
];

#[derive(Debug, Serialize)]
struct JsonDocument<'a> {
    schema_version: u32,
    rows: Vec<&'a EstimatorSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// One CSV row per (scenario, estimator, component).
pub fn to_csv(reports: &[MonteCarloReport]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in reports.iter().flat_map(|r| r.rows.iter()) {
        let fields = [
            r.scenario.clone(),
            r.estimator.clone(),
            r.component.to_string(),
            r.truth.to_string(),
            opt(r.bias),
            opt(r.sd),
            opt(r.mc_se),
            opt(r.raw_bias),
            opt(r.raw_sd),
            r.outliers_removed.to_string(),
            r.failed.to_string(),
            r.used.to_string(),
            r.reps.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.scenario_failure.to_string(),
        ];
        let quoted: Vec<String> = fields.iter().map(|f| quote(f)).collect();
        out.push_str(&quoted.join(","));
        out.push('\n');
    }
    out
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn to_json(reports: &[MonteCarloReport]) -> String {
    let doc = JsonDocument {
        schema_version: SCHEMA_VERSION,
        rows: reports.iter().flat_map(|r| r.rows.iter()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_reports(reports: &[MonteCarloReport], stem: &Path) -> Result<()> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::File::create(stem.with_extension("csv"))?.write_all(to_csv(reports).as_bytes())?;
    std::fs::File::create(stem.with_extension("json"))?.write_all(to_json(reports).as_bytes())?;
    Ok(())
}
