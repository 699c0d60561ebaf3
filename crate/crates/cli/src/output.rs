//! Table and JSON emission. Floats are written with 17 significant digits so
//! they read back bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use srgeo::{DiscretePath, SolveResult, Tangent};

use crate::CliError;

pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const COST_FILE: &str = "cost_identity.csv";

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// File-name form of a penalty value: `1e0`, `1e4`, `2.5e1`.
pub fn q_label(q: f64) -> String {
    format!("{q:e}")
}

pub fn path_file(q: f64) -> String {
    format!("path_q{}.csv", q_label(q))
}

pub fn lifted_file(q: f64) -> String {
    format!("lifted_q{}.csv", q_label(q))
}

pub fn control_file(q: f64) -> String {
    format!("control_q{}.csv", q_label(q))
}

/// One row of `results.csv`. The distances to the previous minimiser are the
/// largest per-coordinate `ρ⁰`/`ρ¹` values and are empty on the first row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub q: f64,
    pub energy: f64,
    pub length: f64,
    pub defect: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub rho0_prev: Option<f64>,
    pub rho1_prev: Option<f64>,
}

fn max_of(v: &Option<Vec<f64>>) -> Option<f64> {
    v.as_ref().map(|v| v.iter().copied().fold(0.0, f64::max))
}

pub fn records(results: &[SolveResult], chain: &srgeo::ConvergenceReport) -> Vec<RunRecord> {
    let mut sorted: Vec<&SolveResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.q.value().total_cmp(&b.q.value()));
    sorted
        .iter()
        .zip(&chain.records)
        .map(|(r, c)| RunRecord {
            q: r.q.value(),
            energy: r.energy,
            length: r.length,
            defect: r.defect,
            iterations: r.iterations,
            converged: r.converged,
            gradient_norm: r.gradient_norm,
            rho0_prev: max_of(&c.rho0_prev),
            rho1_prev: max_of(&c.rho1_prev),
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
    w.write_record([
        "q",
        "energy",
        "length",
        "defect",
        "iterations",
        "converged",
        "gradient_norm",
        "rho0_prev",
        "rho1_prev",
    ])
    .map_err(csv_err(path))?;
    for r in records {
        w.write_record([
            fmt(r.q),
            fmt(r.energy),
            fmt(r.length),
            fmt(r.defect),
            r.iterations.to_string(),
            r.converged.to_string(),
            fmt(r.gradient_norm),
            opt(r.rho0_prev),
            opt(r.rho1_prev),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Results(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<RunRecord>, _>>()
        .map_err(|e| CliError::Results(format!("{}: {e}", path.display())))
}

/// Table of floats under a header row.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt(x))).map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Columns `t, <prefix>1, ..., <prefix>n`.
pub fn write_samples(path: &Path, prefix: &str, times: &[f64], rows: &[&[f64]]) -> Result<(), CliError> {
    let width = rows.first().map_or(0, |r| r.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=width).map(|k| format!("{prefix}{k}")))
        .collect();
    let table: Vec<Vec<f64>> = times
        .iter()
        .zip(rows)
        .map(|(t, row)| std::iter::once(*t).chain(row.iter().copied()).collect())
        .collect();
    write_table(path, &header, &table)
}

pub fn write_path(path: &Path, samples: &DiscretePath) -> Result<(), CliError> {
    let times: Vec<f64> = (0..samples.points().len()).map(|i| samples.time(i)).collect();
    let rows: Vec<&[f64]> = samples.points().iter().map(|p| p.as_slice()).collect();
    write_samples(path, "x", &times, &rows)
}

pub fn write_controls(path: &Path, trajectory: &DiscretePath, controls: &[Tangent]) -> Result<(), CliError> {
    let times: Vec<f64> = (0..controls.len()).map(|i| trajectory.time(i)).collect();
    let rows: Vec<&[f64]> = controls.iter().map(|y| y.as_slice()).collect();
    write_samples(path, "Y", &times, &rows)
}

/// Reads a `t, x1, ..., xn` file back into a path.
pub fn read_path(path: &Path) -> Result<DiscretePath, CliError> {
    let bad = |msg: String| CliError::Results(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut points = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let values = record
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        points.push(values.into());
    }
    DiscretePath::new(points).map_err(|e| bad(e.to_string()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Results(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Results(format!("{}: {e}", path.display())))
}
