//! The `solve`, `drift-solve`, `diagnose` and `list-problems` verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use srgeo::{
    build_lifted_structure, catalogue, continuation_solve, distance_chain_report, energy, horizontality_defect, length,
    minimizer_cauchy_report, solve_drift_problem, CauchyReport, ChainTolerances, ConvergenceReport, FlowMap,
    PenaltyParameter, SolveResult, SubRiemannianStructure, Termination,
};

use crate::config::{self, Resolved};
use crate::output::{self, RunRecord};
use crate::{CliError, OUTPUT_ROOT_ENV};

/// Largest `ρ¹` between consecutive minimisers accepted when the limit is
/// unique.
pub const CAUCHY_THRESHOLD: f64 = 1e-6;
/// Bound on the relative gap between the control cost and `2 E − 1`.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;
/// Relative agreement required when re-deriving stored functionals.
pub const REPRODUCTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: u8,
    pub out_dir: Option<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Solve,
    DriftSolve,
}

fn load(config: &Path) -> Result<(String, Resolved), CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let resolved = config::parse(&text)?;
    Ok((text, resolved))
}

/// `--out`, then `[output] dir`, then `$SRGEO_OUTPUT_ROOT/<name>`, then
/// `srgeo-runs/<name>`.
fn output_dir(out: Option<&Path>, r: &Resolved) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(o) = &r.output {
        return o.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("srgeo-runs"));
    root.join(&r.name)
}

fn prepare(dir: &Path, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let copy = dir.join(output::CONFIG_COPY);
    fs::write(&copy, text).map_err(CliError::io(copy))
}

fn metadata(kind: Kind, r: &Resolved, wall_time: f64, steps: usize) -> serde_json::Value {
    json!({
        "kind": kind,
        "problem": r.name,
        "dimension": r.structure.dimension(),
        "rank": r.structure.rank(),
        "grid_size": r.solver.grid_size,
        "start": r.start.as_slice(),
        "end": r.end.as_slice(),
        "schedule": r.schedule,
        "solver": r.solver,
        "drift": (kind == Kind::DriftSolve).then_some(&r.drift_options),
        "reference": r.reference,
        "reference_cost": r.reference_cost,
        "unique_limit": r.unique,
        "steps_completed": steps,
        "wall_time_s": wall_time,
        "solver_version": concat!("srgeo ", env!("CARGO_PKG_VERSION")),
    })
}

struct Diagnostics {
    chain: ConvergenceReport,
    cauchy: Option<CauchyReport>,
}

impl Diagnostics {
    fn new(results: &[SolveResult], reference: Option<f64>, unique: bool) -> Result<Self, srgeo::Error> {
        let chain = distance_chain_report(results, reference, ChainTolerances::default())?;
        let cauchy = if results.len() >= 2 {
            Some(minimizer_cauchy_report(results, unique, CAUCHY_THRESHOLD)?)
        } else {
            None
        };
        Ok(Self { chain, cauchy })
    }

    fn holds(&self) -> bool {
        self.chain.holds() && self.cauchy.as_ref().and_then(|c| c.assertion) != Some(false)
    }
}

fn failure(dir: &Path, kind: Kind, r: &Resolved, started: Instant, err: srgeo::Error) -> Result<Outcome, CliError> {
    let report = json!({ "status": "solver-failure", "error": err.to_string() });
    output::write_json(&dir.join(output::REPORT_FILE), &report)?;
    output::write_json(
        &dir.join(output::METADATA_FILE),
        &metadata(kind, r, started.elapsed().as_secs_f64(), 0),
    )?;
    Ok(Outcome {
        exit_code: 1,
        out_dir: Some(dir.to_path_buf()),
        summary: format!("solver failure: {err}"),
    })
}

fn summary_line(records: &[RunRecord]) -> String {
    records
        .iter()
        .map(|r| {
            format!(
                "q = {:.3e}: energy {:.9} length {:.9} defect {:.3e} iterations {}{}",
                r.q,
                r.energy,
                r.length,
                r.defect,
                r.iterations,
                if r.converged { "" } else { " (not converged)" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Continuation solve of a drift-free problem.
pub fn solve(config: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let (text, r) = load(config)?;
    if r.drift.is_some() {
        return Err(CliError::Config(format!(
            "problem {:?} has a drift; use drift-solve",
            r.name
        )));
    }
    let dir = output_dir(out, &r);
    prepare(&dir, &text)?;
    let started = Instant::now();
    log::info!("solving {} with N = {}", r.name, r.solver.grid_size);
    let results = match continuation_solve(&r.structure, &r.start, &r.end, &r.schedule, &r.solver) {
        Ok(results) => results,
        Err(e) => return failure(&dir, Kind::Solve, &r, started, e),
    };
    let wall = started.elapsed().as_secs_f64();
    let diag = match Diagnostics::new(&results, r.reference, r.unique) {
        Ok(d) => d,
        Err(e) => return failure(&dir, Kind::Solve, &r, started, e),
    };

    let records = output::records(&results, &diag.chain);
    output::write_records(&dir.join(output::RESULTS_FILE), &records)?;
    for res in &results {
        output::write_path(&dir.join(output::path_file(res.q.value())), &res.path)?;
    }
    let converged = results.iter().all(|x| x.converged);
    let ok = converged && diag.holds();
    let report = json!({
        "status": if ok { "ok" } else { "failed" },
        "all_converged": converged,
        "assertions_hold": diag.holds(),
        "chain": diag.chain,
        "cauchy": diag.cauchy,
    });
    output::write_json(&dir.join(output::REPORT_FILE), &report)?;
    output::write_json(&dir.join(output::METADATA_FILE), &metadata(Kind::Solve, &r, wall, results.len()))?;
    Ok(Outcome {
        exit_code: if ok { 0 } else { 1 },
        out_dir: Some(dir),
        summary: summary_line(&records),
    })
}

#[derive(Debug, Clone, Serialize)]
struct CostIdentity {
    q: f64,
    cost: f64,
    lifted_energy: f64,
    twice_energy_minus_one: f64,
    identity_residual: f64,
    cost_unpenalized: f64,
    control_defect: f64,
    terminal_mismatch: f64,
}

/// Minimum-energy control problem with drift, solved on the lifted structure.
pub fn drift_solve(config: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let (text, r) = load(config)?;
    let Some(drift) = r.drift.clone() else {
        return Err(CliError::Config(format!(
            "problem {:?} has no drift; add a [drift] section or use solve",
            r.name
        )));
    };
    let dir = output_dir(out, &r);
    prepare(&dir, &text)?;
    let started = Instant::now();
    log::info!("drift solve of {} with N = {}", r.name, r.solver.grid_size);
    let solved = solve_drift_problem(
        &r.structure,
        drift,
        &r.start,
        &r.end,
        &r.schedule,
        &r.solver,
        &r.drift_options,
    );
    let solved = match solved {
        Ok(s) => s,
        Err(e) => return failure(&dir, Kind::DriftSolve, &r, started, e),
    };
    let wall = started.elapsed().as_secs_f64();
    let diag = match Diagnostics::new(&solved.results, None, r.unique) {
        Ok(d) => d,
        Err(e) => return failure(&dir, Kind::DriftSolve, &r, started, e),
    };

    let records = output::records(&solved.results, &diag.chain);
    output::write_records(&dir.join(output::RESULTS_FILE), &records)?;
    let mut identity = Vec::new();
    for (res, rec) in solved.results.iter().zip(&solved.recovered) {
        let q = res.q.value();
        output::write_path(&dir.join(output::lifted_file(q)), &res.path)?;
        output::write_path(&dir.join(output::path_file(q)), &rec.trajectory)?;
        output::write_controls(&dir.join(output::control_file(q)), &rec.trajectory, &rec.controls)?;
        identity.push(CostIdentity {
            q,
            cost: rec.cost,
            lifted_energy: res.energy,
            twice_energy_minus_one: 2.0 * res.energy - 1.0,
            identity_residual: rec.identity_residual,
            cost_unpenalized: rec.cost_unpenalized,
            control_defect: rec.control_defect,
            terminal_mismatch: rec.terminal_mismatch,
        });
    }
    write_identity(&dir.join(output::COST_FILE), &identity)?;

    let converged = solved.results.iter().all(|x| x.converged);
    let identity_ok = identity.iter().all(|c| c.identity_residual <= IDENTITY_TOLERANCE);
    let ok = converged && diag.holds() && identity_ok;
    let last = solved.final_control();
    let report = json!({
        "status": if ok { "ok" } else { "failed" },
        "all_converged": converged,
        "assertions_hold": diag.holds() && identity_ok,
        "cost_identity": {
            "tolerance": IDENTITY_TOLERANCE,
            "holds": identity_ok,
            "rows": identity,
        },
        "final_cost": last.cost,
        "reference_cost": r.reference_cost,
        "reference_cost_relative_gap": r.reference_cost.map(|c| (last.cost - c) / c.abs().max(f64::MIN_POSITIVE)),
        "lifted_target": solved.lifted_target.as_slice(),
        "free_s": solved.free_s,
        "chain": diag.chain,
        "cauchy": diag.cauchy,
    });
    output::write_json(&dir.join(output::REPORT_FILE), &report)?;
    output::write_json(
        &dir.join(output::METADATA_FILE),
        &metadata(Kind::DriftSolve, &r, wall, solved.results.len()),
    )?;
    let summary = identity
        .iter()
        .map(|c| {
            format!(
                "q = {:.3e}: cost {:.9} (2E - 1 = {:.9}) defect {:.3e}",
                c.q, c.cost, c.twice_energy_minus_one, c.control_defect
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome {
        exit_code: if ok { 0 } else { 1 },
        out_dir: Some(dir),
        summary,
    })
}

fn write_identity(path: &Path, rows: &[CostIdentity]) -> Result<(), CliError> {
    let header = [
        "q",
        "cost",
        "lifted_energy",
        "twice_energy_minus_one",
        "identity_residual",
        "cost_unpenalized",
        "control_defect",
        "terminal_mismatch",
    ]
    .map(String::from);
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|c| {
            vec![
                c.q,
                c.cost,
                c.lifted_energy,
                c.twice_energy_minus_one,
                c.identity_residual,
                c.cost_unpenalized,
                c.control_defect,
                c.terminal_mismatch,
            ]
        })
        .collect();
    output::write_table(path, &header, &table)
}

#[derive(Debug, Clone, Serialize)]
struct Reproduction {
    q: f64,
    energy: f64,
    length: f64,
    defect: f64,
    max_relative_error: f64,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Re-derives every stored functional from the stored path samples and
/// recomputes the convergence diagnostics of a finished run.
pub fn diagnose(dir: &Path) -> Result<Outcome, CliError> {
    let config = dir.join(output::CONFIG_COPY);
    let (_, r) = load(&config).map_err(|e| CliError::Results(e.to_string()))?;
    let meta = output::read_json(&dir.join(output::METADATA_FILE))?;
    let kind = match meta.get("kind").and_then(|k| k.as_str()) {
        Some("solve") => Kind::Solve,
        Some("drift-solve") => Kind::DriftSolve,
        other => return Err(CliError::Results(format!("unknown run kind {other:?}"))),
    };
    let records = output::read_records(&dir.join(output::RESULTS_FILE))?;
    if records.is_empty() {
        return Err(CliError::Results("results table is empty".into()));
    }

    let structure: SubRiemannianStructure = match kind {
        Kind::Solve => r.structure.clone(),
        Kind::DriftSolve => {
            let drift = r
                .drift
                .clone()
                .ok_or_else(|| CliError::Results("drift run without a drift".into()))?;
            FlowMap::new(drift, r.drift_options.steps_per_unit)
                .and_then(|flow| build_lifted_structure(&r.structure, &flow))
                .map_err(|e| CliError::Results(e.to_string()))?
        }
    };
    let bad = |e: srgeo::Error| CliError::Results(e.to_string());

    let mut results = Vec::with_capacity(records.len());
    let mut reproduced = Vec::with_capacity(records.len());
    for rec in &records {
        let file = match kind {
            Kind::Solve => output::path_file(rec.q),
            Kind::DriftSolve => output::lifted_file(rec.q),
        };
        let path = output::read_path(&dir.join(file))?;
        let q = PenaltyParameter::new(rec.q).map_err(bad)?;
        let e = energy(&structure, q, &path).map_err(bad)?;
        let l = length(&structure, q, &path).map_err(bad)?;
        let d = horizontality_defect(&structure, &path).map_err(bad)?;
        let err = relative(e, rec.energy)
            .max(relative(l, rec.length))
            .max(relative(d, rec.defect));
        reproduced.push(Reproduction {
            q: rec.q,
            energy: e,
            length: l,
            defect: d,
            max_relative_error: err,
        });
        results.push(SolveResult {
            q,
            path,
            energy: e,
            length: l,
            defect: d,
            iterations: rec.iterations,
            converged: rec.converged,
            gradient_norm: rec.gradient_norm,
            speed_cv: f64::NAN,
            termination: if rec.converged {
                Termination::Converged
            } else {
                Termination::MaxIterations
            },
            energy_history: Vec::new(),
        });
    }
    let reference = match kind {
        Kind::Solve => r.reference,
        Kind::DriftSolve => None,
    };
    let diag = Diagnostics::new(&results, reference, r.unique).map_err(bad)?;
    let worst = reproduced.iter().map(|x| x.max_relative_error).fold(0.0, f64::max);
    let reproducible = worst <= REPRODUCTION_TOLERANCE;
    let converged = records.iter().all(|x| x.converged);
    let ok = reproducible && converged && diag.holds();
    let report = json!({
        "status": if ok { "ok" } else { "failed" },
        "reproduction_tolerance": REPRODUCTION_TOLERANCE,
        "reproducible": reproducible,
        "max_relative_error": worst,
        "rows": reproduced,
        "all_converged": converged,
        "assertions_hold": diag.holds(),
        "chain": diag.chain,
        "cauchy": diag.cauchy,
    });
    output::write_json(&dir.join("diagnose.json"), &report)?;
    let chain = &diag.chain;
    let mut lines = vec![
        format!("{} rows, max relative re-derivation error {worst:.3e}", records.len()),
        format!(
            "lengths nondecreasing: {}, energies nondecreasing: {}, defects nonincreasing: {}",
            chain.lengths_nondecreasing, chain.energies_nondecreasing, chain.defects_nonincreasing
        ),
    ];
    if let (Some(d), Some(gap)) = (chain.reference, chain.final_gap) {
        lines.push(format!("reference {d:.9}, final gap {gap:.3e}"));
    }
    if let Some(c) = &diag.cauchy {
        let rho1: Vec<String> = c.steps.iter().map(|s| format!("{:.3e}", s.max_rho1())).collect();
        lines.push(format!("rho1 between consecutive minimisers: [{}], assertion {:?}", rho1.join(", "), c.assertion));
    }
    Ok(Outcome {
        exit_code: if ok { 0 } else { 1 },
        out_dir: Some(dir.to_path_buf()),
        summary: lines.join("\n"),
    })
}

/// Human-readable catalogue listing, or JSON with `json = true`.
pub fn list_problems(json: bool) -> String {
    let entries = catalogue();
    if json {
        return serde_json::to_string_pretty(&entries).expect("catalogue serialises");
    }
    let mut lines = Vec::new();
    for p in &entries {
        lines.push(format!(
            "{:<18} dim {:<2} rank {:<2} drift {:<5} unique {:<5} {} -> {}",
            p.name, p.dimension, p.rank, p.has_drift, p.unique_limit, p.start, p.end
        ));
        lines.push(format!("    {}", p.description));
        if let Some(r) = &p.reference {
            lines.push(format!("    reference: {r}"));
        }
    }
    lines.join("\n")
}
