//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgeo::drift::ZeroDrift;
use srgeo::{
    continuation_solve, energy, energy_gradient, horizontality_defect, minimizer_cauchy_report,
    recovery_sequence_check, solve_drift_problem, validate_bracket_generating, ContinuationSchedule, DiscretePath,
    DriftOptions, PenaltyParameter, Point, Problem, SolveResult, SolverConfig, SubRiemannianStructure,
};

type Outcome = Result<String, String>;

fn q(v: f64) -> PenaltyParameter {
    PenaltyParameter::new(v).unwrap()
}

fn config(grid_size: usize) -> SolverConfig {
    SolverConfig {
        grid_size,
        ..Default::default()
    }
}

fn solve(s: &SubRiemannianStructure, a: &Point, b: &Point, grid_size: usize) -> Result<Vec<SolveResult>, String> {
    continuation_solve(s, a, b, &ContinuationSchedule::default(), &config(grid_size)).map_err(|e| e.to_string())
}

fn random_path(rng: &mut ChaCha8Rng, n: usize, segments: usize) -> DiscretePath {
    let points = (0..=segments)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    DiscretePath::new(points).unwrap()
}

fn affine_identity() -> Outcome {
    let h = SubRiemannianStructure::heisenberg();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let path = random_path(&mut rng, 3, 100);
        let (q1, q2) = (rng.random_range(1.0..10.0), rng.random_range(10.0..1e4));
        let e1 = energy(&h, q(q1), &path).unwrap();
        let e2 = energy(&h, q(q2), &path).unwrap();
        let d = horizontality_defect(&h, &path).unwrap();
        let lhs = e2 - e1;
        let rhs = 0.5 * (q2 - q1) * d;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let msg = format!("max relative residual {worst:.2e} over 50 paths (limit 1e-10)");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for s in [
        SubRiemannianStructure::heisenberg(),
        SubRiemannianStructure::martinet(),
        SubRiemannianStructure::euclidean(3),
    ] {
        for _ in 0..20 {
            let path = random_path(&mut rng, 3, 12);
            let penalty = q([1.0, 10.0, 100.0][rng.random_range(0..3)]);
            let g = energy_gradient(&s, penalty, &path).unwrap();
            let x = path.interior();
            let mut fd = DVector::zeros(x.len());
            for k in 0..x.len() {
                let h = 1e-5 * (1.0 + x[k].abs());
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[k] += h;
                minus[k] -= h;
                let ep = energy(&s, penalty, &path.with_interior(&plus).unwrap()).unwrap();
                let em = energy(&s, penalty, &path.with_interior(&minus).unwrap()).unwrap();
                fd[k] = (ep - em) / (2.0 * h);
            }
            worst = worst.max((&g - &fd).amax() / fd.amax().max(1e-12));
        }
    }
    let msg = format!("max relative error {worst:.2e} on Heisenberg, Martinet, Euclidean (limit 1e-5)");
    if worst <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn horizontal_chord() -> Outcome {
    let h = SubRiemannianStructure::heisenberg();
    let results = solve(&h, &dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], 200)?;
    let ok = results
        .iter()
        .all(|r| r.converged && (r.length - 1.0).abs() <= 1e-4 && r.defect <= 1e-8);
    let dev = results.iter().map(|r| (r.length - 1.0).abs()).fold(0.0, f64::max);
    let defect = results.iter().map(|r| r.defect).fold(0.0, f64::max);
    let msg = format!(
        "{} steps to q = {:.0e}, all converged: {}, max |L - 1| {dev:.2e}, max defect {defect:.2e}",
        results.len(),
        results.last().unwrap().q.value(),
        results.iter().all(|r| r.converged)
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cc_limit() -> Outcome {
    let h = SubRiemannianStructure::heisenberg();
    let started = Instant::now();
    let results = solve(&h, &dvector![0.0, 0.0, 0.0], &dvector![0.0, 0.0, 0.25 / PI], 200)?;
    let elapsed = started.elapsed().as_secs_f64();
    let lengths: Vec<f64> = results.iter().map(|r| r.length).collect();
    let increasing = lengths.windows(2).all(|w| w[1] > w[0]);
    let bounded = lengths.iter().all(|&l| l <= 1.01);
    let last = results.last().unwrap();
    let ok = increasing && bounded && last.length >= 0.95 && last.defect <= 1e-3 && elapsed <= 120.0;
    let msg = format!(
        "lengths {:?}, final defect {:.2e}, {elapsed:.1} s",
        lengths.iter().map(|l| format!("{l:.5}")).collect::<Vec<_>>(),
        last.defect
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn monotone_infima() -> Outcome {
    let mut violations = Vec::new();
    let mut runs = 0;
    for name in [
        "euclidean-3",
        "heisenberg",
        "martinet",
        "drift-constant-1d",
        "drift-linear-2d",
        "heisenberg-drift",
    ] {
        let p = Problem::builtin(name, None).unwrap();
        let energies: Vec<f64> = match &p.drift {
            None => solve(&p.structure, &p.start, &p.end, 100)?
                .iter()
                .map(|r| r.energy)
                .collect(),
            Some(drift) => solve_drift_problem(
                &p.structure,
                drift.clone(),
                &p.start,
                &p.end,
                &ContinuationSchedule::default(),
                &config(50),
                &DriftOptions::default(),
            )
            .map_err(|e| e.to_string())?
            .results
            .iter()
            .map(|r| r.energy)
            .collect(),
        };
        runs += 1;
        for w in energies.windows(2) {
            if w[1] < w[0] - 1e-12 * (1.0 + w[0].abs()) {
                violations.push(format!("{name}: {} -> {}", w[0], w[1]));
            }
        }
    }
    let msg = format!("{runs} problems, {} violations {violations:?}", violations.len());
    if violations.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// `(y − eᴬx)ᵀ W⁻¹ (y − eᴬx)` with the Gramian by composite Simpson quadrature.
fn gramian_cost(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let panels = 4000;
    let h = 1.0 / panels as f64;
    let mut w = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..=panels {
        let e = (a * (1.0 - i as f64 * h)).exp();
        let weight = match i {
            0 => 1.0,
            i if i == panels => 1.0,
            i if i % 2 == 1 => 4.0,
            _ => 2.0,
        };
        w += &e * e.transpose() * weight;
    }
    w *= h / 3.0;
    let r = y - a.exp() * x;
    r.dot(&w.lu().solve(&r).unwrap())
}

fn drift_lq() -> Outcome {
    let p = Problem::builtin("drift-linear-2d", None).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let oracle = gramian_cost(&a, &p.start, &p.end);
    let out = solve_drift_problem(
        &p.structure,
        p.drift.clone().unwrap(),
        &p.start,
        &p.end,
        &ContinuationSchedule::default(),
        &config(200),
        &DriftOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let cost = out.final_control().cost;
    let rel = (cost - oracle).abs() / oracle;
    let identity = out.recovered.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    let msg = format!("cost {cost:.8} vs oracle {oracle:.8} (rel {rel:.2e}), identity residual {identity:.2e}");
    if rel <= 0.01 && identity <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn zero_drift() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["euclidean-3", "heisenberg"] {
        let p = Problem::builtin(name, None).unwrap();
        let base = solve(&p.structure, &p.start, &p.end, 100)?;
        let lifted = solve_drift_problem(
            &p.structure,
            Arc::new(ZeroDrift(p.structure.dimension())),
            &p.start,
            &p.end,
            &ContinuationSchedule::default(),
            &config(100),
            &DriftOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        for (b, l) in base.iter().zip(&lifted.results) {
            worst = worst.max((l.energy - 0.5 - b.energy).abs());
        }
    }
    let msg = format!("max energy difference {worst:.2e} on euclidean-3 and heisenberg (limit 1e-8)");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Discretely horizontal Heisenberg path over the planar polygon `(x, y)`:
/// each segment's `z` increment is the signed area it sweeps.
fn heisenberg_lift(planar: &[(f64, f64)]) -> DiscretePath {
    let mut z = 0.0;
    let mut points = vec![dvector![planar[0].0, planar[0].1, 0.0]];
    for w in planar.windows(2) {
        z += 0.5 * (w[0].0 * w[1].1 - w[0].1 * w[1].0);
        points.push(dvector![w[1].0, w[1].1, z]);
    }
    DiscretePath::new(points).unwrap()
}

/// Discretely horizontal Martinet path: `Δz = ȳ² Δx` on each segment.
fn martinet_lift(planar: &[(f64, f64)]) -> DiscretePath {
    let mut z = 0.0;
    let mut points = vec![dvector![planar[0].0, planar[0].1, 0.0]];
    for w in planar.windows(2) {
        let ybar = 0.5 * (w[0].1 + w[1].1);
        z += ybar * ybar * (w[1].0 - w[0].0);
        points.push(dvector![w[1].0, w[1].1, z]);
    }
    DiscretePath::new(points).unwrap()
}

fn recovery_bound() -> Outcome {
    let n = 100;
    let grid = |f: &dyn Fn(f64) -> (f64, f64)| (0..=n).map(|i| f(i as f64 / n as f64)).collect::<Vec<_>>();
    let circle = grid(&|t| ((2.0 * PI * t).cos() - 1.0, (2.0 * PI * t).sin()));
    let wiggle = grid(&|t| (t, 0.3 * (3.0 * PI * t).sin()));
    let spiral = grid(&|t| (t * (6.0 * t).cos(), t * (6.0 * t).sin()));
    let h = SubRiemannianStructure::heisenberg();
    let m = SubRiemannianStructure::martinet();
    let benchmarks = vec![
        ("heisenberg line", h.clone(), DiscretePath::chord(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], n).unwrap()),
        ("heisenberg circle", h.clone(), heisenberg_lift(&circle)),
        ("heisenberg wiggle", h.clone(), heisenberg_lift(&wiggle)),
        ("heisenberg spiral", h, heisenberg_lift(&spiral)),
        ("martinet wiggle", m.clone(), martinet_lift(&wiggle)),
        ("martinet spiral", m, martinet_lift(&spiral)),
        (
            "euclidean curve",
            SubRiemannianStructure::euclidean(3),
            DiscretePath::from_fn(n, |t| dvector![t.cos(), t * t, (2.0 * t).sin()]).unwrap(),
        ),
    ];
    let qs: Vec<_> = [1.0, 10.0, 100.0, 1e3, 1e4].iter().map(|&v| q(v)).collect();
    let mut worst: f64 = 0.0;
    for (name, s, path) in &benchmarks {
        let dev = recovery_sequence_check(s, path, &qs, 1e-6).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(dev);
    }
    let msg = format!("{} horizontal paths, max |J_q - J_inf| {worst:.2e} up to q = 1e4", benchmarks.len());
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cauchy() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, s, a, b) in [
        (
            "euclidean-3",
            SubRiemannianStructure::euclidean(3),
            dvector![0.0, 0.0, 0.0],
            dvector![1.0, 1.0, 1.0],
        ),
        (
            "heisenberg chord",
            SubRiemannianStructure::heisenberg(),
            dvector![0.0, 0.0, 0.0],
            dvector![1.0, 0.0, 0.0],
        ),
    ] {
        let report = minimizer_cauchy_report(&solve(&s, &a, &b, 200)?, true, 1e-6).map_err(|e| e.to_string())?;
        let worst = report.steps.iter().map(|st| st.max_rho1()).fold(0.0, f64::max);
        ok &= worst <= 1e-6;
        lines.push(format!("{name} max rho1 {worst:.2e}"));
    }
    let h = SubRiemannianStructure::heisenberg();
    let vertical = solve(&h, &dvector![0.0, 0.0, 0.0], &dvector![0.0, 0.0, 0.25 / PI], 200)?;
    let report = minimizer_cauchy_report(&vertical, false, 1e-6).map_err(|e| e.to_string())?;
    let rho1: Vec<String> = report.steps.iter().map(|s| format!("{:.2e}", s.max_rho1())).collect();
    lines.push(format!("vertical (reported) rho1 {rho1:?}"));
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn brackets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = SubRiemannianStructure::heisenberg();
    let m = SubRiemannianStructure::martinet();
    let mut failures = Vec::new();
    for _ in 0..10 {
        let p = dvector![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let r = validate_bracket_generating(&h, &p, 3).map_err(|e| e.to_string())?;
        if (r.generated_rank, r.depth_reached, r.verified) != (3, 2, true) {
            failures.push(format!("heisenberg at {:?}: {r:?}", p.as_slice()));
        }
        // depth 3 is needed exactly on the singular surface y = 0
        let p = dvector![rng.random_range(-2.0..2.0), 0.0, rng.random_range(-2.0..2.0)];
        let r = validate_bracket_generating(&m, &p, 3).map_err(|e| e.to_string())?;
        if (r.generated_rank, r.depth_reached, r.verified) != (3, 3, true) {
            failures.push(format!("martinet at {:?}: {r:?}", p.as_slice()));
        }
    }
    let msg = format!(
        "Heisenberg rank 3 at depth 2 and Martinet rank 3 at depth 3 (y = 0) at 10 points each; {} mismatches {failures:?}",
        failures.len()
    );
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact affine identity in q", affine_identity),
        ("gradient matches finite differences", gradient_check),
        ("horizontal chord is fixed along the schedule", horizontal_chord),
        ("vertical Heisenberg lengths approach d = 1", cc_limit),
        ("minimised energies nondecreasing in q", monotone_infima),
        ("double integrator matches the Gramian oracle", drift_lq),
        ("zero drift reduces to the base problem", zero_drift),
        ("recovery sequence bound on horizontal paths", recovery_bound),
        ("consecutive minimisers are Cauchy", cauchy),
        ("bracket-generation certificates", brackets),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
