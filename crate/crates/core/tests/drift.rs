use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;
use srgeo::drift::{DriftFn, ZeroDrift};
use srgeo::{
    continuation_solve, integrate_flow, solve_drift_problem, ContinuationSchedule, DriftField, DriftOptions,
    PolynomialField, Problem, SolverConfig,
};

/// `(y − eᴬx)ᵀ W⁻¹ (y − eᴬx)` with `W = ∫₀¹ e^{(1−s)A} e^{(1−s)Aᵀ} ds` by
/// composite Simpson quadrature.
fn gramian_cost(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = a.nrows();
    let panels = 2000;
    let h = 1.0 / panels as f64;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..=panels {
        let tau = 1.0 - i as f64 * h;
        let e = (a * tau).exp();
        let weight = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        w += &e * e.transpose() * weight;
    }
    w *= h / 3.0;
    let r = y - a.exp() * x;
    r.dot(&w.lu().solve(&r).unwrap())
}

fn config(grid_size: usize) -> SolverConfig {
    SolverConfig {
        grid_size,
        ..Default::default()
    }
}

#[test]
fn linear_drift_matches_gramian_oracle() {
    let p = Problem::builtin("drift-linear-2d", None).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let oracle = gramian_cost(&a, &p.start, &p.end);
    assert_abs_diff_eq!(oracle, 12.0 / 13.0, epsilon = 1e-10);
    let out = solve_drift_problem(
        &p.structure,
        p.drift.clone().unwrap(),
        &p.start,
        &p.end,
        &ContinuationSchedule::default(),
        &config(200),
        &DriftOptions::default(),
    )
    .unwrap();
    let last = out.final_control();
    assert!((last.cost - oracle).abs() <= 0.01 * oracle, "cost {} vs {}", last.cost, oracle);
    for r in &out.recovered {
        assert!(r.identity_residual <= 1e-6);
        assert!(r.terminal_mismatch <= 1e-8);
    }
}

#[test]
fn rotating_drift_matches_gramian_oracle() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]);
    let x = dvector![0.5, -0.2];
    let y = dvector![-0.3, 0.8];
    let oracle = gramian_cost(&a, &x, &y);
    let drift: Arc<dyn DriftField> = Arc::new(PolynomialField::linear(&a).unwrap());
    let out = solve_drift_problem(
        &srgeo::SubRiemannianStructure::euclidean(2),
        drift,
        &x,
        &y,
        &ContinuationSchedule::new(1.0, 10.0, 1).unwrap(),
        &config(100),
        &DriftOptions::default(),
    )
    .unwrap();
    let last = out.final_control();
    assert!((last.cost - oracle).abs() <= 0.01 * oracle, "cost {} vs {}", last.cost, oracle);
}

#[test]
fn constant_drift_control_is_minus_one() {
    let p = Problem::builtin("drift-constant-1d", None).unwrap();
    let out = solve_drift_problem(
        &p.structure,
        p.drift.clone().unwrap(),
        &p.start,
        &p.end,
        &ContinuationSchedule::default(),
        &config(100),
        &DriftOptions::default(),
    )
    .unwrap();
    let last = out.final_control();
    assert_abs_diff_eq!(last.cost, 1.0, epsilon = 1e-4);
    for y in &last.controls {
        assert_abs_diff_eq!(y[0], -1.0, epsilon = 1e-4);
    }
}

fn zero_drift_agrees(name: &str) {
    let p = Problem::builtin(name, None).unwrap();
    let (start, end) = (p.start.clone(), p.end.clone());
    let schedule = ContinuationSchedule::new(1.0, 10.0, 3).unwrap();
    let cfg = config(60);
    let base = continuation_solve(&p.structure, &start, &end, &schedule, &cfg).unwrap();
    let n = p.structure.dimension();
    let lifted = solve_drift_problem(
        &p.structure,
        Arc::new(ZeroDrift(n)),
        &start,
        &end,
        &schedule,
        &cfg,
        &DriftOptions::default(),
    )
    .unwrap();
    for (b, l) in base.iter().zip(&lifted.results) {
        assert!(b.converged && l.converged);
        assert_abs_diff_eq!(l.energy - 0.5, b.energy, epsilon = 1e-8);
    }
}

#[test]
fn zero_drift_reduces_to_base_problem() {
    zero_drift_agrees("euclidean-3");
    zero_drift_agrees("heisenberg");
}

#[test]
fn free_s_experiment_reports_deviation() {
    let p = Problem::builtin("drift-linear-2d", None).unwrap();
    let out = solve_drift_problem(
        &p.structure,
        p.drift.clone().unwrap(),
        &p.start,
        &p.end,
        &ContinuationSchedule::new(1.0, 10.0, 1).unwrap(),
        &config(40),
        &DriftOptions {
            free_s: true,
            ..Default::default()
        },
    )
    .unwrap();
    let free = out.free_s.unwrap();
    assert!(free.max_deviation.is_finite());
    // the pinned problem is a restriction, so the free minimum is no larger
    assert!(free.energy <= out.results.last().unwrap().energy + 1e-9);
}

#[test]
fn heisenberg_drift_recovers_horizontal_control() {
    let p = Problem::builtin("heisenberg-drift", None).unwrap();
    let out = solve_drift_problem(
        &p.structure,
        p.drift.clone().unwrap(),
        &p.start,
        &p.end,
        &ContinuationSchedule::default(),
        &config(50),
        &DriftOptions::default(),
    )
    .unwrap();
    let last = out.final_control();
    assert!(last.control_defect <= 1e-3, "defect {}", last.control_defect);
    assert!(last.identity_residual <= 1e-6);
    for (a, b) in out.recovered.iter().zip(out.recovered.iter().skip(1)) {
        assert!(b.cost >= a.cost - 1e-9);
    }
}

fn polynomial_drift() -> PolynomialField {
    // X = (y, −x + 0.1·x²)
    let m = |coeff, powers: [u32; 2]| srgeo::Monomial {
        coeff,
        powers: powers.to_vec(),
        time: 0,
    };
    PolynomialField::new(2, vec![vec![m(1.0, [0, 1])], vec![m(-1.0, [1, 0]), m(0.1, [2, 0])]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_group_property(x in -1.0..1.0f64, y in -1.0..1.0f64, split in 0.1..0.9f64) {
        let drift = polynomial_drift();
        let p = dvector![x, y];
        let (whole, jw) = integrate_flow(&drift, &p, 1.0, 400).unwrap();
        let (mid, j1) = integrate_flow(&drift, &p, split, 400).unwrap();
        let (end, j2) = integrate_flow(&drift, &mid, 1.0 - split, 400).unwrap();
        prop_assert!((whole - end).amax() <= 1e-8);
        prop_assert!((jw - j2 * j1).amax() <= 1e-8);
    }

    #[test]
    fn flow_jacobian_matches_differences(x in -1.0..1.0f64, y in -1.0..1.0f64, t in 0.1..1.0f64) {
        let drift = DriftFn::new(2, |t: f64, p: &DVector<f64>| dvector![p[1].sin() + t, -p[0] * p[1]]);
        let p = dvector![x, y];
        let (_, jac) = integrate_flow(&drift, &p, t, 200).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[k] += h;
            minus[k] -= h;
            let col = (integrate_flow(&drift, &plus, t, 200).unwrap().0
                - integrate_flow(&drift, &minus, t, 200).unwrap().0)
                / (2.0 * h);
            let err = (col - jac.column(k)).amax();
            prop_assert!(err <= 1e-5 * (1.0 + jac.amax()), "column {} err {}", k, err);
        }
        prop_assert!(jac.determinant() > 0.0);
    }

    #[test]
    fn analytic_jacobian_matches_differences(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let drift = polynomial_drift();
        let p = dvector![x, y];
        let analytic = DriftField::jacobian(&drift, 0.0, &p);
        let fd = DriftFn::new(2, |t, q: &DVector<f64>| drift.eval(t, q)).jacobian(0.0, &p);
        prop_assert!((&analytic - &fd).amax() <= 1e-4 * (1.0 + fd.amax()));
    }
}
