use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use nalgebra::dvector;
use proptest::prelude::*;
use srgeo::{
    continuation_solve, distance_chain_report, minimizer_cauchy_report, pointwise_affine_check, ChainTolerances,
    ContinuationSchedule, DiscretePath, PenaltyParameter, Point, SolveResult, SolverConfig, SubRiemannianStructure,
};

fn run(s: &SubRiemannianStructure, start: Point, end: Point, grid_size: usize) -> Vec<SolveResult> {
    let config = SolverConfig {
        grid_size,
        ..Default::default()
    };
    continuation_solve(s, &start, &end, &ContinuationSchedule::default(), &config).unwrap()
}

#[test]
fn vertical_heisenberg_chain() {
    let h = SubRiemannianStructure::heisenberg();
    let results = run(&h, dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0, 0.25 / PI], 200);
    let report = distance_chain_report(&results, Some(1.0), ChainTolerances::default()).unwrap();
    assert!(report.holds(), "{report:#?}");
    for r in &report.records {
        assert!(r.length <= 1.005, "length {} at q = {}", r.length, r.q);
    }
    assert!(report.final_gap.unwrap() <= 0.05);
    assert_eq!(report.defect_decay.len(), 4);
    assert_eq!(report.recompute(), report);

    // reported only: the limit circle is not unique
    let cauchy = minimizer_cauchy_report(&results, false, 1e-6).unwrap();
    assert_eq!(cauchy.steps.len(), 4);
    assert_eq!(cauchy.assertion, None);
}

#[test]
fn euclidean_chain_has_no_gap() {
    let e = SubRiemannianStructure::euclidean(3);
    let (a, b) = (dvector![0.0, 0.0, 0.0], dvector![1.0, 1.0, 1.0]);
    let reference = (&b - &a).norm();
    let results = run(&e, a, b, 50);
    let report = distance_chain_report(&results, Some(reference), ChainTolerances::default()).unwrap();
    assert!(report.holds());
    for r in &report.records {
        assert_abs_diff_eq!(r.length, reference, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(report.final_gap.unwrap(), 0.0, epsilon = 1e-12);

    let cauchy = minimizer_cauchy_report(&results, true, 1e-6).unwrap();
    assert_eq!(cauchy.assertion, Some(true));
    for step in &cauchy.steps {
        assert!(step.rho0.iter().chain(&step.rho1).all(|d| *d <= 1e-10));
    }
}

#[test]
fn horizontal_chord_is_fixed() {
    let h = SubRiemannianStructure::heisenberg();
    let results = run(&h, dvector![0.0, 0.0, 0.0], dvector![1.0, 0.0, 0.0], 100);
    let report = distance_chain_report(&results, Some(1.0), ChainTolerances::default()).unwrap();
    assert!(report.holds());
    for r in &report.records {
        assert_abs_diff_eq!(r.length, 1.0, epsilon = 1e-6);
    }
    let cauchy = minimizer_cauchy_report(&results, true, 1e-6).unwrap();
    assert_eq!(cauchy.assertion, Some(true));
    assert!(cauchy.steps.iter().all(|s| s.max_rho1() <= 1e-6));
}

#[test]
fn reference_violation_is_a_verdict() {
    let e = SubRiemannianStructure::euclidean(2);
    let results = run(&e, dvector![0.0, 0.0], dvector![3.0, 4.0], 10);
    let report = distance_chain_report(&results, Some(4.0), ChainTolerances::default()).unwrap();
    assert_eq!(report.within_reference, Some(false));
    assert!(!report.holds());
    assert_abs_diff_eq!(report.final_gap.unwrap(), -1.0, epsilon = 1e-12);
}

#[test]
fn cauchy_report_needs_matching_grids() {
    let e = SubRiemannianStructure::euclidean(1);
    let mut a = run(&e, dvector![0.0], dvector![1.0], 10);
    let b = run(&e, dvector![0.0], dvector![1.0], 20);
    assert!(minimizer_cauchy_report(&a[..1], true, 1e-6).is_err());
    a[1] = b[1].clone();
    assert!(minimizer_cauchy_report(&a, true, 1e-6).is_err());
}

fn heisenberg_paths() -> impl Strategy<Value = DiscretePath> {
    prop::collection::vec(-1.0..1.0f64, 3 * 11).prop_map(|v| {
        let points = v.chunks(3).map(|c| dvector![c[0], c[1], c[2]]).collect();
        DiscretePath::new(points).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_affine_in_q(path in heisenberg_paths()) {
        let h = SubRiemannianStructure::heisenberg();
        let qs: Vec<_> = [1.0, 7.0, 130.0, 2e3].iter().map(|&q| PenaltyParameter::new(q).unwrap()).collect();
        let fit = pointwise_affine_check(&h, &path, &qs).unwrap();
        let defect = srgeo::horizontality_defect(&h, &path).unwrap();
        prop_assert!(fit.max_residual <= 1e-10 * (1.0 + fit.intercept.abs()));
        prop_assert!((fit.slope - defect / 2.0).abs() <= 1e-10 * (1.0 + defect));
    }
}
