//! Sub-Riemannian geodesics and minimum-energy drift controls computed by
//! minimising penalised Riemannian energies over a continuation in `q`.

pub mod drift;
pub mod error;
pub mod functionals;
pub mod gamma_diag;
pub mod geometry;
pub mod optimizer;
pub mod polynomial;
pub mod problems;

pub use drift::{
    build_lifted_structure, integrate_flow, pullback_control, solve_drift_problem, DriftField, DriftOptions,
    DriftSolveResult, FlowMap,
};
pub use error::{Error, Result};
pub use functionals::{
    energy, horizontality_defect, length, limit_energy, semimetric_rho, DiscretePath, FunctionalValue,
    SemimetricOrder,
};
pub use gamma_diag::{
    distance_chain_report, minimizer_cauchy_report, pointwise_affine_check, recovery_sequence_check, CauchyReport,
    ChainTolerances, ConvergenceReport,
};
pub use geometry::{
    penalized_metric_eval, project_horizontal, validate_bracket_generating, PenaltyParameter, Point,
    SubRiemannianStructure, Tangent,
};
pub use optimizer::{
    constant_speed_reparametrize, continuation_solve, energy_gradient, minimize_energy, ContinuationSchedule,
    Preconditioner, SolveResult, SolverConfig, Termination,
};
pub use problems::{catalogue, Problem, ProblemInfo};
pub use polynomial::{Monomial, PolynomialField, PolynomialFrame};
