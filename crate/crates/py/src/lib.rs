//! Python bindings: structures, paths, the discrete functionals, continuation
//! solves and drift solves.

use std::sync::Arc;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use srgeo::{
    ChainTolerances, ContinuationSchedule, DiscretePath, DriftField, DriftOptions, Error, PenaltyParameter, Point,
    PolynomialField, Problem, SemimetricOrder, SolverConfig, SubRiemannianStructure,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::InvalidPath(_)
        | Error::DimensionMismatch { .. }
        | Error::GridMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::NonFinite(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn penalty(q: f64) -> PyResult<PenaltyParameter> {
    PenaltyParameter::new(q).map_err(to_py)
}

fn point(v: Vec<f64>) -> Point {
    Point::from_vec(v)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.iter().flatten().copied()))
}

/// A sub-Riemannian structure on a single chart.
#[pyclass(name = "Structure", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStructure {
    inner: SubRiemannianStructure,
}

#[pymethods]
impl PyStructure {
    #[staticmethod]
    fn euclidean(n: usize) -> PyResult<Self> {
        if n == 0 {
            return Err(PyValueError::new_err("dimension must be positive"));
        }
        Ok(Self {
            inner: SubRiemannianStructure::euclidean(n),
        })
    }

    #[staticmethod]
    fn heisenberg() -> Self {
        Self {
            inner: SubRiemannianStructure::heisenberg(),
        }
    }

    #[staticmethod]
    fn martinet() -> Self {
        Self {
            inner: SubRiemannianStructure::martinet(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn metric_at(&self, p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.metric_at(&point(p)).map(|m| rows(&m)).map_err(to_py)
    }

    fn frame_at(&self, p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.frame_at(&point(p)).map(|m| rows(&m)).map_err(to_py)
    }

    /// Horizontal and vertical parts of `v` at `p`.
    fn project(&self, p: Vec<f64>, v: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (h, perp) = srgeo::project_horizontal(&self.inner, &point(p), &point(v)).map_err(to_py)?;
        Ok((h.as_slice().to_vec(), perp.as_slice().to_vec()))
    }

    /// `g_q(v, w)` at `p`.
    fn penalized(&self, p: Vec<f64>, q: f64, v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
        srgeo::penalized_metric_eval(&self.inner, penalty(q)?, &point(p), &point(v), &point(w)).map_err(to_py)
    }

    /// `(generated_rank, depth_reached, verified)`.
    #[pyo3(signature = (p, max_depth=3))]
    fn bracket_rank(&self, p: Vec<f64>, max_depth: usize) -> PyResult<(usize, usize, bool)> {
        let r = srgeo::validate_bracket_generating(&self.inner, &point(p), max_depth).map_err(to_py)?;
        Ok((r.generated_rank, r.depth_reached, r.verified))
    }

    fn __repr__(&self) -> String {
        format!(
            "Structure({:?}, dimension={}, rank={})",
            self.inner.name(),
            self.inner.dimension(),
            self.inner.rank()
        )
    }
}

/// Uniformly sampled path `γ(tᵢ)`, `tᵢ = i/N`.
#[pyclass(name = "Path", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPath {
    inner: DiscretePath,
}

#[pymethods]
impl PyPath {
    #[new]
    fn new(points: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = DiscretePath::new(points.into_iter().map(point).collect()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn chord(start: Vec<f64>, end: Vec<f64>, segments: usize) -> PyResult<Self> {
        let inner = DiscretePath::chord(&point(start), &point(end), segments).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn grid_size(&self) -> usize {
        self.inner.grid_size()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().iter().map(|p| p.as_slice().to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.points().len()
    }
}

#[pyfunction]
fn energy(s: &PyStructure, q: f64, path: &PyPath) -> PyResult<f64> {
    srgeo::energy(&s.inner, penalty(q)?, &path.inner).map_err(to_py)
}

#[pyfunction]
fn length(s: &PyStructure, q: f64, path: &PyPath) -> PyResult<f64> {
    srgeo::length(&s.inner, penalty(q)?, &path.inner).map_err(to_py)
}

#[pyfunction]
fn horizontality_defect(s: &PyStructure, path: &PyPath) -> PyResult<f64> {
    srgeo::horizontality_defect(&s.inner, &path.inner).map_err(to_py)
}

/// Horizontal energy, or `None` when the path is not horizontal within `tol`.
#[pyfunction]
#[pyo3(signature = (s, path, tol=1e-12))]
fn limit_energy(s: &PyStructure, path: &PyPath, tol: f64) -> PyResult<Option<f64>> {
    srgeo::limit_energy(&s.inner, &path.inner, tol)
        .map(|v| v.finite())
        .map_err(to_py)
}

/// Gradient of the energy with respect to the interior points, flattened.
#[pyfunction]
fn energy_gradient(s: &PyStructure, q: f64, path: &PyPath) -> PyResult<Vec<f64>> {
    srgeo::energy_gradient(&s.inner, penalty(q)?, &path.inner)
        .map(|g| g.as_slice().to_vec())
        .map_err(to_py)
}

/// Per-coordinate `ρ⁰` (`order = 0`) or `ρ¹` (`order = 1`) distance.
#[pyfunction]
#[pyo3(signature = (a, b, order=1))]
fn semimetric_rho(a: &PyPath, b: &PyPath, order: u8) -> PyResult<Vec<f64>> {
    let order = match order {
        0 => SemimetricOrder::Zero,
        1 => SemimetricOrder::One,
        _ => return Err(PyValueError::new_err("order must be 0 or 1")),
    };
    srgeo::semimetric_rho(&a.inner, &b.inner, order).map_err(to_py)
}

/// Minimiser found at one penalty value.
#[pyclass(name = "SolveResult", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySolveResult {
    inner: srgeo::SolveResult,
}

#[pymethods]
impl PySolveResult {
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q.value()
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.inner.energy
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length
    }

    #[getter]
    fn defect(&self) -> f64 {
        self.inner.defect
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn gradient_norm(&self) -> f64 {
        self.inner.gradient_norm
    }

    #[getter]
    fn path(&self) -> PyPath {
        PyPath {
            inner: self.inner.path.clone(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveResult(q={:e}, energy={}, length={}, defect={:e}, converged={})",
            self.inner.q.value(),
            self.inner.energy,
            self.inner.length,
            self.inner.defect,
            self.inner.converged
        )
    }
}

fn solver_config(grid_size: usize, max_iterations: Option<usize>, gradient_tolerance: Option<f64>) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        grid_size,
        max_iterations: max_iterations.unwrap_or(d.max_iterations),
        gradient_tolerance: gradient_tolerance.unwrap_or(d.gradient_tolerance),
        ..d
    }
}

#[pyfunction]
#[pyo3(signature = (s, start, end, q_start=1.0, ratio=10.0, steps=5, grid_size=200, max_iterations=None, gradient_tolerance=None))]
#[allow(clippy::too_many_arguments)]
fn continuation_solve(
    py: Python<'_>,
    s: &PyStructure,
    start: Vec<f64>,
    end: Vec<f64>,
    q_start: f64,
    ratio: f64,
    steps: usize,
    grid_size: usize,
    max_iterations: Option<usize>,
    gradient_tolerance: Option<f64>,
) -> PyResult<Vec<PySolveResult>> {
    let schedule = ContinuationSchedule::new(q_start, ratio, steps).map_err(to_py)?;
    let config = solver_config(grid_size, max_iterations, gradient_tolerance);
    let (a, b) = (point(start), point(end));
    let structure = s.inner.clone();
    let results = py
        .detach(|| srgeo::continuation_solve(&structure, &a, &b, &schedule, &config))
        .map_err(to_py)?;
    Ok(results.into_iter().map(|inner| PySolveResult { inner }).collect())
}

/// Convergence diagnostics of a continuation run as a JSON string.
#[pyfunction]
#[pyo3(signature = (results, reference=None, unique=false, threshold=1e-6))]
fn convergence_report(
    results: Vec<PyRef<'_, PySolveResult>>,
    reference: Option<f64>,
    unique: bool,
    threshold: f64,
) -> PyResult<String> {
    let runs: Vec<srgeo::SolveResult> = results.iter().map(|r| r.inner.clone()).collect();
    let chain = srgeo::distance_chain_report(&runs, reference, ChainTolerances::default()).map_err(to_py)?;
    let cauchy = if runs.len() >= 2 {
        Some(srgeo::minimizer_cauchy_report(&runs, unique, threshold).map_err(to_py)?)
    } else {
        None
    };
    #[derive(serde::Serialize)]
    struct Report {
        holds: bool,
        chain: srgeo::ConvergenceReport,
        cauchy: Option<srgeo::CauchyReport>,
    }
    let report = Report {
        holds: chain.holds(),
        chain,
        cauchy,
    };
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Outcome of a drift solve: one entry per penalty value.
#[pyclass(name = "DriftResult", frozen, skip_from_py_object)]
struct PyDriftResult {
    inner: srgeo::DriftSolveResult,
}

#[pymethods]
impl PyDriftResult {
    #[getter]
    fn results(&self) -> Vec<PySolveResult> {
        self.inner
            .results
            .iter()
            .map(|r| PySolveResult { inner: r.clone() })
            .collect()
    }

    #[getter]
    fn costs(&self) -> Vec<f64> {
        self.inner.recovered.iter().map(|r| r.cost).collect()
    }

    #[getter]
    fn identity_residuals(&self) -> Vec<f64> {
        self.inner.recovered.iter().map(|r| r.identity_residual).collect()
    }

    #[getter]
    fn control_defects(&self) -> Vec<f64> {
        self.inner.recovered.iter().map(|r| r.control_defect).collect()
    }

    /// Trajectory of the last solve.
    fn trajectory(&self) -> PyPath {
        PyPath {
            inner: self.inner.final_control().trajectory.clone(),
        }
    }

    /// Control samples `Y(tᵢ)` of the last solve.
    fn controls(&self) -> Vec<Vec<f64>> {
        self.inner
            .final_control()
            .controls
            .iter()
            .map(|y| y.as_slice().to_vec())
            .collect()
    }
}

/// `X(p) = A p + b` with either part optional.
fn affine_drift(n: usize, a: Option<Vec<Vec<f64>>>, b: Option<Vec<f64>>) -> PyResult<PolynomialField> {
    let mut components = match a {
        Some(rows) => {
            let a = matrix(&rows)?;
            if a.shape() != (n, n) {
                return Err(PyValueError::new_err(format!("drift matrix must be {n} x {n}")));
            }
            PolynomialField::linear(&a).map_err(to_py)?.components
        }
        None => vec![Vec::new(); n],
    };
    if let Some(b) = b {
        if b.len() != n {
            return Err(PyValueError::new_err(format!("drift vector must have length {n}")));
        }
        for (c, extra) in components.iter_mut().zip(PolynomialField::constant(&b).components) {
            c.extend(extra);
        }
    }
    PolynomialField::new(n, components).map_err(to_py)
}

/// Minimum-energy control from `start` to `end` for `γ̇ = A γ + b + Y`.
#[pyfunction]
#[pyo3(signature = (s, start, end, drift_matrix=None, drift_vector=None, q_start=1.0, ratio=10.0, steps=5, grid_size=100))]
#[allow(clippy::too_many_arguments)]
fn solve_drift(
    py: Python<'_>,
    s: &PyStructure,
    start: Vec<f64>,
    end: Vec<f64>,
    drift_matrix: Option<Vec<Vec<f64>>>,
    drift_vector: Option<Vec<f64>>,
    q_start: f64,
    ratio: f64,
    steps: usize,
    grid_size: usize,
) -> PyResult<PyDriftResult> {
    let drift: Arc<dyn DriftField> = Arc::new(affine_drift(s.inner.dimension(), drift_matrix, drift_vector)?);
    let schedule = ContinuationSchedule::new(q_start, ratio, steps).map_err(to_py)?;
    let config = solver_config(grid_size, None, None);
    let (a, b) = (point(start), point(end));
    let structure = s.inner.clone();
    let inner = py
        .detach(|| srgeo::solve_drift_problem(&structure, drift, &a, &b, &schedule, &config, &DriftOptions::default()))
        .map_err(to_py)?;
    Ok(PyDriftResult { inner })
}

/// Names of the built-in problems.
#[pyfunction]
fn list_problems() -> Vec<&'static str> {
    srgeo::catalogue().into_iter().map(|p| p.name).collect()
}

/// `(structure, start, end, has_drift)` of a built-in problem.
#[pyfunction]
#[pyo3(signature = (name, dimension=None))]
fn problem(name: &str, dimension: Option<usize>) -> PyResult<(PyStructure, Vec<f64>, Vec<f64>, bool)> {
    let p = Problem::builtin(name, dimension).map_err(to_py)?;
    Ok((
        PyStructure { inner: p.structure },
        p.start.as_slice().to_vec(),
        p.end.as_slice().to_vec(),
        p.drift.is_some(),
    ))
}

#[pymodule]
fn srgeo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStructure>()?;
    m.add_class::<PyPath>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyDriftResult>()?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(length, m)?)?;
    m.add_function(wrap_pyfunction!(horizontality_defect, m)?)?;
    m.add_function(wrap_pyfunction!(limit_energy, m)?)?;
    m.add_function(wrap_pyfunction!(energy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(semimetric_rho, m)?)?;
    m.add_function(wrap_pyfunction!(continuation_solve, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_report, m)?)?;
    m.add_function(wrap_pyfunction!(solve_drift, m)?)?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(problem, m)?)?;
    Ok(())
}
