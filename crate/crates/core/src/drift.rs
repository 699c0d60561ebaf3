//! Minimum-energy controls of drift systems `γ̇ = X(t, γ) + Y`, `Y ∈ D`,
//! reduced to a geodesic problem on `M × ℝ` by pulling everything back
//! through the flow of `X`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::DiscretePath;
use crate::geometry::{LocalFields, PenaltyParameter, Point, SubRiemannianStructure, Tangent};
use crate::optimizer::{continuation_solve, ContinuationSchedule, SolveResult, SolverConfig};
use crate::polynomial::PolynomialField;

/// Default integrator steps per unit time.
pub const DEFAULT_FLOW_STEPS: usize = 100;

/// Time-dependent vector field `X(t, p)`.
pub trait DriftField: Send + Sync {
    fn dimension(&self) -> usize;

    fn eval(&self, t: f64, p: &Point) -> Tangent;

    /// `∂X/∂p`; central differences unless overridden.
    fn jacobian(&self, t: f64, p: &Point) -> DMatrix<f64> {
        let n = self.dimension();
        let h = 1e-6 * (1.0 + p.amax());
        let mut j = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[k] += h;
            minus[k] -= h;
            j.set_column(k, &((self.eval(t, &plus) - self.eval(t, &minus)) / (2.0 * h)));
        }
        j
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroDrift(pub usize);

impl DriftField for ZeroDrift {
    fn dimension(&self) -> usize {
        self.0
    }

    fn eval(&self, _t: f64, _p: &Point) -> Tangent {
        Tangent::zeros(self.0)
    }

    fn jacobian(&self, _t: f64, _p: &Point) -> DMatrix<f64> {
        DMatrix::zeros(self.0, self.0)
    }
}

impl DriftField for PolynomialField {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval(&self, t: f64, p: &Point) -> Tangent {
        PolynomialField::eval(self, t, p)
    }

    fn jacobian(&self, t: f64, p: &Point) -> DMatrix<f64> {
        PolynomialField::jacobian(self, t, p)
    }
}

/// Drift given by a closure, with finite-difference Jacobian.
pub struct DriftFn<F> {
    dimension: usize,
    f: F,
}

impl<F> DriftFn<F>
where
    F: Fn(f64, &Point) -> Tangent + Send + Sync,
{
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<F> DriftField for DriftFn<F>
where
    F: Fn(f64, &Point) -> Tangent + Send + Sync,
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval(&self, t: f64, p: &Point) -> Tangent {
        (self.f)(t, p)
    }
}

fn check_finite(p: &Point, j: &DMatrix<f64>, t: f64) -> Result<()> {
    if p.iter().chain(j.iter()).all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("flow state at t = {t}")))
    }
}

/// Classical RK4 for `ṗ = X(t, p)` together with `Φ̇ = (∂X/∂p) Φ`,
/// `Φ(0) = I`, with `m` fixed steps of size `t/m`. Returns `(φ_t(p), Φ(t, p))`.
pub fn integrate_flow(drift: &dyn DriftField, p: &Point, t: f64, m: usize) -> Result<(Point, DMatrix<f64>)> {
    let n = drift.dimension();
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            what: "flow initial point",
            expected: n,
            found: p.len(),
        });
    }
    if m == 0 {
        return Err(Error::InvalidParameter("flow needs at least one step".into()));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("flow time".into()));
    }
    let mut x = p.clone();
    let mut phi = DMatrix::identity(n, n);
    if t == 0.0 {
        return Ok((x, phi));
    }
    let h = t / m as f64;
    let mut stage = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    let mut acc = DMatrix::zeros(n, n);
    for i in 0..m {
        let s = i as f64 * h;
        // each stage advances from the start of the step along the previous stage slope
        let mut k_acc = Tangent::zeros(n);
        let mut k_prev = Tangent::zeros(n);
        acc.fill(0.0);
        for (c, w) in [(0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)] {
            let xs = &x + &k_prev * (c * h);
            stage.copy_from(&phi);
            if c > 0.0 {
                stage += &l * (c * h);
            }
            let k = drift.eval(s + c * h, &xs);
            l.gemm(1.0, &drift.jacobian(s + c * h, &xs), &stage, 0.0);
            k_acc.axpy(w, &k, 1.0);
            acc += &l * w;
            k_prev = k;
        }
        x.axpy(h / 6.0, &k_acc, 1.0);
        phi += &acc * (h / 6.0);
        check_finite(&x, &phi, s + h)?;
    }
    Ok((x, phi))
}

/// Flow of a drift, integrated from time 0 with `steps_per_unit` RK4 steps
/// per unit of elapsed time.
#[derive(Clone)]
pub struct FlowMap {
    drift: Arc<dyn DriftField>,
    steps_per_unit: usize,
}

impl fmt::Debug for FlowMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowMap")
            .field("dimension", &self.drift.dimension())
            .field("steps_per_unit", &self.steps_per_unit)
            .finish()
    }
}

impl FlowMap {
    pub fn new(drift: Arc<dyn DriftField>, steps_per_unit: usize) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::InvalidParameter("flow needs at least one step per unit time".into()));
        }
        Ok(Self { drift, steps_per_unit })
    }

    pub fn drift(&self) -> &Arc<dyn DriftField> {
        &self.drift
    }

    pub fn dimension(&self) -> usize {
        self.drift.dimension()
    }

    pub fn steps_per_unit(&self) -> usize {
        self.steps_per_unit
    }

    /// `(φ(t, p), Φ(t, p))`.
    pub fn eval(&self, t: f64, p: &Point) -> Result<(Point, DMatrix<f64>)> {
        let m = ((self.steps_per_unit as f64) * t.abs()).ceil().max(1.0) as usize;
        integrate_flow(self.drift.as_ref(), p, t, m)
    }

    pub fn point(&self, t: f64, p: &Point) -> Result<Point> {
        Ok(self.eval(t, p)?.0)
    }

    /// Solves `φ(t, p) = y` for `p` by Newton's method on the flow Jacobian.
    pub fn invert(&self, t: f64, y: &Point) -> Result<Point> {
        let tol = 1e-12 * (1.0 + y.amax());
        let mut p = y.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..50 {
            let (image, phi) = self.eval(t, &p)?;
            let r = image - y;
            residual = r.amax();
            if residual <= tol {
                return Ok(p);
            }
            let step = phi.lu().solve(&r).ok_or_else(|| Error::SingularJacobian {
                t,
                point: p.as_slice().to_vec(),
            })?;
            p -= step;
        }
        Err(Error::FlowInversion {
            t,
            point: y.as_slice().to_vec(),
            residual,
        })
    }
}

/// `Ỹ(t, p) = Φ(t, p)⁻¹ · Y(t, φ(t, p))`.
pub fn pullback_control(flow: &FlowMap, control: &dyn Fn(f64, &Point) -> Tangent, t: f64, p: &Point) -> Result<Tangent> {
    let (image, phi) = flow.eval(t, p)?;
    phi.lu().solve(&control(t, &image)).ok_or_else(|| Error::SingularJacobian {
        t,
        point: p.as_slice().to_vec(),
    })
}

/// Metric `h = g̃_s ⊕ 1` and frame `Φ⁻¹F(φ_s(p)) ⊕ ∂_s` on `M × ℝ`.
struct LiftedFields {
    base: SubRiemannianStructure,
    flow: FlowMap,
}

impl LiftedFields {
    fn split(&self, p: &Point) -> (Point, f64) {
        let n = self.base.dimension();
        (p.rows(0, n).into_owned(), p[n])
    }

    fn nan(&self, cols: usize) -> DMatrix<f64> {
        DMatrix::from_element(self.base.dimension() + 1, cols, f64::NAN)
    }
}

impl LocalFields for LiftedFields {
    fn metric(&self, p: &Point) -> DMatrix<f64> {
        self.local(p).map(|(g, _)| g).unwrap_or_else(|_| self.nan(self.base.dimension() + 1))
    }

    fn frame(&self, p: &Point) -> DMatrix<f64> {
        self.local(p).map(|(_, f)| f).unwrap_or_else(|_| self.nan(self.base.rank() + 1))
    }

    fn local(&self, p: &Point) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.base.dimension();
        let k = self.base.rank();
        let (base_point, s) = self.split(p);
        let (image, phi) = self.flow.eval(s, &base_point)?;
        let (g, f) = self.base.fields().local(&image)?;
        let pulled = phi.clone().lu().solve(&f).ok_or_else(|| Error::SingularJacobian {
            t: s,
            point: base_point.as_slice().to_vec(),
        })?;
        let mut metric = DMatrix::zeros(n + 1, n + 1);
        metric.view_mut((0, 0), (n, n)).copy_from(&(phi.transpose() * g * &phi));
        metric[(n, n)] = 1.0;
        let mut frame = DMatrix::zeros(n + 1, k + 1);
        frame.view_mut((0, 0), (n, k)).copy_from(&pulled);
        frame[(n, k)] = 1.0;
        Ok((metric, frame))
    }
}

/// The `(n + 1)`-dimensional structure on `M × ℝ` whose horizontal
/// geodesics pinned to `s(t) = t` are the optimal trajectories of the drift
/// system pulled back by the flow.
pub fn build_lifted_structure(s: &SubRiemannianStructure, flow: &FlowMap) -> Result<SubRiemannianStructure> {
    if flow.dimension() != s.dimension() {
        return Err(Error::DimensionMismatch {
            what: "drift",
            expected: s.dimension(),
            found: flow.dimension(),
        });
    }
    let fields = LiftedFields {
        base: s.clone(),
        flow: flow.clone(),
    };
    SubRiemannianStructure::from_fields(
        format!("{}-lifted", s.name()),
        s.dimension() + 1,
        s.rank() + 1,
        Arc::new(fields),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftOptions {
    pub steps_per_unit: usize,
    /// Largest accepted `|γ(1) − y|∞` of the recovered trajectory.
    pub terminal_tolerance: f64,
    /// Also solve the lifted problem with `s` free and report how far the
    /// minimiser strays from `s(t) = t`.
    pub free_s: bool,
}

impl Default for DriftOptions {
    fn default() -> Self {
        Self {
            steps_per_unit: DEFAULT_FLOW_STEPS,
            terminal_tolerance: 1e-8,
            free_s: false,
        }
    }
}

/// Control recovered from one lifted minimiser.
#[derive(Debug, Clone)]
pub struct RecoveredControl {
    pub q: PenaltyParameter,
    /// `γ(tᵢ) = φ(tᵢ, ζ(tᵢ))`.
    pub trajectory: DiscretePath,
    /// `Y(tᵢ) = γ̇(tᵢ) − X(tᵢ, γ(tᵢ))` with `γ̇` from finite differences.
    pub controls: Vec<Tangent>,
    /// `(1/N) Σ g_q(Y, Y)` with `Y = Φ ζ̇` at the segment midpoints.
    pub cost: f64,
    /// Same with the unpenalised metric.
    pub cost_unpenalized: f64,
    /// `(1/N) Σ g(P⊥Y, P⊥Y)`.
    pub control_defect: f64,
    /// `|cost − (2·lifted energy − 1)| / max(1, |cost|)`.
    pub identity_residual: f64,
    /// `|γ(1) − y|∞`.
    pub terminal_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeSExperiment {
    pub q: f64,
    pub energy: f64,
    pub converged: bool,
    /// `maxᵢ |s(tᵢ) − tᵢ|` of the free-`s` minimiser.
    pub max_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct DriftSolveResult {
    pub lifted: SubRiemannianStructure,
    /// `φ₁⁻¹(y)`, the lifted terminal point in `M`.
    pub lifted_target: Point,
    pub results: Vec<SolveResult>,
    pub recovered: Vec<RecoveredControl>,
    pub free_s: Option<FreeSExperiment>,
}

impl DriftSolveResult {
    pub fn final_control(&self) -> &RecoveredControl {
        self.recovered.last().expect("at least one penalty step")
    }
}

fn lift_point(p: &Point, s: f64) -> Point {
    Point::from_iterator(p.len() + 1, p.iter().copied().chain(std::iter::once(s)))
}

fn recover(
    base: &SubRiemannianStructure,
    flow: &FlowMap,
    result: &SolveResult,
    target: &Point,
) -> Result<RecoveredControl> {
    let n = base.dimension();
    let path = &result.path;
    let big_n = path.grid_size();
    let q = result.q;
    let mut nodes = Vec::with_capacity(big_n + 1);
    for (i, z) in path.points().iter().enumerate() {
        let t = path.time(i);
        nodes.push(flow.point(t, &z.rows(0, n).into_owned())?);
    }
    let trajectory = DiscretePath::new(nodes)?;
    let pts = trajectory.points();
    let nf = big_n as f64;
    let controls = (0..=big_n)
        .map(|i| {
            let velocity = if i == 0 {
                (&pts[1] * 4.0 - &pts[0] * 3.0 - &pts[2]) * (0.5 * nf)
            } else if i == big_n {
                (&pts[i] * 3.0 - &pts[i - 1] * 4.0 + &pts[i - 2]) * (0.5 * nf)
            } else {
                (&pts[i + 1] - &pts[i - 1]) * (0.5 * nf)
            };
            velocity - flow.drift().eval(trajectory.time(i), &pts[i])
        })
        .collect::<Vec<_>>();

    let (mut cost, mut cost_unpenalized, mut control_defect) = (0.0, 0.0, 0.0);
    for i in 0..big_n {
        let (a, b) = (&path.points()[i], &path.points()[i + 1]);
        let mid = (a + b) * 0.5;
        let (image, phi) = flow.eval(mid[n], &mid.rows(0, n).into_owned())?;
        let y = phi * (b.rows(0, n) - a.rows(0, n)) * nf;
        let (h, v) = base.local_geometry(&image)?.split_norms(&y);
        cost += h + q.value() * v;
        cost_unpenalized += h + v;
        control_defect += v;
    }
    cost /= nf;
    cost_unpenalized /= nf;
    control_defect /= nf;
    let identity_residual = (cost - (2.0 * result.energy - 1.0)).abs() / cost.abs().max(1.0);
    let terminal_mismatch = (trajectory.end() - target).amax();
    Ok(RecoveredControl {
        q,
        trajectory,
        controls,
        cost,
        cost_unpenalized,
        control_defect,
        identity_residual,
        terminal_mismatch,
    })
}

/// Optimal control from `x` to `y` for `γ̇ = X(t, γ) + Y`, `Y ∈ D`,
/// minimising `∫ g(Y, Y) dt` via penalised geodesics of the lifted
/// structure between `(x, 0)` and `(φ₁⁻¹(y), 1)`.
pub fn solve_drift_problem(
    s: &SubRiemannianStructure,
    drift: Arc<dyn DriftField>,
    x: &Point,
    y: &Point,
    schedule: &ContinuationSchedule,
    config: &SolverConfig,
    options: &DriftOptions,
) -> Result<DriftSolveResult> {
    s.check_point(x)?;
    s.check_point(y)?;
    let n = s.dimension();
    let flow = FlowMap::new(drift, options.steps_per_unit)?;
    let lifted = build_lifted_structure(s, &flow)?;
    let lifted_target = flow.invert(1.0, y)?;
    let start = lift_point(x, 0.0);
    let end = lift_point(&lifted_target, 1.0);

    let mut pinned_config = config.clone();
    if !pinned_config.pinned_coordinates.contains(&n) {
        pinned_config.pinned_coordinates.push(n);
    }
    let results = continuation_solve(&lifted, &start, &end, schedule, &pinned_config)?;
    let recovered = results
        .iter()
        .map(|r| recover(s, &flow, r, y))
        .collect::<Result<Vec<_>>>()?;
    if let Some(last) = recovered.last() {
        if last.terminal_mismatch > options.terminal_tolerance {
            return Err(Error::TerminalMismatch {
                distance: last.terminal_mismatch,
                tolerance: options.terminal_tolerance,
            });
        }
    }

    let free_s = if options.free_s {
        let mut free_config = config.clone();
        free_config.pinned_coordinates.retain(|&k| k != n);
        let runs = continuation_solve(&lifted, &start, &end, schedule, &free_config)?;
        runs.last().map(|r| FreeSExperiment {
            q: r.q.value(),
            energy: r.energy,
            converged: r.converged,
            max_deviation: r
                .path
                .points()
                .iter()
                .enumerate()
                .map(|(i, z)| (z[n] - r.path.time(i)).abs())
                .fold(0.0, f64::max),
        })
    } else {
        None
    };

    Ok(DriftSolveResult {
        lifted,
        lifted_target,
        results,
        recovered,
        free_s,
    })
}
