//! Direct minimisation of the discrete penalised energy over the interior
//! path points, and warm-started continuation in the penalty `q`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{DiscretePath, SegmentTerms};
use crate::geometry::{PenaltyParameter, Point, SubRiemannianStructure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of path segments `N`.
    pub grid_size: usize,
    pub max_iterations: usize,
    /// Convergence when `‖∇E‖∞ ≤ gradient_tolerance · (1 + E)`.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    pub backtracking_ratio: f64,
    pub sufficient_decrease: f64,
    /// Number of stored curvature pairs; `0` gives preconditioned descent.
    pub memory: usize,
    pub preconditioner: Preconditioner,
    /// Iterations between Hessian rebuilds of the `Newton` model; curvature
    /// pairs collected since the last rebuild correct it in between.
    pub hessian_refresh: usize,
    /// Amplitude of the sinusoidal restart used when a solve starts at a
    /// stationary point; `0` disables restarts.
    pub perturbation: f64,
    /// Coordinates whose interior values stay at their initial values.
    pub pinned_coordinates: Vec<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_size: 200,
            max_iterations: 20_000,
            gradient_tolerance: 1e-8,
            initial_step: 1.0,
            backtracking_ratio: 0.5,
            sufficient_decrease: 1e-4,
            memory: 12,
            preconditioner: Preconditioner::Newton,
            hessian_refresh: 10,
            perturbation: 0.05,
            pinned_coordinates: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.grid_size < 2 {
            return bad(format!("grid_size must be >= 2, got {}", self.grid_size));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.gradient_tolerance > 0.0) || !(self.initial_step > 0.0) {
            return bad("gradient_tolerance and initial_step must be positive".into());
        }
        if !(self.backtracking_ratio > 0.0 && self.backtracking_ratio < 1.0) {
            return bad(format!("backtracking_ratio must lie in (0,1), got {}", self.backtracking_ratio));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease <= 0.5) {
            return bad(format!("sufficient_decrease must lie in (0,0.5], got {}", self.sufficient_decrease));
        }
        if !(self.perturbation >= 0.0) {
            return bad("perturbation must be non-negative".into());
        }
        if self.hessian_refresh == 0 {
            return bad("hessian_refresh must be positive".into());
        }
        Ok(())
    }
}

/// Model of the inverse Hessian used to scale descent directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    Identity,
    /// Inverse of the Euclidean discrete H¹ Laplacian `N·tridiag(−1, 2, −1)`.
    Sobolev,
    /// Inverse of the block-tridiagonal H¹ operator weighted by the local
    /// `g_q` Gram matrices at the segment midpoints.
    Metric,
    /// Inverse of the block-tridiagonal Hessian (finite differences of the
    /// gradient), shifted towards `Metric` until positive definite.
    Newton,
}

/// Geometric schedule `q_j = q_start · ratio^j`, `j = 0..steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub q_start: f64,
    pub ratio: f64,
    pub steps: usize,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self {
            q_start: 1.0,
            ratio: 10.0,
            steps: 5,
        }
    }
}

impl ContinuationSchedule {
    pub fn new(q_start: f64, ratio: f64, steps: usize) -> Result<Self> {
        let s = Self { q_start, ratio, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_start >= 1.0) || !self.q_start.is_finite() {
            return Err(Error::InvalidParameter(format!("q_start must be >= 1, got {}", self.q_start)));
        }
        if !(self.ratio > 1.0) || !self.ratio.is_finite() {
            return Err(Error::InvalidParameter(format!("ratio must be > 1, got {}", self.ratio)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        let last = self.q_start * self.ratio.powi(self.steps as i32 - 1);
        if !last.is_finite() {
            return Err(Error::InvalidParameter("final q overflows".into()));
        }
        Ok(())
    }

    pub fn penalties(&self) -> Vec<PenaltyParameter> {
        (0..self.steps)
            .map(|j| PenaltyParameter::new(self.q_start * self.ratio.powi(j as i32)).expect("validated schedule"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the (reset) descent direction decreased the energy.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub q: PenaltyParameter,
    pub path: DiscretePath,
    pub energy: f64,
    pub length: f64,
    pub defect: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Coefficient of variation of the discrete `g_q`-speed.
    pub speed_cv: f64,
    pub termination: Termination,
    /// Energy at the start of every iteration plus the final energy.
    pub energy_history: Vec<f64>,
}

/// Relative rounding resolution of a computed discrete energy.
pub const ENERGY_RESOLUTION: f64 = 64.0 * f64::EPSILON;

fn midpoint_step(m: &Point) -> f64 {
    1e-6 * (1.0 + m.amax())
}

struct Evaluation {
    energy: f64,
    gradient: DVector<f64>,
    /// `g_q` Gram matrix at each segment midpoint, when requested.
    blocks: Vec<DMatrix<f64>>,
}

/// Energy and its gradient with respect to the interior points. Pinned
/// coordinates get zero gradient and no finite-difference work.
fn evaluate(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    path: &DiscretePath,
    pinned: &[usize],
    with_blocks: bool,
) -> Result<Evaluation> {
    let n = path.dimension();
    if n != s.dimension() {
        return Err(Error::DimensionMismatch {
            what: "path",
            expected: s.dimension(),
            found: n,
        });
    }
    let big_n = path.grid_size();
    let weight = 1.0 / (2.0 * big_n as f64);
    let free: Vec<usize> = (0..n).filter(|k| !pinned.contains(k)).collect();
    let mut grad = DVector::zeros((big_n - 1) * n);
    let mut blocks = Vec::with_capacity(if with_blocks { big_n } else { 0 });
    let mut total = 0.0;
    for i in 0..big_n {
        let (mid, vel) = path.segment(i);
        let geo = s.local_geometry(&mid)?;
        let (h, v) = geo.split_norms(&vel);
        total += h + q.value() * v;
        if with_blocks {
            blocks.push(geo.penalized_matrix(q));
        }

        // d(weight·g_q(v,v))/dv · dv/dp, with dv/dp_{i+1} = N = −dv/dp_i
        let dv = geo.penalized_velocity_gradient(q, &vel) * (weight * big_n as f64);
        let mut dm = DVector::zeros(n);
        let step = midpoint_step(&mid);
        for &k in &free {
            let mut plus = mid.clone();
            let mut minus = mid.clone();
            plus[k] += step;
            minus[k] -= step;
            let (gp, fp) = s.fields().local(&plus)?;
            let (gm, fm) = s.fields().local(&minus)?;
            let dgram = (gp - gm) / (2.0 * step);
            let dframe = (fp - fm) / (2.0 * step);
            // midpoint moves by half of either endpoint displacement
            dm[k] = 0.5 * weight * geo.penalized_point_derivative(q, &vel, &dgram, &dframe);
        }
        if i >= 1 {
            let off = (i - 1) * n;
            for &k in &free {
                grad[off + k] += dm[k] - dv[k];
            }
        }
        if i + 1 < big_n {
            let off = i * n;
            for &k in &free {
                grad[off + k] += dm[k] + dv[k];
            }
        }
    }
    Ok(Evaluation {
        energy: weight * total,
        gradient: grad,
        blocks,
    })
}

/// Gradient of [`crate::functionals::energy`] with respect to the interior
/// points, flattened point-major (length `(N − 1)·n`).
pub fn energy_gradient(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    path: &DiscretePath,
) -> Result<DVector<f64>> {
    Ok(evaluate(s, q, path, &[], false)?.gradient)
}

/// Inverse of `N · tridiag(−1, 2, −1)` applied coordinate-wise, the
/// Hessian of the Euclidean discrete energy.
fn sobolev_solve(g: &DVector<f64>, n: usize, big_n: usize) -> DVector<f64> {
    let m = big_n - 1;
    let scale = big_n as f64;
    let mut out = DVector::zeros(g.len());
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for k in 0..n {
        // Thomas algorithm, diagonal 2, off-diagonals −1
        c[0] = -0.5;
        d[0] = g[k] / 2.0;
        for i in 1..m {
            let denom = 2.0 + c[i - 1];
            c[i] = -1.0 / denom;
            d[i] = (g[i * n + k] + d[i - 1]) / denom;
        }
        out[(m - 1) * n + k] = d[m - 1];
        for i in (0..m - 1).rev() {
            out[i * n + k] = d[i] - c[i] * out[(i + 1) * n + k];
        }
    }
    out / scale
}

/// Factorised symmetric block-tridiagonal operator on the interior points,
/// with pinned coordinates decoupled.
struct BlockTridiagonal {
    /// Cholesky factors of the forward-sweep Schur complements `S_j`.
    pivots: Vec<Cholesky<f64, Dyn>>,
    /// `S_j⁻¹ C_j`.
    upper: Vec<DMatrix<f64>>,
    /// `C_j`, the block coupling interior points `j` and `j+1`.
    couplings: Vec<DMatrix<f64>>,
    n: usize,
}

fn mask_pinned(m: &DMatrix<f64>, pinned: &[usize], diag: f64) -> DMatrix<f64> {
    let mut m = m.clone();
    for &k in pinned {
        m.row_mut(k).fill(0.0);
        m.column_mut(k).fill(0.0);
        m[(k, k)] = diag;
    }
    m
}

impl BlockTridiagonal {
    fn factor(diagonal: Vec<DMatrix<f64>>, couplings: Vec<DMatrix<f64>>, n: usize, pinned: &[usize]) -> Option<Self> {
        let m = diagonal.len();
        let couplings: Vec<DMatrix<f64>> = couplings.iter().map(|c| mask_pinned(c, pinned, 0.0)).collect();
        let mut pivots: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(m);
        let mut upper: Vec<DMatrix<f64>> = Vec::with_capacity(m);
        for (j, diag) in diagonal.iter().enumerate() {
            let mut schur = mask_pinned(diag, pinned, 1.0);
            if j > 0 {
                schur -= couplings[j - 1].transpose() * &upper[j - 1];
            }
            let chol = Cholesky::new((&schur + schur.transpose()) * 0.5)?;
            if j + 1 < m {
                upper.push(chol.solve(&couplings[j]));
            }
            pivots.push(chol);
        }
        Some(Self {
            pivots,
            upper,
            couplings,
            n,
        })
    }

    /// `Σᵢ N (eᵢ₊₁ − eᵢ)ᵀ Mᵢ (eᵢ₊₁ − eᵢ)` from the per-segment `g_q` matrices.
    fn metric_parts(blocks: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let scale = blocks.len() as f64;
        let m = blocks.len() - 1;
        // interior point j+1 sits between segments j and j+1
        let diagonal = (0..m).map(|j| (&blocks[j] + &blocks[j + 1]) * scale).collect();
        let couplings = (0..m.saturating_sub(1)).map(|j| &blocks[j + 1] * -scale).collect();
        (diagonal, couplings)
    }

    fn metric(blocks: &[DMatrix<f64>], n: usize, pinned: &[usize]) -> Option<Self> {
        let (diagonal, couplings) = Self::metric_parts(blocks);
        Self::factor(diagonal, couplings, n, pinned)
    }

    /// Factors `H + τ·M` for the smallest `τ` in a geometric ladder that
    /// makes it positive definite, `M` being the metric operator. Near flat
    /// directions of the energy the finite-difference Hessian `H` may be
    /// slightly indefinite.
    fn shifted_hessian(
        hessian: (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>),
        blocks: &[DMatrix<f64>],
        n: usize,
        pinned: &[usize],
    ) -> Option<Self> {
        let (hd, hc) = hessian;
        let (md, mc) = Self::metric_parts(blocks);
        for tau in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
            let diagonal = hd.iter().zip(&md).map(|(h, m)| h + m * tau).collect();
            let couplings = hc.iter().zip(&mc).map(|(h, m)| h + m * tau).collect();
            if let Some(op) = Self::factor(diagonal, couplings, n, pinned) {
                return Some(op);
            }
        }
        None
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let m = self.pivots.len();
        let mut d: Vec<DVector<f64>> = Vec::with_capacity(m);
        for j in 0..m {
            let mut r = rhs.rows(j * n, n).into_owned();
            if j > 0 {
                r -= self.couplings[j - 1].transpose() * &d[j - 1];
            }
            d.push(self.pivots[j].solve(&r));
        }
        let mut out = DVector::zeros(rhs.len());
        for j in (0..m).rev() {
            let mut x = d[j].clone();
            if j + 1 < m {
                x -= &self.upper[j] * out.rows((j + 1) * n, n);
            }
            out.rows_mut(j * n, n).copy_from(&x);
        }
        out
    }
}

/// Block-tridiagonal Hessian of the discrete energy by central differences
/// of the gradient. Interior points are perturbed three colours at a time;
/// each point's neighbours then carry distinct colours.
fn fd_hessian(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    path: &DiscretePath,
    pinned: &[usize],
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let n = path.dimension();
    let m = path.grid_size() - 1;
    let x = path.interior();
    let step = 1e-5 * (1.0 + x.amax());
    let mut diagonal = vec![DMatrix::zeros(n, n); m];
    let mut lower = vec![DMatrix::zeros(n, n); m.saturating_sub(1)];
    let mut upper = vec![DMatrix::zeros(n, n); m.saturating_sub(1)];
    for colour in 0..3 {
        for k in (0..n).filter(|k| !pinned.contains(k)) {
            let mut plus = x.clone();
            let mut minus = x.clone();
            for j in (colour..m).step_by(3) {
                plus[j * n + k] += step;
                minus[j * n + k] -= step;
            }
            let gp = evaluate(s, q, &path.with_interior(&plus)?, pinned, false)?.gradient;
            let gm = evaluate(s, q, &path.with_interior(&minus)?, pinned, false)?.gradient;
            let col = (gp - gm) / (2.0 * step);
            for j in (colour..m).step_by(3) {
                for r in 0..n {
                    diagonal[j][(r, k)] = col[j * n + r];
                    if j + 1 < m {
                        // ∂g_{j+1}/∂x_j
                        lower[j][(r, k)] = col[(j + 1) * n + r];
                    }
                    if j > 0 {
                        // ∂g_{j-1}/∂x_j
                        upper[j - 1][(r, k)] = col[(j - 1) * n + r];
                    }
                }
            }
        }
    }
    let couplings = upper
        .iter()
        .zip(&lower)
        .map(|(u, l)| (u + l.transpose()) * 0.5)
        .collect();
    let diagonal = diagonal.into_iter().map(|d| (&d + d.transpose()) * 0.5).collect();
    Ok((diagonal, couplings))
}

struct Lbfgs {
    pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    memory: usize,
    kind: Preconditioner,
    operator: Option<BlockTridiagonal>,
    n: usize,
    big_n: usize,
}

impl Lbfgs {
    fn precondition(&self, v: &DVector<f64>) -> DVector<f64> {
        match (self.kind, &self.operator) {
            (Preconditioner::Identity, _) => v.clone(),
            (Preconditioner::Sobolev, _) | (_, None) => sobolev_solve(v, self.n, self.big_n),
            (_, Some(op)) => op.solve(v),
        }
    }

    fn direction(&self, grad: &DVector<f64>) -> DVector<f64> {
        let mut r = grad.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&r);
            r -= y * a;
            alphas.push(a);
        }
        let mut z = self.precondition(&r);
        if matches!(self.kind, Preconditioner::Identity | Preconditioner::Sobolev) {
            if let Some((s, y, _)) = self.pairs.back() {
                let hy = self.precondition(y);
                let yhy = y.dot(&hy);
                if yhy > 0.0 {
                    z *= s.dot(y) / yhy;
                }
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&z);
            z += s * (a - b);
        }
        -z
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        if self.memory == 0 {
            return;
        }
        let sy = s.dot(&y);
        if sy <= 1e-14 * s.norm() * y.norm() || sy <= 0.0 {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }
}

/// Minimises the discrete `J_q` from `initial` with backtracking line search
/// on limited-memory quasi-Newton directions.
pub fn minimize_energy(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    initial: &DiscretePath,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let n = initial.dimension();
    let big_n = initial.grid_size();
    let pinned = &config.pinned_coordinates;
    if let Some(&k) = pinned.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidParameter(format!("pinned coordinate {k} out of range for dimension {n}")));
    }
    let with_blocks = matches!(config.preconditioner, Preconditioner::Metric | Preconditioner::Newton);
    let build_operator = |path: &DiscretePath, eval: &Evaluation| -> Result<Option<BlockTridiagonal>> {
        Ok(match config.preconditioner {
            Preconditioner::Metric => BlockTridiagonal::metric(&eval.blocks, n, pinned),
            Preconditioner::Newton => {
                let hessian = fd_hessian(s, q, path, pinned)?;
                BlockTridiagonal::shifted_hessian(hessian, &eval.blocks, n, pinned)
                    .or_else(|| BlockTridiagonal::metric(&eval.blocks, n, pinned))
            }
            _ => None,
        })
    };
    let eval_energy = |x: &DVector<f64>| -> Option<f64> {
        let path = initial.with_interior(x).ok()?;
        let e = SegmentTerms::evaluate(s, &path).ok()?.energy(q);
        e.is_finite().then_some(e)
    };

    let mut x = initial.interior();
    let first = evaluate(s, q, initial, pinned, with_blocks)?;
    let operator = if first.gradient.amax() <= config.gradient_tolerance * (1.0 + first.energy.abs()) {
        None
    } else {
        build_operator(initial, &first)?
    };
    let (mut energy, mut grad) = (first.energy, first.gradient);
    let mut lbfgs = Lbfgs {
        pairs: VecDeque::new(),
        memory: config.memory,
        kind: config.preconditioner,
        operator,
        n,
        big_n,
    };
    let mut history = vec![energy];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let threshold = |e: f64| config.gradient_tolerance * (1.0 + e.abs());

    while iterations < config.max_iterations {
        if grad.amax() <= threshold(energy) {
            termination = Termination::Converged;
            break;
        }
        let mut direction = lbfgs.direction(&grad);
        let mut slope = grad.dot(&direction);
        if !(slope < 0.0) {
            lbfgs.pairs.clear();
            direction = lbfgs.direction(&grad);
            slope = grad.dot(&direction);
        }
        let mut accepted: Option<(DVector<f64>, Evaluation)> = None;
        loop {
            let mut step = config.initial_step;
            while step > 1e-20 {
                let trial = &x + &direction * step;
                if let Some(e) = eval_energy(&trial) {
                    if e <= energy + config.sufficient_decrease * step * slope {
                        let eval = evaluate(s, q, &initial.with_interior(&trial)?, pinned, with_blocks)?;
                        accepted = Some((trial, eval));
                        break;
                    }
                    // predicted change comparable to the rounding resolution of
                    // the energy sum: Armijo is undecidable, so fall back on the
                    // directional derivative at the trial point
                    let resolution = ENERGY_RESOLUTION * energy.abs();
                    if e <= energy + resolution && (step * slope).abs() <= 1e3 * resolution {
                        let eval = evaluate(s, q, &initial.with_interior(&trial)?, pinned, with_blocks)?;
                        if eval.gradient.dot(&direction).abs() <= 0.9 * slope.abs() {
                            accepted = Some((trial, eval));
                            break;
                        }
                    }
                }
                step *= config.backtracking_ratio;
            }
            if accepted.is_some() || lbfgs.pairs.is_empty() {
                break;
            }
            lbfgs.pairs.clear();
            direction = lbfgs.direction(&grad);
            slope = grad.dot(&direction);
        }
        let Some((next, eval)) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        lbfgs.push(&next - &x, &eval.gradient - &grad);
        let refresh = match config.preconditioner {
            Preconditioner::Metric => true,
            Preconditioner::Newton => (iterations + 1) % config.hessian_refresh == 0,
            _ => false,
        };
        if refresh {
            if let Some(op) = build_operator(&initial.with_interior(&next)?, &eval)? {
                lbfgs.operator = Some(op);
                if config.preconditioner == Preconditioner::Newton {
                    lbfgs.pairs.clear();
                }
            }
        }
        x = next;
        energy = eval.energy;
        grad = eval.gradient;
        iterations += 1;
        history.push(energy);
    }
    if termination == Termination::MaxIterations && grad.amax() <= threshold(energy) {
        termination = Termination::Converged;
    }

    let path = initial.with_interior(&x)?;
    let terms = SegmentTerms::evaluate(s, &path)?;
    let gradient_norm = grad.amax();
    Ok(SolveResult {
        q,
        energy: terms.energy(q),
        length: terms.length(q),
        defect: terms.defect(),
        speed_cv: terms.speed_cv(q),
        iterations,
        converged: gradient_norm <= threshold(energy),
        gradient_norm,
        termination,
        energy_history: history,
        path,
    })
}

/// Whether the finite-difference Hessian at `path` is positive definite, so
/// that a stationary `path` is a strict local minimiser.
fn is_local_minimum(s: &SubRiemannianStructure, q: PenaltyParameter, path: &DiscretePath, config: &SolverConfig) -> Result<bool> {
    let pinned = &config.pinned_coordinates;
    let (diagonal, couplings) = fd_hessian(s, q, path, pinned)?;
    Ok(BlockTridiagonal::factor(diagonal, couplings, path.dimension(), pinned).is_some())
}

/// Adds `a·sin(πt)` and `a·sin(2πt)` to the first two free coordinates.
pub fn perturb_path(path: &DiscretePath, amplitude: f64, pinned: &[usize]) -> Result<DiscretePath> {
    let free: Vec<usize> = (0..path.dimension()).filter(|k| !pinned.contains(k)).take(2).collect();
    let big_n = path.grid_size();
    let mut x = path.interior();
    let n = path.dimension();
    for i in 1..big_n {
        let t = path.time(i);
        for (j, &k) in free.iter().enumerate() {
            x[(i - 1) * n + k] += amplitude * (PI * (j + 1) as f64 * t).sin();
        }
    }
    path.with_interior(&x)
}

/// Warm-started continuation from the straight chord.
pub fn continuation_solve(
    s: &SubRiemannianStructure,
    start: &Point,
    end: &Point,
    schedule: &ContinuationSchedule,
    config: &SolverConfig,
) -> Result<Vec<SolveResult>> {
    config.validate()?;
    let chord = DiscretePath::chord(start, end, config.grid_size)?;
    continuation_solve_from(s, &chord, schedule, config)
}

/// Continuation from an explicit initial path. A step whose start is already
/// stationary is retried from a perturbed copy; the lower energy wins.
pub fn continuation_solve_from(
    s: &SubRiemannianStructure,
    initial: &DiscretePath,
    schedule: &ContinuationSchedule,
    config: &SolverConfig,
) -> Result<Vec<SolveResult>> {
    schedule.validate()?;
    config.validate()?;
    let mut current = initial.clone();
    let mut results: Vec<SolveResult> = Vec::with_capacity(schedule.steps);
    for q in schedule.penalties() {
        let mut result = minimize_energy(s, q, &current, config)?;
        if result.iterations == 0 && config.perturbation > 0.0 && !is_local_minimum(s, q, &current, config)? {
            let perturbed = perturb_path(&current, config.perturbation, &config.pinned_coordinates)?;
            match minimize_energy(s, q, &perturbed, config) {
                Ok(alt) if alt.energy < result.energy - 1e-12 * (1.0 + result.energy.abs()) => {
                    log::info!("q = {q}: perturbed restart lowered energy {} -> {}", result.energy, alt.energy);
                    result = alt;
                }
                Ok(_) => {}
                Err(e) => log::warn!("q = {q}: perturbed restart failed: {e}"),
            }
        }
        if !result.converged {
            log::warn!(
                "q = {q}: not converged after {} iterations (gradient {:.3e}, {:?})",
                result.iterations,
                result.gradient_norm,
                result.termination
            );
        }
        current = result.path.clone();
        results.push(result);
    }
    Ok(results)
}

/// Resamples the polyline by `g_q`-arclength onto the uniform grid.
pub fn constant_speed_reparametrize(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    path: &DiscretePath,
) -> Result<DiscretePath> {
    let terms = SegmentTerms::evaluate(s, path)?;
    let big_n = path.grid_size();
    let seg: Vec<f64> = terms
        .horizontal
        .iter()
        .zip(&terms.vertical)
        .map(|(h, v)| (h + q.value() * v).sqrt() / big_n as f64)
        .collect();
    let total: f64 = seg.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroLength);
    }
    let pts = path.points();
    let mut out = Vec::with_capacity(big_n + 1);
    out.push(path.start().clone());
    let mut j = 0;
    let mut before = 0.0;
    for i in 1..big_n {
        let target = total * i as f64 / big_n as f64;
        while j + 1 < big_n && before + seg[j] < target {
            before += seg[j];
            j += 1;
        }
        let frac = if seg[j] > 0.0 { ((target - before) / seg[j]).clamp(0.0, 1.0) } else { 0.0 };
        out.push(&pts[j] + (&pts[j + 1] - &pts[j]) * frac);
    }
    out.push(path.end().clone());
    DiscretePath::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{energy, length};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn q(v: f64) -> PenaltyParameter {
        PenaltyParameter::new(v).unwrap()
    }

    fn fd_gradient(s: &SubRiemannianStructure, qq: PenaltyParameter, path: &DiscretePath) -> DVector<f64> {
        let x = path.interior();
        let h = 1e-6;
        DVector::from_iterator(
            x.len(),
            (0..x.len()).map(|j| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[j] += h;
                m[j] -= h;
                let ep = energy(s, qq, &path.with_interior(&p).unwrap()).unwrap();
                let em = energy(s, qq, &path.with_interior(&m).unwrap()).unwrap();
                (ep - em) / (2.0 * h)
            }),
        )
    }

    #[test]
    fn euclidean_line_has_zero_gradient() {
        let s = SubRiemannianStructure::euclidean(3);
        let line = DiscretePath::chord(&dvector![0.0, 1.0, 2.0], &dvector![1.0, -1.0, 0.5], 20).unwrap();
        assert!(energy_gradient(&s, q(7.0), &line).unwrap().amax() <= 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = SubRiemannianStructure::heisenberg();
        let path = DiscretePath::from_fn(12, |t| dvector![t + 0.2 * (5.0 * t).sin(), (3.0 * t).cos() - 1.0 + t, 0.4 * t * t]).unwrap();
        for qq in [1.0, 30.0] {
            let g = energy_gradient(&s, q(qq), &path).unwrap();
            let fd = fd_gradient(&s, q(qq), &path);
            assert!((&g - &fd).amax() <= 1e-5 * fd.amax(), "{} vs {}", (&g - &fd).amax(), fd.amax());
        }
    }

    #[test]
    fn gradient_is_affine_in_q() {
        let s = SubRiemannianStructure::heisenberg();
        let mut path = DiscretePath::chord(&dvector![0.0, 0.0, 0.0], &dvector![0.0, 0.0, 1.0], 8).unwrap();
        let mut x = path.interior();
        x[3 * 3] += 0.1;
        x[3 * 3 + 1] -= 0.05;
        path = path.with_interior(&x).unwrap();
        let g: Vec<_> = [1.0, 2.0, 4.0].iter().map(|&v| energy_gradient(&s, q(v), &path).unwrap()).collect();
        let slope = &g[1] - &g[0];
        let predicted = &g[0] + &slope * 3.0;
        assert!((&predicted - &g[2]).amax() <= 1e-9 * (1.0 + g[2].amax()));
    }

    #[test]
    fn euclidean_zigzag_straightens() {
        let s = SubRiemannianStructure::euclidean(3);
        let n = 20;
        let zig = DiscretePath::from_fn(n, |t| {
            let bump = if (t * n as f64).round() as usize % 2 == 1 { 0.3 } else { 0.0 };
            dvector![t + bump, t - bump, t]
        })
        .unwrap();
        let fixed = DiscretePath::new({
            let mut p = zig.points().to_vec();
            p[n] = dvector![1.0, 1.0, 1.0];
            p
        })
        .unwrap();
        let config = SolverConfig { grid_size: n, ..Default::default() };
        let r = minimize_energy(&s, q(1.0), &fixed, &config).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.energy, 1.5, epsilon = 1e-8);
        assert!(r.energy <= energy(&s, q(1.0), &fixed).unwrap());
        assert!(r.energy_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.path.start(), fixed.start());
        assert_eq!(r.path.end(), fixed.end());
    }

    #[test]
    fn heisenberg_q1_returns_chord_energy() {
        let s = SubRiemannianStructure::heisenberg();
        let init = DiscretePath::from_fn(40, |t| {
            let b = (PI * t).sin();
            dvector![t, 0.1 * b, -0.07 * b]
        })
        .unwrap();
        let config = SolverConfig { grid_size: 40, ..Default::default() };
        let r = minimize_energy(&s, q(1.0), &init, &config).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.energy, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn pinned_coordinates_do_not_move() {
        let s = SubRiemannianStructure::euclidean(2);
        let init = DiscretePath::from_fn(10, |t| dvector![t * t, (PI * t).sin()]).unwrap();
        let config = SolverConfig { grid_size: 10, pinned_coordinates: vec![1], ..Default::default() };
        let r = minimize_energy(&s, q(1.0), &init, &config).unwrap();
        for (a, b) in r.path.points().iter().zip(init.points()) {
            assert_eq!(a[1], b[1]);
        }
        assert!(r.converged);
        // free coordinate straightens to t
        assert!(r.path.points().iter().enumerate().all(|(i, p)| (p[0] - i as f64 / 10.0).abs() < 1e-8));
    }

    #[test]
    fn schedule_and_config_validation() {
        assert!(ContinuationSchedule::new(0.5, 10.0, 3).is_err());
        assert!(ContinuationSchedule::new(1.0, 1.0, 3).is_err());
        assert!(ContinuationSchedule::new(1.0, 10.0, 0).is_err());
        let qs: Vec<f64> = ContinuationSchedule::default().penalties().iter().map(|q| q.value()).collect();
        assert_eq!(qs, vec![1.0, 10.0, 100.0, 1000.0, 10000.0]);
        let bad = SolverConfig { backtracking_ratio: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { sufficient_decrease: 0.7, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reparametrize_examples() {
        let e1 = SubRiemannianStructure::euclidean(1);
        let p = DiscretePath::new(vec![dvector![0.0], dvector![0.9], dvector![1.0]]).unwrap();
        let r = constant_speed_reparametrize(&e1, q(1.0), &p).unwrap();
        assert_relative_eq!(r.points()[1][0], 0.5, epsilon = 1e-15);
        assert_eq!(r.points()[2][0], 1.0);

        let s = SubRiemannianStructure::heisenberg();
        let line = DiscretePath::chord(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], 17).unwrap();
        let r = constant_speed_reparametrize(&s, q(3.0), &line).unwrap();
        for (a, b) in r.points().iter().zip(line.points()) {
            assert!((a - b).amax() <= 1e-12);
        }

        let still = DiscretePath::new(vec![dvector![1.0]; 4]).unwrap();
        assert_eq!(constant_speed_reparametrize(&e1, q(1.0), &still), Err(Error::ZeroLength));
    }

    #[test]
    fn reparametrize_preserves_length_of_smooth_curve() {
        let s = SubRiemannianStructure::heisenberg();
        let path = DiscretePath::from_fn(400, |t| {
            let u = t * t;
            dvector![u.cos(), u.sin(), 0.2 * u]
        })
        .unwrap();
        let r = constant_speed_reparametrize(&s, q(5.0), &path).unwrap();
        let before = SegmentTerms::evaluate(&s, &path).unwrap();
        let after = SegmentTerms::evaluate(&s, &r).unwrap();
        assert!(after.speed_cv(q(5.0)) < before.speed_cv(q(5.0)));
        let (l0, l1) = (before.length(q(5.0)), after.length(q(5.0)));
        assert!((l0 - l1).abs() <= 1e-4 * l0, "{l0} {l1}");
        assert_relative_eq!(length(&s, q(5.0), &r).unwrap(), l1);
    }
}

