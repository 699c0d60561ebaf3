//! Single-chart Riemannian data, the horizontal distribution given by frame
//! fields, orthogonal projections onto it and the penalised metric family
//! `g_q = g(P., P.) + q g(P⊥., P⊥.)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chart coordinates of a point.
pub type Point = DVector<f64>;
/// Chart components of a tangent vector.
pub type Tangent = DVector<f64>;

/// Frame Gram matrices with a larger condition number are rejected.
pub const MAX_FRAME_CONDITION: f64 = 1e8;
/// Relative singular-value cutoff for the numerical rank of bracket spans.
pub const RANK_TOLERANCE: f64 = 1e-6;

/// Gram matrix of the Riemannian metric in chart coordinates.
pub trait MetricField: Send + Sync {
    fn gram(&self, p: &Point) -> DMatrix<f64>;
}

/// `n × k` matrix whose columns span the distribution at a point.
pub trait FrameField: Send + Sync {
    fn frame(&self, p: &Point) -> DMatrix<f64>;
}

/// Joint access to metric and frame. Structures whose metric and frame share
/// expensive intermediate work (the lifted drift structure) override `local`.
pub trait LocalFields: Send + Sync {
    fn metric(&self, p: &Point) -> DMatrix<f64>;
    fn frame(&self, p: &Point) -> DMatrix<f64>;
    fn local(&self, p: &Point) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.metric(p), self.frame(p)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EuclideanMetric;

impl MetricField for EuclideanMetric {
    fn gram(&self, p: &Point) -> DMatrix<f64> {
        DMatrix::identity(p.len(), p.len())
    }
}

/// Constant diagonal metric.
#[derive(Debug, Clone)]
pub struct DiagonalMetric {
    pub weights: DVector<f64>,
}

impl MetricField for DiagonalMetric {
    fn gram(&self, _p: &Point) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.weights)
    }
}

/// Metric given by a closure.
pub struct MetricFn<F>(pub F);

impl<F> MetricField for MetricFn<F>
where
    F: Fn(&Point) -> DMatrix<f64> + Send + Sync,
{
    fn gram(&self, p: &Point) -> DMatrix<f64> {
        (self.0)(p)
    }
}

/// `D = TM`: the identity frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullFrame;

impl FrameField for FullFrame {
    fn frame(&self, p: &Point) -> DMatrix<f64> {
        DMatrix::identity(p.len(), p.len())
    }
}

/// Frame given by a closure.
pub struct FrameFn<F>(pub F);

impl<F> FrameField for FrameFn<F>
where
    F: Fn(&Point) -> DMatrix<f64> + Send + Sync,
{
    fn frame(&self, p: &Point) -> DMatrix<f64> {
        (self.0)(p)
    }
}

struct Composite {
    metric: Box<dyn MetricField>,
    frame: Box<dyn FrameField>,
}

impl LocalFields for Composite {
    fn metric(&self, p: &Point) -> DMatrix<f64> {
        self.metric.gram(p)
    }

    fn frame(&self, p: &Point) -> DMatrix<f64> {
        self.frame.frame(p)
    }
}

/// Penalty parameter `q ≥ 1`; `q = 1` recovers the unpenalised metric.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PenaltyParameter(f64);

impl PenaltyParameter {
    pub const ONE: PenaltyParameter = PenaltyParameter(1.0);

    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() || q < 1.0 {
            return Err(Error::InvalidParameter(format!("penalty q must be finite and >= 1, got {q}")));
        }
        Ok(Self(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PenaltyParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A sub-Riemannian structure `(M, g, D)` on one global chart.
#[derive(Clone)]
pub struct SubRiemannianStructure {
    name: String,
    dimension: usize,
    rank: usize,
    fields: Arc<dyn LocalFields>,
}

impl fmt::Debug for SubRiemannianStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubRiemannianStructure")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("rank", &self.rank)
            .finish()
    }
}

impl SubRiemannianStructure {
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        rank: usize,
        metric: impl MetricField + 'static,
        frame: impl FrameField + 'static,
    ) -> Result<Self> {
        let fields = Composite {
            metric: Box::new(metric),
            frame: Box::new(frame),
        };
        Self::from_fields(name, dimension, rank, Arc::new(fields))
    }

    pub fn from_fields(
        name: impl Into<String>,
        dimension: usize,
        rank: usize,
        fields: Arc<dyn LocalFields>,
    ) -> Result<Self> {
        if dimension == 0 || rank == 0 || rank > dimension {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= rank <= dimension, got rank {rank} and dimension {dimension}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dimension,
            rank,
            fields,
        })
    }

    /// Euclidean `ℝⁿ` with `D = TM`.
    pub fn euclidean(n: usize) -> Self {
        Self::new(format!("euclidean-{n}"), n, n, EuclideanMetric, FullFrame).expect("n >= 1")
    }

    /// Heisenberg group: `X₁ = ∂x − (y/2)∂z`, `X₂ = ∂y + (x/2)∂z`, Euclidean metric.
    pub fn heisenberg() -> Self {
        let frame = FrameFn(|p: &Point| {
            let (x, y) = (p[0], p[1]);
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -0.5 * y, 0.5 * x])
        });
        Self::new("heisenberg", 3, 2, EuclideanMetric, frame).expect("valid")
    }

    /// Martinet distribution: `X₁ = ∂x + y²∂z`, `X₂ = ∂y`, Euclidean metric.
    pub fn martinet() -> Self {
        let frame = FrameFn(|p: &Point| {
            let y = p[1];
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, y * y, 0.0])
        });
        Self::new("martinet", 3, 2, EuclideanMetric, frame).expect("valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn fields(&self) -> &Arc<dyn LocalFields> {
        &self.fields
    }

    pub fn metric_at(&self, p: &Point) -> Result<DMatrix<f64>> {
        self.check_point(p)?;
        Ok(self.fields.metric(p))
    }

    pub fn frame_at(&self, p: &Point) -> Result<DMatrix<f64>> {
        self.check_point(p)?;
        Ok(self.fields.frame(p))
    }

    pub(crate) fn check_point(&self, p: &Point) -> Result<()> {
        if p.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dimension,
                found: p.len(),
            });
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("point {:?}", p.as_slice())));
        }
        Ok(())
    }

    /// Metric, frame and the factorised frame Gram matrix at `p`.
    pub fn local_geometry(&self, p: &Point) -> Result<LocalGeometry> {
        self.check_point(p)?;
        let (gram, frame) = self.fields.local(p)?;
        LocalGeometry::new(p, gram, frame)
    }
}

/// Pointwise data needed to split tangent vectors into `D ⊕ D⊥`.
#[derive(Debug, Clone)]
pub struct LocalGeometry {
    gram: DMatrix<f64>,
    frame: DMatrix<f64>,
    gram_frame: DMatrix<f64>,
    reduced: Cholesky<f64, Dyn>,
}

impl LocalGeometry {
    pub fn new(p: &Point, gram: DMatrix<f64>, frame: DMatrix<f64>) -> Result<Self> {
        let n = p.len();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "metric Gram matrix",
                expected: n,
                found: gram.nrows(),
            });
        }
        if frame.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "frame rows",
                expected: n,
                found: frame.nrows(),
            });
        }
        if gram.iter().chain(frame.iter()).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("metric or frame at {:?}", p.as_slice())));
        }
        if Cholesky::new(gram.clone()).is_none() {
            return Err(Error::IndefiniteMetric {
                point: p.as_slice().to_vec(),
            });
        }
        let gram_frame = &gram * &frame;
        let mut reduced = frame.transpose() * &gram_frame;
        // symmetrise away roundoff before the eigen/Cholesky steps
        reduced = (&reduced + reduced.transpose()) * 0.5;
        if reduced.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("frame Gram matrix at {:?}", p.as_slice())));
        }
        let degenerate = |condition: f64| Error::DegenerateFrame {
            point: p.as_slice().to_vec(),
            condition,
        };
        let eig = SymmetricEigen::new(reduced.clone());
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo <= 0.0 || hi / lo > MAX_FRAME_CONDITION {
            return Err(degenerate(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
        }
        let reduced = Cholesky::new(reduced).ok_or_else(|| degenerate(f64::INFINITY))?;
        Ok(Self {
            gram,
            frame,
            gram_frame,
            reduced,
        })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn inner(&self, v: &Tangent, w: &Tangent) -> f64 {
        v.dot(&(&self.gram * w))
    }

    /// `(Pv, P⊥v)` with `P v = F c`, `(FᵀGF) c = FᵀG v`.
    pub fn project(&self, v: &Tangent) -> (Tangent, Tangent) {
        let rhs = self.gram_frame.tr_mul(v);
        let coeffs = self.reduced.solve(&rhs);
        let horizontal = &self.frame * coeffs;
        let vertical = v - &horizontal;
        (horizontal, vertical)
    }

    /// `(|Pv|²_g, |P⊥v|²_g)`.
    pub fn split_norms(&self, v: &Tangent) -> (f64, f64) {
        let (h, p) = self.project(v);
        (self.inner(&h, &h), self.inner(&p, &p))
    }

    pub fn penalized(&self, q: PenaltyParameter, v: &Tangent, w: &Tangent) -> f64 {
        let (vh, vp) = self.project(v);
        let (wh, wp) = self.project(w);
        self.inner(&vh, &wh) + q.value() * self.inner(&vp, &wp)
    }

    /// `∇_v g_q(v, v) = 2 (G P v + q G P⊥ v)`.
    pub fn penalized_velocity_gradient(&self, q: PenaltyParameter, v: &Tangent) -> Tangent {
        let (h, p) = self.project(v);
        (&self.gram * (h + p * q.value())) * 2.0
    }

    /// Derivative of `g_q(v, v)` along a variation of the base point that
    /// moves the metric by `dgram` and the frame by `dframe`, `v` held fixed:
    /// `vᵀ dG v + (q − 1) (P⊥vᵀ dG P⊥v − 2 ⟨dF c, P⊥v⟩_g)`.
    pub fn penalized_point_derivative(
        &self,
        q: PenaltyParameter,
        v: &Tangent,
        dgram: &DMatrix<f64>,
        dframe: &DMatrix<f64>,
    ) -> f64 {
        let coeffs = self.reduced.solve(&self.gram_frame.tr_mul(v));
        let vertical = v - &self.frame * &coeffs;
        let moved = dframe * &coeffs;
        let dd = vertical.dot(&(dgram * &vertical)) - 2.0 * self.inner(&moved, &vertical);
        v.dot(&(dgram * v)) + (q.value() - 1.0) * dd
    }

    /// Gram matrix of `g_q`: `G + (q − 1) P⊥ᵀ G P⊥`.
    pub fn penalized_matrix(&self, q: PenaltyParameter) -> DMatrix<f64> {
        let n = self.gram.nrows();
        let coeffs = self.reduced.solve(&self.gram_frame.transpose());
        let perp = DMatrix::identity(n, n) - &self.frame * coeffs;
        let gp = perp.transpose() * &self.gram * &perp;
        let m = &self.gram + gp * (q.value() - 1.0);
        (&m + m.transpose()) * 0.5
    }
}

/// Splits `v` at `p` into its horizontal and `g`-orthogonal parts.
pub fn project_horizontal(
    s: &SubRiemannianStructure,
    p: &Point,
    v: &Tangent,
) -> Result<(Tangent, Tangent)> {
    check_tangent(s, v)?;
    Ok(s.local_geometry(p)?.project(v))
}

pub fn penalized_metric_eval(
    s: &SubRiemannianStructure,
    q: PenaltyParameter,
    p: &Point,
    v: &Tangent,
    w: &Tangent,
) -> Result<f64> {
    check_tangent(s, v)?;
    check_tangent(s, w)?;
    Ok(s.local_geometry(p)?.penalized(q, v, w))
}

fn check_tangent(s: &SubRiemannianStructure, v: &Tangent) -> Result<()> {
    if v.len() != s.dimension() {
        return Err(Error::DimensionMismatch {
            what: "tangent",
            expected: s.dimension(),
            found: v.len(),
        });
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("tangent {:?}", v.as_slice())));
    }
    Ok(())
}

/// Outcome of the sampled Lie-bracket rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketReport {
    pub generated_rank: usize,
    pub depth_reached: usize,
    /// `false` when the span stays rank-deficient at `max_depth`.
    pub verified: bool,
}

type VectorField = Arc<dyn Fn(&Point) -> Tangent>;

fn fd_step(p: &Point) -> f64 {
    1e-5 * (1.0 + p.amax())
}

fn jacobian_fd(field: &VectorField, p: &Point) -> DMatrix<f64> {
    let n = p.len();
    let h = fd_step(p);
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (field(&plus) - field(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

fn bracket(v: VectorField, w: VectorField) -> VectorField {
    Arc::new(move |p: &Point| jacobian_fd(&w, p) * v(p) - jacobian_fd(&v, p) * w(p))
}

fn numerical_rank(columns: &[Tangent]) -> usize {
    if columns.is_empty() {
        return 0;
    }
    let m = DMatrix::from_columns(columns);
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&x| x > RANK_TOLERANCE * top).count()
}

/// Adjoins iterated brackets `[Xᵢ, B]` of the frame fields with the previous
/// level until the span at `p` has full numerical rank or `max_depth` is hit.
pub fn validate_bracket_generating(
    s: &SubRiemannianStructure,
    p: &Point,
    max_depth: usize,
) -> Result<BracketReport> {
    if max_depth == 0 {
        return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
    }
    s.check_point(p)?;
    let n = s.dimension();
    let base: Vec<VectorField> = (0..s.rank())
        .map(|j| {
            let fields = Arc::clone(s.fields());
            Arc::new(move |x: &Point| -> Tangent { fields.frame(x).column(j).into_owned() })
                as VectorField
        })
        .collect();

    let mut columns: Vec<Tangent> = base.iter().map(|f| f(p)).collect();
    let mut level = base.clone();
    let mut rank = numerical_rank(&columns);
    let mut depth = 1;
    while rank < n && depth < max_depth {
        let mut next = Vec::with_capacity(base.len() * level.len());
        for x in &base {
            for b in &level {
                next.push(bracket(Arc::clone(x), Arc::clone(b)));
            }
        }
        columns.extend(next.iter().map(|f| f(p)));
        level = next;
        depth += 1;
        rank = numerical_rank(&columns);
    }
    let verified = rank == n;
    if !verified {
        log::warn!(
            "{} is not verified bracket-generating at {:?} (rank {rank} at depth {depth})",
            s.name(),
            p.as_slice()
        );
    }
    Ok(BracketReport {
        generated_rank: rank,
        depth_reached: depth,
        verified,
    })
}
