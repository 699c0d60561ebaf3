//! Discrete paths on the uniform grid `tᵢ = i/N` and the midpoint-rule
//! functionals evaluated on them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PenaltyParameter, Point, SubRiemannianStructure, Tangent};

/// Default horizontality tolerance for [`limit_energy`].
pub const DEFAULT_HORIZONTAL_TOL: f64 = 1e-6;

/// Polyline with `N + 1` points on the uniform grid; the endpoints are
/// stored separately and never moved by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    points: Vec<Point>,
    start: Point,
    end: Point,
}

impl DiscretePath {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidPath(format!(
                "need at least 2 segments, got {}",
                points.len().saturating_sub(1)
            )));
        }
        let n = points[0].len();
        if n == 0 {
            return Err(Error::InvalidPath("zero-dimensional points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "path point",
                    expected: n,
                    found: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("path point {i}")));
            }
        }
        let start = points[0].clone();
        let end = points[points.len() - 1].clone();
        Ok(Self { points, start, end })
    }

    /// Straight chord in chart coordinates.
    pub fn chord(start: &Point, end: &Point, segments: usize) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::DimensionMismatch {
                what: "endpoint",
                expected: start.len(),
                found: end.len(),
            });
        }
        let mut points: Vec<Point> = (0..=segments)
            .map(|i| {
                let t = i as f64 / segments as f64;
                start + (end - start) * t
            })
            .collect();
        if let Some(last) = points.last_mut() {
            *last = end.clone();
        }
        Self::new(points)
    }

    /// Samples `f` at the grid times.
    pub fn from_fn(segments: usize, f: impl Fn(f64) -> Point) -> Result<Self> {
        Self::new((0..=segments).map(|i| f(i as f64 / segments as f64)).collect())
    }

    pub fn grid_size(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dimension(&self) -> usize {
        self.start.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn start(&self) -> &Point {
        &self.start
    }

    pub fn end(&self) -> &Point {
        &self.end
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.grid_size() as f64
    }

    /// Interior points `1..N`, flattened point-major.
    pub fn interior(&self) -> DVector<f64> {
        let n = self.dimension();
        let interior = &self.points[1..self.grid_size()];
        DVector::from_iterator(interior.len() * n, interior.iter().flat_map(|p| p.iter().copied()))
    }

    /// Same endpoints, new interior.
    pub fn with_interior(&self, interior: &DVector<f64>) -> Result<Self> {
        let n = self.dimension();
        let big_n = self.grid_size();
        if interior.len() != (big_n - 1) * n {
            return Err(Error::DimensionMismatch {
                what: "interior vector",
                expected: (big_n - 1) * n,
                found: interior.len(),
            });
        }
        if interior.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("interior vector".into()));
        }
        let mut points = Vec::with_capacity(big_n + 1);
        points.push(self.start.clone());
        for i in 0..big_n - 1 {
            points.push(Point::from_column_slice(&interior.as_slice()[i * n..(i + 1) * n]));
        }
        points.push(self.end.clone());
        Ok(Self {
            points,
            start: self.start.clone(),
            end: self.end.clone(),
        })
    }

    /// `(midpoint, velocity)` of segment `i`.
    pub fn discrete_velocity(&self, i: usize) -> Result<(Point, Tangent)> {
        let big_n = self.grid_size();
        if i >= big_n {
            return Err(Error::IndexOutOfRange {
                index: i,
                segments: big_n,
            });
        }
        Ok(self.segment(i))
    }

    pub(crate) fn segment(&self, i: usize) -> (Point, Tangent) {
        let a = &self.points[i];
        let b = &self.points[i + 1];
        ((a + b) * 0.5, (b - a) * self.grid_size() as f64)
    }
}

/// Either a finite non-negative value or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FunctionalValue {
    Finite(f64),
    Infinite,
}

impl FunctionalValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            FunctionalValue::Finite(v) => Some(v),
            FunctionalValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, FunctionalValue::Infinite)
    }
}

/// Per-segment squared horizontal and vertical speeds, `|Pv|²_g` and
/// `|P⊥v|²_g`, from which every functional follows.
#[derive(Debug, Clone)]
pub struct SegmentTerms {
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

impl SegmentTerms {
    pub fn evaluate(s: &SubRiemannianStructure, path: &DiscretePath) -> Result<Self> {
        check_dimension(s, path)?;
        let big_n = path.grid_size();
        let mut horizontal = Vec::with_capacity(big_n);
        let mut vertical = Vec::with_capacity(big_n);
        for i in 0..big_n {
            let (mid, vel) = path.segment(i);
            let (h, v) = s.local_geometry(&mid)?.split_norms(&vel);
            horizontal.push(h);
            vertical.push(v);
        }
        Ok(Self { horizontal, vertical })
    }

    fn weight(&self) -> f64 {
        1.0 / self.horizontal.len() as f64
    }

    pub fn energy(&self, q: PenaltyParameter) -> f64 {
        let q = q.value();
        let sum: f64 = self.horizontal.iter().zip(&self.vertical).map(|(h, v)| h + q * v).sum();
        0.5 * self.weight() * sum
    }

    pub fn length(&self, q: PenaltyParameter) -> f64 {
        let q = q.value();
        let sum: f64 = self
            .horizontal
            .iter()
            .zip(&self.vertical)
            .map(|(h, v)| (h + q * v).sqrt())
            .sum();
        self.weight() * sum
    }

    pub fn defect(&self) -> f64 {
        self.weight() * self.vertical.iter().sum::<f64>()
    }

    /// Coefficient of variation of the discrete `g_q`-speed.
    pub fn speed_cv(&self, q: PenaltyParameter) -> f64 {
        let q = q.value();
        let speeds: Vec<f64> = self
            .horizontal
            .iter()
            .zip(&self.vertical)
            .map(|(h, v)| (h + q * v).sqrt())
            .collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / speeds.len() as f64;
        var.sqrt() / mean
    }
}

fn check_dimension(s: &SubRiemannianStructure, path: &DiscretePath) -> Result<()> {
    if path.dimension() != s.dimension() {
        return Err(Error::DimensionMismatch {
            what: "path",
            expected: s.dimension(),
            found: path.dimension(),
        });
    }
    Ok(())
}

/// Midpoint rule for `½∫ g_q(γ̇, γ̇) dt`.
pub fn energy(s: &SubRiemannianStructure, q: PenaltyParameter, path: &DiscretePath) -> Result<f64> {
    Ok(SegmentTerms::evaluate(s, path)?.energy(q))
}

/// Midpoint rule for `∫ √g_q(γ̇, γ̇) dt`.
pub fn length(s: &SubRiemannianStructure, q: PenaltyParameter, path: &DiscretePath) -> Result<f64> {
    Ok(SegmentTerms::evaluate(s, path)?.length(q))
}

/// Midpoint rule for `∫ g(P⊥γ̇, P⊥γ̇) dt`, the `q`-slope of `2·energy`.
pub fn horizontality_defect(s: &SubRiemannianStructure, path: &DiscretePath) -> Result<f64> {
    Ok(SegmentTerms::evaluate(s, path)?.defect())
}

/// Limit energy: the unpenalised energy on (numerically) horizontal paths,
/// `+∞` otherwise.
pub fn limit_energy(
    s: &SubRiemannianStructure,
    path: &DiscretePath,
    horizontal_tol: f64,
) -> Result<FunctionalValue> {
    if !(horizontal_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizontal tolerance must be positive, got {horizontal_tol}"
        )));
    }
    let terms = SegmentTerms::evaluate(s, path)?;
    if terms.defect() <= horizontal_tol {
        Ok(FunctionalValue::Finite(terms.energy(PenaltyParameter::ONE)))
    } else {
        Ok(FunctionalValue::Infinite)
    }
}

/// Limit length, `+∞` off horizontal paths.
pub fn limit_length(
    s: &SubRiemannianStructure,
    path: &DiscretePath,
    horizontal_tol: f64,
) -> Result<FunctionalValue> {
    let terms = SegmentTerms::evaluate(s, path)?;
    if terms.defect() <= horizontal_tol {
        Ok(FunctionalValue::Finite(terms.length(PenaltyParameter::ONE)))
    } else {
        Ok(FunctionalValue::Infinite)
    }
}

/// Order of the discrete Sobolev semimetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemimetricOrder {
    /// Values at segment midpoints.
    Zero,
    /// Discrete velocities.
    One,
}

/// Discrete L² distance between `(xˡ∘γ₁)⁽ᵃ⁾` and `(xˡ∘γ₂)⁽ᵃ⁾` for each chart
/// coordinate `l`.
pub fn semimetric_rho(path1: &DiscretePath, path2: &DiscretePath, order: SemimetricOrder) -> Result<Vec<f64>> {
    if path1.grid_size() != path2.grid_size() {
        return Err(Error::GridMismatch {
            left: path1.grid_size(),
            right: path2.grid_size(),
        });
    }
    if path1.dimension() != path2.dimension() {
        return Err(Error::DimensionMismatch {
            what: "path",
            expected: path1.dimension(),
            found: path2.dimension(),
        });
    }
    let big_n = path1.grid_size();
    let mut acc = vec![0.0; path1.dimension()];
    for i in 0..big_n {
        let (m1, v1) = path1.segment(i);
        let (m2, v2) = path2.segment(i);
        let diff = match order {
            SemimetricOrder::Zero => m1 - m2,
            SemimetricOrder::One => v1 - v2,
        };
        for (a, d) in acc.iter_mut().zip(diff.iter()) {
            *a += d * d;
        }
    }
    Ok(acc.into_iter().map(|a| (a / big_n as f64).sqrt()).collect())
}
