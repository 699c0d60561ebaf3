//! Built-in benchmark problems.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::geometry::{Point, SubRiemannianStructure};
use crate::polynomial::PolynomialField;

/// Catalogue entry as printed by `list-problems`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInfo {
    pub name: &'static str,
    pub dimension: String,
    pub rank: String,
    pub has_drift: bool,
    pub unique_limit: bool,
    pub start: String,
    pub end: String,
    pub reference: Option<String>,
    pub description: &'static str,
}

pub fn catalogue() -> Vec<ProblemInfo> {
    vec![
        ProblemInfo {
            name: "euclidean-n",
            dimension: "n".into(),
            rank: "n".into(),
            has_drift: false,
            unique_limit: true,
            start: "0".into(),
            end: "(1, ..., 1)".into(),
            reference: Some("d = |y - x|".into()),
            description: "Euclidean space with D = TM; straight lines at every q",
        },
        ProblemInfo {
            name: "heisenberg",
            dimension: "3".into(),
            rank: "2".into(),
            has_drift: false,
            unique_limit: false,
            start: "(0, 0, 0)".into(),
            end: "(0, 0, 1/(4 pi))".into(),
            reference: Some(
                "vertical endpoints: d = 2 sqrt(pi |z|) (isoperimetric circle, non-unique); \
                 endpoints in a horizontal plane through x: d = |(dx, dy)| (unique)"
                    .into(),
            ),
            description: "Heisenberg group, X1 = dx - (y/2) dz, X2 = dy + (x/2) dz",
        },
        ProblemInfo {
            name: "martinet",
            dimension: "3".into(),
            rank: "2".into(),
            has_drift: false,
            unique_limit: true,
            start: "(0, 0, 0)".into(),
            end: "(0, 1, 0)".into(),
            reference: Some("d = 1 along the horizontal y-axis".into()),
            description: "Martinet distribution, X1 = dx + y^2 dz, X2 = dy; step 3 on y = 0",
        },
        ProblemInfo {
            name: "drift-constant-1d",
            dimension: "1".into(),
            rank: "1".into(),
            has_drift: true,
            unique_limit: true,
            start: "0".into(),
            end: "0".into(),
            reference: Some("optimal control Y = -1, cost 1".into()),
            description: "x' = 1 + Y on the line",
        },
        ProblemInfo {
            name: "drift-linear-2d",
            dimension: "2".into(),
            rank: "2".into(),
            has_drift: true,
            unique_limit: true,
            start: "(0, 0)".into(),
            end: "(1, 0)".into(),
            reference: Some("cost (y - e^A x)^T W^-1 (y - e^A x) with the controllability Gramian W; 12/13 for the default endpoints".into()),
            description: "x' = A x + Y with A = [[0, 1], [0, 0]]",
        },
        ProblemInfo {
            name: "heisenberg-drift",
            dimension: "3".into(),
            rank: "2".into(),
            has_drift: true,
            unique_limit: false,
            start: "(0, 0, 0)".into(),
            end: "(1, 0, 1/(4 pi))".into(),
            reference: None,
            description: "Heisenberg distribution with constant drift X = dx",
        },
    ]
}

/// A structure with default endpoints and, for drift problems, a drift.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub structure: SubRiemannianStructure,
    pub drift: Option<Arc<dyn DriftField>>,
    pub start: Point,
    pub end: Point,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("structure", &self.structure)
            .field("has_drift", &self.drift.is_some())
            .field("start", &self.start.as_slice())
            .field("end", &self.end.as_slice())
            .finish()
    }
}

fn euclidean_dimension(name: &str, dimension: Option<usize>) -> Result<Option<usize>> {
    let Some(rest) = name.strip_prefix("euclidean-") else {
        return Ok(None);
    };
    let n = if rest == "n" {
        dimension.ok_or_else(|| Error::InvalidParameter("euclidean-n needs a dimension".into()))?
    } else {
        rest.parse()
            .map_err(|_| Error::InvalidParameter(format!("unknown problem {name:?}")))?
    };
    if n == 0 || dimension.is_some_and(|d| d != n) {
        return Err(Error::InvalidParameter(format!("bad dimension for {name}")));
    }
    Ok(Some(n))
}

impl Problem {
    /// Looks up a catalogue problem. `euclidean-n` takes its dimension
    /// either from the name (`euclidean-3`) or from `dimension`.
    pub fn builtin(name: &str, dimension: Option<usize>) -> Result<Self> {
        if let Some(n) = euclidean_dimension(name, dimension)? {
            return Ok(Self {
                name: format!("euclidean-{n}"),
                structure: SubRiemannianStructure::euclidean(n),
                drift: None,
                start: Point::zeros(n),
                end: Point::from_element(n, 1.0),
            });
        }
        let p = |v: &[f64]| Point::from_column_slice(v);
        let z = 1.0 / (4.0 * PI);
        let (structure, drift, start, end): (_, Option<Arc<dyn DriftField>>, _, _) = match name {
            "heisenberg" => (SubRiemannianStructure::heisenberg(), None, p(&[0.0; 3]), p(&[0.0, 0.0, z])),
            "martinet" => (SubRiemannianStructure::martinet(), None, p(&[0.0; 3]), p(&[0.0, 1.0, 0.0])),
            "drift-constant-1d" => (
                SubRiemannianStructure::euclidean(1),
                Some(Arc::new(PolynomialField::constant(&[1.0]))),
                p(&[0.0]),
                p(&[0.0]),
            ),
            "drift-linear-2d" => (
                SubRiemannianStructure::euclidean(2),
                Some(Arc::new(PolynomialField::linear(&DMatrix::from_row_slice(
                    2,
                    2,
                    &[0.0, 1.0, 0.0, 0.0],
                ))?)),
                p(&[0.0, 0.0]),
                p(&[1.0, 0.0]),
            ),
            "heisenberg-drift" => (
                SubRiemannianStructure::heisenberg(),
                Some(Arc::new(PolynomialField::constant(&[1.0, 0.0, 0.0]))),
                p(&[0.0; 3]),
                p(&[1.0, 0.0, z]),
            ),
            _ => return Err(Error::InvalidParameter(format!("unknown problem {name:?}"))),
        };
        if dimension.is_some_and(|d| d != structure.dimension()) {
            return Err(Error::InvalidParameter(format!("bad dimension for {name}")));
        }
        Ok(Self {
            name: name.to_string(),
            structure,
            drift,
            start,
            end,
        })
    }

    /// Whether the limit geodesic between `start` and `end` is known to be
    /// unique.
    pub fn unique_limit(&self, start: &Point, end: &Point) -> bool {
        match self.name.as_str() {
            "heisenberg" => heisenberg_displacement(start, end)[2] == 0.0,
            "heisenberg-drift" => false,
            "martinet" => is_martinet_y_axis(start, end),
            _ => true,
        }
    }

    /// Known sub-Riemannian distance (drift-free problems) or minimal
    /// control cost (drift problems) between `start` and `end`.
    pub fn reference_value(&self, start: &Point, end: &Point) -> Option<f64> {
        match self.name.as_str() {
            n if n.starts_with("euclidean-") => Some((end - start).norm()),
            "heisenberg" => heisenberg_distance(start, end),
            "martinet" => is_martinet_y_axis(start, end).then(|| (end[1] - start[1]).abs()),
            "drift-constant-1d" => Some((end[0] - start[0] - 1.0).powi(2)),
            "drift-linear-2d" => Some(double_integrator_cost(start, end)),
            _ => None,
        }
    }
}

/// `x⁻¹·y` in the Heisenberg group law.
fn heisenberg_displacement(x: &Point, y: &Point) -> DVector<f64> {
    DVector::from_column_slice(&[
        y[0] - x[0],
        y[1] - x[1],
        y[2] - x[2] - 0.5 * (x[0] * y[1] - x[1] * y[0]),
    ])
}

fn heisenberg_distance(x: &Point, y: &Point) -> Option<f64> {
    let d = heisenberg_displacement(x, y);
    if d[0] == 0.0 && d[1] == 0.0 {
        Some(2.0 * (PI * d[2].abs()).sqrt())
    } else if d[2] == 0.0 {
        Some(d[0].hypot(d[1]))
    } else {
        None
    }
}

fn is_martinet_y_axis(x: &Point, y: &Point) -> bool {
    x[0] == y[0] && x[2] == y[2]
}

/// `(y − eᴬx)ᵀ W⁻¹ (y − eᴬx)` for `A = [[0, 1], [0, 0]]` and full control,
/// where `eᴬ = [[1, 1], [0, 1]]` and `W = [[4/3, 1/2], [1/2, 1]]`.
fn double_integrator_cost(x: &Point, y: &Point) -> f64 {
    let r = [y[0] - x[0] - x[1], y[1] - x[1]];
    // W⁻¹ = (12/13)·[[1, −1/2], [−1/2, 4/3]]
    12.0 / 13.0 * (r[0] * r[0] - r[0] * r[1] + 4.0 / 3.0 * r[1] * r[1])
}
