//! Vector fields with polynomial components, given as coefficient tables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameField, Point, Tangent};

/// `coeff · tᵏ · Π pⱼ^powers[j]` with `k = time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
    #[serde(default)]
    pub time: u32,
}

impl Monomial {
    fn value(&self, t: f64, p: &Point) -> f64 {
        let mut v = self.coeff * t.powi(self.time as i32);
        for (x, &k) in p.iter().zip(&self.powers) {
            v *= x.powi(k as i32);
        }
        v
    }

    fn partial(&self, t: f64, p: &Point, j: usize) -> f64 {
        let k = self.powers[j];
        if k == 0 {
            return 0.0;
        }
        let mut v = self.coeff * k as f64 * t.powi(self.time as i32);
        for (i, (x, &e)) in p.iter().zip(&self.powers).enumerate() {
            v *= if i == j { x.powi(e as i32 - 1) } else { x.powi(e as i32) };
        }
        v
    }
}

/// Vector field on `ℝⁿ` whose `i`-th component is the sum of
/// `components[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialField {
    pub dimension: usize,
    pub components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    pub fn new(dimension: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        let field = Self { dimension, components };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                what: "polynomial field components",
                expected: self.dimension,
                found: self.components.len(),
            });
        }
        for m in self.components.iter().flatten() {
            if m.powers.len() != self.dimension {
                return Err(Error::DimensionMismatch {
                    what: "monomial powers",
                    expected: self.dimension,
                    found: m.powers.len(),
                });
            }
            if !m.coeff.is_finite() {
                return Err(Error::NonFinite("monomial coefficient".into()));
            }
        }
        Ok(())
    }

    /// Constant field `c`.
    pub fn constant(c: &[f64]) -> Self {
        let n = c.len();
        let components = c
            .iter()
            .map(|&coeff| {
                vec![Monomial {
                    coeff,
                    powers: vec![0; n],
                    time: 0,
                }]
            })
            .collect();
        Self {
            dimension: n,
            components,
        }
    }

    /// Linear field `p ↦ A p`.
    pub fn linear(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidParameter("linear field needs a square matrix".into()));
        }
        let n = a.nrows();
        let components = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| {
                        let mut powers = vec![0; n];
                        powers[j] = 1;
                        Monomial {
                            coeff: a[(i, j)],
                            powers,
                            time: 0,
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(n, components)
    }

    pub fn is_autonomous(&self) -> bool {
        self.components.iter().flatten().all(|m| m.time == 0)
    }

    pub fn eval(&self, t: f64, p: &Point) -> Tangent {
        Tangent::from_iterator(
            self.dimension,
            self.components.iter().map(|c| c.iter().map(|m| m.value(t, p)).sum::<f64>()),
        )
    }

    pub fn jacobian(&self, t: f64, p: &Point) -> DMatrix<f64> {
        let n = self.dimension;
        DMatrix::from_fn(n, n, |i, j| self.components[i].iter().map(|m| m.partial(t, p, j)).sum())
    }
}

/// Frame whose columns are autonomous polynomial fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFrame {
    columns: Vec<PolynomialField>,
}

impl PolynomialFrame {
    pub fn new(dimension: usize, columns: Vec<PolynomialField>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidParameter("frame needs at least one column".into()));
        }
        for c in &columns {
            c.validate()?;
            if c.dimension != dimension {
                return Err(Error::DimensionMismatch {
                    what: "frame column",
                    expected: dimension,
                    found: c.dimension,
                });
            }
            if !c.is_autonomous() {
                return Err(Error::InvalidParameter("frame columns cannot depend on time".into()));
            }
        }
        Ok(Self { columns })
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }
}

impl FrameField for PolynomialFrame {
    fn frame(&self, p: &Point) -> DMatrix<f64> {
        let cols: Vec<Tangent> = self.columns.iter().map(|c| c.eval(0.0, p)).collect();
        DMatrix::from_columns(&cols)
    }
}
