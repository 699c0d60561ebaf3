//! Computable witnesses of the behaviour of penalised minimisers as `q → ∞`:
//! the exact affine dependence of the discrete energy on `q`, the constant
//! recovery sequence for horizontal paths, the monotone distance chain and
//! the Cauchy behaviour of consecutive minimisers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{limit_energy, semimetric_rho, DiscretePath, FunctionalValue, SegmentTerms, SemimetricOrder};
use crate::geometry::{PenaltyParameter, SubRiemannianStructure};
use crate::optimizer::SolveResult;

/// Least-squares fit `energy(q) ≈ intercept + slope·q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineFit {
    pub intercept: f64,
    pub slope: f64,
    pub max_residual: f64,
}

pub fn pointwise_affine_check(
    s: &SubRiemannianStructure,
    path: &DiscretePath,
    q_list: &[PenaltyParameter],
) -> Result<AffineFit> {
    if q_list.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "affine check needs at least 3 penalties, got {}",
            q_list.len()
        )));
    }
    for (i, a) in q_list.iter().enumerate() {
        if q_list[..i].contains(a) {
            return Err(Error::InvalidParameter(format!("penalty {a} listed twice")));
        }
    }
    let terms = SegmentTerms::evaluate(s, path)?;
    let qs: Vec<f64> = q_list.iter().map(|q| q.value()).collect();
    let es: Vec<f64> = q_list.iter().map(|&q| terms.energy(q)).collect();
    let m = qs.len() as f64;
    let q_mean = qs.iter().sum::<f64>() / m;
    let e_mean = es.iter().sum::<f64>() / m;
    let sxx: f64 = qs.iter().map(|q| (q - q_mean).powi(2)).sum();
    let sxy: f64 = qs.iter().zip(&es).map(|(q, e)| (q - q_mean) * (e - e_mean)).sum();
    let slope = sxy / sxx;
    let intercept = e_mean - slope * q_mean;
    let max_residual = qs
        .iter()
        .zip(&es)
        .map(|(q, e)| (e - intercept - slope * q).abs())
        .fold(0.0, f64::max);
    Ok(AffineFit {
        intercept,
        slope,
        max_residual,
    })
}

/// `max_q |energy(q, path) − limit_energy(path)|` over `q_list` for a path
/// whose horizontality defect is at most `horizontal_tol`.
pub fn recovery_sequence_check(
    s: &SubRiemannianStructure,
    path: &DiscretePath,
    q_list: &[PenaltyParameter],
    horizontal_tol: f64,
) -> Result<f64> {
    let terms = SegmentTerms::evaluate(s, path)?;
    let limit = match limit_energy(s, path, horizontal_tol)? {
        FunctionalValue::Finite(e) => e,
        FunctionalValue::Infinite => {
            return Err(Error::NotHorizontal {
                defect: terms.defect(),
                tolerance: horizontal_tol,
            })
        }
    };
    Ok(q_list
        .iter()
        .map(|&q| (terms.energy(q) - limit).abs())
        .fold(0.0, f64::max))
}

/// Slack used when judging the monotonicity of a continuation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainTolerances {
    pub length_slack: f64,
    pub energy_slack: f64,
    pub defect_slack: f64,
    /// Relative allowance for `length_q ≤ d_∞·(1 + tol)`.
    pub reference: f64,
}

impl Default for ChainTolerances {
    fn default() -> Self {
        Self {
            length_slack: 1e-9,
            energy_slack: 1e-9,
            defect_slack: 1e-14,
            reference: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRecord {
    pub q: f64,
    pub energy: f64,
    pub length: f64,
    pub defect: f64,
    pub converged: bool,
    /// Per-coordinate `ρ⁰` distance to the previous minimiser.
    pub rho0_prev: Option<Vec<f64>>,
    /// Per-coordinate `ρ¹` distance to the previous minimiser.
    pub rho1_prev: Option<Vec<f64>>,
}

/// How the defect shrank between consecutive penalties. `rate` is the
/// observed exponent `log(defect ratio) / log(q ratio)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectDecay {
    pub q_from: f64,
    pub q_to: f64,
    pub ratio: Option<f64>,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub records: Vec<ChainRecord>,
    pub tolerances: ChainTolerances,
    pub lengths_nondecreasing: bool,
    pub energies_nondecreasing: bool,
    pub defects_nonincreasing: bool,
    pub reference: Option<f64>,
    pub within_reference: Option<bool>,
    /// `d_∞ − length` at the largest penalty.
    pub final_gap: Option<f64>,
    pub defect_decay: Vec<DefectDecay>,
}

impl ConvergenceReport {
    /// True when every monotonicity verdict and the reference bound hold.
    pub fn holds(&self) -> bool {
        self.lengths_nondecreasing
            && self.energies_nondecreasing
            && self.defects_nonincreasing
            && self.within_reference.unwrap_or(true)
    }

    /// Recomputes the verdicts from the records.
    pub fn recompute(&self) -> Self {
        Self::from_records(self.records.clone(), self.reference, self.tolerances)
    }

    fn from_records(records: Vec<ChainRecord>, reference: Option<f64>, tol: ChainTolerances) -> Self {
        let pairs = || records.windows(2).map(|w| (&w[0], &w[1]));
        let lengths_nondecreasing = pairs().all(|(a, b)| b.length >= a.length - tol.length_slack);
        let energies_nondecreasing = pairs().all(|(a, b)| b.energy >= a.energy - tol.energy_slack);
        let defects_nonincreasing = pairs().all(|(a, b)| b.defect <= a.defect + tol.defect_slack);
        let within_reference =
            reference.map(|d| records.iter().all(|r| r.length <= d * (1.0 + tol.reference)));
        let final_gap = reference.zip(records.last()).map(|(d, r)| d - r.length);
        let defect_decay = pairs()
            .map(|(a, b)| {
                let ratio = (a.defect > 0.0).then(|| b.defect / a.defect);
                let rate = ratio.filter(|r| *r > 0.0).map(|r| r.ln() / (b.q / a.q).ln());
                DefectDecay {
                    q_from: a.q,
                    q_to: b.q,
                    ratio,
                    rate,
                }
            })
            .collect();
        Self {
            records,
            tolerances: tol,
            lengths_nondecreasing,
            energies_nondecreasing,
            defects_nonincreasing,
            reference,
            within_reference,
            final_gap,
            defect_decay,
        }
    }
}

fn sorted(results: &[SolveResult]) -> Vec<&SolveResult> {
    let mut v: Vec<&SolveResult> = results.iter().collect();
    v.sort_by(|a, b| a.q.value().total_cmp(&b.q.value()));
    v
}

fn rho_pair(a: &DiscretePath, b: &DiscretePath) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        semimetric_rho(a, b, SemimetricOrder::Zero)?,
        semimetric_rho(a, b, SemimetricOrder::One)?,
    ))
}

/// Checks the chain `d_r ≤ d_q ≤ d_∞` along one continuation run. Violations
/// are reported as verdicts.
pub fn distance_chain_report(
    results: &[SolveResult],
    reference: Option<f64>,
    tolerances: ChainTolerances,
) -> Result<ConvergenceReport> {
    let runs = sorted(results);
    let mut records = Vec::with_capacity(runs.len());
    for (i, r) in runs.iter().enumerate() {
        let (rho0_prev, rho1_prev) = match i.checked_sub(1).map(|j| runs[j]) {
            Some(prev) if prev.path.grid_size() == r.path.grid_size() => {
                let (a, b) = rho_pair(&prev.path, &r.path)?;
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        records.push(ChainRecord {
            q: r.q.value(),
            energy: r.energy,
            length: r.length,
            defect: r.defect,
            converged: r.converged,
            rho0_prev,
            rho1_prev,
        });
    }
    Ok(ConvergenceReport::from_records(records, reference, tolerances))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyStep {
    pub q_from: f64,
    pub q_to: f64,
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
}

impl CauchyStep {
    pub fn max_rho1(&self) -> f64 {
        self.rho1.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyReport {
    pub steps: Vec<CauchyStep>,
    pub threshold: f64,
    /// Whether the last step's `ρ¹` is below the threshold; `None` when the
    /// limit geodesic is not known to be unique.
    pub assertion: Option<bool>,
}

/// `ρ⁰` and `ρ¹` distances between consecutive minimisers of a run.
pub fn minimizer_cauchy_report(results: &[SolveResult], unique: bool, threshold: f64) -> Result<CauchyReport> {
    if results.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "Cauchy report needs at least 2 results, got {}",
            results.len()
        )));
    }
    let runs = sorted(results);
    let steps = runs
        .windows(2)
        .map(|w| {
            let (rho0, rho1) = rho_pair(&w[0].path, &w[1].path)?;
            Ok(CauchyStep {
                q_from: w[0].q.value(),
                q_to: w[1].q.value(),
                rho0,
                rho1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let assertion = unique.then(|| steps.last().is_some_and(|st| st.max_rho1() <= threshold));
    Ok(CauchyReport {
        steps,
        threshold,
        assertion,
    })
}
