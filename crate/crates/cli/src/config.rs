//! Run specifications read from TOML.

use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Deserialize;
use srgeo::drift::ZeroDrift;
use srgeo::geometry::{DiagonalMetric, EuclideanMetric, FrameFn, FullFrame, MetricField};
use srgeo::{
    ContinuationSchedule, DriftField, DriftOptions, Monomial, Point, PolynomialField, PolynomialFrame, Problem,
    SolverConfig, SubRiemannianStructure,
};
use toml::Spanned;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemSection,
    pub schedule: Option<Spanned<ScheduleSection>>,
    pub solver: Option<Spanned<SolverConfig>>,
    pub drift: Option<DriftSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// Catalogue name, or a label for an inline structure.
    pub name: Option<String>,
    pub dimension: Option<usize>,
    pub start: Option<Spanned<Vec<f64>>>,
    pub end: Option<Spanned<Vec<f64>>>,
    /// Known limit distance `d_∞` between the endpoints.
    pub reference: Option<f64>,
    /// Whether the limit geodesic is known to be unique.
    pub unique: Option<bool>,
    pub metric: Option<Spanned<String>>,
    pub metric_weights: Option<Spanned<Vec<f64>>>,
    pub frame: Option<Spanned<String>>,
    /// Polynomial frame: one table of monomials per column and component.
    pub frame_columns: Option<Spanned<Vec<Vec<Vec<Monomial>>>>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub q_start: f64,
    pub ratio: f64,
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ContinuationSchedule::default();
        Self {
            q_start: s.q_start,
            ratio: s.ratio,
            steps: s.steps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub preset: Spanned<String>,
    pub vector: Option<Vec<f64>>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub components: Option<Vec<Vec<Monomial>>>,
    pub steps_per_unit: Option<usize>,
    pub terminal_tolerance: Option<f64>,
    pub free_s: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A parsed and validated run.
#[derive(Clone)]
pub struct Resolved {
    pub name: String,
    pub structure: SubRiemannianStructure,
    pub drift: Option<Arc<dyn DriftField>>,
    pub drift_options: DriftOptions,
    pub start: Point,
    pub end: Point,
    pub reference: Option<f64>,
    pub reference_cost: Option<f64>,
    pub unique: bool,
    pub schedule: ContinuationSchedule,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
}

/// Location-aware error reporting against the original text.
struct Source<'a> {
    text: &'a str,
}

impl Source<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, key: &str, span: Option<Range<usize>>, msg: impl std::fmt::Display) -> Result<T, CliError> {
        let at = span.map(|s| format!(" (line {})", self.line(s))).unwrap_or_default();
        Err(CliError::Config(format!("{key}{at}: {msg}")))
    }
}

pub fn parse(text: &str) -> Result<Resolved, CliError> {
    let spec: RunSpec = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    resolve(&spec, text)
}

fn resolve(spec: &RunSpec, text: &str) -> Result<Resolved, CliError> {
    let src = Source { text };
    let p = &spec.problem;
    let inline = p.metric.is_some() || p.metric_weights.is_some() || p.frame.is_some() || p.frame_columns.is_some();
    let builtin = match (&p.name, inline) {
        (Some(name), false) => match Problem::builtin(name, p.dimension) {
            Ok(problem) => Some(problem),
            Err(e) => return src.err("problem.name", None, e),
        },
        (None, false) => return src.err("problem", None, "needs a catalogue `name` or an inline `frame`"),
        (_, true) => None,
    };

    let (name, structure, mut drift, default_start, default_end) = match builtin {
        Some(b) => (b.name, b.structure, b.drift, Some(b.start), Some(b.end)),
        None => {
            let name = p.name.clone().unwrap_or_else(|| "inline".into());
            (name.clone(), inline_structure(p, &name, &src)?, None, None, None)
        }
    };
    let n = structure.dimension();

    let endpoint = |key: &str, given: &Option<Spanned<Vec<f64>>>, default: Option<Point>| match (given, default) {
        (Some(v), _) if v.get_ref().len() != n => src.err(
            key,
            Some(v.span()),
            format!("expected {n} coordinates, found {}", v.get_ref().len()),
        ),
        (Some(v), _) if v.get_ref().iter().any(|x| !x.is_finite()) => {
            src.err(key, Some(v.span()), "coordinates must be finite")
        }
        (Some(v), _) => Ok(Point::from_column_slice(v.get_ref())),
        (None, Some(d)) => Ok(d),
        (None, None) => src.err(key, None, "required for inline problems"),
    };
    let start = endpoint("problem.start", &p.start, default_start)?;
    let end = endpoint("problem.end", &p.end, default_end)?;

    let mut drift_options = DriftOptions::default();
    if let Some(d) = &spec.drift {
        drift = Some(drift_field(d, n, &src)?);
        drift_options.steps_per_unit = d.steps_per_unit.unwrap_or(drift_options.steps_per_unit);
        drift_options.terminal_tolerance = d.terminal_tolerance.unwrap_or(drift_options.terminal_tolerance);
        drift_options.free_s = d.free_s.unwrap_or(drift_options.free_s);
        if drift_options.steps_per_unit == 0 {
            return src.err("drift.steps_per_unit", None, "must be positive");
        }
    }

    let schedule_span = spec.schedule.as_ref().map(|s| s.span());
    let sched = spec.schedule.as_ref().map(|s| *s.get_ref()).unwrap_or_default();
    let schedule = match ContinuationSchedule::new(sched.q_start, sched.ratio, sched.steps) {
        Ok(s) => s,
        Err(e) => return src.err("schedule", schedule_span, e),
    };
    let solver_span = spec.solver.as_ref().map(|s| s.span());
    let solver = spec.solver.as_ref().map(|s| s.get_ref().clone()).unwrap_or_default();
    if let Err(e) = solver.validate() {
        return src.err("solver", solver_span, e);
    }
    if let Some(&k) = solver.pinned_coordinates.iter().find(|&&k| k >= n) {
        return src.err(
            "solver.pinned_coordinates",
            solver_span,
            format!("coordinate {k} out of range for dimension {n}"),
        );
    }
    if let Some(r) = p.reference {
        if !(r.is_finite() && r >= 0.0) {
            return src.err("problem.reference", None, "must be finite and nonnegative");
        }
    }

    let known = Problem::builtin(&name, None).ok().filter(|_| !inline);
    let known = known.filter(|k| spec.drift.is_none() || k.drift.is_none());
    let (reference, reference_cost) = match (&known, &drift) {
        (Some(k), None) => (p.reference.or_else(|| k.reference_value(&start, &end)), None),
        (Some(k), Some(_)) if k.drift.is_some() => (p.reference, k.reference_value(&start, &end)),
        _ => (p.reference, None),
    };
    let unique = p
        .unique
        .unwrap_or_else(|| known.as_ref().is_some_and(|k| k.unique_limit(&start, &end)));

    Ok(Resolved {
        name,
        structure,
        drift,
        drift_options,
        start,
        end,
        reference,
        reference_cost,
        unique,
        schedule,
        solver,
        output: spec.output.dir.clone(),
    })
}

fn inline_structure(p: &ProblemSection, name: &str, src: &Source) -> Result<SubRiemannianStructure, CliError> {
    let Some(n) = p.dimension else {
        return src.err("problem.dimension", None, "required for inline problems");
    };
    if n == 0 {
        return src.err("problem.dimension", None, "must be positive");
    }
    let metric: Box<dyn MetricField> = match (&p.metric, &p.metric_weights) {
        (Some(m), Some(_)) => return src.err("problem.metric", Some(m.span()), "conflicts with metric_weights"),
        (Some(m), None) if m.get_ref() == "euclidean" => Box::new(EuclideanMetric),
        (Some(m), None) => return src.err("problem.metric", Some(m.span()), format!("unknown preset {:?}", m.get_ref())),
        (None, Some(w)) => {
            let weights = w.get_ref();
            if weights.len() != n {
                return src.err(
                    "problem.metric_weights",
                    Some(w.span()),
                    format!("expected {n} weights, found {}", weights.len()),
                );
            }
            if weights.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return src.err("problem.metric_weights", Some(w.span()), "weights must be positive");
            }
            Box::new(DiagonalMetric {
                weights: weights.clone().into(),
            })
        }
        (None, None) => Box::new(EuclideanMetric),
    };
    let boxed = |m: Box<dyn MetricField>| MetricBox(m);

    match (&p.frame, &p.frame_columns) {
        (Some(f), Some(_)) => src.err("problem.frame", Some(f.span()), "conflicts with frame_columns"),
        (Some(f), None) => {
            let preset = match f.get_ref().as_str() {
                "full" => None,
                "heisenberg" => Some(SubRiemannianStructure::heisenberg()),
                "martinet" => Some(SubRiemannianStructure::martinet()),
                other => return src.err("problem.frame", Some(f.span()), format!("unknown preset {other:?}")),
            };
            match preset {
                None => SubRiemannianStructure::new(name, n, n, boxed(metric), FullFrame)
                    .or_else(|e| src.err("problem", None, e)),
                Some(base) if base.dimension() != n => {
                    src.err("problem.frame", Some(f.span()), format!("preset needs dimension {}", base.dimension()))
                }
                Some(base) => {
                    let fields = base.fields().clone();
                    let frame = FrameFn(move |q: &Point| fields.frame(q));
                    SubRiemannianStructure::new(name, n, base.rank(), boxed(metric), frame)
                        .or_else(|e| src.err("problem", None, e))
                }
            }
        }
        (None, Some(cols)) => {
            let fields: Result<Vec<_>, _> = cols
                .get_ref()
                .iter()
                .map(|components| PolynomialField::new(n, components.clone()))
                .collect();
            let frame = fields.and_then(|f| PolynomialFrame::new(n, f));
            match frame {
                Ok(frame) => SubRiemannianStructure::new(name, n, frame.rank(), boxed(metric), frame)
                    .or_else(|e| src.err("problem.frame_columns", Some(cols.span()), e)),
                Err(e) => src.err("problem.frame_columns", Some(cols.span()), e),
            }
        }
        (None, None) => src.err("problem.frame", None, "inline problems need `frame` or `frame_columns`"),
    }
}

struct MetricBox(Box<dyn MetricField>);

impl MetricField for MetricBox {
    fn gram(&self, p: &Point) -> DMatrix<f64> {
        self.0.gram(p)
    }
}

fn drift_field(d: &DriftSection, n: usize, src: &Source) -> Result<Arc<dyn DriftField>, CliError> {
    let span = Some(d.preset.span());
    let missing = |key: &str| src.err::<Arc<dyn DriftField>>("drift.preset", span.clone(), format!("needs `drift.{key}`"));
    match d.preset.get_ref().as_str() {
        "zero" => Ok(Arc::new(ZeroDrift(n))),
        "constant" => {
            let Some(v) = &d.vector else { return missing("vector") };
            if v.len() != n {
                return src.err("drift.vector", None, format!("expected {n} components, found {}", v.len()));
            }
            Ok(Arc::new(PolynomialField::constant(v)))
        }
        "linear" => {
            let Some(rows) = &d.matrix else { return missing("matrix") };
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return src.err("drift.matrix", None, format!("expected a {n} x {n} matrix"));
            }
            let a = DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied());
            PolynomialField::linear(&a)
                .map(|f| Arc::new(f) as Arc<dyn DriftField>)
                .or_else(|e| src.err("drift.matrix", None, e))
        }
        "polynomial" => {
            let Some(c) = &d.components else { return missing("components") };
            PolynomialField::new(n, c.clone())
                .map(|f| Arc::new(f) as Arc<dyn DriftField>)
                .or_else(|e| src.err("drift.components", None, e))
        }
        other => src.err("drift.preset", span, format!("unknown preset {other:?}")),
    }
}
