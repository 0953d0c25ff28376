//! One recourse generation end to end: build bounds and objective, run the
//! optimizer, and package the counterfactual with its cost, relevance, and
//! efficiency statistics.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bayesopt::{run_bo, BoConfig, BoError, BoTrace};
use crate::objectives::{build_bounds, BoundsSpec, Mode, ObjectiveError, ObjectiveSpec};
use crate::predictor::{PredictorError, PredictorHandle};
use crate::relevance::{
    auto_relevance, build_relevance, target_relevance, ControlPoint, Extreme, RelevanceError,
    RelevanceSpec,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error("invalid recourse request: {0}")]
    InvalidRequest(String),
}

/// Where the relevance function for a run comes from.
#[derive(Debug, Clone)]
pub enum RelevanceSource {
    /// No relevance function; `phi_cf` stays empty and relevance modes
    /// fail to build.
    None,
    /// Distribution-based construction from training targets.
    Auto { targets: Vec<f64>, extreme: Extreme },
    /// Explicit control points.
    Points(Vec<ControlPoint>),
    /// Target-local construction around the derived target value, over the
    /// given observed target domain.
    TargetLocal { y_min: f64, y_max: f64 },
}

/// Everything one recourse run needs besides the predictor itself.
#[derive(Debug, Clone)]
pub struct RecourseRequest {
    pub x_orig: Vec<f64>,
    /// Per-feature training ranges, used for bounds and cost normalization.
    pub ranges: Vec<(f64, f64)>,
    pub mutable: Vec<bool>,
    pub mode: Mode,
    /// Target modes derive `y_target = y_orig * (1 + target_pct / 100)`.
    pub target_pct: Option<f64>,
    /// Search radius in percent; defaults to 5 for max modes and 100 for
    /// target modes.
    pub bounds_pct: Option<f64>,
    pub bo: BoConfig,
    pub relevance: RelevanceSource,
}

/// Fixed surrogate settings, echoed for auditability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpEcho {
    pub lengthscale: &'static str,
    pub signal_variance: f64,
    pub jitter: f64,
}

impl Default for GpEcho {
    fn default() -> Self {
        Self {
            lengthscale: "median-pairwise-distance, floored at 1e-3, refit each iteration",
            signal_variance: 1.0,
            jitter: 1e-6,
        }
    }
}

/// The effective configuration of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub predictor: String,
    pub mode: Mode,
    pub x_orig: Vec<f64>,
    pub y_orig: f64,
    pub y_target: Option<f64>,
    pub target_pct: Option<f64>,
    pub bounds_pct: f64,
    pub bounds: BoundsSpec,
    pub bo: BoConfig,
    /// Control points of the relevance function actually used, if any.
    pub relevance_points: Option<Vec<ControlPoint>>,
    pub gp: GpEcho,
}

/// A generated counterfactual and its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecourseResult {
    pub x_cf: Vec<f64>,
    pub y_cf: f64,
    pub delta_y_pct: f64,
    pub phi_cf: Option<f64>,
    pub cost: f64,
    pub iters_to_recourse: usize,
    pub trace: BoTrace,
    pub config: ConfigEcho,
}

/// Range-normalized L2 distance between the original point and the
/// counterfactual. Features with a non-positive range width are skipped
/// with a logged warning.
pub fn cost(x_orig: &[f64], x_cf: &[f64], ranges: &[(f64, f64)]) -> f64 {
    assert_eq!(x_orig.len(), x_cf.len());
    assert_eq!(x_orig.len(), ranges.len());
    let mut sum = 0.0;
    for (i, ((a, b), (lo, hi))) in x_orig.iter().zip(x_cf).zip(ranges).enumerate() {
        let width = hi - lo;
        if width > 0.0 {
            let scaled = (b - a) / width;
            sum += scaled * scaled;
        } else if a != b {
            log::warn!("feature {i} has zero-width range; skipped in cost");
        }
    }
    sum.sqrt()
}

/// 1-based index of the first step whose running best is within 1e-9 of
/// the final best: how long the optimizer needed to find its recourse.
pub fn iterations_to_recourse(trace: &BoTrace) -> usize {
    let final_best = trace
        .steps
        .last()
        .expect("trace has at least the initial design")
        .best_so_far;
    trace
        .steps
        .iter()
        .position(|s| s.best_so_far == final_best || (s.best_so_far - final_best).abs() <= 1e-9)
        .expect("the final step matches itself")
        + 1
}

/// Run one recourse generation.
pub fn generate_recourse(
    predictor: &PredictorHandle,
    request: &RecourseRequest,
) -> Result<RecourseResult, EngineError> {
    let d = predictor.dim();
    if request.x_orig.len() != d {
        return Err(EngineError::InvalidRequest(format!(
            "instance has {} features, predictor expects {d}",
            request.x_orig.len()
        )));
    }
    if request.ranges.len() != d || request.mutable.len() != d {
        return Err(EngineError::InvalidRequest(
            "ranges/mutability flags do not match the feature count".into(),
        ));
    }
    if request.x_orig.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::InvalidRequest("instance is not finite".into()));
    }
    if request.mode.is_target() {
        let pct = request.target_pct.ok_or_else(|| {
            EngineError::InvalidRequest("target modes require target_pct".into())
        })?;
        if pct == 0.0 || !pct.is_finite() {
            return Err(EngineError::InvalidRequest(
                "target_pct must be nonzero and finite".into(),
            ));
        }
    }

    // External processes are assumed deterministic; check before relying
    // on them for a whole run.
    if matches!(predictor, PredictorHandle::External(_)) {
        predictor.verify_determinism(&request.x_orig, 100)?;
    }

    let y_orig = predictor.predict(&request.x_orig)?;
    let y_target = if request.mode.is_target() {
        Some(y_orig * (1.0 + request.target_pct.expect("validated") / 100.0))
    } else {
        None
    };

    let bounds_pct = request
        .bounds_pct
        .unwrap_or(if request.mode.is_target() { 100.0 } else { 5.0 });
    let bounds = build_bounds(&request.x_orig, bounds_pct, &request.ranges, &request.mutable)?;

    let relevance: Option<RelevanceSpec> = match &request.relevance {
        RelevanceSource::None => None,
        RelevanceSource::Auto { targets, extreme } => Some(auto_relevance(targets, *extreme)?),
        RelevanceSource::Points(points) => Some(build_relevance(points.clone())?),
        RelevanceSource::TargetLocal { y_min, y_max } => {
            let target = y_target.ok_or_else(|| {
                EngineError::InvalidRequest(
                    "target-local relevance requires a target mode".into(),
                )
            })?;
            // Widen the domain to keep the original prediction inside it.
            Some(target_relevance(
                y_min.min(y_orig),
                y_orig,
                target,
                y_max.max(y_orig),
            )?)
        }
    };

    let evaluator = ObjectiveSpec {
        mode: request.mode,
        y_orig,
        y_target,
        relevance: relevance.as_ref(),
        predictor,
    }
    .build()?;

    let trace = run_bo(|x| evaluator.eval(x), &bounds, &request.bo)?;
    if let Some(failure) = evaluator.take_failure() {
        return Err(failure.into());
    }

    // Several steps can tie at the best objective exactly, most commonly
    // when the relevance function clamps past the target; all of them are
    // equally good outcomes, so return the cheapest one.
    let x_cf = trace
        .steps
        .iter()
        .filter(|s| s.objective == trace.best_value)
        .map(|s| &s.x)
        .min_by(|a, b| {
            let ca = cost(&request.x_orig, a, &request.ranges);
            let cb = cost(&request.x_orig, b, &request.ranges);
            ca.partial_cmp(&cb).expect("costs are finite")
        })
        .unwrap_or(&trace.best_x)
        .clone();
    let y_cf = predictor.predict(&x_cf)?;
    let delta_y_pct = if y_orig == 0.0 {
        log::warn!("original prediction is 0; delta_y_pct reports the absolute change");
        100.0 * (y_cf - y_orig)
    } else {
        100.0 * (y_cf - y_orig) / y_orig.abs()
    };
    let phi_cf = match &relevance {
        Some(spec) => Some(spec.eval(y_cf)?),
        None => None,
    };

    Ok(RecourseResult {
        cost: cost(&request.x_orig, &x_cf, &request.ranges),
        iters_to_recourse: iterations_to_recourse(&trace),
        delta_y_pct,
        phi_cf,
        y_cf,
        config: ConfigEcho {
            predictor: predictor.label(),
            mode: request.mode,
            x_orig: request.x_orig.clone(),
            y_orig,
            y_target,
            target_pct: request.target_pct,
            bounds_pct,
            bounds,
            bo: request.bo,
            relevance_points: relevance.map(|spec| spec.points().to_vec()),
            gp: GpEcho::default(),
        },
        x_cf,
        trace,
    })
}

/// Emit a trace as CSV: `step,objective,best_so_far` plus one column per
/// feature.
pub fn write_trace_csv<W: Write>(
    trace: &BoTrace,
    feature_names: &[String],
    mut writer: W,
) -> std::io::Result<()> {
    write!(writer, "step,objective,best_so_far")?;
    for name in feature_names {
        write!(writer, ",{name}")?;
    }
    writeln!(writer)?;
    for (i, step) in trace.steps.iter().enumerate() {
        write!(writer, "{},{},{}", i + 1, step.objective, step.best_so_far)?;
        for v in &step.x {
            write!(writer, ",{v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
