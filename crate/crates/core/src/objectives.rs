//! Recourse objectives over a black-box predictor, and the per-feature
//! search bounds the optimizer explores.
//!
//! Four objective modes exist. The plain modes score the predicted target
//! directly: `max-y` as relative improvement over the original prediction,
//! `target-y` as negated normalized distance to a target value. The
//! relevance modes score `phi(prediction)` instead, which pseudo-bounds
//! the search to the region the relevance function cares about.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{PredictorError, PredictorHandle};
use crate::relevance::RelevanceSpec;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("target value equals the original prediction")]
    DegenerateTarget,
    #[error("mode {0} requires a relevance function")]
    MissingRelevance(Mode),
    #[error("mode {0} requires a target value")]
    MissingTarget(Mode),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

/// Optimization mode selecting the objective family and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    MaxY,
    TargetY,
    MaxRel,
    TargetRel,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::MaxY, Mode::TargetY, Mode::MaxRel, Mode::TargetRel];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::MaxY => "max-y",
            Mode::TargetY => "target-y",
            Mode::MaxRel => "max-rel",
            Mode::TargetRel => "target-rel",
        }
    }

    /// Target modes aim at a specific value; max modes push upward.
    pub fn is_target(&self) -> bool {
        matches!(self, Mode::TargetY | Mode::TargetRel)
    }

    /// Relevance modes optimize `phi(prediction)` instead of the prediction.
    pub fn uses_relevance(&self) -> bool {
        matches!(self, Mode::MaxRel | Mode::TargetRel)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mode `{s}`; expected one of max-y, max-rel, target-y, target-rel"
                )
            })
    }
}

/// Per-feature search box, in raw feature units.
///
/// Immutable features are pinned with `lower == upper == original value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mutable: Vec<bool>,
}

impl BoundsSpec {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Map a point into the unit box; pinned features map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| {
                let width = hi - lo;
                if width > 0.0 {
                    (v - lo) / width
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// True when every feature is pinned to a single value.
    pub fn fully_degenerate(&self) -> bool {
        self.lower == self.upper
    }
}

/// Build the search box around an instance: each mutable feature moves by
/// `pct`% of its own value (or of its training-range width when the value
/// is zero), intersected with the training range. Immutable features are
/// pinned. An empty intersection falls back to the full training range
/// with a logged warning.
pub fn build_bounds(
    x_orig: &[f64],
    pct: f64,
    ranges: &[(f64, f64)],
    mutable: &[bool],
) -> Result<BoundsSpec, ObjectiveError> {
    if x_orig.len() != ranges.len() || x_orig.len() != mutable.len() {
        return Err(ObjectiveError::InvalidBounds(format!(
            "length mismatch: {} features, {} ranges, {} mutability flags",
            x_orig.len(),
            ranges.len(),
            mutable.len()
        )));
    }
    if !pct.is_finite() || pct <= 0.0 {
        return Err(ObjectiveError::InvalidBounds(format!(
            "bounds percentage must be positive, got {pct}"
        )));
    }
    for (i, (lo, hi)) in ranges.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ObjectiveError::InvalidBounds(format!(
                "feature {i} range [{lo}, {hi}] is not a finite nonempty interval"
            )));
        }
    }

    let mut lower = Vec::with_capacity(x_orig.len());
    let mut upper = Vec::with_capacity(x_orig.len());
    for (i, &x) in x_orig.iter().enumerate() {
        if !mutable[i] {
            lower.push(x);
            upper.push(x);
            continue;
        }
        let (range_lo, range_hi) = ranges[i];
        let radius = if x == 0.0 {
            pct / 100.0 * (range_hi - range_lo)
        } else {
            pct / 100.0 * x.abs()
        };
        let mut lo = (x - radius).max(range_lo);
        let mut hi = (x + radius).min(range_hi);
        if lo > hi {
            log::warn!(
                "feature {i}: +/-{pct}% box around {x} misses the training range \
                 [{range_lo}, {range_hi}]; widening to the full range"
            );
            lo = range_lo;
            hi = range_hi;
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(BoundsSpec {
        lower,
        upper,
        mutable: mutable.to_vec(),
    })
}

/// Everything needed to score a candidate point.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub mode: Mode,
    pub y_orig: f64,
    pub y_target: Option<f64>,
    pub relevance: Option<&'a RelevanceSpec>,
    pub predictor: &'a PredictorHandle,
}

impl<'a> ObjectiveSpec<'a> {
    /// Validate the mode's requirements and produce the evaluator.
    pub fn build(self) -> Result<Evaluator<'a>, ObjectiveError> {
        if self.mode.uses_relevance() && self.relevance.is_none() {
            return Err(ObjectiveError::MissingRelevance(self.mode));
        }
        if self.mode.is_target() {
            match self.y_target {
                None => return Err(ObjectiveError::MissingTarget(self.mode)),
                Some(t) if t == self.y_orig => return Err(ObjectiveError::DegenerateTarget),
                Some(_) => {}
            }
        }
        if self.mode == Mode::MaxY && self.y_orig == 0.0 {
            log::warn!(
                "original prediction is 0; max-y falls back to the absolute difference objective"
            );
        }
        Ok(Evaluator {
            spec: self,
            failure: RefCell::new(None),
        })
    }
}

/// A built objective: maps a candidate point to a score to maximize.
///
/// Predictor failures surface as NaN scores (which the optimizer ranks as
/// minus infinity); the first underlying error is retained and can be
/// collected with [`Evaluator::take_failure`] after the run.
#[derive(Debug)]
pub struct Evaluator<'a> {
    spec: ObjectiveSpec<'a>,
    failure: RefCell<Option<PredictorError>>,
}

impl Evaluator<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.failure.borrow().is_some() {
            return f64::NAN;
        }
        match self.spec.predictor.predict(x) {
            Ok(prediction) => self.score(prediction),
            Err(e) => {
                *self.failure.borrow_mut() = Some(e);
                f64::NAN
            }
        }
    }

    /// Score a raw prediction without consulting the predictor.
    pub fn score(&self, prediction: f64) -> f64 {
        match self.spec.mode {
            Mode::MaxY => {
                if self.spec.y_orig == 0.0 {
                    prediction
                } else {
                    (prediction - self.spec.y_orig) / self.spec.y_orig.abs()
                }
            }
            Mode::TargetY => {
                let target = self.spec.y_target.expect("validated at build");
                -(prediction - target).abs() / (target - self.spec.y_orig).abs()
            }
            Mode::MaxRel | Mode::TargetRel => {
                let relevance = self.spec.relevance.expect("validated at build");
                relevance.eval(prediction).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn take_failure(&self) -> Option<PredictorError> {
        self.failure.borrow_mut().take()
    }
}
