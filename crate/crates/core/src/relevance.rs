//! Relevance functions over a regression target domain.
//!
//! A relevance function `phi: Y -> [0, 1]` expresses how important each
//! target value is to the user. It is anchored by control points
//! `(y, rel, deriv)` and interpolated between them with cubic Hermite
//! segments; outside the outermost control points it is held constant at
//! the boundary relevance, so the codomain stays `[0, 1]` everywhere.
//!
//! Control-point derivatives default to 0, which makes every control point
//! a flat spot and keeps each segment inside the closed interval spanned by
//! its endpoint relevances (no overshoot).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("duplicate control point at y = {0}")]
    DuplicateControlPoint(f64),
    #[error("relevance {0} outside [0, 1]")]
    RelevanceOutOfRange(f64),
    #[error("need at least 2 control points, got {0}")]
    InsufficientControlPoints(usize),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("need at least 5 finite target values, got {0}")]
    InsufficientData(usize),
    #[error("target distribution has no spread to define extremes")]
    DegenerateDistribution,
    #[error("target value equals the original prediction")]
    DegenerateTarget,
    #[error("invalid target domain: {0}")]
    InvalidDomain(String),
    #[error("control point file: {0}")]
    Csv(#[from] csv::Error),
    #[error("control point file: missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("control point file: row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

/// One `(y, rel, deriv)` anchor of a relevance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    /// Target-domain value, in the units of the regression target.
    pub y: f64,
    /// Relevance at `y`, in `[0, 1]`.
    pub rel: f64,
    /// Derivative of the relevance function at `y`. Zero marks an extremum.
    #[serde(default)]
    pub deriv: f64,
}

impl ControlPoint {
    /// Control point with the default zero derivative.
    pub fn new(y: f64, rel: f64) -> Self {
        Self { y, rel, deriv: 0.0 }
    }

    pub fn with_deriv(y: f64, rel: f64, deriv: f64) -> Self {
        Self { y, rel, deriv }
    }
}

/// Cubic segment between two adjacent control points, stored as polynomial
/// coefficients in the normalized coordinate `t = (y - y0) / (y1 - y0)`.
#[derive(Debug, Clone, Copy)]
struct HermiteSegment {
    y0: f64,
    y1: f64,
    coeff: [f64; 4],
}

impl HermiteSegment {
    fn new(p0: &ControlPoint, p1: &ControlPoint) -> Self {
        let h = p1.y - p0.y;
        let (r0, r1) = (p0.rel, p1.rel);
        let (m0, m1) = (p0.deriv * h, p1.deriv * h);
        Self {
            y0: p0.y,
            y1: p1.y,
            coeff: [
                r0,
                m0,
                -3.0 * r0 + 3.0 * r1 - 2.0 * m0 - m1,
                2.0 * r0 - 2.0 * r1 + m0 + m1,
            ],
        }
    }

    fn eval(&self, y: f64) -> f64 {
        let t = (y - self.y0) / (self.y1 - self.y0);
        let [c0, c1, c2, c3] = self.coeff;
        c0 + t * (c1 + t * (c2 + t * c3))
    }
}

/// A built relevance function: ordered control points plus the cubic
/// Hermite segment between each adjacent pair.
///
/// Immutable after construction; evaluation is reentrant.
#[derive(Debug, Clone)]
pub struct RelevanceSpec {
    points: Vec<ControlPoint>,
    segments: Vec<HermiteSegment>,
}

impl RelevanceSpec {
    /// Evaluate `phi(y)`.
    ///
    /// Inside the control-point domain this is the Hermite segment value;
    /// outside it is the boundary control point's relevance. The result is
    /// clamped to `[0, 1]` so user-supplied derivatives cannot push it out.
    pub fn eval(&self, y: f64) -> Result<f64, RelevanceError> {
        if !y.is_finite() {
            return Err(RelevanceError::NonFiniteInput);
        }
        let first = &self.points[0];
        let last = &self.points[self.points.len() - 1];
        let raw = if y <= first.y {
            first.rel
        } else if y >= last.y {
            last.rel
        } else {
            let idx = self
                .points
                .partition_point(|p| p.y <= y)
                .saturating_sub(1)
                .min(self.segments.len() - 1);
            self.segments[idx].eval(y)
        };
        Ok(raw.clamp(0.0, 1.0))
    }

    /// `[y_min, y_max]` spanned by the control points.
    pub fn domain(&self) -> (f64, f64) {
        (self.points[0].y, self.points[self.points.len() - 1].y)
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }
}

/// Build a relevance function through the given control points.
///
/// Points are sorted by `y`; duplicates, relevances outside `[0, 1]`, and
/// fewer than two points are rejected.
pub fn build_relevance(points: Vec<ControlPoint>) -> Result<RelevanceSpec, RelevanceError> {
    if points.len() < 2 {
        return Err(RelevanceError::InsufficientControlPoints(points.len()));
    }
    for p in &points {
        if !(p.y.is_finite() && p.rel.is_finite() && p.deriv.is_finite()) {
            return Err(RelevanceError::NonFiniteInput);
        }
        if !(0.0..=1.0).contains(&p.rel) {
            return Err(RelevanceError::RelevanceOutOfRange(p.rel));
        }
    }
    let mut points = points;
    points.sort_by(|a, b| a.y.partial_cmp(&b.y).expect("finite y"));
    for pair in points.windows(2) {
        if pair[0].y >= pair[1].y {
            return Err(RelevanceError::DuplicateControlPoint(pair[0].y));
        }
    }
    let segments = points
        .windows(2)
        .map(|pair| HermiteSegment::new(&pair[0], &pair[1]))
        .collect();
    Ok(RelevanceSpec { points, segments })
}

/// Which tail(s) of the target distribution count as maximally relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Right,
    Both,
}

/// Build a distribution-based relevance function from training targets.
///
/// Control points come from box-plot statistics: the median gets relevance
/// 0 and the adjacent values (whisker ends, `Q3 + 1.5*IQR` capped at the
/// observed extremes) get relevance 1, on the right tail or on both tails.
/// Quartiles use linear interpolation of the sorted order statistics.
pub fn auto_relevance(
    train_targets: &[f64],
    extreme: Extreme,
) -> Result<RelevanceSpec, RelevanceError> {
    let mut sorted: Vec<f64> = train_targets.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 5 {
        return Err(RelevanceError::InsufficientData(sorted.len()));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite targets"));
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(RelevanceError::DegenerateDistribution);
    }

    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let adj_high = sorted[n - 1].min(q3 + 1.5 * iqr);
    let adj_low = sorted[0].max(q1 - 1.5 * iqr);

    let mut points = vec![ControlPoint::new(median, 0.0)];
    if adj_high > median {
        points.push(ControlPoint::new(adj_high, 1.0));
    }
    if extreme == Extreme::Both && adj_low < median {
        points.push(ControlPoint::new(adj_low, 1.0));
    }
    if points.len() < 2 {
        // Whiskers collapsed onto the median; there is no extreme to favor.
        return Err(RelevanceError::DegenerateDistribution);
    }
    build_relevance(points)
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Build the target-local relevance function for one recourse run.
///
/// Control points: `(y_min, 0)`, `(y_orig, 0.5)`, `(y_target, 1)`,
/// `(y_max, 0)`, so the optimization direction always points toward the
/// target at maximum relevance. When the target sits at or beyond an end of
/// the observed domain, the zero point on that side is dropped and the
/// relevance clamps to 1 past the target; a zero endpoint coinciding with
/// `y_orig` is likewise dropped in favor of the `(y_orig, 0.5)` anchor.
pub fn target_relevance(
    y_min: f64,
    y_orig: f64,
    y_target: f64,
    y_max: f64,
) -> Result<RelevanceSpec, RelevanceError> {
    for v in [y_min, y_orig, y_target, y_max] {
        if !v.is_finite() {
            return Err(RelevanceError::NonFiniteInput);
        }
    }
    if y_min >= y_max {
        return Err(RelevanceError::InvalidDomain(format!(
            "y_min {y_min} must be below y_max {y_max}"
        )));
    }
    if !(y_min..=y_max).contains(&y_orig) {
        return Err(RelevanceError::InvalidDomain(format!(
            "y_orig {y_orig} outside [{y_min}, {y_max}]"
        )));
    }
    if y_target == y_orig {
        return Err(RelevanceError::DegenerateTarget);
    }

    let mut points = vec![
        ControlPoint::new(y_orig, 0.5),
        ControlPoint::new(y_target, 1.0),
    ];
    if y_target > y_min && y_orig > y_min {
        points.push(ControlPoint::new(y_min, 0.0));
    }
    if y_target < y_max && y_orig < y_max {
        points.push(ControlPoint::new(y_max, 0.0));
    }
    build_relevance(points)
}

/// Load control points from a CSV file with header `y,rel,deriv`.
///
/// The `deriv` column is optional and defaults to 0.
pub fn load_control_points(path: &Path) -> Result<Vec<ControlPoint>, RelevanceError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| headers.iter().position(|h| h.trim() == name);
    let y_col = col("y").ok_or(RelevanceError::MissingColumn("y"))?;
    let rel_col = col("rel").ok_or(RelevanceError::MissingColumn("rel"))?;
    let deriv_col = col("deriv");

    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize| -> Result<f64, RelevanceError> {
            record
                .get(idx)
                .ok_or_else(|| RelevanceError::BadRow {
                    row,
                    msg: "missing field".into(),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| RelevanceError::BadRow {
                    row,
                    msg: e.to_string(),
                })
        };
        let deriv = match deriv_col {
            Some(idx) => field(idx)?,
            None => 0.0,
        };
        points.push(ControlPoint::with_deriv(field(y_col)?, field(rel_col)?, deriv));
    }
    Ok(points)
}
