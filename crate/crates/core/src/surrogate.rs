//! Gaussian-process surrogate with a Matern covariance, nu = 2.5.
//!
//! The model is fit to the optimization history each iteration: inputs are
//! expected in the normalized unit box, targets are standardized to zero
//! mean and unit variance internally, and the posterior is returned in the
//! original target units. Smoothness is fixed at nu = 2.5, for which the
//! Matern kernel has an elementary closed form; no hyperparameters are
//! learned beyond the median-distance length-scale heuristic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Fixed Matern smoothness. The closed form below is exact for this value.
pub const MATERN_NU: f64 = 2.5;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("kernel distance must be nonnegative, got {0}")]
    InvalidDistance(f64),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("kernel matrix is not positive definite, even with jitter {final_jitter}")]
    IllConditionedKernel { final_jitter: f64 },
    #[error("empty observation history")]
    EmptyHistory,
}

/// Matern-2.5 kernel parameters over normalized inputs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelParams {
    /// Length scale, in normalized-input units. Must be positive.
    pub length_scale: f64,
    /// Prior variance at distance zero. Must be positive.
    pub signal_variance: f64,
    /// Nugget added to the Gram diagonal. Floored at 1e-12.
    pub jitter: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_variance: 1.0,
            jitter: 1e-6,
        }
    }
}

impl KernelParams {
    fn validate(&self) -> Result<(), SurrogateError> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(SurrogateError::InvalidParams(format!(
                "length_scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(SurrogateError::InvalidParams(format!(
                "signal_variance must be positive, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }
}

/// Matern covariance at nu = 2.5 as a function of Euclidean distance:
/// `sv * (1 + sqrt(5) r / l + 5 r^2 / (3 l^2)) * exp(-sqrt(5) r / l)`.
pub fn matern25(distance: f64, params: &KernelParams) -> Result<f64, SurrogateError> {
    params.validate()?;
    if !distance.is_finite() {
        return Err(SurrogateError::NonFiniteInput);
    }
    if distance < 0.0 {
        return Err(SurrogateError::InvalidDistance(distance));
    }
    let z = 5.0_f64.sqrt() * distance / params.length_scale;
    Ok(params.signal_variance * (1.0 + z + z * z / 3.0) * (-z).exp())
}

/// Length-scale heuristic: median pairwise distance of the inputs, floored
/// at 1e-3. Falls back to 1.0 when there are fewer than two points.
pub fn median_lengthscale(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * (points.len().saturating_sub(1)) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            dists.push(euclidean(a, b));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    median.max(1e-3)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A fitted Gaussian process: observation inputs, standardization
/// constants, and the Cholesky factor of the jittered Gram matrix.
///
/// Immutable once fitted; `posterior_at` is reentrant.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    kernel: KernelParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    target_mean: f64,
    target_scale: f64,
    effective_jitter: f64,
}

/// Fit a GP to the observation history.
///
/// Targets are standardized internally; the Gram matrix gets
/// `jitter * I` added, and on Cholesky failure the jitter escalates by
/// factors of 10 up to 1e-4 before giving up.
pub fn fit_gp(
    points: &[Vec<f64>],
    values: &[f64],
    params: KernelParams,
) -> Result<GpModel, SurrogateError> {
    assert_eq!(points.len(), values.len(), "points/values length mismatch");
    params.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(SurrogateError::EmptyHistory);
    }
    if values.iter().any(|v| !v.is_finite())
        || points.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(SurrogateError::NonFiniteInput);
    }

    let target_mean = values.iter().sum::<f64>() / n as f64;
    let variance = values
        .iter()
        .map(|v| (v - target_mean) * (v - target_mean))
        .sum::<f64>()
        / n as f64;
    let target_scale = if variance.sqrt() > 1e-12 {
        variance.sqrt()
    } else {
        1.0
    };
    let standardized =
        DVector::from_iterator(n, values.iter().map(|v| (v - target_mean) / target_scale));

    let gram = DMatrix::from_fn(n, n, |i, j| {
        matern25(euclidean(&points[i], &points[j]), &params).expect("distance is nonnegative")
    });

    let mut jitter = params.jitter.max(1e-12);
    let (chol, effective_jitter) = loop {
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        match Cholesky::new(k) {
            Some(chol) => break (chol, jitter),
            None if jitter < 1e-4 => jitter = (jitter * 10.0).min(1e-4),
            None => {
                return Err(SurrogateError::IllConditionedKernel {
                    final_jitter: jitter,
                })
            }
        }
    };
    let alpha = chol.solve(&standardized);

    Ok(GpModel {
        inputs: points.to_vec(),
        kernel: params,
        chol,
        alpha,
        target_mean,
        target_scale,
        effective_jitter,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Jitter actually used after any escalation.
    pub fn effective_jitter(&self) -> f64 {
        self.effective_jitter
    }

    /// Lower-triangular Cholesky factor of the jittered Gram matrix.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior `(mean, standard deviation)` at a query point, in the
    /// units of the original (de-standardized) targets.
    pub fn posterior_at(&self, x: &[f64]) -> Result<(f64, f64), SurrogateError> {
        assert_eq!(x.len(), self.inputs[0].len(), "query dimension mismatch");
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteInput);
        }
        let k = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|xi| matern25(euclidean(x, xi), &self.kernel).expect("nonnegative distance")),
        );
        let mu_std = k.dot(&self.alpha);
        let variance_std = (self.kernel.signal_variance - k.dot(&self.chol.solve(&k))).max(0.0);
        Ok((
            self.target_mean + self.target_scale * mu_std,
            self.target_scale * variance_std.sqrt(),
        ))
    }
}
