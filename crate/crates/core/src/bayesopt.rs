//! The outer optimization loop.
//!
//! One run: evaluate a Latin-stratified initial design, then repeatedly
//! refit the Gaussian-process surrogate to the history, pick the candidate
//! maximizing the upper confidence bound, evaluate the black-box objective
//! there, and append to the trace. Everything is driven by one seeded RNG,
//! so a run is fully deterministic given its configuration.
//!
//! Acquisition maximization is a pure candidate search: uniform samples in
//! the bounds, scored by UCB, argmax wins with ties broken toward the
//! lowest candidate index. Derivative-free, and robust in a bounded box.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::BoundsSpec;
use crate::surrogate::{fit_gp, median_lengthscale, GpModel, KernelParams, SurrogateError};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Optimizer knobs. The defaults are what every report echoes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Number of initial stratified samples.
    pub n_init: usize,
    /// Number of surrogate-guided iterations after the initial design.
    pub n_iter: usize,
    /// UCB exploration weight.
    pub lambda: f64,
    /// Candidate samples per acquisition maximization.
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_init: 8,
            n_iter: 50,
            lambda: 1.5,
            n_candidates: 512,
            seed: 0,
        }
    }
}

/// One objective evaluation in a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoStep {
    pub x: Vec<f64>,
    /// Objective value used for ranking; non-finite evaluations are
    /// recorded as negative infinity.
    pub objective: f64,
    pub best_so_far: f64,
    /// Set when the raw objective came back non-finite.
    pub non_finite: bool,
}

/// Complete record of a run: every evaluation in order plus the best point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoTrace {
    pub steps: Vec<BoStep>,
    pub best_x: Vec<f64>,
    pub best_value: f64,
}

/// Upper confidence bound acquisition score.
pub fn ucb(mu: f64, sigma: f64, lambda: f64) -> f64 {
    mu + lambda * sigma
}

/// Propose the next point: sample `n_candidates` uniform points in the
/// bounds (pinned features stay pinned), score each by UCB of the
/// posterior at the bounds-normalized candidate, return the argmax.
pub fn propose_next<R: Rng>(
    model: &GpModel,
    bounds: &BoundsSpec,
    config: &BoConfig,
    rng: &mut R,
) -> Result<Vec<f64>, BoError> {
    validate(bounds, config)?;
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..config.n_candidates {
        let candidate = sample_uniform(bounds, rng);
        let (mu, sigma) = model.posterior_at(&bounds.normalize(&candidate))?;
        let score = ucb(mu, sigma, config.lambda);
        if best.is_none() || score > best_score {
            best_score = score;
            best = Some(candidate);
        }
    }
    Ok(best.expect("n_candidates >= 1"))
}

/// Run the full loop against a black-box objective.
///
/// Non-finite objective values are ranked as negative infinity and flag
/// their step; the run continues. The trace always holds exactly
/// `n_init + n_iter` steps.
pub fn run_bo<F>(
    mut objective: F,
    bounds: &BoundsSpec,
    config: &BoConfig,
) -> Result<BoTrace, BoError>
where
    F: FnMut(&[f64]) -> f64,
{
    validate(bounds, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = RunState::new(config.n_init + config.n_iter);

    for x in initial_design(bounds, config.n_init, &mut rng) {
        let value = objective(&x);
        state.record(bounds, x, value);
    }
    for _ in 0..config.n_iter {
        let params = KernelParams {
            length_scale: median_lengthscale(&state.norm_points),
            ..KernelParams::default()
        };
        let model = fit_gp(&state.norm_points, &state.fit_values, params)?;
        let x = propose_next(&model, bounds, config, &mut rng)?;
        let value = objective(&x);
        state.record(bounds, x, value);
    }
    Ok(state.into_trace())
}

struct RunState {
    steps: Vec<BoStep>,
    norm_points: Vec<Vec<f64>>,
    // Values fed to the surrogate: non-finite evaluations are replaced by
    // the worst finite value seen so far so the fit stays well defined.
    fit_values: Vec<f64>,
    best_value: f64,
    best_x: Option<Vec<f64>>,
}

impl RunState {
    fn new(capacity: usize) -> Self {
        Self {
            steps: Vec::with_capacity(capacity),
            norm_points: Vec::with_capacity(capacity),
            fit_values: Vec::with_capacity(capacity),
            best_value: f64::NEG_INFINITY,
            best_x: None,
        }
    }

    fn record(&mut self, bounds: &BoundsSpec, x: Vec<f64>, value: f64) {
        let non_finite = !value.is_finite();
        let ranked = if non_finite { f64::NEG_INFINITY } else { value };
        if self.best_x.is_none() || ranked > self.best_value {
            self.best_value = ranked;
            self.best_x = Some(x.clone());
        }
        let fit_value = if non_finite {
            let worst = self
                .fit_values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if worst.is_finite() {
                worst
            } else {
                0.0
            }
        } else {
            value
        };
        self.fit_values.push(fit_value);
        self.norm_points.push(bounds.normalize(&x));
        self.steps.push(BoStep {
            x,
            objective: ranked,
            best_so_far: self.best_value,
            non_finite,
        });
    }

    fn into_trace(self) -> BoTrace {
        BoTrace {
            steps: self.steps,
            best_x: self.best_x.expect("n_init >= 1 recorded at least one step"),
            best_value: self.best_value,
        }
    }
}

/// Per-feature Latin-stratified initial design: each feature gets its own
/// random permutation of `n` strata, with one uniform draw inside each
/// stratum. Pinned features stay at their single value.
fn initial_design<R: Rng>(bounds: &BoundsSpec, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let strata: Vec<Vec<usize>> = (0..d).map(|_| permutation(n, rng)).collect();
    (0..n)
        .map(|j| {
            (0..d)
                .map(|i| {
                    let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
                    if lo == hi {
                        lo
                    } else {
                        let u: f64 = rng.random();
                        lo + (strata[i][j] as f64 + u) / n as f64 * (hi - lo)
                    }
                })
                .collect()
        })
        .collect()
}

fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn validate(bounds: &BoundsSpec, config: &BoConfig) -> Result<(), BoError> {
    if config.n_init == 0 {
        return Err(BoError::InvalidConfig("n_init must be at least 1".into()));
    }
    if config.n_candidates == 0 {
        return Err(BoError::InvalidConfig(
            "n_candidates must be at least 1".into(),
        ));
    }
    if bounds.dim() == 0 {
        return Err(BoError::InvalidConfig("bounds are empty".into()));
    }
    for i in 0..bounds.dim() {
        if !(bounds.lower[i].is_finite() && bounds.upper[i].is_finite())
            || bounds.lower[i] > bounds.upper[i]
        {
            return Err(BoError::InvalidConfig(format!(
                "feature {i} bounds [{}, {}] are invalid",
                bounds.lower[i], bounds.upper[i]
            )));
        }
    }
    Ok(())
}

fn sample_uniform<R: Rng>(bounds: &BoundsSpec, rng: &mut R) -> Vec<f64> {
    (0..bounds.dim())
        .map(|i| {
            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect()
}
