//! Counterfactual recourse for regression models, driven by Bayesian
//! optimization over a black-box predictor.
//!
//! The crate is organized around one pipeline:
//!
//! * [`predictor`] — black-box regression models (built-in analytic
//!   functions, a k-NN regressor fitted on CSV data, or an external
//!   process speaking a line protocol).
//! * [`relevance`] — relevance functions `phi: Y -> [0, 1]` built from
//!   control points via cubic Hermite interpolation.
//! * [`objectives`] — the four recourse objectives (max/target, plain-y or
//!   relevance-weighted) and per-feature search bounds.
//! * [`surrogate`] — Gaussian-process regression with a Matern-2.5 kernel.
//! * [`bayesopt`] — the optimization loop: UCB acquisition over the
//!   surrogate, candidate search, trace recording.
//! * [`engine`] — one recourse generation end to end, producing a
//!   [`engine::RecourseResult`] with cost and efficiency statistics.
//! * [`harness`] — batch experiments comparing plain-y and relevance arms,
//!   with report and box-plot data emission.

#![forbid(unsafe_code)]

pub mod bayesopt;
pub mod engine;
pub mod harness;
pub mod objectives;
pub mod predictor;
pub mod relevance;
pub mod surrogate;
