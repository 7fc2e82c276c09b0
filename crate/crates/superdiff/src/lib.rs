//! Inference-time superposition of diffusion models.
//!
//! This crate implements reverse-time SDE/ODE sampling for score-based
//! diffusion models together with on-the-fly log-density tracking, and uses
//! the tracked densities to combine several pretrained models during
//! inference:
//!
//! - **OR** — sample from the mixture of the model densities by softmax
//!   re-weighting of the per-model scores with the running log-densities.
//! - **AND** — sample points that are equally likely under all models by
//!   solving a small linear system for the per-step weights.
//!
//! Everything is built around plain `f64` state vectors so that results can
//! be validated against closed-form Gaussian-mixture ground truth:
//!
//! - [`schedule`] — noise schedules (α_t, σ_t) and the induced
//!   Ornstein–Uhlenbeck forward drift/diffusion coefficients.
//! - [`score`] — the [`score::ScoreModel`] interface with analytic
//!   Gaussian-mixture, grid-interpolated, and MLP backends.
//! - [`train`] — denoising score matching for the toy MLP backend.
//! - [`estimator`] — log-density increments along a trajectory: the Itô
//!   (SDE) estimator, the smooth (ODE) estimator, the discrete-time
//!   detailed-balance estimator, and divergence oracles.
//! - [`superpose`] — per-step model weights κ (OR softmax / AND linear
//!   system) and the superposed drift.
//! - [`integrate`] — Euler–Maruyama / Euler steppers and the full
//!   superposition sampling loop.
//! - [`harness`] — experiment configs, metrics, CSV/SVG/JSON emission, and
//!   the `superdiff` CLI entry point.
//!
//! See the `examples/` directory for one runnable program per capability;
//! `superdiff run --config <json>` drives the same experiments from the
//! command line.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod integrate;
pub mod linalg;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod superpose;
pub mod train;

pub use error::{Error, Result};
pub use schedule::{Schedule, ScheduleEval, T_MIN};
pub use score::{GmmParams, GmmScoreModel, GridScoreModel, MlpScoreModel, ScoreModel};
pub use superpose::{Kappa, SuperposeMode};
