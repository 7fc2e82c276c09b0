//! Score model interface and backends.
//!
//! A score model is anything that maps `(x, t)` to the score vector
//! `∇_x log q_t(x)` of its marginal density. Three backends are provided:
//!
//! - [`GmmScoreModel`] — analytic Gaussian mixture (exact score, exact
//!   log-density; the test oracle for everything else),
//! - [`GridScoreModel`] — multilinear interpolation over a regular
//!   space × time grid loaded from a file,
//! - [`MlpScoreModel`] — a small fully connected network trained by
//!   denoising score matching (see [`crate::train`]).

mod gmm;
mod grid;
mod mlp;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use gmm::{gmm_log_density, gmm_score, GmmParams, GmmScoreModel};
pub use grid::GridScoreModel;
pub use mlp::{time_embedding, MlpScoreModel, MlpWeights, HIDDEN_WIDTH, TIME_EMBED_DIM};

use crate::error::{Error, Result};

/// Step used by the default finite-difference divergence.
const FD_STEP: f64 = 1e-5;

/// Interface shared by all score backends.
///
/// Implementations are immutable after construction; queries need no
/// synchronization.
pub trait ScoreModel: Send + Sync {
    /// State dimension d.
    fn dim(&self) -> usize;

    /// Score vector ∇_x log q_t(x); must be finite for all valid inputs.
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// Exact log-density in nats, for backends that have one.
    fn log_density(&self, x: &[f64], t: f64) -> Option<Result<f64>> {
        let _ = (x, t);
        None
    }

    /// Divergence of the score field, ⟨∇, ∇log q_t⟩(x).
    ///
    /// Analytic backends override this; the default estimates it with
    /// central finite differences and therefore costs 2·d extra score
    /// evaluations.
    fn score_divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = self.dim();
        let mut total = 0.0;
        let mut xp = x.to_vec();
        for i in 0..d {
            xp[i] = x[i] + FD_STEP;
            let plus = self.score(&xp, t)?[i];
            xp[i] = x[i] - FD_STEP;
            let minus = self.score(&xp, t)?[i];
            xp[i] = x[i];
            total += (plus - minus) / (2.0 * FD_STEP);
        }
        Ok(total)
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Wrapper that counts `score` calls, used to assert the per-step score
/// budget (density tracking must not add evaluations).
pub struct CountingScoreModel {
    inner: Arc<dyn ScoreModel>,
    calls: AtomicU64,
}

impl CountingScoreModel {
    pub fn new(inner: Arc<dyn ScoreModel>) -> Self {
        CountingScoreModel {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ScoreModel for CountingScoreModel {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(x, t)
    }

    fn log_density(&self, x: &[f64], t: f64) -> Option<Result<f64>> {
        self.inner.log_density(x, t)
    }

    fn score_divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        self.inner.score_divergence(x, t)
    }
}
