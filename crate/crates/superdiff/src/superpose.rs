//! Per-step model weights κ and the superposed drift.
//!
//! OR mode weights the models by a softmax over their running log-densities
//! (optionally tempered and biased); the resulting drift samples the mixture
//! of the model densities. AND mode instead solves a small linear system so
//! that every model's log-density changes by the same amount each step
//! (optionally offset by a per-model bias), which steers trajectories onto
//! the equal-density locus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::schedule::Schedule;

/// Condition-number limit beyond which the AND system falls back to uniform
/// weights. Near-collinear scores make every weighting equivalent anyway.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Per-model combination weights for one step. Entries sum to 1; OR weights
/// lie on the simplex, AND weights may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Kappa(Vec<f64>);

impl Kappa {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::DegenerateWeights("kappa must sum to 1"));
        }
        Ok(Kappa(weights))
    }

    pub fn uniform(m: usize) -> Self {
        Kappa(vec![1.0 / m as f64; m])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How the per-step weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuperposeMode {
    /// Mixture sampling: κ = softmax(T·log q + bias).
    Or {
        temperature: f64,
        #[serde(default)]
        bias: Vec<f64>,
    },
    /// Equal-density sampling: κ solves the density-control system, with
    /// per-model offsets ℓ added to the right-hand side.
    And {
        #[serde(default)]
        bias: Vec<f64>,
    },
    /// Constant weights; the baseline combination.
    #[serde(rename = "average")]
    FixedAverage { weights: Vec<f64> },
}

impl SuperposeMode {
    /// Check the mode against a model count, returning the per-model bias /
    /// weights expanded to length m.
    pub fn validate(&self, m: usize) -> Result<()> {
        let check_bias = |bias: &Vec<f64>| -> Result<()> {
            if !bias.is_empty() && bias.len() != m {
                return Err(Error::InvalidConfig(format!(
                    "bias has {} entries for {} models",
                    bias.len(),
                    m
                )));
            }
            if bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidConfig("bias must be finite".into()));
            }
            Ok(())
        };
        match self {
            SuperposeMode::Or { temperature, bias } => {
                if !temperature.is_finite() {
                    return Err(Error::InvalidConfig("temperature must be finite".into()));
                }
                check_bias(bias)
            }
            SuperposeMode::And { bias } => check_bias(bias),
            SuperposeMode::FixedAverage { weights } => {
                if weights.len() != m {
                    return Err(Error::InvalidConfig(format!(
                        "average weights have {} entries for {} models",
                        weights.len(),
                        m
                    )));
                }
                let sum: f64 = weights.iter().sum();
                if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidConfig(
                        "average weights must be a simplex vector".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// True when the weights depend on the tracked log-densities.
    pub fn needs_density_tracking(&self) -> bool {
        matches!(self, SuperposeMode::Or { .. } | SuperposeMode::And { .. })
    }
}

/// OR weights: softmax(T·logq + bias), max-subtracted.
pub fn kappa_or(logqs: &[f64], temperature: f64, bias: &[f64]) -> Result<Kappa> {
    if logqs.iter().any(|l| !l.is_finite()) {
        return Err(Error::DegenerateWeights(
            "softmax over non-finite log-densities",
        ));
    }
    let m = logqs.len();
    let mut z: Vec<f64> = (0..m)
        .map(|i| temperature * logqs[i] + bias.get(i).copied().unwrap_or(0.0))
        .collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights("softmax degenerate"));
    }
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    Kappa::new(z.into_iter().map(|v| v / total).collect())
}

/// Result of one AND-mode weight solve.
#[derive(Debug, Clone)]
pub struct KappaSolve {
    pub kappa: Kappa,
    /// The common log-density change shared by all models this step.
    pub dlog: f64,
    /// True when the system was singular/ill-conditioned and uniform weights
    /// were substituted.
    pub fallback: bool,
    /// max_i |(a_i·κ + b_i) − (dlog + ℓ_i)|, the back-substitution residual.
    pub residual: f64,
    pub condition: f64,
}

/// AND weights: solve the (M+1)×(M+1) density-control system.
///
/// Row i states that model i's Itô increment under the assembled drift equals
/// the shared unknown `dlog` plus its bias offset; the last row normalizes
/// Σκ = 1. `dw` must be the very noise increment the integrator will apply
/// this step (the system's right-hand side contains the realized noise).
pub fn kappa_and(
    scores: &[Vec<f64>],
    schedule: &Schedule,
    x: &[f64],
    tau: f64,
    dtau: f64,
    dw: &[f64],
    bias: &[f64],
) -> Result<KappaSolve> {
    let m = scores.len();
    assert!(m >= 1, "need at least one model");
    let d = x.len();
    let ev = schedule.eval(1.0 - tau)?;
    let a_coef = ev.dlog_alpha_dt;
    let g2 = ev.g2;
    let g = ev.g;

    // Per-model reverse drifts u_j = −f + g² s_j; with Σκ = 1 the assembled
    // drift Σκ_j u_j is exactly the superposed drift.
    let mut a = vec![0.0; (m + 1) * (m + 1)];
    let mut b = vec![0.0; m + 1];
    let mut a_rows = vec![vec![0.0; m]; m];
    let mut b_terms = vec![0.0; m];
    for i in 0..m {
        let s_i = &scores[i];
        for j in 0..m {
            let s_j = &scores[j];
            let mut inner = 0.0;
            for k in 0..d {
                let u_jk = -a_coef * x[k] + g2 * s_j[k];
                inner += u_jk * s_i[k];
            }
            a_rows[i][j] = dtau * inner;
        }
        let mut inner = 0.0;
        for k in 0..d {
            inner += (g * dw[k] + (a_coef * x[k] - 0.5 * g2 * s_i[k]) * dtau) * s_i[k];
        }
        b_terms[i] = d as f64 * a_coef * dtau + inner;
    }
    for i in 0..m {
        for j in 0..m {
            a[i * (m + 1) + j] = a_rows[i][j];
        }
        a[i * (m + 1) + m] = -1.0;
        b[i] = -b_terms[i] + bias.get(i).copied().unwrap_or(0.0);
    }
    for j in 0..m {
        a[m * (m + 1) + j] = 1.0;
    }
    b[m] = 1.0;

    let solved = linalg::solve(&a, &b);
    let (kappa, dlog, fallback, condition) = match solved {
        Ok(s) if s.condition <= CONDITION_LIMIT => {
            let kappa = Kappa::new(s.x[..m].to_vec())?;
            (kappa, s.x[m], false, s.condition)
        }
        Ok(s) => (Kappa::uniform(m), f64::NAN, true, s.condition),
        Err(_) => (Kappa::uniform(m), f64::NAN, true, f64::INFINITY),
    };

    // Back-substitute: each model's increment under the chosen κ.
    let per_model: Vec<f64> = (0..m)
        .map(|i| {
            let row: f64 = (0..m).map(|j| a_rows[i][j] * kappa.weights()[j]).sum();
            row + b_terms[i]
        })
        .collect();
    let dlog = if fallback {
        let biased_mean = per_model
            .iter()
            .enumerate()
            .map(|(i, v)| v - bias.get(i).copied().unwrap_or(0.0))
            .sum::<f64>()
            / m as f64;
        biased_mean
    } else {
        dlog
    };
    let residual = per_model
        .iter()
        .enumerate()
        .map(|(i, v)| (v - (dlog + bias.get(i).copied().unwrap_or(0.0))).abs())
        .fold(0.0, f64::max);

    Ok(KappaSolve {
        kappa,
        dlog,
        fallback,
        residual,
        condition,
    })
}

/// Drift kind for the superposed vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    /// −f + g²·Σκᵢsᵢ (reverse SDE with ξ = g²/2).
    Sde,
    /// −f + (g²/2)·Σκᵢsᵢ (probability flow).
    Ode,
}

/// Assemble the reverse-time drift −f_{1−τ}(x) + c·Σᵢ κᵢ sᵢ.
pub fn superposed_drift(
    kappa: &Kappa,
    scores: &[Vec<f64>],
    schedule: &Schedule,
    x: &[f64],
    tau: f64,
    kind: DriftKind,
) -> Result<Vec<f64>> {
    assert_eq!(kappa.len(), scores.len(), "kappa/model count mismatch");
    let ev = schedule.eval(1.0 - tau)?;
    let c = match kind {
        DriftKind::Sde => ev.g2,
        DriftKind::Ode => 0.5 * ev.g2,
    };
    let d = x.len();
    let mut drift = vec![0.0; d];
    for k in 0..d {
        let mut s = 0.0;
        for (w, sc) in kappa.weights().iter().zip(scores) {
            s += w * sc[k];
        }
        drift[k] = -ev.dlog_alpha_dt * x[k] + c * s;
    }
    Ok(drift)
}
