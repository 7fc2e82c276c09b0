//! Log-density tracking along reverse-time trajectories.
//!
//! Three estimators of d log q_{1−τ}(x_τ) are provided, plus the divergence
//! oracles they are compared against:
//!
//! - [`ito_increment`] — the SDE tracker. For any reverse drift with the
//!   matching diffusion coefficient g, the log-density change is
//!
//!   ```text
//!   d log q = ⟨dx, s⟩ + [ d·(d/dt log α) + ⟨f − (g²/2) s, s⟩ ] dτ
//!   ```
//!
//!   with s the score at the pre-step point. The divergence of the OU drift
//!   is the constant d·(d/dt log α), so tracking costs no Jacobian-vector
//!   products and no score evaluations beyond the one the sampler already
//!   makes.
//!
//! - [`smooth_increment`] — the ODE tracker from the continuity equation,
//!   `d log q_i/dt = −⟨∇, v_i⟩ − ⟨s_i, v_i − u⟩`, which needs the divergence
//!   of the model's own flow field.
//!
//! - [`detailed_balance_increment`] — the discrete-time tracker built from
//!   the universal noising kernel and the Gaussian approximation of its
//!   reverse: the kernel log-ratio collapses to
//!   `⟨c·y − x, s⟩ − (S²/2)‖s‖² + d·log c` with (c, S²) from
//!   [`noising_kernel`]. Its small-Δt expansion is exactly the Itô increment;
//!   the retained higher-order kernel terms are what the convergence tests
//!   measure.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::schedule::{Schedule, ScheduleEval};

/// One log-density increment, broken into diagnostic components.
///
/// `value` always equals `transport + divergence + correction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityIncrement {
    pub value: f64,
    /// ⟨dx, s⟩ (SDE) or −⟨s, v − u⟩·dt (ODE).
    pub transport: f64,
    /// Drift-divergence term d·(d/dt log α)·dτ (SDE) or −⟨∇, v⟩·dt (ODE).
    pub divergence: f64,
    /// ⟨f − (g²/2)s, s⟩·dτ (SDE only).
    pub correction: f64,
}

impl LogDensityIncrement {
    fn new(transport: f64, divergence: f64, correction: f64) -> Self {
        LogDensityIncrement {
            value: transport + divergence + correction,
            transport,
            divergence,
            correction,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_score_finite(score: &[f64], tau: f64) -> Result<()> {
    if score.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "score", tau })
    }
}

/// Itô log-density increment for one realized reverse step.
///
/// `score` is the model's score at the pre-step point (x, t = 1 − τ); `dx` is
/// the realized state increment of the trajectory (any drift, matching
/// diffusion coefficient). Convenience wrapper over [`ito_increment_at`].
pub fn ito_increment(
    score: &[f64],
    schedule: &Schedule,
    x: &[f64],
    dx: &[f64],
    tau: f64,
    dtau: f64,
) -> Result<LogDensityIncrement> {
    let ev = schedule.eval(1.0 - tau)?;
    ito_increment_at(score, &ev, x, dx, dtau)
}

/// Itô increment with the schedule quantities already evaluated at the
/// pre-step time. The sampler calls this so that tracking adds no schedule
/// evaluations on top of the ones the step itself needs.
pub fn ito_increment_at(
    score: &[f64],
    ev: &ScheduleEval,
    x: &[f64],
    dx: &[f64],
    dtau: f64,
) -> Result<LogDensityIncrement> {
    check_score_finite(score, 1.0 - ev.t)?;
    let d = x.len();
    let a = ev.dlog_alpha_dt;
    let transport = dot(dx, score);
    let divergence = d as f64 * a * dtau;
    let mut corr = 0.0;
    for i in 0..d {
        corr += (a * x[i] - 0.5 * ev.g2 * score[i]) * score[i];
    }
    Ok(LogDensityIncrement::new(transport, divergence, corr * dtau))
}

/// Smooth (continuity-equation) log-density increment, in forward time.
///
/// `v` is the model's own probability-flow field at (x, t), `div_v` its
/// divergence there, and `u` the field actually transporting the point. A
/// reverse-time caller passes `dt = −dτ` and the forward-time transport field.
pub fn smooth_increment(
    score: &[f64],
    div_v: f64,
    v: &[f64],
    u: &[f64],
    dt: f64,
) -> LogDensityIncrement {
    let mut slip = 0.0;
    for i in 0..v.len() {
        slip += score[i] * (v[i] - u[i]);
    }
    LogDensityIncrement::new(-slip * dt, -div_v * dt, 0.0)
}

/// Hutchinson trace estimate of a vector field's divergence.
#[derive(Debug, Clone, Copy)]
pub struct DivergenceEstimate {
    pub mean: f64,
    /// Unbiased sample variance over probes (0 when probes = 1).
    pub sample_variance: f64,
    pub probes: usize,
}

impl DivergenceEstimate {
    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        (self.sample_variance / self.probes as f64).sqrt()
    }
}

const JVP_STEP: f64 = 1e-5;

/// Hutchinson divergence estimator: mean over Rademacher probes ε of
/// εᵀ(J ε), with the Jacobian-vector product taken by central differences.
pub fn hutchinson_divergence<F>(
    field: F,
    x: &[f64],
    probes: usize,
    rng: &mut CounterRng,
) -> Result<DivergenceEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    assert!(probes >= 1, "need at least one probe");
    let d = x.len();
    let mut estimates = Vec::with_capacity(probes);
    let mut xp = vec![0.0; d];
    let mut xm = vec![0.0; d];
    for _ in 0..probes {
        let eps = rng.rademacher_vec(d);
        for i in 0..d {
            xp[i] = x[i] + JVP_STEP * eps[i];
            xm[i] = x[i] - JVP_STEP * eps[i];
        }
        let fp = field(&xp)?;
        let fm = field(&xm)?;
        let mut e = 0.0;
        for i in 0..d {
            e += eps[i] * (fp[i] - fm[i]) / (2.0 * JVP_STEP);
        }
        estimates.push(e);
    }
    let mean = estimates.iter().sum::<f64>() / probes as f64;
    let sample_variance = if probes > 1 {
        estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (probes - 1) as f64
    } else {
        0.0
    };
    Ok(DivergenceEstimate {
        mean,
        sample_variance,
        probes,
    })
}

/// Deterministic divergence by summed central finite-difference partials;
/// the oracle the Hutchinson estimate is checked against.
pub fn exact_divergence_fd<F>(field: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    assert!(h > 0.0);
    let d = x.len();
    let mut total = 0.0;
    let mut xq = x.to_vec();
    for i in 0..d {
        xq[i] = x[i] + h;
        let plus = field(&xq)?[i];
        xq[i] = x[i] - h;
        let minus = field(&xq)?[i];
        xq[i] = x[i];
        total += (plus - minus) / (2.0 * h);
    }
    Ok(total)
}

/// Parameters of the universal noising kernel from t to t + dt:
/// x ↦ scale·x + S·ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// α_{t+dt} / α_t.
    pub scale: f64,
    /// S² = σ²_{t+dt} − σ²_t · scale².
    pub s_squared: f64,
}

/// Kernel mapping marginals at `t` to marginals at `t + dt`, independent of
/// the data density. Tiny negative S² from roundoff is clamped to 0; anything
/// below −1e−12 reports a schedule inconsistency.
pub fn noising_kernel(schedule: &Schedule, t: f64, dt: f64) -> Result<KernelParams> {
    let a0 = schedule.alpha(t);
    let a1 = schedule.alpha(t + dt);
    let s0 = schedule.sigma(t);
    let s1 = schedule.sigma(t + dt);
    if a0 == 0.0 {
        return Err(Error::ScheduleDomain {
            t,
            what: "noising kernel needs α_t > 0",
        });
    }
    let scale = a1 / a0;
    let mut s_squared = s1 * s1 - s0 * s0 * scale * scale;
    if s_squared < 0.0 {
        if s_squared < -1e-12 {
            return Err(Error::ScheduleDomain {
                t,
                what: "negative noising-kernel variance",
            });
        }
        s_squared = 0.0;
    }
    Ok(KernelParams { scale, s_squared })
}

/// Detailed-balance log-density increment for one realized reverse step.
///
/// The step goes from the pre-step point x at time t + dt to
/// y = x + dt·v + g√dt·ε at time t, with g taken at the pre-step time (the
/// same convention the sampler uses). `score` is the model's score at
/// (x, t + dt). Returns log q_t(y) − log q_{t+dt}(x) up to the Gaussian
/// approximation of the reverse kernel:
///
/// ```text
/// ⟨c·y − x, s⟩ − (S²/2)‖s‖² + d·log c
/// ```
pub fn detailed_balance_increment(
    score: &[f64],
    schedule: &Schedule,
    x: &[f64],
    v: &[f64],
    eps: &[f64],
    t: f64,
    dt: f64,
) -> Result<f64> {
    check_score_finite(score, 1.0 - (t + dt))?;
    let d = x.len();
    let kernel = noising_kernel(schedule, t, dt)?;
    let g = schedule.eval(t + dt)?.g;
    let sqrt_dt = dt.sqrt();
    let c = kernel.scale;
    let mut inner = 0.0;
    let mut norm2 = 0.0;
    for i in 0..d {
        let y = x[i] + dt * v[i] + g * sqrt_dt * eps[i];
        inner += (c * y - x[i]) * score[i];
        norm2 += score[i] * score[i];
    }
    Ok(inner - 0.5 * kernel.s_squared * norm2 + d as f64 * c.ln())
}
