//! Reverse-time steppers and the full superposition sampling loop.
//!
//! The loop follows the per-step recipe: evaluate every model's score once at
//! the pre-step point, pick the weights κ (softmax over the running
//! log-densities for OR, the density-control solve for AND, constants for the
//! average baseline), assemble the superposed drift, take one explicit Euler /
//! Euler–Maruyama step, and update each model's running log-density with the
//! realized increment. The cached scores are shared by the κ computation, the
//! drift, and the density increments, so tracking adds no model evaluations.
//!
//! Trajectories are independent: each derives its own counter-based RNG
//! stream from (seed, sample index), so results are reproducible no matter
//! how many worker threads run them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ito_increment_at, smooth_increment};
use crate::rng::CounterRng;
use crate::schedule::{Schedule, T_MIN};
use crate::score::ScoreModel;
use crate::superpose::{kappa_and, kappa_or, superposed_drift, DriftKind, Kappa, SuperposeMode};

/// The ξ schedule of the reverse SDE family. `HalfG2` (ξ = g²/2) is the
/// standard reverse diffusion and the only choice under which the Itô
/// density tracker applies; `Zero` degenerates to the probability-flow ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Xi {
    HalfG2,
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Sde,
    Ode,
}

/// Integrator description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    pub steps: usize,
    #[serde(default = "default_xi")]
    pub xi: Xi,
}

fn default_xi() -> Xi {
    Xi::HalfG2
}

impl IntegratorConfig {
    pub fn sde(steps: usize) -> Self {
        IntegratorConfig {
            kind: IntegratorKind::Sde,
            steps,
            xi: Xi::HalfG2,
        }
    }

    pub fn ode(steps: usize) -> Self {
        IntegratorConfig {
            kind: IntegratorKind::Ode,
            steps,
            xi: Xi::Zero,
        }
    }

    /// ξ = 0 forces ODE semantics regardless of the declared kind.
    pub fn effective_ode(&self) -> bool {
        self.kind == IntegratorKind::Ode || self.xi == Xi::Zero
    }
}

/// One Euler–Maruyama step: dW ~ N(0, dτ·I), dx = drift·dτ + g·dW.
///
/// The drawn dW is returned so the caller can feed the same realization to
/// the AND weight solve and the density increments.
pub fn sde_step(
    x: &[f64],
    drift: &[f64],
    g: f64,
    dtau: f64,
    rng: &mut CounterRng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let sqrt_dtau = dtau.sqrt();
    let dw: Vec<f64> = (0..x.len())
        .map(|_| sqrt_dtau * rng.standard_normal())
        .collect();
    step_with_noise(x, drift, g, dtau, &dw)
}

/// Euler–Maruyama step with an externally drawn noise increment.
pub fn step_with_noise(
    x: &[f64],
    drift: &[f64],
    g: f64,
    dtau: f64,
    dw: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dx: Vec<f64> = (0..x.len()).map(|i| drift[i] * dtau + g * dw[i]).collect();
    let new_x: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
    (new_x, dx, dw.to_vec())
}

/// One explicit Euler step of an ODE: dx = field·dτ.
pub fn ode_step(x: &[f64], field: &[f64], dtau: f64) -> (Vec<f64>, Vec<f64>) {
    let dx: Vec<f64> = field.iter().map(|f| f * dtau).collect();
    let new_x: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
    (new_x, dx)
}

/// Per-step snapshot of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub tau: f64,
    pub x: Vec<f64>,
    pub logq: Vec<f64>,
    pub kappa: Vec<f64>,
    pub fallback: bool,
}

/// Why a trajectory was cut short.
#[derive(Debug, Clone)]
pub struct AbortInfo {
    pub step: usize,
    pub reason: String,
}

/// Result of one simulated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sample_id: usize,
    pub x: Vec<f64>,
    pub tau: f64,
    /// Running per-model log-densities at termination.
    pub logq: Vec<f64>,
    pub last_kappa: Vec<f64>,
    /// Steps on which the AND solve fell back to uniform weights.
    pub fallback_steps: usize,
    /// Largest back-substitution residual over non-fallback AND steps.
    pub max_residual: f64,
    pub aborted: Option<AbortInfo>,
    /// Full per-step records; populated only for traced samples.
    pub records: Vec<StepRecord>,
}

/// Knobs that are not part of the mathematical run description.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Track per-model log-densities (required by OR and AND weights).
    pub track_density: bool,
    /// Keep full per-step records for sample ids below this bound.
    pub record_steps_for: usize,
    /// Worker threads; results are identical for any value.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            track_density: true,
            record_steps_for: 0,
            threads: 1,
        }
    }
}

/// log N(x | 0, I).
pub fn std_normal_logpdf(x: &[f64]) -> f64 {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * n2
}

/// Run the superposition sampler with default options.
pub fn run_superdiff(
    models: &[Arc<dyn ScoreModel>],
    schedule: &Schedule,
    mode: &SuperposeMode,
    integ: &IntegratorConfig,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    run_superdiff_with(
        models,
        schedule,
        mode,
        integ,
        n_samples,
        seed,
        &RunOptions::default(),
    )
}

fn validate_run(
    models: &[Arc<dyn ScoreModel>],
    mode: &SuperposeMode,
    integ: &IntegratorConfig,
    options: &RunOptions,
) -> Result<usize> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("no models given".into()));
    }
    let d = models[0].dim();
    for (i, m) in models.iter().enumerate() {
        if m.dim() != d {
            return Err(Error::InvalidConfig(format!(
                "model {i} has dim {}, expected {d}",
                m.dim()
            )));
        }
    }
    mode.validate(models.len())?;
    if integ.steps == 0 {
        return Err(Error::InvalidConfig("integrator needs ≥ 1 step".into()));
    }
    if matches!(mode, SuperposeMode::And { .. }) && integ.effective_ode() {
        return Err(Error::InvalidConfig(
            "equal-density mode requires SDE inference".into(),
        ));
    }
    let tracking = options.track_density || mode.needs_density_tracking();
    if tracking && !integ.effective_ode() && integ.xi != Xi::HalfG2 {
        return Err(Error::InvalidConfig(
            "density tracking requires ξ = g²/2 (matching diffusion coefficient)".into(),
        ));
    }
    Ok(d)
}

/// Run the superposition sampler.
pub fn run_superdiff_with(
    models: &[Arc<dyn ScoreModel>],
    schedule: &Schedule,
    mode: &SuperposeMode,
    integ: &IntegratorConfig,
    n_samples: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<Vec<Trajectory>> {
    let _ = validate_run(models, mode, integ, options)?;
    let threads = options.threads.max(1).min(n_samples.max(1));
    if threads <= 1 {
        return (0..n_samples)
            .map(|i| simulate_one(i, models, schedule, mode, integ, seed, options))
            .collect();
    }
    let mut out: Vec<Option<Trajectory>> = vec![None; n_samples];
    let chunks: Vec<Vec<usize>> = (0..threads)
        .map(|w| (w..n_samples).step_by(threads).collect())
        .collect();
    let results: Vec<Result<Vec<(usize, Trajectory)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|ids| {
                scope.spawn(move || {
                    ids.iter()
                        .map(|&i| {
                            simulate_one(i, models, schedule, mode, integ, seed, options)
                                .map(|t| (i, t))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for r in results {
        for (i, t) in r? {
            out[i] = Some(t);
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

#[allow(clippy::too_many_arguments)]
fn simulate_one(
    sample_id: usize,
    models: &[Arc<dyn ScoreModel>],
    schedule: &Schedule,
    mode: &SuperposeMode,
    integ: &IntegratorConfig,
    seed: u64,
    options: &RunOptions,
) -> Result<Trajectory> {
    let d = models[0].dim();
    let m = models.len();
    let n = integ.steps;
    let dtau = (1.0 - T_MIN) / n as f64;
    let tracking = options.track_density || mode.needs_density_tracking();
    let record = sample_id < options.record_steps_for;
    let effective_ode = integ.effective_ode();

    let mut rng = CounterRng::new(seed, sample_id as u64);
    let mut x = rng.normal_vec(d);
    // q_{t=1} ≈ N(0, I) for every model, so all trackers start equal (and the
    // first OR softmax is uniform).
    let mut logq = vec![std_normal_logpdf(&x); m];
    let mut last_kappa = Kappa::uniform(m).weights().to_vec();
    let mut fallback_steps = 0usize;
    let mut max_residual = 0.0f64;
    let mut records = Vec::new();
    if record {
        records.push(StepRecord {
            step: 0,
            tau: 0.0,
            x: x.clone(),
            logq: logq.clone(),
            kappa: last_kappa.clone(),
            fallback: false,
        });
    }

    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut abort: Option<AbortInfo> = None;
    let mut tau = 0.0;

    for k in 0..n {
        tau = k as f64 * dtau;
        let t = 1.0 - tau;
        let ev = match schedule.eval(t) {
            Ok(ev) => ev,
            Err(e) => {
                abort = Some(AbortInfo {
                    step: k,
                    reason: e.to_string(),
                });
                break;
            }
        };

        // Exactly one score evaluation per model per step; everything below
        // reuses these.
        scores.clear();
        let mut score_failed = None;
        for model in models {
            match model.score(&x, t) {
                Ok(s) if s.iter().all(|v| v.is_finite()) => scores.push(s),
                Ok(_) => {
                    score_failed = Some(format!("non-finite score at tau = {tau}"));
                    break;
                }
                Err(e) => {
                    score_failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = score_failed {
            abort = Some(AbortInfo { step: k, reason });
            break;
        }

        // Weights and, for AND, the noise that both the solve and the step use.
        let mut step_fallback = false;
        let mut predrawn_dw: Option<Vec<f64>> = None;
        let kappa = match mode {
            SuperposeMode::Or { temperature, bias } => kappa_or(&logq, *temperature, bias)?,
            SuperposeMode::FixedAverage { weights } => Kappa::new(weights.clone())?,
            SuperposeMode::And { bias } => {
                let dw: Vec<f64> = (0..d)
                    .map(|_| dtau.sqrt() * rng.standard_normal())
                    .collect();
                let solve = kappa_and(&scores, schedule, &x, tau, dtau, &dw, bias)?;
                step_fallback = solve.fallback;
                if solve.fallback {
                    fallback_steps += 1;
                } else {
                    max_residual = max_residual.max(solve.residual);
                }
                predrawn_dw = Some(dw);
                solve.kappa
            }
        };

        // Drift and step.
        let (new_x, dx) = if effective_ode {
            let field = superposed_drift(&kappa, &scores, schedule, &x, tau, DriftKind::Ode)?;
            let (nx, dx) = ode_step(&x, &field, dtau);
            (nx, dx)
        } else {
            let (coef, noise_amp) = match integ.xi {
                Xi::HalfG2 => (ev.g2, ev.g),
                Xi::Constant(v) => (0.5 * ev.g2 + v, (2.0 * v).sqrt()),
                Xi::Zero => unreachable!("ξ = 0 handled as ODE"),
            };
            // Assemble −f + coef·Σκs directly so Constant ξ reuses the cache.
            let mut drift = vec![0.0; d];
            for i in 0..d {
                let mut s = 0.0;
                for (w, sc) in kappa.weights().iter().zip(&scores) {
                    s += w * sc[i];
                }
                drift[i] = -ev.dlog_alpha_dt * x[i] + coef * s;
            }
            let (nx, dx, _dw) = match predrawn_dw {
                Some(dw) => step_with_noise(&x, &drift, noise_amp, dtau, &dw),
                None => sde_step(&x, &drift, noise_amp, dtau, &mut rng),
            };
            (nx, dx)
        };

        // Density increments from the realized step.
        if tracking {
            if effective_ode {
                let a = ev.dlog_alpha_dt;
                let half_g2 = 0.5 * ev.g2;
                // Forward-time transporting field u = f − (g²/2)·Σκs = −drift.
                let mut u_fwd = vec![0.0; d];
                for i in 0..d {
                    let mut s = 0.0;
                    for (w, sc) in kappa.weights().iter().zip(&scores) {
                        s += w * sc[i];
                    }
                    u_fwd[i] = a * x[i] - half_g2 * s;
                }
                for (i, s_i) in scores.iter().enumerate() {
                    let div_s = match models[i].score_divergence(&x, t) {
                        Ok(v) => v,
                        Err(e) => {
                            abort = Some(AbortInfo {
                                step: k,
                                reason: e.to_string(),
                            });
                            break;
                        }
                    };
                    let div_v = d as f64 * a + half_g2 * (-div_s);
                    let v_i: Vec<f64> = (0..d).map(|j| a * x[j] - half_g2 * s_i[j]).collect();
                    let inc = smooth_increment(s_i, div_v, &v_i, &u_fwd, -dtau);
                    logq[i] += inc.value;
                }
                if abort.is_some() {
                    break;
                }
            } else {
                for (i, s_i) in scores.iter().enumerate() {
                    let inc = ito_increment_at(s_i, &ev, &x, &dx, dtau)?;
                    logq[i] += inc.value;
                }
            }
        }

        x = new_x;
        tau += dtau;
        last_kappa = kappa.weights().to_vec();

        let healthy =
            x.iter().all(|v| v.is_finite()) && (!tracking || logq.iter().all(|v| v.is_finite()));
        if !healthy {
            abort = Some(AbortInfo {
                step: k,
                reason: "non-finite state".into(),
            });
            break;
        }
        if record {
            records.push(StepRecord {
                step: k + 1,
                tau,
                x: x.clone(),
                logq: logq.clone(),
                kappa: last_kappa.clone(),
                fallback: step_fallback,
            });
        }
    }

    Ok(Trajectory {
        sample_id,
        x,
        tau,
        logq,
        last_kappa,
        fallback_steps,
        max_residual,
        aborted: abort,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{CountingScoreModel, GmmParams, GmmScoreModel};

    fn gaussian_model(mean: Vec<f64>, s: f64) -> Arc<dyn ScoreModel> {
        Arc::new(GmmScoreModel::new(GmmParams::single(mean, s), Schedule::vp_default()).unwrap())
    }

    #[test]
    fn zero_diffusion_reduces_to_euler() {
        let mut rng = CounterRng::new(0, 0);
        let (new_x, dx, _) = sde_step(&[1.0, 2.0], &[0.5, -0.5], 0.0, 0.1, &mut rng);
        assert_eq!(dx, vec![0.05, -0.05]);
        assert_eq!(new_x, vec![1.05, 1.95]);
    }

    #[test]
    fn sde_step_is_reproducible() {
        let mut r1 = CounterRng::new(9, 3);
        let mut r2 = CounterRng::new(9, 3);
        let a = sde_step(&[0.0, 0.0], &[0.0, 0.0], 1.3, 0.01, &mut r1);
        let b = sde_step(&[0.0, 0.0], &[0.0, 0.0], 1.3, 0.01, &mut r2);
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn ode_step_cases() {
        let (nx, dx) = ode_step(&[1.0, -1.0], &[0.0, 0.0], 0.5);
        assert_eq!(nx, vec![1.0, -1.0]);
        assert_eq!(dx, vec![0.0, 0.0]);
        // constant field over many steps adds up exactly
        let mut x = vec![0.0];
        for _ in 0..10 {
            x = ode_step(&x, &[2.0], 0.1).0;
        }
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn forward_ou_moments_match_closed_form() {
        // Simulate the forward SDE from a point mass and compare ensemble
        // moments with α_t μ, σ_t² (the moment oracle).
        let schedule = Schedule::vp_default();
        let mu = [2.0, -1.0];
        let t_end = 0.5;
        let n_steps = 200;
        let dt = t_end / n_steps as f64;
        let n_paths = 10_000;
        let mut mean = [0.0f64; 2];
        let mut second = [0.0f64; 2];
        for p in 0..n_paths {
            let mut rng = CounterRng::new(2024, p as u64);
            let mut x = mu.to_vec();
            for k in 0..n_steps {
                let t = k as f64 * dt;
                let ev = schedule.eval(t.max(T_MIN)).unwrap();
                let drift: Vec<f64> = x.iter().map(|v| ev.dlog_alpha_dt * v).collect();
                x = sde_step(&x, &drift, ev.g, dt, &mut rng).0;
            }
            for i in 0..2 {
                mean[i] += x[i];
                second[i] += x[i] * x[i];
            }
        }
        let ev = schedule.eval(t_end).unwrap();
        for i in 0..2 {
            mean[i] /= n_paths as f64;
            second[i] /= n_paths as f64;
            let var = second[i] - mean[i] * mean[i];
            let se_mean = ev.sigma / (n_paths as f64).sqrt();
            assert!(
                (mean[i] - ev.alpha * mu[i]).abs() < 3.0 * se_mean + 5e-3,
                "mean[{i}] = {} vs {}",
                mean[i],
                ev.alpha * mu[i]
            );
            let se_var = ev.sigma * ev.sigma * (2.0 / n_paths as f64).sqrt();
            assert!(
                (var - ev.sigma * ev.sigma).abs() < 3.0 * se_var + 5e-3,
                "var[{i}] = {var} vs {}",
                ev.sigma * ev.sigma
            );
        }
    }

    #[test]
    fn single_model_or_run_is_deterministic_and_tracks_density() {
        let model = gaussian_model(vec![1.0, -1.0], 0.5);
        let schedule = Schedule::vp_default();
        let mode = SuperposeMode::Or {
            temperature: 1.0,
            bias: vec![],
        };
        let integ = IntegratorConfig::sde(1000);
        let a = run_superdiff(
            std::slice::from_ref(&model),
            &schedule,
            &mode,
            &integ,
            3,
            11,
        )
        .unwrap();
        let b = run_superdiff(
            std::slice::from_ref(&model),
            &schedule,
            &mode,
            &integ,
            3,
            11,
        )
        .unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.x, tb.x);
            assert_eq!(ta.logq, tb.logq);
            assert!(ta.aborted.is_none());
            // Terminal log-density should be in the right ballpark of the
            // analytic value.
            let truth = GmmScoreModel::new(GmmParams::single(vec![1.0, -1.0], 0.5), schedule)
                .unwrap()
                .log_density(&ta.x, T_MIN)
                .unwrap()
                .unwrap();
            assert!(
                (ta.logq[0] - truth).abs() < 1.6,
                "{} vs {truth}",
                ta.logq[0]
            );
        }
    }

    #[test]
    fn single_model_softmax_weight_is_one() {
        let model = gaussian_model(vec![0.0, 0.0], 1.0);
        let mode = SuperposeMode::Or {
            temperature: 1.0,
            bias: vec![],
        };
        let integ = IntegratorConfig::sde(50);
        let tr = run_superdiff(&[model], &Schedule::vp_default(), &mode, &integ, 1, 0).unwrap();
        assert_eq!(tr[0].last_kappa, vec![1.0]);
    }

    #[test]
    fn single_model_or_equals_plain_reverse_diffusion() {
        // A one-model OR softmax is identically 1, so the trajectory must be
        // bit-identical to the fixed-weight single-model run on the same seed.
        let model = gaussian_model(vec![1.0, -1.0], 0.5);
        let schedule = Schedule::vp_default();
        let integ = IntegratorConfig::sde(300);
        let or_run = run_superdiff(
            &[model.clone()],
            &schedule,
            &SuperposeMode::Or {
                temperature: 1.0,
                bias: vec![],
            },
            &integ,
            4,
            17,
        )
        .unwrap();
        let plain = run_superdiff(
            &[model],
            &schedule,
            &SuperposeMode::FixedAverage { weights: vec![1.0] },
            &integ,
            4,
            17,
        )
        .unwrap();
        for (a, b) in or_run.iter().zip(&plain) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.logq, b.logq);
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let models = vec![
            gaussian_model(vec![2.0, 0.0], 0.5),
            gaussian_model(vec![-2.0, 0.0], 0.5),
        ];
        let mode = SuperposeMode::Or {
            temperature: 1.0,
            bias: vec![],
        };
        let integ = IntegratorConfig::sde(100);
        let schedule = Schedule::vp_default();
        let single = run_superdiff_with(
            &models,
            &schedule,
            &mode,
            &integ,
            8,
            5,
            &RunOptions {
                threads: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let multi = run_superdiff_with(
            &models,
            &schedule,
            &mode,
            &integ,
            8,
            5,
            &RunOptions {
                threads: 4,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.x, b.x);
            assert_eq!(a.logq, b.logq);
        }
    }

    #[test]
    fn score_budget_is_m_per_step_per_trajectory() {
        let schedule = Schedule::vp_default();
        let inner = [
            gaussian_model(vec![2.0, 0.0], 0.5),
            gaussian_model(vec![-2.0, 0.0], 0.5),
        ];
        let counting: Vec<Arc<CountingScoreModel>> = inner
            .iter()
            .map(|m| Arc::new(CountingScoreModel::new(m.clone())))
            .collect();
        let models: Vec<Arc<dyn ScoreModel>> = counting
            .iter()
            .map(|c| c.clone() as Arc<dyn ScoreModel>)
            .collect();
        let steps = 64;
        let n_samples = 3;
        let integ = IntegratorConfig::sde(steps);
        let mode = SuperposeMode::FixedAverage {
            weights: vec![0.5, 0.5],
        };

        // Tracking ON
        run_superdiff_with(
            &models,
            &schedule,
            &mode,
            &integ,
            n_samples,
            1,
            &RunOptions {
                track_density: true,
                ..Default::default()
            },
        )
        .unwrap();
        let with_tracking: Vec<u64> = counting.iter().map(|c| c.calls()).collect();

        // Tracking OFF
        run_superdiff_with(
            &models,
            &schedule,
            &mode,
            &integ,
            n_samples,
            1,
            &RunOptions {
                track_density: false,
                ..Default::default()
            },
        )
        .unwrap();
        let without: Vec<u64> = counting
            .iter()
            .zip(&with_tracking)
            .map(|(c, w)| c.calls() - w)
            .collect();

        let budget = (steps * n_samples) as u64;
        for (w, wo) in with_tracking.iter().zip(&without) {
            assert_eq!(*w, budget, "tracking on: {w} calls, budget {budget}");
            assert_eq!(*wo, budget, "tracking off: {wo} calls, budget {budget}");
        }
    }

    #[test]
    fn and_requires_sde() {
        let models = vec![
            gaussian_model(vec![1.0, 0.0], 0.5),
            gaussian_model(vec![-1.0, 0.0], 0.5),
        ];
        let mode = SuperposeMode::And { bias: vec![] };
        let err = run_superdiff(
            &models,
            &Schedule::vp_default(),
            &mode,
            &IntegratorConfig::ode(10),
            1,
            0,
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn tracking_rejects_mismatched_xi() {
        let models = vec![gaussian_model(vec![0.0, 0.0], 1.0)];
        let mode = SuperposeMode::Or {
            temperature: 1.0,
            bias: vec![],
        };
        let integ = IntegratorConfig {
            kind: IntegratorKind::Sde,
            steps: 10,
            xi: Xi::Constant(0.3),
        };
        let err = run_superdiff(&models, &Schedule::vp_default(), &mode, &integ, 1, 0);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        // Without tracking, constant ξ is a legitimate reverse SDE.
        let ok = run_superdiff_with(
            &models,
            &Schedule::vp_default(),
            &SuperposeMode::FixedAverage { weights: vec![1.0] },
            &integ,
            2,
            0,
            &RunOptions {
                track_density: false,
                ..Default::default()
            },
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn exploding_model_aborts_only_its_trajectory() {
        // A sound Gaussian score with a poisoned far half-space: only the
        // trajectories that wander there blow up.
        struct Explosive(GmmScoreModel);
        impl ScoreModel for Explosive {
            fn dim(&self) -> usize {
                2
            }
            fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
                if x[0] > 1.8 {
                    Ok(vec![1e308, 1e308])
                } else {
                    self.0.score(x, t)
                }
            }
        }
        let inner = GmmScoreModel::new(
            GmmParams::single(vec![1.0, 0.0], 0.5),
            Schedule::vp_default(),
        )
        .unwrap();
        let models: Vec<Arc<dyn ScoreModel>> = vec![Arc::new(Explosive(inner))];
        let mode = SuperposeMode::FixedAverage { weights: vec![1.0] };
        let trs = run_superdiff_with(
            &models,
            &Schedule::vp_default(),
            &mode,
            &IntegratorConfig::sde(100),
            40,
            3,
            &RunOptions {
                track_density: false,
                ..Default::default()
            },
        )
        .unwrap();
        let aborted = trs.iter().filter(|t| t.aborted.is_some()).count();
        assert!(aborted > 0, "expected at least one abort");
        assert!(
            trs.iter().any(|t| t.aborted.is_none()),
            "some trajectory should survive"
        );
        for t in trs.iter().filter(|t| t.aborted.is_some()) {
            assert!(!t.aborted.as_ref().unwrap().reason.is_empty());
        }
    }

    #[test]
    fn ode_flow_maps_prior_to_data_moments() {
        // Probability flow with a single Gaussian model transports N(0, I) to
        // approximately N(μ, s²) at t_min.
        let (mu, s) = (vec![1.5, -0.5], 0.6);
        let model = gaussian_model(mu.clone(), s);
        let integ = IntegratorConfig::ode(500);
        let n = 2000;
        let trs = run_superdiff_with(
            &[model],
            &Schedule::vp_default(),
            &SuperposeMode::FixedAverage { weights: vec![1.0] },
            &integ,
            n,
            77,
            &RunOptions {
                track_density: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mut mean = [0.0f64; 2];
        let mut second = [0.0f64; 2];
        for t in &trs {
            assert!(t.aborted.is_none());
            for i in 0..2 {
                mean[i] += t.x[i];
                second[i] += t.x[i] * t.x[i];
            }
        }
        for i in 0..2 {
            mean[i] /= n as f64;
            second[i] /= n as f64;
            let std = (second[i] - mean[i] * mean[i]).sqrt();
            let se = s / (n as f64).sqrt();
            assert!(
                (mean[i] - mu[i]).abs() < 3.0 * se + 0.02,
                "mean[{i}] {} vs {}",
                mean[i],
                mu[i]
            );
            let se_std = s * (0.5 / n as f64).sqrt();
            assert!(
                (std - s).abs() < 3.0 * se_std + 0.02,
                "std[{i}] {std} vs {s}"
            );
        }
    }
}
