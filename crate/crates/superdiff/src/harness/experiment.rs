//! Experiment runners.
//!
//! Each experiment runs the engine, writes `samples.csv`, `trace.csv`,
//! `metrics.json` (and `scatter.svg` for 2D runs) into the output directory,
//! and reports every declared tolerance in the metrics report. Exit-code
//! policy: 1 for configuration problems, 2 when more than 1% of trajectories
//! aborted numerically, 3 when a declared tolerance failed, 0 otherwise.

use crate::error::{Error, Result};
use crate::estimator::{
    detailed_balance_increment, exact_divergence_fd, hutchinson_divergence, ito_increment,
};
use crate::harness::config::{ExperimentKind, RunConfig};
use crate::harness::metrics::{metric_density_gap, metric_mixture_weights, MetricsReport};
use crate::harness::output;
use crate::integrate::{run_superdiff_with, IntegratorKind, RunOptions, Trajectory};
use crate::rng::CounterRng;
use crate::schedule::{Schedule, T_MIN};
use crate::score::{gmm_score, GmmParams, GmmScoreModel, MlpScoreModel, ScoreModel};
use crate::superpose::SuperposeMode;
use crate::train::{dsm_loss, train_with_history};

/// Report plus the CLI exit code derived from it.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub exit_code: i32,
}

/// Fraction of aborted trajectories above which the run counts as a
/// numerical failure (exit 2) rather than a metric failure.
pub const ABORT_THRESHOLD: f64 = 0.01;

fn resolve_threads() -> usize {
    if let Ok(v) = std::env::var("SUPERDIFF_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

fn exit_code_for(report: &MetricsReport) -> i32 {
    let frac = if report.total_trajectories > 0 {
        report.aborted_trajectories as f64 / report.total_trajectories as f64
    } else {
        0.0
    };
    if frac > ABORT_THRESHOLD {
        2
    } else if !report.pass {
        3
    } else {
        0
    }
}

/// Run the experiment named in the config and write all outputs.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let mut report = match config.experiment {
        ExperimentKind::Sample => run_sample(config)?,
        ExperimentKind::OrMixture => run_or_mixture(config)?,
        ExperimentKind::AndEqualDensity => run_and_equal_density(config)?,
        ExperimentKind::EstimatorValidation => run_estimator_validation(config)?,
        ExperimentKind::HutchinsonCompare => run_hutchinson_compare(config)?,
        ExperimentKind::DsmTrain => run_dsm_train(config)?,
    };
    report.experiment = config.experiment.name().into();
    report.save(&config.output_dir.join("metrics.json"))?;
    let exit_code = exit_code_for(&report);
    Ok(ExperimentOutcome { report, exit_code })
}

struct EngineRun {
    trajectories: Vec<Trajectory>,
    dim: usize,
    n_models: usize,
    aborted: usize,
}

fn run_engine(config: &RunConfig, mode: &SuperposeMode, seed: u64) -> Result<EngineRun> {
    let models = config.build_models()?;
    if models.is_empty() {
        return Err(Error::InvalidConfig("experiment needs models".into()));
    }
    let options = RunOptions {
        track_density: true,
        record_steps_for: config.trace_samples,
        threads: resolve_threads(),
    };
    let trajectories = run_superdiff_with(
        &models,
        &config.schedule,
        mode,
        &config.integrator,
        config.n_samples,
        seed,
        &options,
    )?;
    let aborted = trajectories.iter().filter(|t| t.aborted.is_some()).count();
    Ok(EngineRun {
        dim: models[0].dim(),
        n_models: models.len(),
        trajectories,
        aborted,
    })
}

fn write_standard_outputs(
    config: &RunConfig,
    run: &EngineRun,
    assignments: Option<&[usize]>,
) -> Result<()> {
    let dir = &config.output_dir;
    output::write_samples_csv(
        &dir.join("samples.csv"),
        &run.trajectories,
        run.dim,
        run.n_models,
        config.integrator.steps,
    )?;
    output::write_trace_csv(
        &dir.join("trace.csv"),
        &run.trajectories,
        run.dim,
        run.n_models,
    )?;
    if run.dim == 2 {
        let healthy: Vec<&Trajectory> = run
            .trajectories
            .iter()
            .filter(|t| t.aborted.is_none())
            .collect();
        let points: Vec<(Vec<f64>, usize)> = healthy
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let color = assignments.map_or(0, |a| a[i]);
                (t.x.clone(), color)
            })
            .collect();
        output::write_scatter_svg(&dir.join("scatter.svg"), &points)?;
    }
    Ok(())
}

fn required_mode(config: &RunConfig) -> Result<SuperposeMode> {
    config
        .mode
        .clone()
        .ok_or_else(|| Error::InvalidConfig("experiment needs a mode block".into()))
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn run_sample(config: &RunConfig) -> Result<MetricsReport> {
    let mode = required_mode(config)?;
    let run = run_engine(config, &mode, config.seed)?;
    let mut report = MetricsReport::new("sample");
    report.total_trajectories = config.n_samples;
    report.aborted_trajectories = run.aborted;
    let healthy: Vec<&Trajectory> = run
        .trajectories
        .iter()
        .filter(|t| t.aborted.is_none())
        .collect();
    for i in 0..run.dim {
        let mean = healthy.iter().map(|t| t.x[i]).sum::<f64>() / healthy.len().max(1) as f64;
        report.push_info(&format!("mean_x{i}"), mean);
    }
    report.push_info("healthy_samples", healthy.len() as f64);
    write_standard_outputs(config, &run, None)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// or_mixture
// ---------------------------------------------------------------------------

fn gmm_models(config: &RunConfig) -> Result<Vec<GmmParams>> {
    config
        .models
        .iter()
        .map(|spec| {
            spec.gmm_params().ok_or_else(|| {
                Error::InvalidConfig(
                    "this experiment needs inline gmm models (modes must be known)".into(),
                )
            })
        })
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn run_or_mixture(config: &RunConfig) -> Result<MetricsReport> {
    let mode = required_mode(config)?;
    let (temperature, bias) = match &mode {
        SuperposeMode::Or { temperature, bias } => (*temperature, bias.clone()),
        _ => {
            return Err(Error::InvalidConfig(
                "or_mixture needs mode.kind = \"or\"".into(),
            ))
        }
    };
    let gmms = gmm_models(config)?;
    let m = gmms.len();
    if m < 2 {
        return Err(Error::InvalidConfig("or_mixture needs ≥ 2 models".into()));
    }

    // Well-separated precondition: inter-model mode distance ≥ 6 × max stddev.
    let max_stddev = gmms
        .iter()
        .flat_map(|g| g.component_stddevs.iter().cloned())
        .fold(0.0f64, f64::max);
    let mut min_between = f64::MAX;
    for i in 0..m {
        for j in i + 1..m {
            for a in &gmms[i].means {
                for b in &gmms[j].means {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    min_between = min_between.min(d2.sqrt());
                }
            }
        }
    }
    if min_between < 6.0 * max_stddev {
        return Err(Error::InvalidConfig(format!(
            "mixture metric needs well-separated models: min mode distance {min_between:.3} < 6×stddev {:.3}",
            6.0 * max_stddev
        )));
    }

    let run = run_engine(config, &mode, config.seed)?;
    let healthy: Vec<&Trajectory> = run
        .trajectories
        .iter()
        .filter(|t| t.aborted.is_none())
        .collect();
    let samples: Vec<Vec<f64>> = healthy.iter().map(|t| t.x.clone()).collect();
    let alpha0 = config.schedule.eval(T_MIN)?.alpha;
    let modes: Vec<Vec<Vec<f64>>> = gmms
        .iter()
        .map(|g| {
            g.means
                .iter()
                .map(|mu| mu.iter().map(|v| alpha0 * v).collect())
                .collect()
        })
        .collect();
    let weights = metric_mixture_weights(&samples, &modes);

    let mut report = MetricsReport::new("or_mixture");
    report.total_trajectories = config.n_samples;
    report.aborted_trajectories = run.aborted;

    let mut full_bias = bias.clone();
    full_bias.resize(m, 0.0);
    let expected = softmax(&full_bias);
    let n = samples.len() as f64;
    for i in 0..m {
        let name = format!("mixture_fraction_{i}");
        if (temperature - 1.0).abs() < 1e-12 {
            // The mixture law fixes the asymptotic fractions at softmax(bias);
            // the declared band is the 3σ binomial interval around them.
            let band = 3.0 * (expected[i] * (1.0 - expected[i]) / n).sqrt();
            report.push_checked(
                &name,
                weights.fractions[i],
                Some(weights.stderrs[i]),
                expected[i] - band,
                expected[i] + band,
            );
        } else {
            report.push_info(&name, weights.fractions[i]);
        }
    }
    report.push_info("ambiguous_assignments", weights.ambiguous as f64);
    write_standard_outputs(config, &run, Some(&weights.assignments))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// and_equal_density
// ---------------------------------------------------------------------------

fn run_and_equal_density(config: &RunConfig) -> Result<MetricsReport> {
    let mode = required_mode(config)?;
    let bias = match &mode {
        SuperposeMode::And { bias } => bias.clone(),
        _ => {
            return Err(Error::InvalidConfig(
                "and_equal_density needs mode.kind = \"and\"".into(),
            ))
        }
    };
    let m = config.models.len();
    if m < 2 {
        return Err(Error::InvalidConfig(
            "and_equal_density needs ≥ 2 models".into(),
        ));
    }

    let run = run_engine(config, &mode, config.seed)?;
    let steps = config.integrator.steps;
    let mut bias_totals = bias.clone();
    bias_totals.resize(m, 0.0);
    for b in bias_totals.iter_mut() {
        *b *= steps as f64;
    }
    let and_stats = metric_density_gap(&run.trajectories, &bias_totals);

    // Uniform fixed-average baseline on the same seed.
    let baseline_mode = SuperposeMode::FixedAverage {
        weights: vec![1.0 / m as f64; m],
    };
    let baseline = run_engine(config, &baseline_mode, config.seed)?;
    let base_stats = metric_density_gap(&baseline.trajectories, &vec![0.0; m]);

    let healthy = run
        .trajectories
        .iter()
        .filter(|t| t.aborted.is_none())
        .count();
    let total_steps = (healthy * steps).max(1);
    let fallback_steps: usize = run.trajectories.iter().map(|t| t.fallback_steps).sum();
    let max_residual = run
        .trajectories
        .iter()
        .map(|t| t.max_residual)
        .fold(0.0f64, f64::max);

    let mut report = MetricsReport::new("and_equal_density");
    report.total_trajectories = config.n_samples;
    report.aborted_trajectories = run.aborted;
    report.push_checked("and_median_gap", and_stats.median, None, 0.0, 0.1);
    report.push_info("and_p95_gap", and_stats.p95);
    report.push_info("baseline_median_gap", base_stats.median);
    report.push_checked(
        "gap_ratio_vs_baseline",
        and_stats.median / base_stats.median,
        None,
        0.0,
        0.999,
    );
    report.push_checked(
        "max_backsubstitution_residual",
        max_residual,
        None,
        0.0,
        1e-8,
    );
    report.push_checked(
        "fallback_rate",
        fallback_steps as f64 / total_steps as f64,
        None,
        0.0,
        0.01,
    );
    write_standard_outputs(config, &run, None)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// estimator_validation
// ---------------------------------------------------------------------------

/// Tracked-vs-analytic error summary of one SDE validation run.
///
/// Trackers are initialized at the model's exact log q₁(x₀), so the terminal
/// discrepancy measures the estimator's own discretization; the standard-
/// normal initialization error is reported separately (the zero-step metric).
struct SdeValidation {
    /// Ensemble-mean signed terminal error (the estimator bias).
    mean_err: f64,
    /// Per-trajectory terminal RMSE; carries the O(√dτ) martingale spread.
    rmse: f64,
    /// Mean over steps and samples of |logq_ito(τ) − logq_db(τ)|.
    tracker_gap: f64,
    init_error_max: f64,
    /// A representative mid-trajectory state for the variance ladder.
    probe_state: (Vec<f64>, f64),
}

fn sde_validation_run(
    model: &GmmScoreModel,
    schedule: &Schedule,
    steps: usize,
    n_samples: usize,
    seed: u64,
    track_db: bool,
) -> Result<SdeValidation> {
    let d = model.dim();
    let dtau = (1.0 - T_MIN) / steps as f64;
    let mut sq_err = 0.0;
    let mut err_sum = 0.0;
    let mut gap_sum = 0.0;
    let mut gap_count = 1usize;
    let mut init_err_max = 0.0f64;
    let mut probe_state: Option<(Vec<f64>, f64)> = None;

    for sample in 0..n_samples {
        let mut rng = CounterRng::new(seed, sample as u64);
        let mut x = rng.normal_vec(d);
        let init = model.log_density(&x, 1.0).unwrap()?;
        init_err_max = init_err_max.max((crate::integrate::std_normal_logpdf(&x) - init).abs());
        let mut logq_ito = init;
        let mut logq_db = init;
        for k in 0..steps {
            let tau = k as f64 * dtau;
            let t = 1.0 - tau;
            let ev = schedule.eval(t)?;
            let s = model.score(&x, t)?;
            let drift: Vec<f64> = (0..d)
                .map(|i| -ev.dlog_alpha_dt * x[i] + ev.g2 * s[i])
                .collect();
            let eps = rng.normal_vec(d);
            let dx: Vec<f64> = (0..d)
                .map(|i| drift[i] * dtau + ev.g * dtau.sqrt() * eps[i])
                .collect();
            logq_ito += ito_increment(&s, schedule, &x, &dx, tau, dtau)?.value;
            if track_db {
                logq_db +=
                    detailed_balance_increment(&s, schedule, &x, &drift, &eps, t - dtau, dtau)?;
                gap_sum += (logq_ito - logq_db).abs();
                gap_count += 1;
            }
            for i in 0..d {
                x[i] += dx[i];
            }
            if sample == 0 && k == steps / 2 {
                probe_state = Some((x.clone(), t - dtau));
            }
        }
        let truth = model.log_density(&x, T_MIN).unwrap()?;
        let err = logq_ito - truth;
        err_sum += err;
        sq_err += err * err;
    }
    Ok(SdeValidation {
        mean_err: err_sum / n_samples as f64,
        rmse: (sq_err / n_samples as f64).sqrt(),
        tracker_gap: gap_sum / gap_count as f64,
        init_error_max: init_err_max,
        probe_state: probe_state.expect("at least one step"),
    })
}

/// Deterministic probability-flow validation: integrate the smooth tracker
/// along the model's own flow and compare with the closed form. Returns the
/// worst absolute terminal error over the samples.
fn ode_validation_run(
    model: &GmmScoreModel,
    schedule: &Schedule,
    steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let d = model.dim();
    let dtau = (1.0 - T_MIN) / steps as f64;
    let mut max_err = 0.0f64;
    for sample in 0..n_samples {
        let mut rng = CounterRng::new(seed, sample as u64);
        let mut x = rng.normal_vec(d);
        let mut logq = model.log_density(&x, 1.0).unwrap()?;
        for k in 0..steps {
            let tau = k as f64 * dtau;
            let t = 1.0 - tau;
            let ev = schedule.eval(t)?;
            let s = model.score(&x, t)?;
            // Own forward-time flow; the trajectory follows it exactly.
            let v: Vec<f64> = (0..d)
                .map(|i| ev.dlog_alpha_dt * x[i] - 0.5 * ev.g2 * s[i])
                .collect();
            let div_v =
                d as f64 * ev.dlog_alpha_dt - 0.5 * ev.g2 * model.score_divergence(&x, t)?;
            logq += crate::estimator::smooth_increment(&s, div_v, &v, &v, -dtau).value;
            for i in 0..d {
                x[i] -= v[i] * dtau;
            }
        }
        let truth = model.log_density(&x, T_MIN).unwrap()?;
        max_err = max_err.max((logq - truth).abs());
    }
    Ok(max_err)
}

/// Regression slope of log sample-variance of the detailed-balance
/// discrepancy against log Δt; the kernel theory predicts slope 2.
fn db_variance_slope(
    model: &GmmScoreModel,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
    seed: u64,
) -> Result<f64> {
    let d = x.len();
    let ladder = [4e-3, 2e-3, 1e-3, 5e-4];
    let draws = 3000;
    let mut log_dt = Vec::new();
    let mut log_var = Vec::new();
    let base = model.log_density(x, t).unwrap()?;
    let ev = schedule.eval(t)?;
    let s = model.score(x, t)?;
    let drift: Vec<f64> = (0..d)
        .map(|i| -ev.dlog_alpha_dt * x[i] + ev.g2 * s[i])
        .collect();
    for (li, &dt) in ladder.iter().enumerate() {
        let mut rng = CounterRng::new(seed, 1000 + li as u64);
        let mut discs = Vec::with_capacity(draws);
        for _ in 0..draws {
            let eps = rng.normal_vec(d);
            let est = detailed_balance_increment(&s, schedule, x, &drift, &eps, t - dt, dt)?;
            let y: Vec<f64> = (0..d)
                .map(|i| x[i] + dt * drift[i] + ev.g * dt.sqrt() * eps[i])
                .collect();
            let truth = model.log_density(&y, t - dt).unwrap()? - base;
            discs.push(est - truth);
        }
        let mean = discs.iter().sum::<f64>() / draws as f64;
        let var = discs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws - 1) as f64;
        log_dt.push(dt.ln());
        log_var.push(var.ln());
    }
    let n = ladder.len() as f64;
    let mx = log_dt.iter().sum::<f64>() / n;
    let my = log_var.iter().sum::<f64>() / n;
    let sxy: f64 = log_dt
        .iter()
        .zip(&log_var)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    let sxx: f64 = log_dt.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

fn exact_gmm_model(config: &RunConfig) -> Result<GmmScoreModel> {
    let gmms = gmm_models(config)?;
    let params = gmms
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidConfig("estimator validation needs a gmm model".into()))?;
    GmmScoreModel::new(params, config.schedule)
}

fn run_estimator_validation(config: &RunConfig) -> Result<MetricsReport> {
    let model = exact_gmm_model(config)?;
    let mut report = MetricsReport::new("estimator_validation");
    report.total_trajectories = config.n_samples;
    let steps = config.integrator.steps;

    match config.integrator.kind {
        IntegratorKind::Sde => {
            let coarse = sde_validation_run(
                &model,
                &config.schedule,
                steps,
                config.n_samples,
                config.seed,
                true,
            )?;
            let fine = sde_validation_run(
                &model,
                &config.schedule,
                steps * 2,
                config.n_samples,
                config.seed,
                true,
            )?;
            report.push_checked(
                "ensemble_mean_error",
                coarse.mean_err,
                Some(coarse.rmse / (config.n_samples as f64).sqrt()),
                -0.05,
                0.05,
            );
            report.push_info("per_trajectory_rmse", coarse.rmse);
            report.push_info("initialization_error", coarse.init_error_max);
            // The bias at dτ/2 sits near the Monte-Carlo noise floor of small
            // ensembles, so the order estimate uses a larger one.
            let order_n = config.n_samples.max(4000);
            let order_coarse =
                sde_validation_run(&model, &config.schedule, steps, order_n, config.seed, false)?;
            let order_fine = sde_validation_run(
                &model,
                &config.schedule,
                steps * 2,
                order_n,
                config.seed,
                false,
            )?;
            report.push_checked(
                "convergence_order",
                (order_coarse.mean_err.abs() / order_fine.mean_err.abs()).log2(),
                None,
                0.7,
                1.3,
            );
            report.push_checked(
                "db_tracker_gap_ratio",
                coarse.tracker_gap / fine.tracker_gap,
                None,
                1.6,
                2.6,
            );
            let (px, pt) = coarse.probe_state;
            let slope = db_variance_slope(&model, &config.schedule, &px, pt, config.seed)?;
            report.push_checked("db_variance_slope", slope, None, 1.7, 2.3);
        }
        IntegratorKind::Ode => {
            let coarse = ode_validation_run(
                &model,
                &config.schedule,
                steps,
                config.n_samples,
                config.seed,
            )?;
            let fine = ode_validation_run(
                &model,
                &config.schedule,
                steps * 2,
                config.n_samples,
                config.seed,
            )?;
            report.push_checked("terminal_abs_error", coarse, None, 0.0, 0.02);
            report.push_info("terminal_abs_error_half_dtau", fine);
            report.push_checked("convergence_order", (coarse / fine).log2(), None, 0.7, 1.3);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// hutchinson_compare
// ---------------------------------------------------------------------------

fn run_hutchinson_compare(config: &RunConfig) -> Result<MetricsReport> {
    let model = exact_gmm_model(config)?;
    let schedule = config.schedule;
    let d = model.dim();
    let mut report = MetricsReport::new("hutchinson_compare");

    // Probability-flow field of the model at a fixed time.
    let model_ref = &model;
    let flow_at = move |t: f64| {
        let ev = schedule.eval(t).unwrap();
        move |x: &[f64]| -> Result<Vec<f64>> {
            let s = model_ref.score(x, t)?;
            Ok((0..x.len())
                .map(|i| ev.dlog_alpha_dt * x[i] - 0.5 * ev.g2 * s[i])
                .collect())
        }
    };

    let n_points = 100;
    let probes = 64;
    let mut within = 0usize;
    let mut stderr_sum = 0.0;
    let mut rng = CounterRng::new(config.seed, 0);
    for _ in 0..n_points {
        let t = rng.uniform_in(0.1, 0.9);
        let x = model.sample(t, &mut rng)?;
        let field = flow_at(t);
        let est = hutchinson_divergence(field, &x, probes, &mut rng)?;
        let oracle = exact_divergence_fd(field, &x, 1e-5)?;
        stderr_sum += est.stderr();
        if (est.mean - oracle).abs() <= 3.0 * est.stderr().max(1e-12) {
            within += 1;
        }
    }
    report.push_checked(
        "within_3se_fraction",
        within as f64 / n_points as f64,
        None,
        0.95,
        1.0,
    );
    report.push_info("mean_stderr", stderr_sum / n_points as f64);

    // Linear field: the forward OU drift. A single Rademacher probe is exact.
    let t = 0.5;
    let trace = schedule.drift_divergence(t, d)?;
    let mut rng = CounterRng::new(config.seed, 99);
    let single =
        hutchinson_divergence(|x| schedule.forward_drift(x, t), &vec![0.7; d], 1, &mut rng)?;
    report.push_checked(
        "linear_single_probe_error",
        (single.mean - trace).abs(),
        None,
        0.0,
        1e-8,
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// dsm_train
// ---------------------------------------------------------------------------

/// 90% probability region radius for a 2D isotropic Gaussian: ‖ε‖² ≤ χ²₂(0.9).
const CHI2_2_90: f64 = 4.605170185988092;

/// Relative L2 error of a trained score against the analytic mixture score
/// over the 90% probability region at time t.
pub fn relative_score_error(
    model: &dyn ScoreModel,
    oracle: &GmmParams,
    schedule: &Schedule,
    t: f64,
    n_points: usize,
    rng: &mut CounterRng,
) -> Result<f64> {
    let ev = schedule.eval(t)?;
    let d = oracle.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..n_points {
        // Component draw restricted to the 90% Mahalanobis ball.
        let u = rng.uniform();
        let mut k = oracle.weights.len() - 1;
        let mut acc = 0.0;
        for (i, w) in oracle.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let eps = loop {
            let e = rng.normal_vec(d);
            if e.iter().map(|v| v * v).sum::<f64>() <= CHI2_2_90 {
                break e;
            }
        };
        let s_k = oracle.component_stddevs[k];
        let std = (ev.sigma * ev.sigma + ev.alpha * ev.alpha * s_k * s_k).sqrt();
        let x: Vec<f64> = oracle.means[k]
            .iter()
            .zip(&eps)
            .map(|(m, e)| ev.alpha * m + std * e)
            .collect();
        let got = model.score(&x, ev.t)?;
        let want = gmm_score(oracle, schedule, &x, ev.t)?;
        for (g, w) in got.iter().zip(&want) {
            num += (g - w) * (g - w);
            den += w * w;
        }
    }
    Ok((num / den).sqrt())
}

fn run_dsm_train(config: &RunConfig) -> Result<MetricsReport> {
    let spec = config
        .train
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("dsm_train needs a train block".into()))?;
    let train_config = spec.to_train_config(config.schedule, config.seed);
    let (weights, history) = train_with_history(&train_config)?;
    let weights_path = config.output_dir.join("model.mlp");
    weights.save(&weights_path)?;
    let model = MlpScoreModel::new(weights)?;

    let mut report = MetricsReport::new("dsm_train");
    report.total_trajectories = 0;
    let oracle = GmmParams::from_points(&spec.dataset)?;
    let mut rng = CounterRng::new(config.seed, 7);
    for t in [0.1, 0.5, 0.9] {
        let rel = relative_score_error(&model, &oracle, &config.schedule, t, 2000, &mut rng)?;
        report.push_checked(&format!("relative_l2_t{t:.2}"), rel, None, 0.0, 0.15);
    }

    // Loss superposition: with per-index paired draws, the union loss is the
    // size-weighted mean of the per-dataset losses, exactly.
    let half = spec.dataset.len() / 2;
    if half >= 1 {
        let a: Vec<Vec<f64>> = spec.dataset[..half].to_vec();
        let b: Vec<Vec<f64>> = spec.dataset[half..2 * half].to_vec();
        let mut draw_rng = CounterRng::new(config.seed, 13);
        let dim = a[0].len();
        let ts: Vec<f64> = (0..half).map(|_| draw_rng.uniform_in(0.1, 1.0)).collect();
        let noise: Vec<Vec<f64>> = (0..half).map(|_| draw_rng.normal_vec(dim)).collect();
        let loss_a = dsm_loss(&model, &a, &ts, &noise, &config.schedule)?;
        let loss_b = dsm_loss(&model, &b, &ts, &noise, &config.schedule)?;
        let union: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let ts2: Vec<f64> = ts.iter().chain(&ts).cloned().collect();
        let noise2: Vec<Vec<f64>> = noise.iter().chain(&noise).cloned().collect();
        let loss_union = dsm_loss(&model, &union, &ts2, &noise2, &config.schedule)?;
        let residual = (loss_union - 0.5 * (loss_a + loss_b)).abs();
        report.push_checked("loss_superposition_residual", residual, None, 0.0, 1e-10);
    }

    let tenth = (history.len() / 10).max(1);
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    report.push_info("early_loss_median", median(&history[..tenth]));
    report.push_info(
        "late_loss_median",
        median(&history[history.len() - tenth..]),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_reflect_aborts_then_tolerances() {
        let mut ok = MetricsReport::new("demo");
        ok.total_trajectories = 1000;
        ok.aborted_trajectories = 5;
        assert_eq!(exit_code_for(&ok), 0);

        let mut failed_metric = MetricsReport::new("demo");
        failed_metric.total_trajectories = 1000;
        failed_metric.push_checked("m", 2.0, None, 0.0, 1.0);
        assert_eq!(exit_code_for(&failed_metric), 3);

        // More than 1% aborted counts as numerical failure even when the
        // surviving statistics fail tolerances too.
        let mut aborted = MetricsReport::new("demo");
        aborted.total_trajectories = 1000;
        aborted.aborted_trajectories = 20;
        aborted.push_checked("m", 2.0, None, 0.0, 1.0);
        assert_eq!(exit_code_for(&aborted), 2);
    }
}
