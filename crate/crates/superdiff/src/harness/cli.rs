//! Command-line entry point.
//!
//! ```text
//! superdiff run      --config <path> [--seed <u64>] [--out <dir>] [--steps <n>] [--samples <n>]
//! superdiff train    --config <path> [...same flags]
//! superdiff validate --config <path> [...same flags]
//! ```
//!
//! Flags override the config keys of the same name. `train` forces the
//! dsm_train experiment and `validate` forces estimator_validation; `run`
//! executes whatever the config names. Worker count is capped by the
//! `SUPERDIFF_THREADS` environment variable.
//!
//! Exit codes: 0 all declared tolerances pass, 1 configuration error,
//! 2 numerical failure (> 1% aborted trajectories), 3 tolerance failure.

use std::path::PathBuf;

use crate::error::Error;
use crate::harness::config::{ExperimentKind, RunConfig};
use crate::harness::experiment::run_experiment;

const USAGE: &str = "usage: superdiff <run|train|validate> --config <path> \
[--seed <u64>] [--out <dir>] [--steps <n>] [--samples <n>]";

#[derive(Debug, Default)]
struct Flags {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    steps: Option<usize>,
    samples: Option<usize>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags = Flags::default();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut take = || {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {arg} needs a value"))
        };
        match arg.as_str() {
            "--config" => flags.config = Some(PathBuf::from(take()?)),
            "--seed" => flags.seed = Some(take()?.parse().map_err(|e| format!("bad --seed: {e}"))?),
            "--out" => flags.out = Some(PathBuf::from(take()?)),
            "--steps" => {
                flags.steps = Some(take()?.parse().map_err(|e| format!("bad --steps: {e}"))?)
            }
            "--samples" => {
                flags.samples = Some(take()?.parse().map_err(|e| format!("bad --samples: {e}"))?)
            }
            other => return Err(format!("unknown flag: {other}")),
        }
    }
    Ok(flags)
}

fn config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfig(_) | Error::Io { .. } | Error::MalformedFile { .. } | Error::Json(_)
    )
}

/// Run the CLI on pre-split arguments (without argv[0]); returns the exit code.
pub fn run_cli(args: Vec<String>) -> i32 {
    let Some(command) = args.first().map(String::as_str) else {
        eprintln!("{USAGE}");
        return 1;
    };
    let forced = match command {
        "run" => None,
        "train" => Some(ExperimentKind::DsmTrain),
        "validate" => Some(ExperimentKind::EstimatorValidation),
        other => {
            eprintln!("unknown command: {other}\n{USAGE}");
            return 1;
        }
    };
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("{msg}\n{USAGE}");
            return 1;
        }
    };
    let Some(config_path) = flags.config else {
        eprintln!("missing required --config <path>\n{USAGE}");
        return 1;
    };

    let mut config = match RunConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error loading config {}: {e}", config_path.display());
            return 1;
        }
    };
    if let Some(kind) = forced {
        config.experiment = kind;
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if let Some(out) = flags.out {
        config.output_dir = out;
    }
    if let Some(steps) = flags.steps {
        config.integrator.steps = steps;
    }
    if let Some(samples) = flags.samples {
        config.n_samples = samples;
    }

    match run_experiment(&config) {
        Ok(outcome) => {
            print!("{}", outcome.report.print_lines());
            println!(
                "experiment {}: {} ({} aborted of {}); outputs in {}",
                outcome.report.experiment,
                if outcome.report.pass { "PASS" } else { "FAIL" },
                outcome.report.aborted_trajectories,
                outcome.report.total_trajectories,
                config.output_dir.display()
            );
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if config_error(&e) {
                1
            } else {
                2
            }
        }
    }
}
