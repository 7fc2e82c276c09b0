//! Drive a full experiment (config → run → metrics.json/CSV/SVG) through the
//! same code path as the `superdiff` binary.
//!
//! ```bash
//! cargo run --release --example cli_experiment
//! ```

use superdiff::harness::config::{ExperimentKind, ModelSpec, RunConfig};
use superdiff::harness::experiment::run_experiment;
use superdiff::integrate::IntegratorConfig;
use superdiff::schedule::Schedule;
use superdiff::superpose::SuperposeMode;

fn main() {
    let out = std::env::temp_dir().join("superdiff_cli_experiment");
    std::fs::create_dir_all(&out).unwrap();
    let config = RunConfig {
        experiment: ExperimentKind::OrMixture,
        schedule: Schedule::vp_default(),
        models: vec![
            ModelSpec::Gmm {
                weights: vec![1.0],
                means: vec![vec![4.0, 0.0]],
                stddevs: vec![0.5],
            },
            ModelSpec::Gmm {
                weights: vec![1.0],
                means: vec![vec![-4.0, 0.0]],
                stddevs: vec![0.5],
            },
        ],
        mode: Some(SuperposeMode::Or {
            temperature: 1.0,
            bias: vec![0.0, 0.0],
        }),
        integrator: IntegratorConfig::sde(500),
        n_samples: 2000,
        seed: 7,
        output_dir: out.clone(),
        trace_samples: 4,
        train: None,
    };

    // The JSON form of this config is exactly what `superdiff run --config`
    // accepts.
    println!(
        "config:\n{}",
        serde_json::to_string_pretty(&config).unwrap()
    );
    println!();

    let outcome = run_experiment(&config).unwrap();
    print!("{}", outcome.report.print_lines());
    println!(
        "exit code {}; outputs in {}",
        outcome.exit_code,
        out.display()
    );
}
