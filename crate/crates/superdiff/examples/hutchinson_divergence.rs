//! Divergence estimation of a probability-flow field: Hutchinson probes
//! against the deterministic finite-difference oracle.
//!
//! ```bash
//! cargo run --release --example hutchinson_divergence
//! ```

use superdiff::estimator::{exact_divergence_fd, hutchinson_divergence};
use superdiff::rng::CounterRng;
use superdiff::schedule::Schedule;
use superdiff::score::{GmmParams, GmmScoreModel, ScoreModel};

fn main() {
    let schedule = Schedule::vp_default();
    let model = GmmScoreModel::new(
        GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![1.5, 0.0], vec![-1.5, 0.5]],
            vec![0.3, 0.2],
        )
        .unwrap(),
        schedule,
    )
    .unwrap();
    let t = 0.35;
    let ev = schedule.eval(t).unwrap();
    let field = |x: &[f64]| {
        let s = model.score(x, t)?;
        Ok((0..2)
            .map(|i| ev.dlog_alpha_dt * x[i] - 0.5 * ev.g2 * s[i])
            .collect())
    };

    let mut rng = CounterRng::new(5, 0);
    println!("mixture flow field at t = {t}: Hutchinson (64 probes) vs finite differences");
    println!(
        "{:>20}  {:>10}  {:>10}  {:>8}  {:>8}",
        "point", "hutchinson", "exact fd", "stderr", "|z|"
    );
    for _ in 0..8 {
        let x = rng.normal_vec(2);
        let est = hutchinson_divergence(field, &x, 64, &mut rng).unwrap();
        let oracle = exact_divergence_fd(field, &x, 1e-5).unwrap();
        println!(
            "({:>8.3}, {:>7.3})  {:>10.4}  {:>10.4}  {:>8.4}  {:>8.2}",
            x[0],
            x[1],
            est.mean,
            oracle,
            est.stderr(),
            (est.mean - oracle).abs() / est.stderr().max(1e-12)
        );
    }

    println!();
    println!("linear fields need exactly one probe:");
    let trace = schedule.drift_divergence(0.5, 2).unwrap();
    let single = hutchinson_divergence(
        |x| schedule.forward_drift(x, 0.5),
        &[0.7, -0.4],
        1,
        &mut rng,
    )
    .unwrap();
    println!(
        "  forward OU drift at t = 0.5: single probe {:.12}, trace {:.12}, |diff| {:.1e}",
        single.mean,
        trace,
        (single.mean - trace).abs()
    );
}
