//! Train a small score network by denoising score matching on a two-cluster
//! point dataset, then compare it against the analytic mixture score.
//!
//! ```bash
//! cargo run --release --example train_score_mlp
//! ```

use superdiff::harness::experiment::relative_score_error;
use superdiff::rng::CounterRng;
use superdiff::schedule::Schedule;
use superdiff::score::{GmmParams, MlpScoreModel, MlpWeights};
use superdiff::train::{train_with_history, TrainConfig};

fn main() {
    let mut dataset = Vec::new();
    for cx in [-2.0f64, 2.0] {
        for (dx, dy) in [(0.3, 0.3), (0.3, -0.3), (-0.3, 0.3), (-0.3, -0.3)] {
            dataset.push(vec![cx + dx, dy]);
        }
    }
    let schedule = Schedule::vp_default();
    let config = TrainConfig::new(dataset.clone(), schedule);

    println!(
        "training on {} points, {} steps x batch {} ...",
        dataset.len(),
        config.steps,
        config.batch
    );
    let start = std::time::Instant::now();
    let (weights, history) = train_with_history(&config).unwrap();
    println!(
        "done in {:.1}s; loss {:.2} -> {:.2}",
        start.elapsed().as_secs_f64(),
        history[..history.len() / 10].iter().sum::<f64>() / (history.len() / 10) as f64,
        history[history.len() * 9 / 10..].iter().sum::<f64>()
            / (history.len() - history.len() * 9 / 10) as f64,
    );

    // Round-trip the weights through the on-disk format.
    let path = std::env::temp_dir().join("superdiff_demo.mlp");
    weights.save(&path).unwrap();
    let model = MlpScoreModel::new(MlpWeights::load(&path).unwrap()).unwrap();
    println!("weights saved to {} and reloaded", path.display());

    let oracle = GmmParams::from_points(&dataset).unwrap();
    let mut rng = CounterRng::new(1, 0);
    println!();
    println!("relative L2 score error over the 90% probability region:");
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let rel = relative_score_error(&model, &oracle, &schedule, t, 2000, &mut rng).unwrap();
        println!("  t = {t:.1}: {rel:.3}");
    }

    // At the cluster symmetry midpoint the true score vanishes.
    use superdiff::score::ScoreModel;
    let mid = model.score(&[0.0, 0.0], 0.3).unwrap();
    println!();
    println!(
        "score at the symmetry midpoint (0,0), t = 0.3: ({:.4}, {:.4})",
        mid[0], mid[1]
    );
}
