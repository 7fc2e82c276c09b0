//! Tabulate an analytic score on a space × time grid, save it in the binary
//! grid format, reload it, and measure the interpolation error.
//!
//! ```bash
//! cargo run --release --example grid_score_field
//! ```

use superdiff::rng::CounterRng;
use superdiff::schedule::Schedule;
use superdiff::score::{gmm_score, GmmParams, GridScoreModel, ScoreModel};

fn main() {
    let schedule = Schedule::vp_default();
    let params = GmmParams::new(
        vec![0.5, 0.5],
        vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        vec![0.2, 0.2],
    )
    .unwrap();

    let bbox = [[-4.0, 4.0], [-4.0, 4.0]];
    let grid = [64usize, 64];
    let times: Vec<f64> = (0..32).map(|i| 0.3 + 0.6 * i as f64 / 31.0).collect();
    println!(
        "sampling the mixture score on a {}x{} grid at {} times ...",
        grid[0],
        grid[1],
        times.len()
    );
    let field = GridScoreModel::build(&bbox, &grid, &times, |x, t| {
        gmm_score(&params, &schedule, x, t)
    })
    .unwrap();

    let path = std::env::temp_dir().join("superdiff_demo.grid");
    field.save(&path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    println!("saved to {} ({} KiB)", path.display(), size / 1024);
    let loaded = GridScoreModel::load(&path).unwrap();

    let mut rng = CounterRng::new(3, 0);
    let mut worst = 0.0f64;
    let mut sum = 0.0;
    let queries = 2000;
    for _ in 0..queries {
        let x = vec![rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0)];
        let t = rng.uniform_in(0.35, 0.85);
        let got = loaded.score(&x, t).unwrap();
        let want = gmm_score(&params, &schedule, &x, t).unwrap();
        let err = got
            .iter()
            .zip(&want)
            .map(|(g, w)| (g - w).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(err);
        sum += err;
    }
    println!();
    println!("multilinear interpolation vs analytic score over {queries} interior queries:");
    println!(
        "  mean abs error {:.2e}, worst {:.2e}",
        sum / queries as f64,
        worst
    );

    let clamped = loaded.score(&[100.0, 0.0], 0.5).unwrap();
    let boundary = loaded.score(&[4.0, 0.0], 0.5).unwrap();
    println!(
        "  out-of-box queries clamp to the boundary: {:?} == {:?}",
        clamped, boundary
    );
}
