//! CSV trace/sample emission and SVG scatter plots.
//!
//! CSV columns are exactly
//! `sample_id,step,tau,x0..x{d−1},logq_0..logq_{M−1},kappa_0..kappa_{M−1},fallback`;
//! floats are written with 17 significant digits so a parse round-trips to
//! the identical f64.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// Lossless f64 formatting (17 significant digits).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim: usize, n_models: usize) -> String {
    let mut h = String::from("sample_id,step,tau");
    for i in 0..dim {
        write!(h, ",x{i}").unwrap();
    }
    for i in 0..n_models {
        write!(h, ",logq_{i}").unwrap();
    }
    for i in 0..n_models {
        write!(h, ",kappa_{i}").unwrap();
    }
    h.push_str(",fallback");
    h
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    out: &mut String,
    sample_id: usize,
    step: usize,
    tau: f64,
    x: &[f64],
    logq: &[f64],
    kappa: &[f64],
    fallback: bool,
) {
    write!(out, "{sample_id},{step},{}", format_float(tau)).unwrap();
    for v in x {
        write!(out, ",{}", format_float(*v)).unwrap();
    }
    for v in logq {
        write!(out, ",{}", format_float(*v)).unwrap();
    }
    for v in kappa {
        write!(out, ",{}", format_float(*v)).unwrap();
    }
    out.push(',');
    out.push(if fallback { '1' } else { '0' });
    out.push('\n');
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Final state of every healthy trajectory, one row per sample.
pub fn write_samples_csv(
    path: &Path,
    trajectories: &[Trajectory],
    dim: usize,
    n_models: usize,
    final_step: usize,
) -> Result<()> {
    let mut out = header(dim, n_models);
    out.push('\n');
    for t in trajectories.iter().filter(|t| t.aborted.is_none()) {
        push_row(
            &mut out,
            t.sample_id,
            final_step,
            t.tau,
            &t.x,
            &t.logq,
            &t.last_kappa,
            t.fallback_steps > 0,
        );
    }
    write_file(path, &out)
}

/// Full per-step records of the traced trajectories.
pub fn write_trace_csv(
    path: &Path,
    trajectories: &[Trajectory],
    dim: usize,
    n_models: usize,
) -> Result<()> {
    let mut out = header(dim, n_models);
    out.push('\n');
    for t in trajectories {
        for r in &t.records {
            push_row(
                &mut out,
                t.sample_id,
                r.step,
                r.tau,
                &r.x,
                &r.logq,
                &r.kappa,
                r.fallback,
            );
        }
    }
    write_file(path, &out)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// 2D scatter of the first two coordinates, one color per assigned model.
pub fn write_scatter_svg(path: &Path, samples: &[(Vec<f64>, usize)]) -> Result<()> {
    let size = 640.0;
    let margin = 40.0;
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (p, _) in samples {
        lo_x = lo_x.min(p[0]);
        hi_x = hi_x.max(p[0]);
        lo_y = lo_y.min(p[1]);
        hi_y = hi_y.max(p[1]);
    }
    if samples.is_empty() {
        lo_x = -1.0;
        hi_x = 1.0;
        lo_y = -1.0;
        hi_y = 1.0;
    }
    let pad = 0.05 * ((hi_x - lo_x).max(hi_y - lo_y)).max(1e-9);
    lo_x -= pad;
    hi_x += pad;
    lo_y -= pad;
    hi_y += pad;
    let scale = (size - 2.0 * margin) / (hi_x - lo_x).max(hi_y - lo_y);
    let px = |x: f64| margin + (x - lo_x) * scale;
    let py = |y: f64| size - margin - (y - lo_y) * scale;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"
    );
    for (p, model) in samples {
        let color = PALETTE[model % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
            px(p[0]),
            py(p[1])
        );
    }
    svg.push_str("</svg>\n");
    write_file(path, &svg)
}
