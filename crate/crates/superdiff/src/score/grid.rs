//! Grid-interpolated score field loaded from a file.
//!
//! File format: one JSON header line
//!
//! ```text
//! {"dim":d,"bbox":[[lo,hi],...],"grid":[n1,...,nd],"times":[t0,...,tm]}
//! ```
//!
//! terminated by a newline, followed by a row-major little-endian f64 payload
//! of exactly (Π n_i) · m · d values, laid out as
//! `[spatial indices (row-major), time index, component]`.
//!
//! Queries are multilinear over space and time; anything outside the bounding
//! box or time range is clamped to the boundary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_dim, ScoreModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridHeader {
    dim: usize,
    bbox: Vec<[f64; 2]>,
    grid: Vec<usize>,
    times: Vec<f64>,
}

/// Score model backed by a regular (space × time) grid of score vectors.
#[derive(Debug, Clone)]
pub struct GridScoreModel {
    header: GridHeader,
    /// Flat payload, indexed by ((spatial row-major)·m + time)·d + component.
    values: Vec<f64>,
}

impl GridScoreModel {
    /// Sample `score_fn` on the grid nodes.
    pub fn build(
        bbox: &[[f64; 2]],
        grid: &[usize],
        times: &[f64],
        mut score_fn: impl FnMut(&[f64], f64) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let header = GridHeader {
            dim: bbox.len(),
            bbox: bbox.to_vec(),
            grid: grid.to_vec(),
            times: times.to_vec(),
        };
        validate_header(&header, None)?;
        let d = header.dim;
        let m = times.len();
        let total: usize = grid.iter().product::<usize>() * m * d;
        let mut values = vec![0.0; total];
        let mut idx = vec![0usize; d];
        let spatial_count: usize = grid.iter().product();
        let mut x = vec![0.0; d];
        for lin in 0..spatial_count {
            // decode row-major linear index
            let mut rem = lin;
            for i in (0..d).rev() {
                idx[i] = rem % grid[i];
                rem /= grid[i];
            }
            for i in 0..d {
                x[i] = axis_pos(bbox[i], grid[i], idx[i]);
            }
            for (j, t) in times.iter().enumerate() {
                let s = score_fn(&x, *t)?;
                check_dim("grid build score", d, s.len())?;
                let base = (lin * m + j) * d;
                values[base..base + d].copy_from_slice(&s);
            }
        }
        let model = GridScoreModel { header, values };
        model.check_finite()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &self.header)?;
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let newline =
            bytes
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| Error::MalformedFile {
                    path: path.into(),
                    what: "missing header newline".into(),
                })?;
        let header: GridHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::MalformedFile {
                path: path.into(),
                what: format!("bad header: {e}"),
            })?;
        let payload = &bytes[newline + 1..];
        let expected: usize =
            header.grid.iter().product::<usize>() * header.times.len() * header.dim;
        if payload.len() != expected * 8 {
            return Err(Error::MalformedFile {
                path: path.into(),
                what: format!(
                    "payload holds {} bytes, header implies {}",
                    payload.len(),
                    expected * 8
                ),
            });
        }
        validate_header(&header, Some(path))?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = GridScoreModel { header, values };
        model.check_finite().map_err(|_| Error::MalformedFile {
            path: path.into(),
            what: "non-finite payload entry".into(),
        })?;
        Ok(model)
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: "grid score entry",
                tau: f64::NAN,
            })
        }
    }

    fn value_at(&self, spatial: &[usize], time_idx: usize, out: &mut [f64]) {
        let d = self.header.dim;
        let m = self.header.times.len();
        let mut lin = 0usize;
        for (i, ix) in spatial.iter().enumerate() {
            lin = lin * self.header.grid[i] + ix;
        }
        let base = (lin * m + time_idx) * d;
        out.copy_from_slice(&self.values[base..base + d]);
    }
}

fn validate_header(h: &GridHeader, path: Option<&Path>) -> Result<()> {
    let bad = |what: String| match path {
        Some(p) => Error::MalformedFile {
            path: p.into(),
            what,
        },
        None => Error::InvalidConfig(what),
    };
    if h.dim == 0 || h.bbox.len() != h.dim || h.grid.len() != h.dim {
        return Err(bad(format!(
            "dim {} does not match bbox {} / grid {}",
            h.dim,
            h.bbox.len(),
            h.grid.len()
        )));
    }
    if h.grid.iter().any(|n| *n < 2) {
        return Err(bad("each spatial axis needs at least 2 nodes".into()));
    }
    if h.times.is_empty() {
        return Err(bad("empty time list".into()));
    }
    if h.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("times must be strictly increasing".into()));
    }
    for [lo, hi] in &h.bbox {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(bad(format!("bad bbox interval [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn axis_pos(bbox: [f64; 2], n: usize, idx: usize) -> f64 {
    bbox[0] + (bbox[1] - bbox[0]) * idx as f64 / (n - 1) as f64
}

/// Locate `q` on an axis: lower node index and fractional offset, clamped.
fn locate(bbox: [f64; 2], n: usize, q: f64) -> (usize, f64) {
    let u = ((q - bbox[0]) / (bbox[1] - bbox[0])).clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

fn locate_time(times: &[f64], t: f64) -> (usize, f64) {
    if times.len() == 1 || t <= times[0] {
        return (0, 0.0);
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return (last - 1, 1.0);
    }
    let hi = times.partition_point(|v| *v <= t);
    let lo = hi - 1;
    (lo, (t - times[lo]) / (times[hi] - times[lo]))
}

impl ScoreModel for GridScoreModel {
    fn dim(&self) -> usize {
        self.header.dim
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let d = self.header.dim;
        check_dim("grid query", d, x.len())?;
        let mut base_idx = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let (bi, fr) = locate(self.header.bbox[i], self.header.grid[i], x[i]);
            base_idx[i] = bi;
            frac[i] = fr;
        }
        let (t_idx, t_frac) = locate_time(&self.header.times, t);
        let single_time = self.header.times.len() == 1;

        let mut out = vec![0.0; d];
        let mut corner_val = vec![0.0; d];
        let mut corner_idx = vec![0usize; d];
        let corners = 1usize << d;
        for bits in 0..corners {
            let mut w = 1.0;
            for i in 0..d {
                if bits >> i & 1 == 1 {
                    w *= frac[i];
                    corner_idx[i] = base_idx[i] + 1;
                } else {
                    w *= 1.0 - frac[i];
                    corner_idx[i] = base_idx[i];
                }
            }
            if w == 0.0 {
                continue;
            }
            if single_time {
                self.value_at(&corner_idx, 0, &mut corner_val);
                for (o, v) in out.iter_mut().zip(&corner_val) {
                    *o += w * v;
                }
            } else {
                self.value_at(&corner_idx, t_idx, &mut corner_val);
                for (o, v) in out.iter_mut().zip(&corner_val) {
                    *o += w * (1.0 - t_frac) * v;
                }
                self.value_at(&corner_idx, t_idx + 1, &mut corner_val);
                for (o, v) in out.iter_mut().zip(&corner_val) {
                    *o += w * t_frac * v;
                }
            }
        }
        Ok(out)
    }
}
