//! Small fully connected score network.
//!
//! Fixed architecture `[d + 16 → 128 → 128 → d]` with tanh activations and a
//! 16-dimensional sinusoidal time embedding. The network predicts the noise
//! ε̂ (an O(1) quantity at every time); the score is −ε̂/σ_t, which keeps the
//! regression targets bounded even where the score blows up as σ→0. The
//! denoising-score-matching trainer (with hand-written backprop over exactly
//! this architecture) lives in [`crate::train`].
//!
//! Weights serialize like grid files: one JSON header line (shapes, seed,
//! schedule) followed by a little-endian f64 payload in the order
//! `w1, b1, w2, b2, w3, b3` (row-major matrices).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_dim, ScoreModel};
use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// Hidden layer width H.
pub const HIDDEN_WIDTH: usize = 128;
/// Sinusoidal time-embedding dimension.
pub const TIME_EMBED_DIM: usize = 16;

/// Sinusoidal features of t: (sin, cos) pairs at geometric frequencies π·2^k.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut emb = [0.0; TIME_EMBED_DIM];
    for k in 0..TIME_EMBED_DIM / 2 {
        let freq = std::f64::consts::PI * (1u64 << k) as f64;
        let (s, c) = (freq * t).sin_cos();
        emb[2 * k] = s;
        emb[2 * k + 1] = c;
    }
    emb
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpHeader {
    dim: usize,
    hidden: usize,
    time_embed: usize,
    seed: u64,
    schedule: Schedule,
}

/// Parameters of the 3-layer score network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub dim: usize,
    pub seed: u64,
    /// Schedule the network was trained against; fixes the ε̂ → score map.
    pub schedule: Schedule,
    /// H × (d + 16), row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// H × H, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// d × H, row-major.
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl MlpWeights {
    /// Zeroed weights with consistent shapes.
    pub fn zeros(dim: usize) -> Self {
        let input = dim + TIME_EMBED_DIM;
        MlpWeights {
            dim,
            seed: 0,
            schedule: Schedule::vp_default(),
            w1: vec![0.0; HIDDEN_WIDTH * input],
            b1: vec![0.0; HIDDEN_WIDTH],
            w2: vec![0.0; HIDDEN_WIDTH * HIDDEN_WIDTH],
            b2: vec![0.0; HIDDEN_WIDTH],
            w3: vec![0.0; dim * HIDDEN_WIDTH],
            b3: vec![0.0; dim],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    fn input_width(&self) -> usize {
        self.dim + TIME_EMBED_DIM
    }

    pub fn check_shapes(&self) -> Result<()> {
        let input = self.input_width();
        let ok = self.w1.len() == HIDDEN_WIDTH * input
            && self.b1.len() == HIDDEN_WIDTH
            && self.w2.len() == HIDDEN_WIDTH * HIDDEN_WIDTH
            && self.b2.len() == HIDDEN_WIDTH
            && self.w3.len() == self.dim * HIDDEN_WIDTH
            && self.b3.len() == self.dim;
        if !ok {
            return Err(Error::InvalidConfig(
                "mlp weight shapes inconsistent".into(),
            ));
        }
        let all = [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite {
                what: "mlp weight",
                tau: f64::NAN,
            });
        }
        Ok(())
    }

    /// Deterministic forward pass: the raw network output ε̂(x, t).
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim("mlp input", self.dim, x.len())?;
        let (out, _, _, _) = self.forward_cached(x, t);
        Ok(out)
    }

    /// Score −ε̂(x, t)/σ_t.
    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = self.forward(x, t)?;
        let sigma = self.schedule.eval(t)?.sigma;
        for v in out.iter_mut() {
            *v = -*v / sigma;
        }
        Ok(out)
    }

    /// Forward pass returning hidden activations for backprop.
    pub(crate) fn forward_cached(
        &self,
        x: &[f64],
        t: f64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let input = self.input_width();
        let mut z = Vec::with_capacity(input);
        z.extend_from_slice(x);
        z.extend_from_slice(&time_embedding(t));

        let mut h1 = vec![0.0; HIDDEN_WIDTH];
        for (r, h) in h1.iter_mut().enumerate() {
            let row = &self.w1[r * input..(r + 1) * input];
            let mut acc = self.b1[r];
            for (wi, zi) in row.iter().zip(&z) {
                acc += wi * zi;
            }
            *h = acc.tanh();
        }
        let mut h2 = vec![0.0; HIDDEN_WIDTH];
        for (r, h) in h2.iter_mut().enumerate() {
            let row = &self.w2[r * HIDDEN_WIDTH..(r + 1) * HIDDEN_WIDTH];
            let mut acc = self.b2[r];
            for (wi, hi) in row.iter().zip(&h1) {
                acc += wi * hi;
            }
            *h = acc.tanh();
        }
        let mut out = vec![0.0; self.dim];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w3[r * HIDDEN_WIDTH..(r + 1) * HIDDEN_WIDTH];
            let mut acc = self.b3[r];
            for (wi, hi) in row.iter().zip(&h2) {
                acc += wi * hi;
            }
            *o = acc;
        }
        (out, z, h1, h2)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_shapes()?;
        let header = MlpHeader {
            dim: self.dim,
            hidden: HIDDEN_WIDTH,
            time_embed: TIME_EMBED_DIM,
            seed: self.seed,
            schedule: self.schedule,
        };
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for part in [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3] {
            for v in part {
                out.extend_from_slice(&v.to_le_bytes());
            }
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
        let header: MlpHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::MalformedFile {
                path: path.into(),
                what: format!("bad header: {e}"),
            })?;
        if header.hidden != HIDDEN_WIDTH || header.time_embed != TIME_EMBED_DIM {
            return Err(Error::MalformedFile {
                path: path.into(),
                what: format!(
                    "unsupported architecture {}x{} (expected {}x{})",
                    header.hidden, header.time_embed, HIDDEN_WIDTH, TIME_EMBED_DIM
                ),
            });
        }
        let mut w = MlpWeights::zeros(header.dim);
        w.seed = header.seed;
        w.schedule = header.schedule;
        let expected = w.parameter_count();
        let payload = &bytes[newline + 1..];
        if payload.len() != expected * 8 {
            return Err(Error::MalformedFile {
                path: path.into(),
                what: format!(
                    "payload holds {} bytes, shapes imply {}",
                    payload.len(),
                    expected * 8
                ),
            });
        }
        let mut vals = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for part in [
            &mut w.w1, &mut w.b1, &mut w.w2, &mut w.b2, &mut w.w3, &mut w.b3,
        ] {
            for slot in part.iter_mut() {
                *slot = vals.next().unwrap();
            }
        }
        w.check_shapes().map_err(|_| Error::MalformedFile {
            path: path.into(),
            what: "non-finite weight".into(),
        })?;
        Ok(w)
    }
}

/// Score backend wrapping trained MLP weights.
#[derive(Debug, Clone)]
pub struct MlpScoreModel {
    weights: MlpWeights,
}

impl MlpScoreModel {
    pub fn new(weights: MlpWeights) -> Result<Self> {
        weights.check_shapes()?;
        Ok(MlpScoreModel { weights })
    }

    pub fn load(path: &Path) -> Result<Self> {
        MlpScoreModel::new(MlpWeights::load(path)?)
    }

    pub fn weights(&self) -> &MlpWeights {
        &self.weights
    }
}

impl ScoreModel for MlpScoreModel {
    fn dim(&self) -> usize {
        self.weights.dim
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.weights.score(x, t)
    }
}
