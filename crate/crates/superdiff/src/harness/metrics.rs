//! Experiment metrics and the pass/fail report written to metrics.json.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// One named metric with an optional declared tolerance band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    /// Inclusive declared band [lo, hi]; absent for informational metrics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    pub pass: bool,
}

/// Everything an experiment declares and measures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub metrics: Vec<MetricEntry>,
    pub aborted_trajectories: usize,
    pub total_trajectories: usize,
    pub pass: bool,
}

impl MetricsReport {
    pub fn new(experiment: &str) -> Self {
        MetricsReport {
            experiment: experiment.into(),
            metrics: Vec::new(),
            aborted_trajectories: 0,
            total_trajectories: 0,
            pass: true,
        }
    }

    /// Metric with a declared tolerance; failing it fails the report.
    pub fn push_checked(
        &mut self,
        name: &str,
        value: f64,
        stderr: Option<f64>,
        lo: f64,
        hi: f64,
    ) -> bool {
        let pass = value.is_finite() && value >= lo && value <= hi;
        self.metrics.push(MetricEntry {
            name: name.into(),
            value,
            stderr,
            lo: Some(lo),
            hi: Some(hi),
            pass,
        });
        self.pass &= pass;
        pass
    }

    /// Informational metric; never fails.
    pub fn push_info(&mut self, name: &str, value: f64) {
        self.metrics.push(MetricEntry {
            name: name.into(),
            value,
            stderr: None,
            lo: None,
            hi: None,
            pass: true,
        });
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// One printable line per metric.
    pub fn print_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            let status = if m.lo.is_none() && m.hi.is_none() {
                "INFO"
            } else if m.pass {
                "PASS"
            } else {
                "FAIL"
            };
            let band = match (m.lo, m.hi) {
                (Some(lo), Some(hi)) => format!(" (band [{lo:.6}, {hi:.6}])"),
                _ => String::new(),
            };
            let se = match m.stderr {
                Some(s) => format!(" ± {s:.3e}"),
                None => String::new(),
            };
            out.push_str(&format!("{status} {}: {:.6}{se}{band}\n", m.name, m.value));
        }
        out
    }
}

/// Per-model assignment fractions of final samples.
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    pub fractions: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Samples whose nearest/second-nearest mode distance ratio was < 2.
    pub ambiguous: usize,
    pub assignments: Vec<usize>,
}

/// Assign each sample to the model owning its nearest mode.
///
/// `modes_per_model[i]` lists model i's mode locations. Ambiguous samples
/// (second-nearest mode closer than twice the nearest) are still assigned but
/// counted separately.
pub fn metric_mixture_weights(
    samples: &[Vec<f64>],
    modes_per_model: &[Vec<Vec<f64>>],
) -> MixtureWeights {
    let m = modes_per_model.len();
    let mut counts = vec![0usize; m];
    let mut ambiguous = 0usize;
    let mut assignments = Vec::with_capacity(samples.len());
    for x in samples {
        let mut best = (f64::MAX, 0usize);
        let mut second = f64::MAX;
        for (model, modes) in modes_per_model.iter().enumerate() {
            for mode in modes {
                let d2: f64 = x.iter().zip(mode).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    second = best.0;
                    best = (d2, model);
                } else if d2 < second {
                    second = d2;
                }
            }
        }
        if second.is_finite() && second.sqrt() < 2.0 * best.0.sqrt() {
            ambiguous += 1;
        }
        counts[best.1] += 1;
        assignments.push(best.1);
    }
    let n = samples.len().max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    let stderrs: Vec<f64> = fractions
        .iter()
        .map(|p| (p * (1.0 - p) / n).sqrt())
        .collect();
    MixtureWeights {
        fractions,
        stderrs,
        ambiguous,
        assignments,
    }
}

/// Gap statistics of |logq_i − logq_j| at termination, net of the accumulated
/// bias offsets.
#[derive(Debug, Clone)]
pub struct GapStats {
    pub median: f64,
    pub p95: f64,
    pub count: usize,
}

/// `bias_totals[i]` is the total offset Σ_steps ℓ_i accumulated by model i.
pub fn metric_density_gap(trajectories: &[Trajectory], bias_totals: &[f64]) -> GapStats {
    let mut gaps: Vec<f64> = Vec::new();
    for t in trajectories.iter().filter(|t| t.aborted.is_none()) {
        let m = t.logq.len();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                let offset = bias_totals.get(i).copied().unwrap_or(0.0)
                    - bias_totals.get(j).copied().unwrap_or(0.0);
                worst = worst.max(((t.logq[i] - t.logq[j]) - offset).abs());
            }
        }
        gaps.push(worst);
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count = gaps.len();
    let pick = |q: f64| -> f64 {
        if gaps.is_empty() {
            f64::NAN
        } else {
            gaps[((count as f64 - 1.0) * q).round() as usize]
        }
    };
    GapStats {
        median: pick(0.5),
        p95: pick(0.95),
        count,
    }
}
