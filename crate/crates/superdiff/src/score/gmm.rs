//! Analytic Gaussian-mixture score model.
//!
//! The data density is a K-component isotropic mixture; under the forward
//! corruption with schedule (α_t, σ_t) each component stays Gaussian:
//!
//! ```text
//! q_t(x) = Σ_k w_k N(x | α_t μ_k, (σ_t² + α_t² s_k²) I)
//! ```
//!
//! with s_k the initial component stddev (s_k = 0 is a point mass, i.e. a
//! training sample). Everything — log-density, score, score divergence — is
//! closed form, which is what makes this backend the ground-truth oracle for
//! the estimators and samplers.

use serde::{Deserialize, Serialize};

use super::{check_dim, ScoreModel};
use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// Parameters of an isotropic Gaussian mixture over data space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Initial per-component stddevs s_k ≥ 0 (0 = point mass).
    pub component_stddevs: Vec<f64>,
}

impl GmmParams {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        component_stddevs: Vec<f64>,
    ) -> Result<Self> {
        let p = GmmParams {
            weights,
            means,
            component_stddevs,
        };
        p.validate()?;
        Ok(p)
    }

    /// Single isotropic Gaussian component.
    pub fn single(mean: Vec<f64>, stddev: f64) -> Self {
        GmmParams {
            weights: vec![1.0],
            means: vec![mean],
            component_stddevs: vec![stddev],
        }
    }

    /// Uniform mixture of point masses, one per data point.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let k = points.len();
        GmmParams::new(vec![1.0 / k as f64; k], points.to_vec(), vec![0.0; k])
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.component_stddevs.len() != k {
            return Err(Error::InvalidConfig(format!(
                "gmm component counts disagree: {} weights, {} means, {} stddevs",
                k,
                self.means.len(),
                self.component_stddevs.len()
            )));
        }
        let d = self.dim();
        for m in &self.means {
            check_dim("gmm means", d, m.len())?;
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "gmm weights must be nonnegative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "gmm weights sum to {total}, expected 1"
            )));
        }
        if self
            .component_stddevs
            .iter()
            .any(|s| *s < 0.0 || !s.is_finite())
        {
            return Err(Error::InvalidConfig("gmm stddevs must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Per-component log N(x | α μ_k, v_k I) with the mixture log-weight folded in.
fn component_log_terms(
    params: &GmmParams,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let d = params.dim();
    check_dim("gmm query", d, x.len())?;
    let ev = schedule.eval(t)?;
    let (alpha, sigma2) = (ev.alpha, ev.sigma * ev.sigma);
    let mut terms = Vec::with_capacity(params.weights.len());
    let mut variances = Vec::with_capacity(params.weights.len());
    for (k, ((w, mu), s)) in params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.component_stddevs)
        .enumerate()
    {
        let v = sigma2 + alpha * alpha * s * s;
        if v <= 0.0 {
            return Err(Error::DegenerateVariance {
                component: k,
                variance: v,
                t: ev.t,
            });
        }
        let sq: f64 = x
            .iter()
            .zip(mu)
            .map(|(xi, mi)| {
                let r = xi - alpha * mi;
                r * r
            })
            .sum();
        let logw = if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
        terms.push(logw - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * v).ln() - sq / (2.0 * v));
        variances.push(v);
    }
    Ok((terms, variances, alpha, ev.t))
}

/// log q_t(x) of the diffused mixture, stabilized with log-sum-exp.
pub fn gmm_log_density(params: &GmmParams, schedule: &Schedule, x: &[f64], t: f64) -> Result<f64> {
    let (terms, _, _, _) = component_log_terms(params, schedule, x, t)?;
    Ok(log_sum_exp(&terms))
}

/// ∇_x log q_t(x) of the diffused mixture: responsibility-weighted component
/// scores −(x − α μ_k)/v_k.
pub fn gmm_score(params: &GmmParams, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    // Single component: the responsibility is 1, no log-sum-exp needed. This
    // is the sampler's hot path for the analytic oracle models.
    if params.weights.len() == 1 {
        let d = params.dim();
        check_dim("gmm query", d, x.len())?;
        let ev = schedule.eval(t)?;
        let s = params.component_stddevs[0];
        let v = ev.sigma * ev.sigma + ev.alpha * ev.alpha * s * s;
        if v <= 0.0 {
            return Err(Error::DegenerateVariance {
                component: 0,
                variance: v,
                t: ev.t,
            });
        }
        return Ok(x
            .iter()
            .zip(&params.means[0])
            .map(|(xi, mi)| -(xi - ev.alpha * mi) / v)
            .collect());
    }
    let (terms, variances, alpha, _) = component_log_terms(params, schedule, x, t)?;
    let resp = responsibilities(&terms);
    let d = x.len();
    let mut score = vec![0.0; d];
    for ((r, mu), v) in resp.iter().zip(&params.means).zip(&variances) {
        if *r == 0.0 {
            continue;
        }
        for i in 0..d {
            score[i] += r * (-(x[i] - alpha * mu[i]) / v);
        }
    }
    Ok(score)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Posterior component weights from log terms, max-subtracted.
fn responsibilities(terms: &[f64]) -> Vec<f64> {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = terms.iter().map(|t| (t - m).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / z).collect()
}

/// Gaussian mixture diffused by a schedule; the exact backend.
#[derive(Debug, Clone)]
pub struct GmmScoreModel {
    params: GmmParams,
    schedule: Schedule,
}

impl GmmScoreModel {
    pub fn new(params: GmmParams, schedule: Schedule) -> Result<Self> {
        params.validate()?;
        Ok(GmmScoreModel { params, schedule })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Modes of the diffused mixture at time t (component means scaled by α_t).
    pub fn modes_at(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        let ev = self.schedule.eval(t)?;
        Ok(self
            .params
            .means
            .iter()
            .map(|mu| mu.iter().map(|m| ev.alpha * m).collect())
            .collect())
    }

    /// Draw one sample from q_t: pick a component, then x = α μ_k + √v_k ε.
    pub fn sample(&self, t: f64, rng: &mut crate::rng::CounterRng) -> Result<Vec<f64>> {
        let ev = self.schedule.eval(t)?;
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.params.weights.len() - 1;
        for (i, w) in self.params.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let s = self.params.component_stddevs[k];
        let std = (ev.sigma * ev.sigma + ev.alpha * ev.alpha * s * s).sqrt();
        Ok(self.params.means[k]
            .iter()
            .map(|m| ev.alpha * m + std * rng.standard_normal())
            .collect())
    }
}

impl ScoreModel for GmmScoreModel {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        gmm_score(&self.params, &self.schedule, x, t)
    }

    fn log_density(&self, x: &[f64], t: f64) -> Option<Result<f64>> {
        Some(gmm_log_density(&self.params, &self.schedule, x, t))
    }

    /// Closed-form Laplacian of log q_t:
    /// Σ_k r_k ‖y_k‖² − ‖Σ_k r_k y_k‖² − d Σ_k r_k / v_k with y_k the
    /// component scores.
    fn score_divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        let (terms, variances, alpha, _) = component_log_terms(&self.params, &self.schedule, x, t)?;
        let resp = responsibilities(&terms);
        let d = x.len();
        let mut mean_score = vec![0.0; d];
        let mut sum_sq = 0.0;
        let mut sum_inv_v = 0.0;
        for ((r, mu), v) in resp.iter().zip(&self.params.means).zip(&variances) {
            if *r == 0.0 {
                continue;
            }
            let mut nk = 0.0;
            for i in 0..d {
                let y = -(x[i] - alpha * mu[i]) / v;
                mean_score[i] += r * y;
                nk += y * y;
            }
            sum_sq += r * nk;
            sum_inv_v += r / v;
        }
        let mean_norm: f64 = mean_score.iter().map(|v| v * v).sum();
        Ok(sum_sq - mean_norm - d as f64 * sum_inv_v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn vp() -> Schedule {
        Schedule::vp_default()
    }

    #[test]
    fn point_mass_mode_value() {
        // K=1, s=0, x = α μ → −(d/2) log(2π σ²)
        let p = GmmParams::single(vec![1.0, -1.0], 0.0);
        let s = vp();
        let t = 0.4;
        let ev = s.eval(t).unwrap();
        let x: Vec<f64> = p.means[0].iter().map(|m| ev.alpha * m).collect();
        let got = gmm_log_density(&p, &s, &x, t).unwrap();
        let want = -(2.0 / 2.0) * (2.0 * std::f64::consts::PI * ev.sigma * ev.sigma).ln();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn symmetric_pair_matches_direct_summation() {
        // Oracle: direct two-term summation of the mixture density.
        let m = vec![1.5, -0.5];
        let p = GmmParams::new(
            vec![0.5, 0.5],
            vec![m.clone(), m.iter().map(|v| -v).collect()],
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = vp();
        let t = 0.3;
        let ev = s.eval(t).unwrap();
        let x = vec![0.0, 0.0];
        let got = gmm_log_density(&p, &s, &x, t).unwrap();

        let v = ev.sigma * ev.sigma;
        let direct: f64 = p
            .means
            .iter()
            .map(|mu| {
                let sq: f64 = x
                    .iter()
                    .zip(mu)
                    .map(|(xi, mi)| (xi - ev.alpha * mi).powi(2))
                    .sum();
                0.5 * (2.0 * std::f64::consts::PI * v).powi(-1) * (-sq / (2.0 * v)).exp()
            })
            .sum();
        assert!(
            (got - direct.ln()).abs() < 1e-12,
            "{got} vs {}",
            direct.ln()
        );
        // Equivalent closed form: single component at distance α|m| plus log 2.
        let dist2: f64 = m.iter().map(|mi| (ev.alpha * mi).powi(2)).sum();
        let single = -(2.0 * std::f64::consts::PI * v).ln() - dist2 / (2.0 * v);
        assert!((got - (single + 0.5f64.ln() + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn terminal_time_is_standard_normal() {
        let p = GmmParams::new(
            vec![0.3, 0.7],
            vec![vec![2.0, 1.0], vec![-1.0, 0.5]],
            vec![0.4, 0.0],
        )
        .unwrap();
        let x = vec![0.7, -0.2];
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        let std_normal = -(2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln() - norm2 / 2.0;
        // Default schedule: residual signal α(1)‖μ‖ ≈ 9e−3 bounds the gap.
        let got = gmm_log_density(&p, &vp(), &x, 1.0).unwrap();
        assert!((got - std_normal).abs() < 1e-2, "{got} vs {std_normal}");
        // A schedule with α(1) ≤ 1e−3 lands within 1e−3 nats.
        let sharp = Schedule::VpLinear {
            beta_min: 0.1,
            beta_max: 40.0,
        };
        let got = gmm_log_density(&p, &sharp, &x, 1.0).unwrap();
        assert!((got - std_normal).abs() < 1e-3, "{got} vs {std_normal}");
    }

    #[test]
    fn single_gaussian_score_is_exact() {
        // ∇ log q_t(x) = −(x − α_t μ)/σ_t² for a point mass.
        let p = GmmParams::single(vec![1.0, -1.0], 0.0);
        let s = vp();
        let t = 0.6;
        let ev = s.eval(t).unwrap();
        let x = vec![0.3, 0.9];
        let got = gmm_score(&p, &s, &x, t).unwrap();
        for i in 0..2 {
            let want = -(x[i] - ev.alpha * p.means[0][i]) / (ev.sigma * ev.sigma);
            assert_eq!(got[i], want);
        }
    }

    #[test]
    fn symmetric_pair_score_vanishes_at_origin() {
        let p = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            vec![0.3, 0.3],
        )
        .unwrap();
        let s = vp();
        let got = gmm_score(&p, &s, &[0.0, 0.0], 0.2).unwrap();
        assert!(got.iter().all(|v| v.abs() < 1e-14), "{got:?}");
    }

    /// Finite-difference gradient of the log-density, the oracle for scores.
    fn fd_gradient(p: &GmmParams, s: &Schedule, x: &[f64], t: f64, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let plus = gmm_log_density(p, s, &xp, t).unwrap();
            xp[i] = x[i] - h;
            let minus = gmm_log_density(p, s, &xp, t).unwrap();
            xp[i] = x[i];
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }

    #[test]
    fn random_mixture_score_matches_fd_gradient() {
        let mut rng = CounterRng::new(11, 0);
        let s = vp();
        for trial in 0..100 {
            let p = GmmParams::new(
                vec![0.2, 0.5, 0.3],
                vec![rng.normal_vec(2), rng.normal_vec(2), rng.normal_vec(2)],
                vec![0.5 * rng.uniform(), 0.3, 0.0],
            )
            .unwrap();
            let x = rng.normal_vec(2);
            let t = rng.uniform_in(0.05, 1.0);
            let got = gmm_score(&p, &s, &x, t).unwrap();
            let fd = fd_gradient(&p, &s, &x, t, 1e-5);
            for (g, f) in got.iter().zip(&fd) {
                let rel = (g - f).abs() / f.abs().max(1e-8);
                assert!(rel < 1e-4, "trial {trial}: {g} vs {f}");
            }
        }
    }

    #[test]
    fn log_density_permutation_invariant() {
        let s = vp();
        let a = GmmParams::new(
            vec![0.2, 0.8],
            vec![vec![1.0, 2.0], vec![-1.0, 0.0]],
            vec![0.1, 0.4],
        )
        .unwrap();
        let b = GmmParams::new(
            vec![0.8, 0.2],
            vec![vec![-1.0, 0.0], vec![1.0, 2.0]],
            vec![0.4, 0.1],
        )
        .unwrap();
        let x = vec![0.3, -0.7];
        for t in [0.1, 0.5, 0.9] {
            let la = gmm_log_density(&a, &s, &x, t).unwrap();
            let lb = gmm_log_density(&b, &s, &x, t).unwrap();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn far_field_stays_finite() {
        // 50 standard deviations out must not underflow to -inf scores.
        let p = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = vp();
        let t = 0.5;
        let ev = s.eval(t).unwrap();
        let x = vec![50.0 * ev.sigma + 1.0, 50.0 * ev.sigma];
        let ld = gmm_log_density(&p, &s, &x, t).unwrap();
        let sc = gmm_score(&p, &s, &x, t).unwrap();
        assert!(ld.is_finite());
        assert!(sc.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn analytic_divergence_matches_fd() {
        let s = vp();
        let model = GmmScoreModel::new(
            GmmParams::new(
                vec![0.4, 0.6],
                vec![vec![1.0, 1.0], vec![-1.0, 0.5]],
                vec![0.3, 0.0],
            )
            .unwrap(),
            s,
        )
        .unwrap();
        let mut rng = CounterRng::new(4, 4);
        for _ in 0..50 {
            let x = rng.normal_vec(2);
            let t = rng.uniform_in(0.05, 0.95);
            let analytic = model.score_divergence(&x, t).unwrap();
            // FD oracle via the default trait implementation.
            struct NoOverride<'a>(&'a GmmScoreModel);
            impl ScoreModel for NoOverride<'_> {
                fn dim(&self) -> usize {
                    self.0.dim()
                }
                fn score(&self, x: &[f64], t: f64) -> crate::error::Result<Vec<f64>> {
                    self.0.score(x, t)
                }
            }
            let fd = NoOverride(&model).score_divergence(&x, t).unwrap();
            let rel = (analytic - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "{analytic} vs {fd}");
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(
            GmmParams::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![0.0, 0.0]).is_err()
        );
        assert!(GmmParams::new(vec![], vec![], vec![]).is_err());
        assert!(
            GmmParams::new(vec![1.0], vec![vec![0.0, 1.0]], vec![-0.1]).is_err(),
            "negative stddev must be rejected"
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = GmmParams::single(vec![0.0, 0.0], 0.0);
        let s = vp();
        assert!(matches!(
            gmm_log_density(&p, &s, &[0.0, 0.0, 0.0], 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sampling_matches_moments() {
        let model = GmmScoreModel::new(GmmParams::single(vec![2.0, -1.0], 0.5), vp()).unwrap();
        let mut rng = CounterRng::new(9, 1);
        let t = 0.3;
        let ev = vp().eval(t).unwrap();
        let n = 20_000;
        let mut mean = [0.0f64; 2];
        for _ in 0..n {
            let x = model.sample(t, &mut rng).unwrap();
            mean[0] += x[0];
            mean[1] += x[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        let std = (ev.sigma.powi(2) + (ev.alpha * 0.5).powi(2)).sqrt();
        let se = 3.0 * std / (n as f64).sqrt();
        assert!((mean[0] - 2.0 * ev.alpha).abs() < se);
        assert!((mean[1] + ev.alpha).abs() < se);
    }
}
