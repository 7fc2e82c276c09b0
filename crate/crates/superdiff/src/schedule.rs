//! Noise schedules (α_t, σ_t) and the induced Ornstein–Uhlenbeck forward SDE.
//!
//! A schedule fixes how data is corrupted over t ∈ [0, 1]:
//!
//! ```text
//! q_t(x | μ) = N(x | α_t μ, σ_t² I),   α_0 = 1, σ_0 = 0.
//! ```
//!
//! These marginals are realized by the forward SDE
//!
//! ```text
//! dx_t = f_t(x) dt + g_t dW_t,
//! f_t(x) = (d/dt log α_t) x,
//! g_t²   = 2 σ_t² (d/dt) log(σ_t/α_t),
//! ```
//!
//! so the only schedule-dependent quantities the rest of the engine needs are
//! α, σ and the two log-derivatives. All derivatives are closed-form; nothing
//! here is differentiated numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation floor: scores and g_t blow up as σ→0, so times below this are
/// clamped before computing drift/diffusion quantities.
pub const T_MIN: f64 = 1e-4;

/// Noise schedule kinds.
///
/// `VpLinear` and `Cosine` are variance preserving (α² + σ² = 1); `Ve` keeps
/// α ≡ 1 and grows σ geometrically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Schedule {
    VpLinear { beta_min: f64, beta_max: f64 },
    Cosine,
    Ve { sigma_min: f64, sigma_max: f64 },
}

/// All schedule quantities at one (clamped) time.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleEval {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    /// d/dt log α_t (1/time).
    pub dlog_alpha_dt: f64,
    /// d/dt log(σ_t/α_t) (1/time).
    pub dlog_sigma_over_alpha_dt: f64,
    /// Squared diffusion coefficient g_t² = 2 σ_t² d/dt log(σ_t/α_t).
    pub g2: f64,
    /// Diffusion coefficient g_t.
    pub g: f64,
}

impl Schedule {
    /// The default experiment schedule: linear-β variance preserving with
    /// β_min = 0.1, β_max = 20.
    pub fn vp_default() -> Self {
        Schedule::VpLinear {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }

    pub fn is_variance_preserving(&self) -> bool {
        matches!(self, Schedule::VpLinear { .. } | Schedule::Cosine)
    }

    /// ∫₀ᵗ β(s) ds for the linear-β schedule.
    fn beta_integral(beta_min: f64, beta_max: f64, t: f64) -> f64 {
        beta_min * t + 0.5 * (beta_max - beta_min) * t * t
    }

    /// α_t from the raw closed form; exact at the boundaries (α_0 = 1).
    pub fn alpha(&self, t: f64) -> f64 {
        match *self {
            Schedule::VpLinear { beta_min, beta_max } => {
                (-0.5 * Self::beta_integral(beta_min, beta_max, t)).exp()
            }
            Schedule::Cosine => (std::f64::consts::FRAC_PI_2 * t).cos(),
            Schedule::Ve { .. } => 1.0,
        }
    }

    /// σ_t from the raw closed form; exact at the boundaries (σ_0 = 0 for
    /// variance-preserving kinds).
    pub fn sigma(&self, t: f64) -> f64 {
        match *self {
            Schedule::VpLinear { beta_min, beta_max } => {
                // σ² = 1 − α² = −expm1(−∫β); expm1 keeps σ accurate near t = 0.
                (-(-Self::beta_integral(beta_min, beta_max, t)).exp_m1()).sqrt()
            }
            Schedule::Cosine => (std::f64::consts::FRAC_PI_2 * t).sin(),
            Schedule::Ve {
                sigma_min,
                sigma_max,
            } => sigma_min * (sigma_max / sigma_min).powf(t),
        }
    }

    fn dlog_alpha_dt_raw(&self, t: f64) -> f64 {
        match *self {
            Schedule::VpLinear { beta_min, beta_max } => {
                -0.5 * (beta_min + (beta_max - beta_min) * t)
            }
            Schedule::Cosine => {
                -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).tan()
            }
            Schedule::Ve { .. } => 0.0,
        }
    }

    fn dlog_sigma_over_alpha_dt_raw(&self, t: f64) -> f64 {
        match *self {
            Schedule::VpLinear { beta_min, beta_max } => {
                let beta = beta_min + (beta_max - beta_min) * t;
                let sigma2 = -(-Self::beta_integral(beta_min, beta_max, t)).exp_m1();
                0.5 * beta / sigma2
            }
            // (π/2)(cot + tan)(πt/2) = π / sin(πt)
            Schedule::Cosine => std::f64::consts::PI / (std::f64::consts::PI * t).sin(),
            Schedule::Ve {
                sigma_min,
                sigma_max,
            } => (sigma_max / sigma_min).ln(),
        }
    }

    /// d/dt log α_t at the clamped time.
    pub fn dlog_alpha_dt(&self, t: f64) -> f64 {
        self.dlog_alpha_dt_raw(clamp_time(t))
    }

    /// d/dt log(σ_t/α_t) at the clamped time.
    pub fn dlog_sigma_over_alpha_dt(&self, t: f64) -> f64 {
        self.dlog_sigma_over_alpha_dt_raw(clamp_time(t))
    }

    /// Evaluate (α, σ, d/dt log α, g) at the clamped time.
    ///
    /// Returns an out-of-domain error instead of NaN/∞ when the schedule is
    /// degenerate at `t` (e.g. a variance-exploding schedule with σ_min = 0).
    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        let tc = clamp_time(t);
        let alpha = self.alpha(tc);
        let sigma = self.sigma(tc);
        let dlog_alpha_dt = self.dlog_alpha_dt_raw(tc);
        let dlog_sigma_over_alpha_dt = self.dlog_sigma_over_alpha_dt_raw(tc);
        let g2 = 2.0 * sigma * sigma * dlog_sigma_over_alpha_dt;
        let ev = ScheduleEval {
            t: tc,
            alpha,
            sigma,
            dlog_alpha_dt,
            dlog_sigma_over_alpha_dt,
            g2,
            g: g2.sqrt(),
        };
        let finite = alpha.is_finite()
            && sigma.is_finite()
            && dlog_alpha_dt.is_finite()
            && dlog_sigma_over_alpha_dt.is_finite()
            && g2.is_finite()
            && g2 >= 0.0;
        if !finite {
            return Err(Error::ScheduleDomain {
                t: tc,
                what: "non-finite schedule quantity",
            });
        }
        Ok(ev)
    }

    /// Forward OU drift f_t(x) = (d/dt log α_t) · x.
    pub fn forward_drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let ev = self.eval(t)?;
        Ok(x.iter().map(|xi| ev.dlog_alpha_dt * xi).collect())
    }

    /// ⟨∇, f_t⟩ for the linear OU drift: dim · d/dt log α_t.
    pub fn drift_divergence(&self, t: f64, dim: usize) -> Result<f64> {
        let ev = self.eval(t)?;
        Ok(dim as f64 * ev.dlog_alpha_dt)
    }
}

/// Clamp a time into the evaluable domain [T_MIN, 1].
pub fn clamp_time(t: f64) -> f64 {
    t.clamp(T_MIN, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_kinds() -> Vec<Schedule> {
        vec![
            Schedule::vp_default(),
            Schedule::Cosine,
            Schedule::Ve {
                sigma_min: 0.01,
                sigma_max: 50.0,
            },
        ]
    }

    /// Central finite difference of a scalar function, the oracle for the
    /// closed-form derivatives.
    fn central_fd(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn cosine_boundary_values() {
        let s = Schedule::Cosine;
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.sigma(0.0), 0.0);
    }

    #[test]
    fn vp_boundaries() {
        for s in [Schedule::vp_default(), Schedule::Cosine] {
            assert!((s.alpha(0.0) - 1.0).abs() < 1e-6);
            assert!(s.sigma(0.0).abs() < 1e-6);
            // Terminal signal variance α(1)² below 0.1% for VP kinds; the
            // default linear-β schedule retains α(1) ≈ 6.6e−3 in amplitude.
            let a1 = s.alpha(1.0);
            assert!(a1 * a1 <= 1e-3, "{:?} alpha(1)^2 = {}", s, a1 * a1);
            assert!(
                (s.sigma(1.0) - 1.0).abs() <= 1e-3,
                "{:?} sigma(1) = {}",
                s,
                s.sigma(1.0)
            );
        }
        // Sharper linear-β endpoints push the amplitude itself below 1e−3,
        // and the cosine schedule reaches 0 exactly.
        let sharp = Schedule::VpLinear {
            beta_min: 0.1,
            beta_max: 40.0,
        };
        assert!(sharp.alpha(1.0) <= 1e-3, "{}", sharp.alpha(1.0));
        assert!(Schedule::Cosine.alpha(1.0) <= 1e-3);
    }

    #[test]
    fn vp_identity_holds() {
        for s in [Schedule::vp_default(), Schedule::Cosine] {
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                let a = s.alpha(t);
                let sg = s.sigma(t);
                assert!(
                    (a * a + sg * sg - 1.0).abs() < 1e-10,
                    "{s:?} at t={t}: {}",
                    a * a + sg * sg
                );
            }
        }
    }

    #[test]
    fn vp_linear_dlog_alpha_matches_finite_difference_at_half() {
        let s = Schedule::vp_default();
        let fd = central_fd(|t| s.alpha(t).ln(), 0.5, 1e-5);
        let analytic = s.dlog_alpha_dt(0.5);
        assert!(
            (analytic - fd).abs() < 1e-6,
            "analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn derivatives_match_finite_differences_everywhere() {
        for s in all_kinds() {
            for i in 1..100 {
                let t = i as f64 / 100.0;
                let h = 1e-5;
                let fd_a = central_fd(|u| s.alpha(u).ln(), t, h);
                let fd_sa = central_fd(|u| (s.sigma(u) / s.alpha(u)).ln(), t, h);
                let an_a = s.dlog_alpha_dt(t);
                let an_sa = s.dlog_sigma_over_alpha_dt(t);
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
                if an_a.abs() > 1e-12 {
                    assert!(rel(an_a, fd_a) < 1e-4, "{s:?} t={t} dlogα {an_a} vs {fd_a}");
                } else {
                    assert!(fd_a.abs() < 1e-8);
                }
                assert!(
                    rel(an_sa, fd_sa) < 1e-4,
                    "{s:?} t={t} dlog σ/α {an_sa} vs {fd_sa}"
                );
            }
        }
    }

    #[test]
    fn g_squared_identity_and_nonnegativity() {
        for s in all_kinds() {
            for i in 0..100 {
                let t = T_MIN + (1.0 - T_MIN) * i as f64 / 99.0;
                let ev = s.eval(t).unwrap();
                assert!(ev.g2 >= 0.0);
                let rhs = 2.0 * ev.sigma * ev.sigma * ev.dlog_sigma_over_alpha_dt;
                assert!((ev.g2 - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eval_clamps_to_floor() {
        let s = Schedule::vp_default();
        let at_zero = s.eval(0.0).unwrap();
        let at_floor = s.eval(T_MIN).unwrap();
        assert_eq!(at_zero.sigma, at_floor.sigma);
        assert_eq!(at_zero.t, T_MIN);
    }

    #[test]
    fn degenerate_ve_reports_domain_error() {
        let s = Schedule::Ve {
            sigma_min: 0.0,
            sigma_max: 10.0,
        };
        assert!(matches!(s.eval(0.5), Err(Error::ScheduleDomain { .. })));
    }

    #[test]
    fn forward_drift_cases() {
        let vp = Schedule::vp_default();
        // x = 0 → 0
        assert_eq!(vp.forward_drift(&[0.0, 0.0], 0.5).unwrap(), vec![0.0, 0.0]);
        // VE: α ≡ 1 → zero drift for all x
        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        };
        assert_eq!(ve.forward_drift(&[3.0, -1.5], 0.3).unwrap(), vec![0.0, 0.0]);
        // VP-linear at t = 0.5 matches the finite-difference derivative of log α.
        let fd = central_fd(|t| vp.alpha(t).ln(), 0.5, 1e-5);
        let drift = vp.forward_drift(&[1.0, 1.0], 0.5).unwrap();
        for v in drift {
            assert!((v - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn drift_divergence_cases() {
        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        };
        assert_eq!(ve.drift_divergence(0.7, 5).unwrap(), 0.0);
        let vp = Schedule::vp_default();
        let d2 = vp.drift_divergence(0.5, 2).unwrap();
        assert!((d2 - 2.0 * vp.dlog_alpha_dt(0.5)).abs() < 1e-15);
        assert_eq!(vp.drift_divergence(0.5, 0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn eval_is_finite_on_domain(t in 0.0f64..=1.0, kind in 0usize..3) {
            let s = all_kinds()[kind];
            let ev = s.eval(t).unwrap();
            prop_assert!(ev.alpha.is_finite() && ev.sigma.is_finite());
            prop_assert!(ev.g2 >= 0.0);
        }

        #[test]
        fn clamped_time_in_domain(t in -1.0f64..2.0) {
            let tc = clamp_time(t);
            prop_assert!((T_MIN..=1.0).contains(&tc));
        }
    }
}
