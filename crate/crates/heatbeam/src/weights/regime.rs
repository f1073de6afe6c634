//! Parameter regimes, admissibility checks and the damping threshold `α*`.

use serde::{Deserialize, Serialize};

use super::calibration::Calibration;
use crate::error::{Error, Result};

/// One admissibility inequality `lhs ≥ rhs` (or `lhs ≤ rhs`), evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub conditions: Vec<Condition>,
    /// All conditions of the coupled Carleman estimate hold.
    pub theorem_1_4_admissible: bool,
}

impl Admissibility {
    pub fn violated(&self) -> Vec<&str> {
        self.conditions.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    pub alpha: f64,
    pub s: f64,
    pub lambda: f64,
    pub mu: f64,
    pub k: f64,
    pub t_final: f64,
    pub tau: f64,
    pub theta: f64,
    pub c1: f64,
    pub s_hat0: f64,
    pub mu0: f64,
    pub admissibility: Admissibility,
}

fn ge(name: &str, lhs: f64, rhs: f64) -> Condition {
    Condition { name: name.into(), lhs, rhs, holds: lhs >= rhs }
}

fn le(name: &str, lhs: f64, rhs: f64) -> Condition {
    Condition { name: name.into(), lhs, rhs, holds: lhs <= rhs }
}

/// `s ≥ ŝ₀(1+α)(T^k + T^{k−1})` threshold.
pub fn s_threshold(s_hat0: f64, alpha: f64, t_final: f64, k: f64) -> f64 {
    s_hat0 * (1.0 + alpha) * (t_final.powf(k) + t_final.powf(k - 1.0))
}

impl CarlemanParams {
    /// Explicit parameters checked against the frozen calibration.
    pub fn new(alpha: f64, s: f64, lambda: f64, mu: f64, k: f64, t_final: f64) -> Result<Self> {
        Self::with_calibration(Calibration::frozen(), alpha, s, lambda, mu, k, t_final)
    }

    pub fn with_calibration(
        cal: &Calibration,
        alpha: f64,
        s: f64,
        lambda: f64,
        mu: f64,
        k: f64,
        t_final: f64,
    ) -> Result<Self> {
        // α = 0 is allowed for the undamped beam estimate; it fails the coupled admissibility
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be non-negative and finite, got {alpha}")));
        }
        for (name, v) in [("s", s), ("lambda", lambda), ("mu", mu), ("T", t_final)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(k >= 2.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
        }
        let (tau, theta) = if alpha >= 1.0 {
            (lambda / alpha.powf(2.0 / 3.0), mu)
        } else {
            (lambda * alpha * alpha, mu * alpha)
        };
        let mut p = Self {
            alpha,
            s,
            lambda,
            mu,
            k,
            t_final,
            tau,
            theta,
            c1: cal.c1,
            s_hat0: cal.s_hat0,
            mu0: cal.mu0,
            admissibility: Admissibility { conditions: vec![], theorem_1_4_admissible: false },
        };
        p.admissibility = p.check();
        Ok(p)
    }

    fn check(&self) -> Admissibility {
        let Self { alpha, s, lambda, mu, k, t_final, c1, s_hat0, mu0, .. } = *self;
        let conditions = vec![
            ge("lambda >= mu", lambda, mu),
            ge("mu >= mu0", mu, mu0),
            ge("lambda >= c1(1 + 1/alpha^2)", lambda, c1 * (1.0 + 1.0 / (alpha * alpha))),
            ge("lambda >= c1 alpha^(2/3) mu^(4/3)", lambda, c1 * alpha.powf(2.0 / 3.0) * mu.powf(4.0 / 3.0)),
            le("lambda <= (1 + alpha^2) mu^2 / c1", lambda, (1.0 + alpha * alpha) * mu * mu / c1),
            ge("s >= s_hat0 (1 + alpha)(T^k + T^(k-1))", s, s_threshold(s_hat0, alpha, t_final, k)),
        ];
        let ok = conditions.iter().all(|c| c.holds);
        Admissibility { conditions, theorem_1_4_admissible: ok }
    }
}

/// `λ = τα^{2/3}, μ = θ` for `α ≥ 1`; `λ = τ/α², μ = θ/α` for `α < 1`; `s` at its threshold.
pub fn regime_params(alpha: f64, tau: f64, theta: f64, t_final: f64, k: f64) -> CarlemanParams {
    regime_params_with(Calibration::frozen(), alpha, tau, theta, t_final, k)
}

pub fn regime_params_with(
    cal: &Calibration,
    alpha: f64,
    tau: f64,
    theta: f64,
    t_final: f64,
    k: f64,
) -> CarlemanParams {
    let (lambda, mu) = if alpha >= 1.0 {
        (tau * alpha.powf(2.0 / 3.0), theta)
    } else {
        (tau / (alpha * alpha), theta / alpha)
    };
    let s = s_threshold(cal.s_hat0, alpha, t_final, k);
    let mut p = CarlemanParams {
        alpha,
        s,
        lambda,
        mu,
        k,
        t_final,
        tau,
        theta,
        c1: cal.c1,
        s_hat0: cal.s_hat0,
        mu0: cal.mu0,
        admissibility: Admissibility { conditions: vec![], theorem_1_4_admissible: false },
    };
    p.admissibility = p.check();
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaStar {
    pub beta_star: f64,
    pub alpha_star: f64,
}

/// `P(β) = 36β³ + 111β² + 77β − 58`.
pub fn beta_polynomial(b: f64) -> f64 {
    ((36.0 * b + 111.0) * b + 77.0) * b - 58.0
}

fn beta_polynomial_prime(b: f64) -> f64 {
    (108.0 * b + 222.0) * b + 77.0
}

/// Real root of `P` by bisection on `[0, 1]` then Newton polishing.
pub fn alpha_star() -> AlphaStar {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if beta_polynomial(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..8 {
        let step = beta_polynomial(b) / beta_polynomial_prime(b);
        b -= step;
        if step.abs() < 1e-17 {
            break;
        }
    }
    AlphaStar { beta_star: b, alpha_star: alpha2_star(b) }
}

pub fn alpha1_star(beta: f64) -> f64 {
    (6.0 * beta * (33.0 + 18.0 * beta) / (18.0 * beta * beta + 42.0 * beta + 29.0)).sqrt()
}

pub fn alpha2_star(beta: f64) -> f64 {
    (6.0 * (2.0 - beta) / (4.0 + beta)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionWindow {
    pub alpha1_star: f64,
    pub alpha2_star: f64,
    /// Open interval for `θ₁`.
    pub theta1_window: (f64, f64),
    /// Open interval for `θ₂`.
    pub theta2_window: (f64, f64),
    pub feasible: bool,
}

pub fn absorption_window(beta: f64, alpha: f64) -> Result<AbsorptionWindow> {
    if !(0.0..4.0 / 3.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta = {beta} must lie in [0, 4/3)")));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
    }
    let a2 = alpha * alpha;
    let t1 = ((8.0 + 3.0 * beta) * a2 / ((3.0 * a2 + 6.0 * beta) * (33.0 + 18.0 * beta)), 1.0 / (16.0 + 6.0 * beta));
    let t2 = (a2 / ((a2 + 6.0) * (2.0 - beta)), 1.0 / 6.0);
    Ok(AbsorptionWindow {
        alpha1_star: alpha1_star(beta),
        alpha2_star: alpha2_star(beta),
        theta1_window: t1,
        theta2_window: t2,
        feasible: t1.0 < t1.1 && t2.0 < t2.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn beta_star_value() {
        let a = alpha_star();
        assert!((a.beta_star - 0.437765644120981).abs() < 1e-13);
        assert!((a.alpha_star - 1.45333768702221).abs() < 1e-13);
    }

    #[test]
    fn polynomial_brackets_root() {
        assert_eq!(beta_polynomial(0.0), -58.0);
        assert_eq!(beta_polynomial(1.0), 166.0);
    }

    #[test]
    fn thresholds_meet_at_beta_star() {
        let a = alpha_star();
        assert!((alpha1_star(a.beta_star) - a.alpha_star).abs() < 1e-12);
        assert!((alpha2_star(a.beta_star) - a.alpha_star).abs() < 1e-12);
    }

    #[test]
    fn windows_at_beta_star() {
        let b = alpha_star().beta_star;
        assert!(absorption_window(b, 1.0).unwrap().feasible);
        assert!(!absorption_window(b, 2.0).unwrap().feasible);
        assert!(absorption_window(1.5, 1.0).is_err());
        assert!(absorption_window(-0.1, 1.0).is_err());
    }

    #[test]
    fn branches_agree_at_alpha_one() {
        let p = regime_params(1.0, 0.3, 0.25, 1.0, 2.0);
        assert!((p.lambda - 0.3).abs() < 1e-15 && (p.mu - 0.25).abs() < 1e-15);
    }

    #[test]
    fn default_regime_admissible_at_alpha_eight() {
        let cal = Calibration::frozen();
        let p = regime_params(8.0, cal.tau_default, cal.theta_default, 1.0, 2.0);
        assert!(p.admissibility.theorem_1_4_admissible, "{:?}", p.admissibility.violated());
    }

    #[test]
    fn large_theta_names_violation() {
        let cal = Calibration::frozen();
        let p = regime_params(8.0, cal.tau_default, 1.0, 1.0, 2.0);
        assert!(!p.admissibility.theorem_1_4_admissible);
        assert!(p.admissibility.violated().contains(&"lambda >= mu"));
    }

    #[test]
    fn explicit_params_recover_regime_constants() {
        let p = CarlemanParams::new(0.5, 3.0, 2.0, 0.4, 2.0, 1.0).unwrap();
        assert!((p.tau - 0.5).abs() < 1e-15 && (p.theta - 0.2).abs() < 1e-15);
        assert!(CarlemanParams::new(1.0, 1.0, 1.0, 1.0, 1.5, 1.0).is_err());
    }

    // feasibility of both windows switches exactly at min(α₁*, α₂*); oracle: the closed-form thresholds
    fn feasibility_matches_thresholds(beta: f64, alpha: f64) -> bool {
        let w = absorption_window(beta, alpha).unwrap();
        let thr = alpha1_star(beta).min(alpha2_star(beta));
        (alpha - thr).abs() < 1e-9 || w.feasible == (alpha < thr)
    }

    proptest! {
        #[test]
        fn feasible_iff_below_alpha_star(alpha in 0.01f64..5.0) {
            let a = alpha_star();
            let w = absorption_window(a.beta_star, alpha).unwrap();
            prop_assume!((alpha - a.alpha_star).abs() > 1e-10);
            prop_assert_eq!(w.feasible, alpha < a.alpha_star);
        }

        #[test]
        fn window_thresholds_consistent(beta in 0.0f64..1.33, alpha in 0.01f64..5.0) {
            prop_assert!(feasibility_matches_thresholds(beta, alpha));
        }

        #[test]
        fn alpha_star_is_max_of_min_threshold(beta in 0.0f64..1.33) {
            let a = alpha_star();
            prop_assert!(alpha1_star(beta).min(alpha2_star(beta)) <= a.alpha_star + 1e-12);
        }

        #[test]
        fn regime_admissible_for_all_alpha(alpha in 0.05f64..50.0) {
            let cal = Calibration::frozen();
            let p = regime_params(alpha, cal.tau_default, cal.theta_default, 1.0, 2.0);
            prop_assert!(p.admissibility.theorem_1_4_admissible, "{:?}", p.admissibility.violated());
        }
    }
}
