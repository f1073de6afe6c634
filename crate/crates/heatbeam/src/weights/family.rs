//! Carleman weights `φ, ξ, φ₀, ξ₀, φ₁, ξ₁, φ₂, ξ₂` and the profiles `ρ₀..ρ₅`.
//!
//! Every weight factors as `F(x)·L(t)` with `L = ℓ^{−k/2}`, so space and time
//! derivatives are computed separately and in closed form.

use serde::Serialize;

use super::regime::CarlemanParams;
use super::spatial::SpatialWeights;
use crate::error::{Error, Result};

/// Exponent magnitude at which evaluations saturate.
pub const EXP_CLAMP: f64 = 700.0;

/// `e^x` clamped to `[0, e^{700}]`; the flag is set when the clamp was active.
pub fn clamp_exp(x: f64) -> (f64, bool) {
    if x > EXP_CLAMP {
        (EXP_CLAMP.exp(), true)
    } else if x < -EXP_CLAMP {
        (0.0, true)
    } else {
        (x.exp(), false)
    }
}

/// Complete Bell polynomials: derivatives of `e^h` divided by `e^h`, given `h′..h⁽⁵⁾`.
pub fn exp_derivative_factors(h: &[f64; 5]) -> [f64; 6] {
    let [a, b, c, d, e] = *h;
    [
        1.0,
        a,
        a * a + b,
        a * a * a + 3.0 * a * b + c,
        a.powi(4) + 6.0 * a * a * b + 4.0 * a * c + 3.0 * b * b + d,
        a.powi(5) + 10.0 * a.powi(3) * b + 15.0 * a * b * b + 10.0 * a * a * c + 10.0 * b * c + 5.0 * a * d + e,
    ]
}

/// `ℓ(t)` and `L = ℓ^{−k/2}` with `L′, L″, L‴`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeJet {
    pub ell: f64,
    pub ln_l: f64,
    /// `[L, L′, L″, L‴]`.
    pub l: [f64; 4],
}

/// Values of every weight at one `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightValues {
    pub ell: f64,
    pub phi: f64,
    pub xi: f64,
    pub phi0: f64,
    pub xi0: f64,
    pub phi1: f64,
    pub xi1: f64,
    pub phi2: f64,
    pub xi2: f64,
    pub saturated: bool,
}

/// `ρ₀..ρ₅` at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RhoValues {
    pub rho: [f64; 6],
    pub saturated: bool,
}

/// Spatial factor `F = e^{A} − e^{10λΨ}` on Ω and its derivatives (`∂F = ∂e^{A}`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RectFactorJet {
    pub f: f64,
    pub e: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightFamily {
    pub spatial: SpatialWeights,
    pub params: CarlemanParams,
}

impl WeightFamily {
    pub fn new(spatial: SpatialWeights, params: CarlemanParams) -> Self {
        Self { spatial, params }
    }

    fn lp(&self) -> f64 {
        self.params.lambda * self.spatial.big_psi
    }

    /// Exponent `μψ_I + λψ_Ω + 8λΨ`.
    pub fn exponent(&self, x1: f64, x2: f64) -> f64 {
        self.params.mu * self.spatial.torus.value(x1)
            + self.params.lambda * self.spatial.omega.value(x1, x2)
            + 8.0 * self.lp()
    }

    /// Exponent on `∂Ω`, `μψ_I + 8λΨ`.
    pub fn exponent0(&self, x1: f64) -> f64 {
        self.params.mu * self.spatial.torus.value(x1) + 8.0 * self.lp()
    }

    /// `ln|e^{a} − e^{10λΨ}|` for `a < 10λΨ`.
    fn ln_gap(&self, a: f64) -> f64 {
        let top = 10.0 * self.lp();
        top + (-(a - top).exp_m1()).ln()
    }

    pub fn time_jet(&self, t: f64) -> Result<TimeJet> {
        let tt = self.params.t_final;
        if !(t > 0.0 && t < tt) {
            return Err(Error::InvalidArgument(format!("t = {t} must lie in (0, {tt})")));
        }
        let hk = 0.5 * self.params.k;
        let ell = t * (tt - t);
        let dl = tt - 2.0 * t;
        let r = dl / ell;
        let r1 = -2.0 / ell - r * r;
        let r2 = 2.0 * r / ell - 2.0 * r * r1;
        let g = -hk * r;
        let g1 = -hk * r1;
        let g2 = -hk * r2;
        let ln_l = -hk * ell.ln();
        let l0 = ln_l.exp();
        Ok(TimeJet {
            ell,
            ln_l,
            l: [l0, l0 * g, l0 * (g1 + g * g), l0 * (g2 + 3.0 * g * g1 + g * g * g)],
        })
    }

    /// `[F₀, F₀′, …, F₀⁽⁵⁾]` with `F₀ = e^{μψ_I + 8λΨ} − e^{10λΨ}`, so `φ₀ = F₀ L` and `ξ₀ = e^{…} L`.
    pub fn torus_factor(&self, x1: f64) -> ([f64; 6], f64) {
        let mu = self.params.mu;
        let d = self.spatial.torus.derivatives(x1);
        let e = self.exponent0(x1).exp();
        let b = exp_derivative_factors(&[mu * d[1], mu * d[2], mu * d[3], mu * d[4], mu * d[5]]);
        let mut out = [0.0; 6];
        out[0] = e - (10.0 * self.lp()).exp();
        for j in 1..6 {
            out[j] = e * b[j];
        }
        (out, e)
    }

    pub fn rect_factor(&self, x1: f64, x2: f64) -> RectFactorJet {
        let (mu, la) = (self.params.mu, self.params.lambda);
        let q = self.spatial.torus.derivatives(x1);
        let p = self.spatial.omega.jet(x1, x2);
        let e = self.exponent(x1, x2).exp();
        let a1 = mu * q[1] + la * p.d1;
        let a2 = la * p.d2;
        RectFactorJet {
            f: e - (10.0 * self.lp()).exp(),
            e,
            d1: e * a1,
            d2: e * a2,
            d11: e * (mu * q[2] + la * p.d11 + a1 * a1),
            d12: e * (la * p.d12 + a1 * a2),
            d22: e * (la * p.d22 + a2 * a2),
        }
    }

    /// All weights at `(t, x1, x2)`, evaluated in log domain.
    pub fn eval(&self, t: f64, x1: f64, x2: f64) -> Result<WeightValues> {
        let tj = self.time_jet(t)?;
        let lp = self.lp();
        let a = self.exponent(x1, x2);
        let a0 = self.exponent0(x1);
        let mut sat = false;
        let mut pos = |ln: f64| {
            let (v, s) = clamp_exp(ln + tj.ln_l);
            sat |= s;
            v
        };
        let xi = pos(a);
        let xi0 = pos(a0);
        let xi1 = pos(8.0 * lp);
        let xi2 = pos(9.0 * lp);
        let phi = -pos(self.ln_gap(a));
        let phi0 = -pos(self.ln_gap(a0));
        let phi1 = -pos(self.ln_gap(8.0 * lp));
        let phi2 = -pos(self.ln_gap(9.0 * lp));
        Ok(WeightValues { ell: tj.ell, phi, xi, phi0, xi0, phi1, xi1, phi2, xi2, saturated: sat })
    }

    /// `(ln coefficient, power p, ln E, Φ)` such that `ρ = c·(E L)^p·e^{sΦL}`.
    fn rho_shapes(&self) -> [(f64, f64, f64, f64); 6] {
        let CarlemanParams { s, lambda, .. } = self.params;
        let lp = self.lp();
        let (e8, e9, e10) = ((8.0 * lp).exp(), (9.0 * lp).exp(), (10.0 * lp).exp());
        let (p1, p2) = (e8 - e10, e9 - e10);
        let (ls, ll) = (s.ln(), lambda.ln());
        [
            (1.5 * ls + ll, 1.5, 8.0 * lp, p1),
            (3.5 * ls + 4.0 * ll, 3.5, 9.0 * lp, p2),
            (5.5 * ls + 3.0 * ll, 5.5, 9.0 * lp, 2.0 * p2 - p1),
            (-0.5 * ls + ll, -0.5, 8.0 * lp, p1),
            (-2.5 * ls + ll, -2.5, 8.0 * lp, p1),
            (1.5 * ls + 2.0 * ll, 1.5, 9.0 * lp, p2),
        ]
    }

    /// `ρ₀..ρ₅`, zero-extended at `t ∈ {0, T}`.
    pub fn eval_rho(&self, t: f64) -> RhoValues {
        let mut out = RhoValues { rho: [0.0; 6], saturated: false };
        let Ok(tj) = self.time_jet(t) else { return out };
        for (i, (lc, p, le, phi)) in self.rho_shapes().into_iter().enumerate() {
            let ln = lc + p * (le + tj.ln_l) + self.params.s * phi * tj.l[0];
            let (v, sat) = clamp_exp(ln);
            out.rho[i] = v;
            out.saturated |= sat;
        }
        out
    }

    /// `ρ₀′..ρ₅′`, via `ρ′ = ρ L′ (p/L + sΦ)`.
    pub fn eval_rho_prime(&self, t: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        let Ok(tj) = self.time_jet(t) else { return out };
        let rho = self.eval_rho(t).rho;
        for (i, (_, p, _, phi)) in self.rho_shapes().into_iter().enumerate() {
            out[i] = rho[i] * tj.l[1] * (p / tj.l[0] + self.params.s * phi);
        }
        out
    }

    /// `ln ρ_i(t)` without clamping, for comparisons across scales.
    pub fn ln_rho(&self, t: f64) -> Result<[f64; 6]> {
        let tj = self.time_jet(t)?;
        let mut out = [0.0; 6];
        for (i, (lc, p, le, phi)) in self.rho_shapes().into_iter().enumerate() {
            out[i] = lc + p * (le + tj.ln_l) + self.params.s * phi * tj.l[0];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::regime::{regime_params, CarlemanParams};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn spatial() -> &'static SpatialWeights {
        static W: OnceLock<SpatialWeights> = OnceLock::new();
        W.get_or_init(SpatialWeights::default_weights)
    }

    fn family(alpha: f64) -> WeightFamily {
        WeightFamily::new(spatial().clone(), regime_params(alpha, 0.2, 0.2, 1.0, 2.0))
    }

    #[test]
    fn ell_at_midpoint() {
        let wf = family(1.0);
        let v = wf.eval(0.5, 1.0, 0.3).unwrap();
        assert!((v.ell - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_endpoints() {
        let wf = family(1.0);
        assert!(wf.eval(0.0, 1.0, 0.3).is_err());
        assert!(wf.eval(1.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn boundary_weights_coincide() {
        let wf = family(8.0);
        for x1 in [0.0, 1.1, 2.5, 5.9] {
            for x2 in [0.0, 1.0] {
                let v = wf.eval(0.37, x1, x2).unwrap();
                assert!((v.phi - v.phi0).abs() <= 1e-15 * v.phi0.abs());
                assert!((v.xi - v.xi0).abs() <= 1e-15 * v.xi0);
            }
        }
    }

    #[test]
    fn log_domain_matches_direct_evaluation() {
        let wf = family(2.0);
        let (x1, x2, t) = (2.2, 0.4, 0.3);
        let v = wf.eval(t, x1, x2).unwrap();
        let lp = wf.params.lambda * wf.spatial.big_psi;
        let l = (t * (1.0 - t)).powf(-1.0);
        let direct = (wf.exponent(x1, x2).exp() - (10.0 * lp).exp()) * l;
        assert!((v.phi - direct).abs() < 1e-13 * direct.abs());
    }

    #[test]
    fn rho_vanishes_at_endpoints() {
        let wf = family(8.0);
        for t in [0.0, 1.0] {
            assert!(wf.eval_rho(t).rho.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn rho_prime_matches_finite_differences() {
        let wf = family(3.0);
        let h = 1e-6;
        for t in [0.2, 0.5, 0.8] {
            let d = wf.eval_rho_prime(t);
            let (p, m) = (wf.eval_rho(t + h).rho, wf.eval_rho(t - h).rho);
            for i in 0..6 {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() <= 1e-5 * (d[i].abs() + wf.eval_rho(t).rho[i]), "rho{i}");
            }
        }
    }

    #[test]
    fn rho2_at_midpoint_matches_high_precision_reference() {
        // reference from 50-digit arithmetic with the same Ψ = 0.43125, α = 8, τ = θ = 0.2, T = 1, k = 2
        let wf = WeightFamily::new(
            spatial().clone(),
            CarlemanParams::new(8.0, 9.0, 0.8, 0.2, 2.0, 1.0).unwrap(),
        );
        let r = wf.eval_rho(0.5);
        assert!(!r.saturated && r.rho[2].is_finite());
        let reference = RHO2_REFERENCE;
        assert!(((r.rho[2] - reference) / reference).abs() < 1e-12, "{} vs {reference}", r.rho[2]);
    }

    const RHO2_REFERENCE: f64 = 5.711_707_329_917_118_6e-27;

    #[test]
    fn rect_factor_matches_finite_differences() {
        let wf = family(2.0);
        let h = 1e-5;
        let (a, b) = (2.7, 0.35);
        let j = wf.rect_factor(a, b);
        let f = |x: f64, y: f64| wf.rect_factor(x, y).f;
        assert!(((f(a + h, b) - f(a - h, b)) / (2.0 * h) - j.d1).abs() < 1e-7 * j.e);
        assert!(((f(a, b + h) - f(a, b - h)) / (2.0 * h) - j.d2).abs() < 1e-7 * j.e);
        assert!(((f(a + h, b) - 2.0 * j.f + f(a - h, b)) / (h * h) - j.d11).abs() < 1e-3 * j.e);
        assert!(((wf.rect_factor(a, b + h).d1 - wf.rect_factor(a, b - h).d1) / (2.0 * h) - j.d12).abs() < 1e-7 * j.e);
    }

    #[test]
    fn torus_factor_matches_finite_differences() {
        let wf = family(2.0);
        let h = 1e-5;
        for x in [0.4, 2.0, 3.3] {
            let (d, _) = wf.torus_factor(x);
            let (p, _) = wf.torus_factor(x + h);
            let (m, _) = wf.torus_factor(x - h);
            for k in 0..5 {
                let fd = (p[k] - m[k]) / (2.0 * h);
                assert!((fd - d[k + 1]).abs() < 1e-6 * (1.0 + d[k + 1].abs()), "order {k}");
            }
        }
    }

    #[test]
    fn time_jet_matches_finite_differences() {
        let wf = family(1.0);
        let h = 1e-5;
        for t in [0.1, 0.45, 0.9] {
            let j = wf.time_jet(t).unwrap();
            let (p, m) = (wf.time_jet(t + h).unwrap(), wf.time_jet(t - h).unwrap());
            for k in 0..3 {
                let fd = (p.l[k] - m.l[k]) / (2.0 * h);
                assert!((fd - j.l[k + 1]).abs() < 1e-5 * (1.0 + j.l[k + 1].abs()), "order {k}");
            }
        }
    }

    proptest! {
        #[test]
        fn weights_are_ordered(t in 0.001f64..0.999, x1 in 0.0f64..std::f64::consts::TAU, x2 in 0.0f64..1.0, alpha in 0.1f64..20.0) {
            let wf = family(alpha);
            let v = wf.eval(t, x1, x2).unwrap();
            prop_assert!(v.phi1 <= v.phi * (1.0 - 1e-14) + 1e-300 || (v.phi1 - v.phi).abs() <= 1e-13 * v.phi.abs());
            prop_assert!(v.phi <= v.phi2 + 1e-13 * v.phi2.abs());
            prop_assert!(v.phi2 < 0.0);
            prop_assert!(v.xi1 <= v.xi * (1.0 + 1e-14) && v.xi <= v.xi2 * (1.0 + 1e-14));
        }

        #[test]
        fn exponent_stays_below_ten_lambda_psi(x1 in 0.0f64..std::f64::consts::TAU, x2 in 0.0f64..1.0, alpha in 0.1f64..20.0) {
            let wf = family(alpha);
            let lp = wf.params.lambda * wf.spatial.big_psi;
            prop_assert!(wf.exponent(x1, x2) <= 9.0 * lp * (1.0 + 1e-14));
        }
    }
}
