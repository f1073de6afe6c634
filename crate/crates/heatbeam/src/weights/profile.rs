//! Smooth periodic ramp with exactly two critical points.
//!
//! `R` is the zero-mean antiderivative of `G(y) = e^{κ(cos y − 1)}`, so `R′`
//! vanishes where `cos y = 1 + ln(b₀)/κ` with `b₀` the mean of `G`. The profile
//! is `R̃ = (R − min R)/(max R − min R)`, centered at `c`, with its minimum at
//! `c − d` and its maximum at `c + d`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::forward_fft;

const SAMPLES: usize = 4096;
const KAPPA_MAX: f64 = 2.0e4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RampProfile {
    center: f64,
    kappa: f64,
    offset: f64,
    /// `b_n`, n = 0.. (Fourier cosine coefficients of `G`, `G = b₀ + 2Σ b_n cos ny`).
    coeffs: Vec<f64>,
    half_range: f64,
}

fn mean_and_coeffs(kappa: f64, all: bool) -> Vec<f64> {
    let h = 2.0 * PI / SAMPLES as f64;
    let g: Vec<f64> = (0..SAMPLES).map(|m| (kappa * ((m as f64 * h).cos() - 1.0)).exp()).collect();
    if !all {
        return vec![g.iter().sum::<f64>() / SAMPLES as f64];
    }
    let c = forward_fft(&g);
    let b0 = c[0].re / SAMPLES as f64;
    let mut out = Vec::new();
    for ck in c.iter().take(SAMPLES / 2) {
        let b = ck.re / SAMPLES as f64;
        if !out.is_empty() && b.abs() < 1e-18 * b0 {
            break;
        }
        out.push(b);
    }
    out
}

fn offset_for(kappa: f64) -> f64 {
    let b0 = mean_and_coeffs(kappa, false)[0];
    (1.0 + b0.ln() / kappa).clamp(-1.0, 1.0).acos()
}

impl RampProfile {
    /// Ramp whose critical points sit at `center ± offset`.
    pub fn new(center: f64, offset: f64) -> Result<Self> {
        if !(offset > 0.0 && offset < 0.5 * PI - 1e-6) {
            return Err(Error::WeightConstruction(format!(
                "critical offset {offset} must lie in (0, π/2)"
            )));
        }
        if offset < offset_for(KAPPA_MAX) {
            return Err(Error::WeightConstruction(format!(
                "critical offset {offset} is too small to resolve"
            )));
        }
        // offset(κ) decreases monotonically from π/2; bisect in log κ.
        let (mut lo, mut hi) = ((1e-8f64).ln(), KAPPA_MAX.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if offset_for(mid.exp()) > offset {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        let kappa = (0.5 * (lo + hi)).exp();
        let coeffs = mean_and_coeffs(kappa, true);
        let mut ramp = Self { center, kappa, offset, coeffs, half_range: 1.0 };
        let actual = (1.0 + ramp.coeffs[0].ln() / kappa).acos();
        ramp.offset = actual;
        ramp.half_range = ramp.raw(actual, 0);
        Ok(ramp)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Distance from the center to each critical point.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn critical_points(&self) -> [f64; 2] {
        [self.center - self.offset, self.center + self.offset]
    }

    /// `d^m R/dy^m` at `y` relative to the center.
    fn raw(&self, y: f64, m: usize) -> f64 {
        let mut acc = 0.0;
        for (n, &b) in self.coeffs.iter().enumerate().skip(1) {
            let nf = n as f64;
            let ny = nf * y;
            // d^m/dy^m of sin(ny)/n = n^{m-1} sin(ny + mπ/2)
            let trig = match m % 4 {
                0 => ny.sin(),
                1 => ny.cos(),
                2 => -ny.sin(),
                _ => -ny.cos(),
            };
            acc += b * nf.powi(m as i32 - 1) * trig;
        }
        2.0 * acc
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.raw(x - self.center, 0) + self.half_range) / (2.0 * self.half_range)
    }

    /// `R̃` at complex `x`; the profile is a finite sine series, hence entire.
    pub fn value_complex(&self, x: Complex64) -> Complex64 {
        let y = x - self.center;
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, &b) in self.coeffs.iter().enumerate().skip(1) {
            acc += (y * n as f64).sin() * (b / n as f64);
        }
        (acc * 2.0 + self.half_range) / (2.0 * self.half_range)
    }

    /// `[R̃, R̃′, …, R̃⁽⁵⁾]` at `x`.
    pub fn derivatives(&self, x: f64) -> [f64; 6] {
        let y = x - self.center;
        let scale = 1.0 / (2.0 * self.half_range);
        let mut d = [0.0; 6];
        d[0] = (self.raw(y, 0) + self.half_range) * scale;
        for (m, dm) in d.iter_mut().enumerate().skip(1) {
            *dm = self.raw(y, m) * scale;
        }
        d
    }

    /// `R̃⁽ᵐ⁾(x)` for any `m ≥ 1`.
    pub fn nth_derivative(&self, x: f64, m: usize) -> f64 {
        self.raw(x - self.center, m) / (2.0 * self.half_range)
    }

    /// `R̃′` through the closed form `(G − b₀)/(2 max R)`, an independent route to `derivatives[1]`.
    pub fn slope_closed_form(&self, x: f64) -> f64 {
        let g = (self.kappa * ((x - self.center).cos() - 1.0)).exp();
        (g - self.coeffs[0]) / (2.0 * self.half_range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_points_where_requested() {
        let r = RampProfile::new(1.0, 0.3).unwrap();
        assert!((r.offset() - 0.3).abs() < 1e-9);
        for p in r.critical_points() {
            assert!(r.derivatives(p)[1].abs() < 1e-12);
        }
    }

    #[test]
    fn range_is_unit_interval() {
        let r = RampProfile::new(2.0, 0.5).unwrap();
        let [lo, hi] = r.critical_points();
        assert!(r.value(lo).abs() < 1e-12);
        assert!((r.value(hi) - 1.0).abs() < 1e-12);
        for i in 0..500 {
            let v = r.value(i as f64 * 2.0 * PI / 500.0);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn series_slope_matches_closed_form() {
        let r = RampProfile::new(0.0, 0.4).unwrap();
        for i in 0..97 {
            let x = -PI + i as f64 * 0.0651;
            assert!((r.derivatives(x)[1] - r.slope_closed_form(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_chain_matches_finite_differences() {
        let r = RampProfile::new(0.7, 0.45).unwrap();
        let h = 1e-5;
        for x in [0.1, 1.3, 2.9, 4.4] {
            let (p, m) = (r.derivatives(x + h), r.derivatives(x - h));
            let d = r.derivatives(x);
            for k in 0..5 {
                let fd = (p[k] - m[k]) / (2.0 * h);
                assert!((fd - d[k + 1]).abs() < 1e-5 * (1.0 + d[k + 1].abs()), "order {k}");
            }
        }
    }

    #[test]
    fn rejects_unresolvable_offsets() {
        assert!(RampProfile::new(0.0, 1.8).is_err());
        assert!(RampProfile::new(0.0, 1e-4).is_err());
    }
}
