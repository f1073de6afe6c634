//! The heat Carleman functional on `Ω = 𝕋 × (0, 1)` with the boundary integral
//! `I_Σ` kept in full.
//!
//! The seven boundary terms are computed twice: from the product rule on
//! `v = e^{sφ}u` with the closed-form weight jets, and from complex steps of
//! `v` itself in `t`, `x1` and `x2`.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use super::beam::ProtocolOutcome;
use super::samples::HeatSample;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, TorusGrid};
use crate::par;
use crate::report::{calibrate_then_verify, FunctionalReport, SampleTerms, Term};
use crate::weights::{RectRegion, WeightFamily};

pub const DEFAULT_HEAT_MODES: usize = 6;
const STEP: f64 = 1e-20;

pub const SIGMA_TERM_NAMES: [&str; 7] = [
    "-dn v dt v",
    "s3 l3 xi0^3 |v|^2",
    "-s l2 xi0 dn v v",
    "l s2 xi0 dt phi |v|^2",
    "l s xi0 |dn v|^2",
    "-l s xi0 |d1 v|^2",
    "mu s xi0 dn v psi_I' d1 v",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeatGrid {
    pub n_x1: usize,
    /// Midpoint cells across the channel.
    pub n_x2: usize,
    pub n_t: usize,
}

impl Default for HeatGrid {
    fn default() -> Self {
        Self { n_x1: 64, n_x2: 24, n_t: 120 }
    }
}

/// The seven `I_Σ` integrals, both sides of the channel summed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SigmaTerms(pub [f64; 7]);

impl SigmaTerms {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Largest term-wise `|a − b| / max(|a|, 1e−12·max|a|)`.
    pub fn max_rel_diff(&self, other: &SigmaTerms) -> f64 {
        let scale = self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return other.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12 * scale))
            .fold(0.0, f64::max)
    }
}

/// Weight data shared by every sample on one grid.
struct HeatWeights {
    times: Vec<f64>,
    ls: Vec<[f64; 4]>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    /// Per `(x1, x2)`: `F`, `e^{A}`, in `ω`.
    cells: Vec<(f64, f64, bool)>,
    /// `c = max sφ` over all nodes, boundary included.
    shift: f64,
    vol: f64,
    area: f64,
}

impl HeatWeights {
    fn new(wf: &WeightFamily, omega: &RectRegion, grid: HeatGrid) -> Result<Self> {
        if grid.n_x2 < 2 || grid.n_t < 4 {
            return Err(Error::GridTooCoarse(format!("heat audit grid {grid:?} is too coarse")));
        }
        let t_final = wf.params.t_final;
        let times = TimeGrid::interior(t_final, grid.n_t)?.nodes().to_vec();
        let ls = times.iter().map(|&t| wf.time_jet(t).map(|j| j.l)).collect::<Result<Vec<_>>>()?;
        let tg = TorusGrid::new(grid.n_x1)?;
        let x1 = tg.nodes();
        let h2 = 1.0 / grid.n_x2 as f64;
        let x2: Vec<f64> = (0..grid.n_x2).map(|j| (j as f64 + 0.5) * h2).collect();
        let mut cells = Vec::with_capacity(x1.len() * x2.len());
        for &a in &x1 {
            for &b in &x2 {
                let rf = wf.rect_factor(a, b);
                cells.push((rf.f, rf.e, omega.contains(a, b)));
            }
        }
        let l_min = ls.iter().map(|l| l[0]).fold(f64::INFINITY, f64::min);
        let mut f_max = cells.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        for &a in &x1 {
            for b in [0.0, 1.0] {
                f_max = f_max.max(wf.rect_factor(a, b).f);
            }
        }
        // F < 0, so the largest sφ sits at the smallest L.
        let shift = wf.params.s * f_max * l_min;
        let dt = t_final / grid.n_t as f64;
        Ok(Self { times, ls, x1, x2, cells, shift, vol: dt * tg.spacing() * h2, area: dt * tg.spacing() })
    }
}

/// Boundary traces of `v` at one node, scaled by `e^{−c}`.
#[derive(Clone, Copy, Debug, Default)]
struct Trace {
    v: f64,
    vt: f64,
    v1: f64,
    vn: f64,
    xi0: f64,
    phi_t: f64,
    psi1: f64,
}

fn accumulate(acc: &mut [f64; 7], p: &Trace, s: f64, la: f64, mu: f64) {
    acc[0] -= p.vn * p.vt;
    acc[1] += s.powi(3) * la.powi(3) * p.xi0.powi(3) * p.v * p.v;
    acc[2] -= s * la * la * p.xi0 * p.vn * p.v;
    acc[3] += la * s * s * p.xi0 * p.phi_t * p.v * p.v;
    acc[4] += la * s * p.xi0 * p.vn * p.vn;
    acc[5] -= la * s * p.xi0 * p.v1 * p.v1;
    acc[6] += mu * s * p.xi0 * p.vn * p.psi1 * p.v1;
}

/// `I_Σ` from the product rule: `∂v = e^{sφ}(∂u + s ∂φ u)` with `φ = F·L`.
fn sigma_product_rule(u: &HeatSample, wf: &WeightFamily, w: &HeatWeights) -> SigmaTerms {
    let p = &wf.params;
    let mut acc = [0.0; 7];
    for (i, &t) in w.times.iter().enumerate() {
        let l = w.ls[i];
        for &x1 in &w.x1 {
            let psi1 = wf.spatial.torus.derivatives(x1)[1];
            for (x2, normal) in [(0.0, -1.0), (1.0, 1.0)] {
                let rf = wf.rect_factor(x1, x2);
                let j = u.jet(t, x1, x2);
                let e = (p.s * rf.f * l[0] - w.shift).exp();
                let tr = Trace {
                    v: e * j.u,
                    vt: e * (j.ut + p.s * rf.f * l[1] * j.u),
                    v1: e * (j.u1 + p.s * rf.d1 * l[0] * j.u),
                    vn: normal * e * (j.u2 + p.s * rf.d2 * l[0] * j.u),
                    xi0: rf.e * l[0],
                    phi_t: rf.f * l[1],
                    psi1,
                };
                accumulate(&mut acc, &tr, p.s, p.lambda, p.mu);
            }
        }
    }
    SigmaTerms(acc.map(|v| v * w.area))
}

/// `I_Σ` from complex steps of `v`, `φ` and `ψ_I` in each variable.
fn sigma_complex_step(u: &HeatSample, wf: &WeightFamily, w: &HeatWeights) -> SigmaTerms {
    let p = &wf.params;
    let c = |x: f64| Complex64::new(x, 0.0);
    let ih = Complex64::new(0.0, STEP);
    let lp = p.lambda * wf.spatial.big_psi;
    let top = (10.0 * lp).exp();
    let half_k = 0.5 * p.k;
    let ell = |t: Complex64| (t * (c(p.t_final) - t)).powf(-half_k);
    let phi = |t: Complex64, x1: Complex64, x2: Complex64| {
        let a = wf.spatial.torus.value_complex(x1) * p.mu + wf.spatial.omega.value_complex(x1, x2) * p.lambda + 8.0 * lp;
        (a.exp() - top) * ell(t)
    };
    let v = |t: Complex64, x1: Complex64, x2: Complex64| (phi(t, x1, x2) * p.s - w.shift).exp() * u.value_complex(t, x1, x2);
    let mut acc = [0.0; 7];
    for &t in &w.times {
        let l0 = ell(c(t)).re;
        for &x1 in &w.x1 {
            let psi1 = wf.spatial.torus.value_complex(c(x1) + ih).im / STEP;
            let xi0 = wf.exponent0(x1).exp() * l0;
            for (x2, normal) in [(0.0, -1.0), (1.0, 1.0)] {
                let (tc, x1c, x2c) = (c(t), c(x1), c(x2));
                let tr = Trace {
                    v: v(tc, x1c, x2c).re,
                    vt: v(tc + ih, x1c, x2c).im / STEP,
                    v1: v(tc, x1c + ih, x2c).im / STEP,
                    vn: normal * v(tc, x1c, x2c + ih).im / STEP,
                    xi0,
                    phi_t: phi(tc + ih, x1c, x2c).im / STEP,
                    psi1,
                };
                accumulate(&mut acc, &tr, p.s, p.lambda, p.mu);
            }
        }
    }
    SigmaTerms(acc.map(|v| v * w.area))
}

fn heat_terms(u: &HeatSample, wf: &WeightFamily, w: &HeatWeights) -> SampleTerms {
    let p = &wf.params;
    let (s, la) = (p.s, p.lambda);
    let nx2 = w.x2.len();
    let mut v = [0.0; 6];
    for (i, &t) in w.times.iter().enumerate() {
        let l = w.ls[i][0];
        for (a, &x1) in w.x1.iter().enumerate() {
            for (b, &x2) in w.x2.iter().enumerate() {
                let (f, ea, in_omega) = w.cells[a * nx2 + b];
                let xi = ea * l;
                let e2 = (2.0 * (s * f * l - w.shift)).exp();
                let j = u.jet(t, x1, x2);
                let lap = j.laplacian();
                v[0] += e2 / xi * (j.ut * j.ut + lap * lap);
                v[1] += e2 * xi * (j.u1 * j.u1 + j.u2 * j.u2);
                v[2] += e2 * xi.powi(3) * j.u * j.u;
                v[3] += e2 * (j.ut - lap) * (j.ut - lap);
                if in_omega {
                    v[4] += e2 * xi.powi(3) * j.u * j.u;
                }
            }
        }
    }
    let v = v.map(|x| x * w.vol);
    let sigma = sigma_product_rule(u, wf, w);
    let mut lhs = vec![
        Term::new("s^-1 xi^-1 (|u_t|^2 + |lap u|^2)", v[0] / s),
        Term::new("s l2 xi |grad u|^2", s * la * la * v[1]),
        Term::new("s3 l4 xi^3 |u|^2", s.powi(3) * la.powi(4) * v[2]),
    ];
    lhs.extend(SIGMA_TERM_NAMES.iter().zip(sigma.0).map(|(n, x)| Term::new(&format!("I_Sigma: {n}"), x)));
    let rhs = vec![
        Term::new("|u_t - lap u|^2", v[3]),
        Term::new("omega: s3 l4 xi^3 |u|^2", s.powi(3) * la.powi(4) * v[4]),
    ];
    let saturated = lhs.iter().chain(&rhs).any(|t| !t.value.is_finite());
    SampleTerms { lhs, rhs, saturated }
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatCheck {
    pub report: FunctionalReport,
    /// Worst term-wise disagreement of the two `I_Σ` routes over the samples.
    pub sigma_route_gap: f64,
}

fn check_horizon(samples: &[HeatSample], wf: &WeightFamily) -> Result<()> {
    for u in samples {
        if (u.t_final - wf.params.t_final).abs() > 1e-14 * wf.params.t_final {
            return Err(Error::DimensionMismatch("sample horizon differs from weight horizon".into()));
        }
    }
    Ok(())
}

/// The two `I_Σ` evaluations for one sample.
pub fn sigma_terms_both_routes(u: &HeatSample, wf: &WeightFamily, omega: &RectRegion, grid: HeatGrid) -> Result<(SigmaTerms, SigmaTerms)> {
    check_horizon(std::slice::from_ref(u), wf)?;
    let w = HeatWeights::new(wf, omega, grid)?;
    Ok((sigma_product_rule(u, wf, &w), sigma_complex_step(u, wf, &w)))
}

/// Evaluates the heat functional on every sample. With `dual_route` the boundary
/// terms are recomputed by complex steps and the worst gap is reported.
pub fn heat_inequality_check(
    samples: &[HeatSample],
    wf: &WeightFamily,
    omega: &RectRegion,
    grid: HeatGrid,
    dual_route: bool,
) -> Result<HeatCheck> {
    check_horizon(samples, wf)?;
    let w = HeatWeights::new(wf, omega, grid)?;
    let terms = par::map_range(samples.len(), |i| heat_terms(&samples[i], wf, &w));
    let gap = if dual_route {
        let gaps = par::map_range(samples.len(), |i| {
            sigma_product_rule(&samples[i], wf, &w).max_rel_diff(&sigma_complex_step(&samples[i], wf, &w))
        });
        gaps.into_iter().fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    let report = FunctionalReport::from_samples("theorem-3.1", Some(wf.params.clone()), terms);
    if report.saturated {
        return Err(Error::ResourceLimit("heat functional overflowed".into()));
    }
    Ok(HeatCheck { report, sigma_route_gap: gap })
}

pub fn heat_protocol<R: Rng>(
    wf: &WeightFamily,
    omega: &RectRegion,
    grid: HeatGrid,
    n_cal: usize,
    n_fresh: usize,
    margin: f64,
    rng: &mut R,
) -> Result<ProtocolOutcome> {
    let t = wf.params.t_final;
    let mut draw = |n: usize| (0..n).map(|_| HeatSample::random(t, DEFAULT_HEAT_MODES, rng)).collect::<Result<Vec<_>>>();
    let cal = draw(n_cal)?;
    let fresh = draw(n_fresh)?;
    let c = heat_inequality_check(&cal, wf, omega, grid, false)?;
    let f = heat_inequality_check(&fresh, wf, omega, grid, false)?;
    let verdict = calibrate_then_verify(&c.report.sample_ratios, &f.report.sample_ratios, margin);
    Ok(ProtocolOutcome { name: "theorem-3.1".into(), alpha: wf.params.alpha, calibration: c.report, fresh: f.report, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::decomposition::tests::family;
    use crate::weights::ObservationRegions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn omega() -> RectRegion {
        ObservationRegions::default_geometry().omega
    }

    fn small() -> HeatGrid {
        HeatGrid { n_x1: 32, n_x2: 12, n_t: 40 }
    }

    #[test]
    fn zero_sample_gives_zero() {
        let c = heat_inequality_check(&[HeatSample::zero(1.0)], &family(1.0), &omega(), small(), true).unwrap();
        assert_eq!(c.report.lhs, 0.0);
        assert_eq!(c.report.rhs, 0.0);
        assert_eq!(c.sigma_route_gap, 0.0);
    }

    #[test]
    fn boundary_terms_agree_across_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for alpha in [0.5, 1.0, 2.0] {
            let u = HeatSample::random(1.0, 5, &mut rng).unwrap();
            let (a, b) = sigma_terms_both_routes(&u, &family(alpha), &omega(), small()).unwrap();
            assert!(a.0.iter().all(|v| v.abs() > 0.0), "{a:?}");
            let gap = a.max_rel_diff(&b);
            assert!(gap <= 1e-8, "alpha {alpha}: {gap:e}\n{a:?}\n{b:?}");
        }
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let u = HeatSample::random(1.0, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let a = heat_inequality_check(&[u.clone()], &family(1.0), &omega(), small(), false).unwrap();
        let b = heat_inequality_check(&[u.scaled(1e3)], &family(1.0), &omega(), small(), false).unwrap();
        assert!((a.report.ratio - b.report.ratio).abs() <= 1e-10 * a.report.ratio.abs());
    }

    #[test]
    fn protocol_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let out = heat_protocol(&family(1.0), &omega(), small(), 10, 20, 2.0, &mut rng).unwrap();
        assert!(out.verdict.passed, "{:?}", out.verdict);
    }
}
