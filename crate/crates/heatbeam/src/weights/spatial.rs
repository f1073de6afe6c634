//! Constructive builders for `ψ_I` and `ψ_Ω` with on-grid verification of
//! their critical-set and boundary conditions.

use num_complex::Complex64;
use serde::Serialize;

use super::profile::RampProfile;
use super::regions::ObservationRegions;
use crate::error::{Error, Result};
use crate::grid::{fd_first, spectral_derivative_raw, RectFunction, RectGrid, TorusFunction, TorusGrid};

/// Critical points sit at this fraction of the arc half-width from its center.
const CRITICAL_FRACTION: f64 = 0.4;
const PSI_I_FLOOR: f64 = 0.05;
const PSI_I_AMPLITUDE: f64 = 0.1;
const PSI_OMEGA_BUMP: f64 = 0.5;

/// `ψ_I = c₀ + a R̃(x1)`, values in `[c₀, c₀ + a]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiTorus {
    pub floor: f64,
    pub amplitude: f64,
    pub ramp: RampProfile,
}

impl PsiTorus {
    pub fn for_regions(regions: &ObservationRegions) -> Result<Self> {
        let j0 = regions.j0();
        let ramp = RampProfile::new(j0.center(), CRITICAL_FRACTION * j0.half_width())?;
        Ok(Self { floor: PSI_I_FLOOR, amplitude: PSI_I_AMPLITUDE, ramp })
    }

    pub fn value(&self, x1: f64) -> f64 {
        self.floor + self.amplitude * self.ramp.value(x1)
    }

    pub fn value_complex(&self, x1: Complex64) -> Complex64 {
        self.ramp.value_complex(x1) * self.amplitude + self.floor
    }

    /// `[ψ_I, ψ_I′, …, ψ_I⁽⁵⁾]`.
    pub fn derivatives(&self, x1: f64) -> [f64; 6] {
        let mut d = self.ramp.derivatives(x1);
        for v in d.iter_mut() {
            *v *= self.amplitude;
        }
        d[0] += self.floor;
        d
    }

    /// `[ψ_I, ψ_I′, …, ψ_I⁽ᵐ⁾]`.
    pub fn jet(&self, x1: f64, m: usize) -> Vec<f64> {
        let mut d = vec![self.value(x1)];
        d.extend((1..=m).map(|j| self.amplitude * self.ramp.nth_derivative(x1, j)));
        d
    }

    pub fn sup(&self) -> f64 {
        self.floor + self.amplitude
    }
}

/// `ψ_Ω = p + ε p² q(x1)` with `p = x2(1 − x2)` and `q` a ramp centered in `ω₀`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiOmega {
    pub bump: f64,
    pub ramp: RampProfile,
}

/// Partial derivatives of `ψ_Ω` at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PsiOmegaJet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl PsiOmega {
    pub fn for_regions(regions: &ObservationRegions) -> Result<Self> {
        let arc = regions.omega0.x1;
        let ramp = RampProfile::new(arc.center(), CRITICAL_FRACTION * arc.half_width())?;
        Ok(Self { bump: PSI_OMEGA_BUMP, ramp })
    }

    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        let p = x2 * (1.0 - x2);
        p + self.bump * p * p * self.ramp.value(x1)
    }

    /// Evaluation at complex arguments; `ψ_Ω` is a polynomial in `x2` and entire in `x1`.
    pub fn value_complex(&self, x1: Complex64, x2: Complex64) -> Complex64 {
        let p = x2 * (1.0 - x2);
        p + p * p * self.ramp.value_complex(x1) * self.bump
    }

    pub fn jet(&self, x1: f64, x2: f64) -> PsiOmegaJet {
        let q = self.ramp.derivatives(x1);
        let e = self.bump;
        let p = x2 * (1.0 - x2);
        let dp = 1.0 - 2.0 * x2;
        PsiOmegaJet {
            v: p + e * p * p * q[0],
            d1: e * p * p * q[1],
            d2: dp * (1.0 + 2.0 * e * p * q[0]),
            d11: e * p * p * q[2],
            d12: 2.0 * e * p * dp * q[1],
            d22: -2.0 + 2.0 * e * (dp * dp - 2.0 * p) * q[0],
        }
    }

    /// `max ψ_Ω`, attained at `x2 = 1/2` where `q = 1`.
    pub fn sup(&self) -> f64 {
        0.25 + self.bump / 16.0
    }
}

/// What the on-grid verification measured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialReport {
    pub torus_gradient_floor: f64,
    pub omega_gradient_floor: f64,
    /// Torus nodes flagged as critical.
    pub torus_critical_nodes: Vec<usize>,
    /// `(i, j)` nodes of the rectangle flagged as critical.
    pub omega_critical_nodes: Vec<(usize, usize)>,
    /// Smallest distance from a flagged torus node to the complement of `J₀`.
    pub torus_margin: f64,
    /// Smallest distance from a flagged rectangle node to the complement of `ω₀`.
    pub omega_margin: f64,
    /// `max |∂nψ_Ω + 1|` on both boundary components.
    pub normal_derivative_deviation: f64,
    pub normal_derivative_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialWeights {
    pub psi_i: TorusFunction,
    pub psi_omega: RectFunction,
    /// `Ψ = ‖ψ_Ω‖∞ + ‖ψ_I‖∞`.
    pub big_psi: f64,
    pub torus: PsiTorus,
    pub omega: PsiOmega,
    pub report: SpatialReport,
}

fn torus_critical(
    psi: &PsiTorus,
    regions: &ObservationRegions,
    grid: TorusGrid,
) -> Result<(TorusFunction, f64, Vec<usize>, f64)> {
    let j0 = regions.j0();
    let dx = grid.spacing();
    let off = psi.ramp.offset();
    if 2.0 * off < 2.0 * dx || j0.half_width() - off < dx {
        return Err(Error::WeightConstruction(format!(
            "J₀ half-width {:.4} cannot hold two separated critical points at spacing {dx:.4}; refine the grid or enlarge J₀",
            j0.half_width()
        )));
    }
    let f = TorusFunction::from_fn(grid, |x| psi.value(x));
    let d = spectral_derivative_raw(&f.values, 1);
    let nodes = grid.nodes();
    let exact: Vec<f64> = nodes.iter().map(|&x| psi.derivatives(x)[1]).collect();
    let err = d.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = exact.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (10.0 * err).max(1e-13 * scale);
    let n = grid.n_points();
    let mut flagged = Vec::new();
    for i in 0..n {
        let next = (i + 1) % n;
        if d[i].abs() < floor || d[i].signum() != d[next].signum() {
            flagged.push(i);
            if d[i].abs() >= floor {
                flagged.push(next);
            }
        }
    }
    flagged.sort_unstable();
    flagged.dedup();
    let mut margin = f64::INFINITY;
    for &i in &flagged {
        if !j0.contains(nodes[i]) {
            return Err(Error::WeightConstruction(format!(
                "ψ_I has a critical node at x1 = {:.4} outside J₀; enlarge J₀",
                nodes[i]
            )));
        }
        margin = margin.min(j0.depth(nodes[i]));
    }
    Ok((f, floor, flagged, margin))
}

/// Strictly positive periodic `ψ_I` whose discrete critical set lies in `J₀`.
pub fn build_psi_torus(regions: &ObservationRegions, grid: TorusGrid) -> Result<TorusFunction> {
    let psi = PsiTorus::for_regions(regions)?;
    Ok(torus_critical(&psi, regions, grid)?.0)
}

struct OmegaCheck {
    f: RectFunction,
    floor: f64,
    flagged: Vec<(usize, usize)>,
    margin: f64,
    deviation: f64,
    tolerance: f64,
}

fn omega_critical(psi: &PsiOmega, regions: &ObservationRegions, grid: &RectGrid) -> Result<OmegaCheck> {
    let w0 = regions.omega0;
    let h = grid.vertical_spacing();
    let dx = grid.torus().spacing();
    if !(w0.x2.lo <= 0.5 - h && w0.x2.hi >= 0.5 + h) {
        return Err(Error::WeightConstruction(format!(
            "ω₀ x2-range ({:.3}, {:.3}) misses the critical line x2 = 1/2 of ψ_Ω; enlarge ω₀ or move it to cover x2 = 1/2",
            w0.x2.lo, w0.x2.hi
        )));
    }
    let off = psi.ramp.offset();
    if 2.0 * off < 2.0 * dx || w0.x1.half_width() - off < dx {
        return Err(Error::WeightConstruction(format!(
            "ω₀ x1-width {:.4} cannot hold separated critical points at spacing {dx:.4}; enlarge ω₀",
            w0.x1.length()
        )));
    }
    let f = RectFunction::from_fn(grid.clone(), |a, b| psi.value(a, b));
    let n = grid.torus().n_points();
    let m = grid.n_layers();
    let x1 = grid.torus().nodes();
    let x2 = grid.vertical_nodes().to_vec();

    let mut d1 = vec![0.0; n * m];
    for j in 0..m {
        let row = f.layer(j);
        for (i, v) in spectral_derivative_raw(&row.values, 1).into_iter().enumerate() {
            d1[i * m + j] = v;
        }
    }
    let mut d2 = vec![0.0; n * m];
    let mut col = vec![0.0; m];
    for i in 0..n {
        for (j, c) in col.iter_mut().enumerate() {
            *c = f.get(i, j);
        }
        for (j, v) in fd_first(&col, h).into_iter().enumerate() {
            d2[i * m + j] = v;
        }
    }
    let mut err1: f64 = 0.0;
    let mut err2: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let jet = psi.jet(x1[i], x2[j]);
            err1 = err1.max((d1[i * m + j] - jet.d1).abs());
            err2 = err2.max((d2[i * m + j] - jet.d2).abs());
        }
    }
    let floor1 = (10.0 * err1).max(1e-13);
    let floor2 = (10.0 * err2).max(1e-13);

    // one-sided stencil error is h²/3 · max|∂³ψ/∂x2³| ≤ 4εh²
    let tolerance = 4.0 * psi.bump * h * h * (1.0 + 1e-9) + 1e-12;
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        deviation = deviation.max((-d2[i * m] + 1.0).abs()).max((d2[i * m + m - 1] + 1.0).abs());
    }
    if deviation > tolerance {
        return Err(Error::WeightConstruction(format!(
            "discrete ∂nψ_Ω deviates from −1 by {deviation:e} > {tolerance:e}"
        )));
    }

    let mut flagged = Vec::new();
    for i in 0..n {
        let ip = (i + 1) % n;
        for j in 0..m {
            let a = d1[i * m + j];
            let b = d2[i * m + j];
            let c1 = a.abs() < floor1 || a.signum() != d1[ip * m + j].signum();
            let c2 = b.abs() < floor2 || (j + 1 < m && b.signum() != d2[i * m + j + 1].signum());
            if c1 && c2 {
                flagged.push((i, j));
            }
        }
    }
    let mut margin = f64::INFINITY;
    for &(i, j) in &flagged {
        if !w0.contains(x1[i], x2[j]) {
            return Err(Error::WeightConstruction(format!(
                "ψ_Ω has a critical node at ({:.4}, {:.4}) outside ω₀; enlarge ω₀ or move it to cover it",
                x1[i], x2[j]
            )));
        }
        margin = margin.min(w0.x1.depth(x1[i]).min((x2[j] - w0.x2.lo).min(w0.x2.hi - x2[j])));
    }
    Ok(OmegaCheck { f, floor: floor1.max(floor2), flagged, margin, deviation, tolerance })
}

/// `ψ_Ω > 0` in Ω, zero on ∂Ω, `∂nψ_Ω = −1`, discrete critical set inside `ω₀`.
pub fn build_psi_omega(regions: &ObservationRegions, grid: &RectGrid) -> Result<RectFunction> {
    let psi = PsiOmega::for_regions(regions)?;
    Ok(omega_critical(&psi, regions, grid)?.f)
}

impl SpatialWeights {
    pub fn build(regions: &ObservationRegions, grid: &RectGrid) -> Result<Self> {
        let torus = PsiTorus::for_regions(regions)?;
        let omega = PsiOmega::for_regions(regions)?;
        let (psi_i, tfloor, tnodes, tmargin) = torus_critical(&torus, regions, grid.torus())?;
        let oc = omega_critical(&omega, regions, grid)?;
        Ok(Self {
            psi_i,
            psi_omega: oc.f,
            big_psi: torus.sup() + omega.sup(),
            torus,
            omega,
            report: SpatialReport {
                torus_gradient_floor: tfloor,
                omega_gradient_floor: oc.floor,
                torus_critical_nodes: tnodes,
                omega_critical_nodes: oc.flagged,
                torus_margin: tmargin,
                omega_margin: oc.margin,
                normal_derivative_deviation: oc.deviation,
                normal_derivative_tolerance: oc.tolerance,
            },
        })
    }

    /// Default geometry on a 128 × 33 grid.
    pub fn default_weights() -> Self {
        let grid = RectGrid::new(TorusGrid::new(128).expect("grid"), 33).expect("grid");
        Self::build(&ObservationRegions::default_geometry(), &grid).expect("default weights verify")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::vertical_derivative;
    use crate::weights::regions::{Interval, RectRegion, TorusArc};
    use std::f64::consts::PI;

    fn grid(n: usize, m: usize) -> RectGrid {
        RectGrid::new(TorusGrid::new(n).unwrap(), m).unwrap()
    }

    fn regions_with_j0(lo: f64, hi: f64) -> ObservationRegions {
        let d = ObservationRegions::default_geometry();
        let j0 = TorusArc::new(lo, hi).unwrap();
        let grow = |a: &TorusArc, g: f64| TorusArc::new(a.start - g, a.end + g).unwrap();
        let chain = [j0, grow(&j0, 0.1), grow(&j0, 0.2), grow(&j0, 0.3), grow(&j0, 0.4)];
        ObservationRegions::new(d.omega, d.omega0, grow(&j0, 0.6), chain).unwrap()
    }

    #[test]
    fn torus_sign_changes_inside_j0() {
        let r = regions_with_j0(0.5, 1.5);
        let g = TorusGrid::new(128).unwrap();
        let f = build_psi_torus(&r, g).unwrap();
        let d = spectral_derivative_raw(&f.values, 1);
        let x = g.nodes();
        let mut changes = 0;
        for i in 0..128 {
            if d[i].signum() != d[(i + 1) % 128].signum() {
                changes += 1;
                assert!(x[i] > 0.5 && x[(i + 1) % 128] < 1.5);
            }
        }
        assert_eq!(changes, 2);
    }

    #[test]
    fn torus_positive() {
        let f = build_psi_torus(&ObservationRegions::default_geometry(), TorusGrid::new(64).unwrap()).unwrap();
        assert!(f.values.iter().cloned().fold(f64::INFINITY, f64::min) > 0.0);
    }

    #[test]
    fn torus_critical_set_stable_under_refinement() {
        let r = regions_with_j0(0.5, 1.5);
        let psi = PsiTorus::for_regions(&r).unwrap();
        let locate = |n: usize| {
            let g = TorusGrid::new(n).unwrap();
            let (_, _, nodes, _) = torus_critical(&psi, &r, g).unwrap();
            (nodes.iter().map(|&i| g.node(i)).collect::<Vec<_>>(), g.spacing())
        };
        let (coarse, h) = locate(128);
        let (fine, _) = locate(256);
        for x in &fine {
            assert!(coarse.iter().any(|c| (c - x).abs() <= h + 1e-12));
        }
    }

    #[test]
    fn small_j0_rejected() {
        let r = regions_with_j0(1.0, 1.05);
        assert!(build_psi_torus(&r, TorusGrid::new(64).unwrap()).is_err());
    }

    #[test]
    fn omega_boundary_values_vanish() {
        let g = grid(64, 17);
        let f = build_psi_omega(&ObservationRegions::default_geometry(), &g).unwrap();
        for i in 0..64 {
            assert!(f.get(i, 0).abs() <= 1e-12 && f.get(i, 16).abs() <= 1e-12);
            for j in 1..16 {
                assert!(f.get(i, j) > 0.0);
            }
        }
    }

    #[test]
    fn bad_omega0_gets_constructive_error() {
        let d = ObservationRegions::default_geometry();
        let omega = RectRegion { x1: d.omega.x1, x2: Interval::new(0.05, 0.4).unwrap() };
        let omega0 = RectRegion { x1: TorusArc::centered(PI, 0.6).unwrap(), x2: Interval::new(0.1, 0.3).unwrap() };
        let r = ObservationRegions::new(omega, omega0, d.j, d.j_chain).unwrap();
        let err = build_psi_omega(&r, &grid(64, 33)).unwrap_err().to_string();
        assert!(err.contains("enlarge ω₀"), "{err}");
    }

    #[test]
    fn normal_derivative_converges_to_minus_one() {
        // oracle: fitted refinement rate of the one-sided stencil, independent of the builder's tolerance
        let r = ObservationRegions::default_geometry();
        let mut pts = Vec::new();
        for m in [9usize, 17, 33, 65] {
            let g = grid(32, m);
            let f = build_psi_omega(&r, &g).unwrap();
            let d = vertical_derivative(&f, 1).unwrap();
            let dev = (0..32).map(|i| (d.get(i, 0) - 1.0).abs().max((d.get(i, m - 1) + 1.0).abs())).fold(0.0, f64::max);
            pts.push((g.vertical_spacing().ln(), dev.ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn jet_matches_finite_differences() {
        let psi = PsiOmega::for_regions(&ObservationRegions::default_geometry()).unwrap();
        let h = 1e-5;
        for (a, b) in [(1.0, 0.2), (3.0, 0.5), (4.1, 0.9)] {
            let j = psi.jet(a, b);
            let d1 = (psi.value(a + h, b) - psi.value(a - h, b)) / (2.0 * h);
            let d2 = (psi.value(a, b + h) - psi.value(a, b - h)) / (2.0 * h);
            let d22 = (psi.value(a, b + h) - 2.0 * j.v + psi.value(a, b - h)) / (h * h);
            let d12 = (psi.jet(a, b + h).d1 - psi.jet(a, b - h).d1) / (2.0 * h);
            assert!((j.d1 - d1).abs() < 1e-8 && (j.d2 - d2).abs() < 1e-8);
            assert!((j.d22 - d22).abs() < 1e-4 && (j.d12 - d12).abs() < 1e-8);
        }
    }

    #[test]
    fn default_weights_report() {
        let w = SpatialWeights::default_weights();
        assert!((w.big_psi - 0.43125).abs() < 1e-15);
        assert!(!w.report.torus_critical_nodes.is_empty());
        assert!(!w.report.omega_critical_nodes.is_empty());
        assert!(w.report.torus_margin > 0.0 && w.report.omega_margin > 0.0);
        let sup_grid = w.psi_omega.max_abs() + w.psi_i.max_abs();
        assert!(sup_grid <= w.big_psi + 1e-12 && sup_grid > w.big_psi - 1e-3);
    }
}
