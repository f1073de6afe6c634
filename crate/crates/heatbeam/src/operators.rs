//! Discrete `A₁`, `A₂`, trace maps, the coupled generator `𝒜`, its adjoint
//! `𝒜*`, the control operator `B`, and the `𝓗` inner product.
//!
//! The fluid uses second-order differences in `x2` and the trace `w|Γ₁ = ζt`
//! is imposed strongly. The Γ₁ node carries half a cell of fluid mass, which is
//! lumped onto the beam velocity; the beam is driven by the matching discrete
//! flux `∂ₙʰw = (w_M − w_{M−1})/h − (h/2)∂²x1 w_M`.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{apply_multiplier, spectral_derivative_raw, RectFunction, RectGrid, TorusFunction};
use crate::weights::ObservationRegions;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoupledState {
    pub w: RectFunction,
    pub zeta: TorusFunction,
    pub zeta_t: TorusFunction,
}

impl CoupledState {
    pub fn new(w: RectFunction, zeta: TorusFunction, zeta_t: TorusFunction) -> Result<Self> {
        let t = w.grid.torus();
        if zeta.grid != t || zeta_t.grid != t {
            return Err(Error::DimensionMismatch("beam and fluid grids differ".into()));
        }
        Ok(Self { w, zeta, zeta_t })
    }

    pub fn zeros(grid: &RectGrid) -> Self {
        Self {
            w: RectFunction::zeros(grid.clone()),
            zeta: TorusFunction::zeros(grid.torus()),
            zeta_t: TorusFunction::zeros(grid.torus()),
        }
    }

    pub fn grid(&self) -> &RectGrid {
        &self.w.grid
    }

    /// `max(|w|Γ₁ − ζt|, |w|Γ₀|)`.
    pub fn trace_violation(&self) -> f64 {
        let m = self.grid().n_layers();
        let mut v: f64 = 0.0;
        for i in 0..self.zeta_t.values.len() {
            v = v.max((self.w.get(i, m - 1) - self.zeta_t.values[i]).abs()).max(self.w.get(i, 0).abs());
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.w.max_abs().max(self.zeta.max_abs()).max(self.zeta_t.max_abs())
    }

    /// Domain-of-𝒜 flag: trace compatibility within `1e−10·max(1, ‖Y‖∞)`.
    pub fn in_domain(&self) -> bool {
        self.trace_violation() <= 1e-10 * self.max_abs().max(1.0)
    }

    /// Overwrites the boundary rows with `0` on Γ₀ and `ζt` on Γ₁.
    pub fn enforce_trace(&mut self) {
        let m = self.grid().n_layers();
        for i in 0..self.zeta_t.values.len() {
            let v = self.zeta_t.values[i];
            self.w.set(i, 0, 0.0);
            self.w.set(i, m - 1, v);
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale_mut(c);
        out
    }

    pub fn scale_mut(&mut self, c: f64) {
        self.w.values.iter_mut().for_each(|v| *v *= c);
        self.zeta.values.iter_mut().for_each(|v| *v *= c);
        self.zeta_t.values.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c·other`.
    pub fn axpy(&mut self, c: f64, other: &CoupledState) {
        for (a, b) in self.w.values.iter_mut().zip(&other.w.values) {
            *a += c * b;
        }
        for (a, b) in self.zeta.values.iter_mut().zip(&other.zeta.values) {
            *a += c * b;
        }
        for (a, b) in self.zeta_t.values.iter_mut().zip(&other.zeta_t.values) {
            *a += c * b;
        }
    }

    /// `S = diag(1, −1, 1)`, which conjugates `𝒜` into `𝒜*`.
    pub fn flip_displacement(&self) -> Self {
        let mut out = self.clone();
        out.zeta.values.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

/// `A₁ζ = ∂⁴ζ + ζ`, multiplier `k⁴ + 1`.
pub fn apply_a1(zeta: &TorusFunction) -> TorusFunction {
    let values = apply_multiplier(&zeta.values, |k| Complex64::new((k as f64).powi(4) + 1.0, 0.0));
    TorusFunction { grid: zeta.grid, values }
}

/// `A₁^{1/2}`, multiplier `√(k⁴ + 1)`.
pub fn apply_a1_sqrt(zeta: &TorusFunction) -> TorusFunction {
    let values = apply_multiplier(&zeta.values, |k| Complex64::new(((k as f64).powi(4) + 1.0).sqrt(), 0.0));
    TorusFunction { grid: zeta.grid, values }
}

/// `A₂ζ = α(−∂²ζ + ζ)`, multiplier `α(k² + 1)`.
pub fn apply_a2(zeta: &TorusFunction, alpha: f64) -> TorusFunction {
    let values = apply_multiplier(&zeta.values, |k| Complex64::new(alpha * ((k * k) as f64 + 1.0), 0.0));
    TorusFunction { grid: zeta.grid, values }
}

/// Values of `Λζ` on the two boundary lines.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPair {
    pub gamma0: TorusFunction,
    pub gamma1: TorusFunction,
}

/// `Λζ`: `ζ` on Γ₁ and `0` on Γ₀.
pub fn lift_trace(zeta: &TorusFunction) -> BoundaryPair {
    BoundaryPair { gamma0: TorusFunction::zeros(zeta.grid), gamma1: zeta.clone() }
}

/// `Λ*w = w(·, 1)`.
pub fn extract_trace(w: &RectFunction) -> TorusFunction {
    w.layer(w.grid.n_layers() - 1)
}

/// Outward normal derivative on Γ₁ (`+∂x2 w` at `x2 = 1`), three-point one-sided stencil.
pub fn normal_derivative(w: &RectFunction) -> Result<TorusFunction> {
    let m = w.grid.n_layers();
    if m < 5 {
        return Err(Error::GridTooCoarse(format!("normal derivative needs >= 5 layers, got {m}")));
    }
    let h = w.grid.vertical_spacing();
    let n = w.grid.torus().n_points();
    let values = (0..n)
        .map(|i| (3.0 * w.get(i, m - 1) - 4.0 * w.get(i, m - 2) + w.get(i, m - 3)) / (2.0 * h))
        .collect();
    Ok(TorusFunction { grid: w.grid.torus(), values })
}

/// Flux `∂ₙʰw` that balances the discrete energy (see module docs).
pub fn discrete_flux(w: &RectFunction) -> TorusFunction {
    let m = w.grid.n_layers();
    let h = w.grid.vertical_spacing();
    let top = w.layer(m - 1);
    let below = w.layer(m - 2);
    let dxx = spectral_derivative_raw(&top.values, 2);
    let values = (0..top.values.len()).map(|i| (top.values[i] - below.values[i]) / h - 0.5 * h * dxx[i]).collect();
    TorusFunction { grid: w.grid.torus(), values }
}

/// `⟨Y, Ỹ⟩_𝓗 = ∫_Ω w w̃ + ⟨A₁^{1/2}ζ, A₁^{1/2}ζ̃⟩ + ⟨ζt, ζ̃t⟩`.
pub fn h_inner(a: &CoupledState, b: &CoupledState) -> f64 {
    a.w.dot(&b.w) + apply_a1(&a.zeta).dot(&b.zeta) + a.zeta_t.dot(&b.zeta_t)
}

pub fn h_norm(a: &CoupledState) -> f64 {
    h_inner(a, a).max(0.0).sqrt()
}

/// `E = ½‖Y‖²_𝓗`.
pub fn energy(a: &CoupledState) -> f64 {
    0.5 * h_inner(a, a)
}

fn check_domain(y: &CoupledState) -> Result<()> {
    if !y.in_domain() {
        return Err(Error::TraceViolation(format!(
            "w|Γ₁ − ζt or w|Γ₀ is {:e}",
            y.trace_violation()
        )));
    }
    Ok(())
}

/// `𝒜[w, ζ, ζt] = [Δw, ζt, −A₁ζ − A₂ζt − Λ*∂ₙʰw]`, with `Δw` on interior rows and zero boundary rows.
pub fn apply_generator(y: &CoupledState, alpha: f64) -> Result<CoupledState> {
    check_domain(y)?;
    let grid = y.grid().clone();
    let m = grid.n_layers();
    let h = grid.vertical_spacing();
    let mut out = CoupledState::zeros(&grid);
    for j in 1..m - 1 {
        let row = y.w.layer(j);
        let dxx = spectral_derivative_raw(&row.values, 2);
        let (up, down) = (y.w.layer(j + 1), y.w.layer(j - 1));
        for i in 0..row.values.len() {
            let v = (up.values[i] - 2.0 * row.values[i] + down.values[i]) / (h * h) + dxx[i];
            out.w.set(i, j, v);
        }
    }
    out.zeta = y.zeta_t.clone();
    let a1 = apply_a1(&y.zeta);
    let a2 = apply_a2(&y.zeta_t, alpha);
    let flux = discrete_flux(&y.w);
    for i in 0..a1.values.len() {
        out.zeta_t.values[i] = -a1.values[i] - a2.values[i] - flux.values[i];
    }
    Ok(out)
}

/// `𝒜*[u, η₁, η₂] = [Δu, −η₂, A₁η₁ − A₂η₂ − Λ*∂ₙʰu] = S𝒜S`.
pub fn apply_adjoint_generator(v: &CoupledState, alpha: f64) -> Result<CoupledState> {
    Ok(apply_generator(&v.flip_displacement(), alpha)?.flip_displacement())
}

/// Node masks of `ω` on the rectangle and `J` on the torus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionMasks {
    pub omega: Vec<bool>,
    pub j: Vec<bool>,
}

impl RegionMasks {
    pub fn new(regions: &ObservationRegions, grid: &RectGrid) -> Self {
        let x1 = grid.torus().nodes();
        let mut omega = Vec::with_capacity(grid.len());
        for &a in &x1 {
            for &b in grid.vertical_nodes() {
                omega.push(regions.omega.contains(a, b));
            }
        }
        let j = x1.iter().map(|&a| regions.j.contains(a)).collect();
        Self { omega, j }
    }

    /// No observation at all.
    pub fn empty(grid: &RectGrid) -> Self {
        Self { omega: vec![false; grid.len()], j: vec![false; grid.torus().n_points()] }
    }

    pub fn is_empty(&self) -> bool {
        !self.omega.iter().any(|&b| b) && !self.j.iter().any(|&b| b)
    }
}

/// `B(g, h) = [1_ω g, 0, 1_J h]`.
pub fn control_injection(g: &RectFunction, h: &TorusFunction, masks: &RegionMasks) -> CoupledState {
    let mut w = g.clone();
    for (v, &on) in w.values.iter_mut().zip(&masks.omega) {
        if !on {
            *v = 0.0;
        }
    }
    let mut zt = h.clone();
    for (v, &on) in zt.values.iter_mut().zip(&masks.j) {
        if !on {
            *v = 0.0;
        }
    }
    CoupledState { w, zeta: TorusFunction::zeros(h.grid), zeta_t: zt }
}

/// `B*[u, η₁, η₂] = [u|ω, η₂|J]`, zero outside the regions.
pub fn observation(v: &CoupledState, masks: &RegionMasks) -> (RectFunction, TorusFunction) {
    let b = control_injection(&v.w, &v.zeta_t, masks);
    (b.w, b.zeta_t)
}

/// `L²(ω) × L²(J)` pairing of control pairs.
pub fn control_inner(a: &(RectFunction, TorusFunction), b: &(RectFunction, TorusFunction)) -> f64 {
    a.0.dot(&b.0) + a.1.dot(&b.1)
}

/// Smooth trace-compatible random state with Fourier modes up to `max_mode`.
pub fn random_state<R: Rng>(grid: &RectGrid, max_mode: usize, rng: &mut R) -> CoupledState {
    let t = grid.torus();
    let x1 = t.nodes();
    let mut series = |decay: f64| -> Vec<f64> {
        let coeffs: Vec<(f64, f64)> = (0..=max_mode)
            .map(|k| {
                let s = 1.0 / (1.0 + k as f64).powf(decay);
                (rng.gen_range(-1.0..1.0) * s, rng.gen_range(-1.0..1.0) * s)
            })
            .collect();
        x1.iter()
            .map(|&x| coeffs.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x).cos() + b * (k as f64 * x).sin()).sum())
            .collect()
    };
    let zeta = series(3.0);
    let zeta_t = series(2.0);
    let r: Vec<Vec<f64>> = (0..3).map(|_| series(2.0)).collect();
    let mut w = RectFunction::zeros(grid.clone());
    for (i, zt) in zeta_t.iter().enumerate() {
        for (j, &y) in grid.vertical_nodes().iter().enumerate() {
            let bubble = y * (1.0 - y) * (r[0][i] + r[1][i] * y + r[2][i] * y * y);
            w.set(i, j, y * zt + bubble);
        }
    }
    let mut s = CoupledState { w, zeta: TorusFunction { grid: t, values: zeta }, zeta_t: TorusFunction { grid: t, values: zeta_t } };
    s.enforce_trace();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> RectGrid {
        RectGrid::new(TorusGrid::new(32).unwrap(), 17).unwrap()
    }

    fn close(a: &TorusFunction, f: impl Fn(f64) -> f64, tol: f64) -> bool {
        a.grid.nodes().iter().zip(&a.values).all(|(&x, v)| (v - f(x)).abs() <= tol)
    }

    #[test]
    fn a1_multipliers() {
        let g = TorusGrid::new(16).unwrap();
        assert!(close(&apply_a1(&TorusFunction::from_fn(g, f64::cos)), |x| 2.0 * x.cos(), 1e-12));
        assert!(close(&apply_a1(&TorusFunction::from_fn(g, |x| (2.0 * x).cos())), |x| 17.0 * (2.0 * x).cos(), 1e-12));
        assert!(close(&apply_a1(&TorusFunction::from_fn(g, |_| 1.0)), |_| 1.0, 1e-12));
    }

    #[test]
    fn a2_multipliers() {
        let g = TorusGrid::new(16).unwrap();
        assert!(close(&apply_a2(&TorusFunction::from_fn(g, f64::cos), 2.0), |x| 4.0 * x.cos(), 1e-12));
        assert!(close(&apply_a2(&TorusFunction::from_fn(g, f64::sin), 0.0), |_| 0.0, 0.0));
        assert!(close(&apply_a2(&TorusFunction::from_fn(g, |x| (2.0 * x).cos()), 1.0), |x| 5.0 * (2.0 * x).cos(), 1e-12));
    }

    #[test]
    fn trace_maps() {
        let g = grid();
        let z = TorusFunction::from_fn(g.torus(), |x| x.sin() + 0.3);
        let lifted = lift_trace(&z);
        assert!(lifted.gamma0.max_abs() == 0.0);
        let mut w = RectFunction::zeros(g.clone());
        w.set_layer(g.n_layers() - 1, &lifted.gamma1);
        assert_eq!(extract_trace(&w), z);
        let w2 = RectFunction::from_fn(g.clone(), |a, b| b * a.cos());
        assert!(close(&extract_trace(&w2), f64::cos, 1e-15));
    }

    #[test]
    fn normal_derivative_examples() {
        let g = grid();
        let lin = RectFunction::from_fn(g.clone(), |_, b| b);
        assert!(close(&normal_derivative(&lin).unwrap(), |_| 1.0, 1e-12));
        let flat = RectFunction::from_fn(g.clone(), |a, _| a.sin());
        assert!(close(&normal_derivative(&flat).unwrap(), |_| 0.0, 1e-12));
        let coarse = RectGrid::new(TorusGrid::new(8).unwrap(), 4).unwrap();
        assert!(normal_derivative(&RectFunction::zeros(coarse)).is_err());
    }

    #[test]
    fn normal_derivative_of_sine_converges() {
        let mut pts = Vec::new();
        for m in [9usize, 17, 33, 65] {
            let g = RectGrid::new(TorusGrid::new(8).unwrap(), m).unwrap();
            let w = RectFunction::from_fn(g.clone(), |a, b| (std::f64::consts::PI * b).sin() * (2.0 * a).cos());
            let d = normal_derivative(&w).unwrap();
            let err = g.torus().nodes().iter().zip(&d.values)
                .map(|(&x, v)| (v + std::f64::consts::PI * (2.0 * x).cos()).abs()).fold(0.0, f64::max);
            pts.push((g.vertical_spacing().ln(), err.ln()));
        }
        let slope = (pts[3].1 - pts[0].1) / (pts[3].0 - pts[0].0);
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn generator_on_pure_displacement() {
        let g = grid();
        let mut y = CoupledState::zeros(&g);
        y.zeta = TorusFunction::from_fn(g.torus(), |x| (3.0 * x).cos());
        let out = apply_generator(&y, 1.3).unwrap();
        assert!(out.w.max_abs() == 0.0 && out.zeta.max_abs() == 0.0);
        assert!(close(&out.zeta_t, |x| -82.0 * (3.0 * x).cos(), 1e-10));
        let adj = apply_adjoint_generator(&y, 1.3).unwrap();
        assert!(close(&adj.zeta_t, |x| 82.0 * (3.0 * x).cos(), 1e-10));
    }

    #[test]
    fn generator_rejects_trace_violation() {
        let g = grid();
        let mut y = CoupledState::zeros(&g);
        y.zeta_t = TorusFunction::from_fn(g.torus(), f64::cos);
        assert!(matches!(apply_generator(&y, 1.0), Err(Error::TraceViolation(_))));
    }

    #[test]
    fn adjoint_second_component_is_alpha_free() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_state(&g, 5, &mut rng);
        let a = apply_adjoint_generator(&v, 0.0).unwrap();
        let b = apply_adjoint_generator(&v, 1.0).unwrap();
        assert_eq!(a.zeta, b.zeta);
    }

    #[test]
    fn injection_and_observation() {
        let g = grid();
        let regions = ObservationRegions::default_geometry();
        let masks = RegionMasks::new(&regions, &g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gf = RectFunction::from_fn(g.clone(), |a, b| (a + b).sin());
        let hf = TorusFunction::from_fn(g.torus(), |a| a.cos());
        let b = control_injection(&gf, &hf, &masks);
        let (g2, h2) = observation(&b, &masks);
        for (k, &on) in masks.omega.iter().enumerate() {
            assert_eq!(g2.values[k], if on { gf.values[k] } else { 0.0 });
        }
        for (k, &on) in masks.j.iter().enumerate() {
            assert_eq!(h2.values[k], if on { hf.values[k] } else { 0.0 });
        }
        let zero = control_injection(&RectFunction::zeros(g.clone()), &TorusFunction::zeros(g.torus()), &masks);
        assert_eq!(zero.max_abs(), 0.0);
        let v = random_state(&g, 4, &mut rng);
        let lhs = b.w.dot(&v.w) + b.zeta_t.dot(&v.zeta_t);
        let rhs = control_inner(&(gf, hf), &observation(&v, &masks));
        assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn random_states_are_admissible() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert!(random_state(&g, 6, &mut rng).in_domain());
        }
    }
}
