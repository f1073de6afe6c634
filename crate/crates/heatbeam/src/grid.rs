//! Grids on the torus `I = R/2πZ`, the channel `Ω = I × (0,1)` and time
//! intervals, together with Fourier collocation, vertical finite differences
//! and the product quadrature used by every weighted integral.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> Plans {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plans>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Unnormalized forward DFT of real samples.
pub fn forward_fft(values: &[f64]) -> Vec<Complex64> {
    let (fwd, _) = plans(values.len());
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    buf
}

/// Inverse DFT (normalized by `1/n`) keeping the real part.
pub fn inverse_fft_real(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let (_, inv) = plans(n);
    let mut buf = coeffs.to_vec();
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Signed wavenumber of DFT index `idx` on `n` points. The Nyquist index maps to `+n/2`.
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Applies a Fourier multiplier `m(k)` to real periodic samples. The multiplier
/// at the Nyquist index receives `k = n/2`; callers that need a real result for
/// odd symbols must zero it themselves.
pub fn apply_multiplier<F>(values: &[f64], mut m: F) -> Vec<f64>
where
    F: FnMut(i64) -> Complex64,
{
    let n = values.len();
    let mut c = forward_fft(values);
    for (idx, ck) in c.iter_mut().enumerate() {
        *ck *= m(wavenumber(idx, n));
    }
    inverse_fft_real(&c)
}

/// Uniform grid on `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TorusGrid {
    n_points: usize,
}

impl TorusGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 8 || n_points % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "torus grid needs an even number of points >= 8, got {n_points}"
            )));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.spacing() * j as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// Largest wavenumber that is represented without aliasing.
    pub fn max_mode(&self) -> usize {
        self.n_points / 2
    }
}

/// Uniform vertical nodes on `[0,1]` times a torus grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RectGrid {
    torus: TorusGrid,
    n_layers: usize,
    vertical_nodes: Vec<f64>,
}

impl RectGrid {
    pub fn new(torus: TorusGrid, n_layers: usize) -> Result<Self> {
        if n_layers < 3 {
            return Err(Error::GridTooCoarse(format!(
                "need at least 3 vertical nodes, got {n_layers}"
            )));
        }
        let h = 1.0 / (n_layers - 1) as f64;
        let vertical_nodes = (0..n_layers).map(|j| j as f64 * h).collect();
        Ok(Self { torus, n_layers, vertical_nodes })
    }

    pub fn torus(&self) -> TorusGrid {
        self.torus
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn vertical_nodes(&self) -> &[f64] {
        &self.vertical_nodes
    }

    pub fn vertical_spacing(&self) -> f64 {
        1.0 / (self.n_layers - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.torus.n_points() * self.n_layers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trapezoid weights in `x2`.
    pub fn vertical_weights(&self) -> Vec<f64> {
        let h = self.vertical_spacing();
        let mut q = vec![h; self.n_layers];
        q[0] = 0.5 * h;
        q[self.n_layers - 1] = 0.5 * h;
        q
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_layers + j
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TorusFunction {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl TorusFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::DimensionMismatch(format!(
                "torus function has {} values for {} nodes",
                values.len(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.n_points()] }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: TorusGrid, f: F) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `∫_I f g dx1` by the uniform rule.
    pub fn dot(&self, other: &TorusFunction) -> f64 {
        self.grid.spacing() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Values stored row-major: index `i * n_layers + j` for node `(x1_i, x2_j)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RectFunction {
    pub grid: RectGrid,
    pub values: Vec<f64>,
}

impl RectFunction {
    pub fn new(grid: RectGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "rect function has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RectGrid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: RectGrid, f: F) -> Self {
        let x1 = grid.torus().nodes();
        let mut values = Vec::with_capacity(grid.len());
        for &a in &x1 {
            for &b in grid.vertical_nodes() {
                values.push(f(a, b));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.grid.index(i, j);
        self.values[idx] = v;
    }

    /// The horizontal line `x2 = x2_j` as a torus function.
    pub fn layer(&self, j: usize) -> TorusFunction {
        let n = self.grid.torus().n_points();
        let values = (0..n).map(|i| self.get(i, j)).collect();
        TorusFunction { grid: self.grid.torus(), values }
    }

    pub fn set_layer(&mut self, j: usize, f: &TorusFunction) {
        for (i, v) in f.values.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `∫_Ω f g dx` with the uniform torus rule and trapezoid in `x2`.
    pub fn dot(&self, other: &RectFunction) -> f64 {
        let q = self.grid.vertical_weights();
        let m = self.grid.n_layers();
        let dx = self.grid.torus().spacing();
        let mut acc = 0.0;
        for (idx, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            acc += q[idx % m] * a * b;
        }
        acc * dx
    }

    /// Applies a torus operator to every horizontal line.
    pub fn map_layers<F: Fn(&TorusFunction) -> TorusFunction>(&self, op: F) -> RectFunction {
        let mut out = RectFunction::zeros(self.grid.clone());
        for j in 0..self.grid.n_layers() {
            out.set_layer(j, &op(&self.layer(j)));
        }
        out
    }
}

/// Fourier-collocation derivative of order 1..=4.
pub fn spectral_derivative(f: &TorusFunction, order: u32) -> Result<TorusFunction> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "spectral derivative order must be in 1..=4, got {order}"
        )));
    }
    Ok(TorusFunction { grid: f.grid, values: spectral_derivative_raw(&f.values, order) })
}

/// Spectral derivative of raw periodic samples; the Nyquist mode is dropped for odd orders.
pub fn spectral_derivative_raw(values: &[f64], order: u32) -> Vec<f64> {
    let n = values.len() as i64;
    apply_multiplier(values, |k| {
        if order % 2 == 1 && k == n / 2 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, k as f64).powu(order)
    })
}

/// Finite-difference derivative in `x2`: second-order centered stencils inside,
/// second-order one-sided stencils on `Γ₀` and `Γ₁`.
pub fn vertical_derivative(f: &RectFunction, order: u32) -> Result<RectFunction> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "vertical derivative order must be 1 or 2, got {order}"
        )));
    }
    let m = f.grid.n_layers();
    if m < 5 {
        return Err(Error::GridTooCoarse(format!("vertical derivative needs >= 5 layers, got {m}")));
    }
    let h = f.grid.vertical_spacing();
    let n = f.grid.torus().n_points();
    let mut out = RectFunction::zeros(f.grid.clone());
    let mut col = vec![0.0; m];
    for i in 0..n {
        for (j, c) in col.iter_mut().enumerate() {
            *c = f.get(i, j);
        }
        let d = if order == 1 { fd_first(&col, h) } else { fd_second(&col, h) };
        for (j, v) in d.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

pub(crate) fn fd_first(col: &[f64], h: f64) -> Vec<f64> {
    let m = col.len();
    let mut d = vec![0.0; m];
    d[0] = (-3.0 * col[0] + 4.0 * col[1] - col[2]) / (2.0 * h);
    for j in 1..m - 1 {
        d[j] = (col[j + 1] - col[j - 1]) / (2.0 * h);
    }
    d[m - 1] = (3.0 * col[m - 1] - 4.0 * col[m - 2] + col[m - 3]) / (2.0 * h);
    d
}

pub(crate) fn fd_second(col: &[f64], h: f64) -> Vec<f64> {
    let m = col.len();
    let h2 = h * h;
    let mut d = vec![0.0; m];
    d[0] = (2.0 * col[0] - 5.0 * col[1] + 4.0 * col[2] - col[3]) / h2;
    for j in 1..m - 1 {
        d[j] = (col[j + 1] - 2.0 * col[j] + col[j - 1]) / h2;
    }
    d[m - 1] = (2.0 * col[m - 1] - 5.0 * col[m - 2] + 4.0 * col[m - 3] - col[m - 4]) / h2;
    d
}

/// Time nodes on `[0, T]`. When `interior_only` is set the endpoints are
/// excluded and integrands are understood to vanish at `t = 0` and `t = T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    interior_only: bool,
}

impl TimeGrid {
    pub fn new(horizon: f64, nodes: Vec<f64>, interior_only: bool) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("time grid needs at least one node".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time nodes must be strictly increasing".into()));
        }
        if nodes[0] < 0.0 || *nodes.last().unwrap() > horizon {
            return Err(Error::InvalidArgument("time nodes must lie in [0, T]".into()));
        }
        if interior_only && (nodes[0] <= 0.0 || *nodes.last().unwrap() >= horizon) {
            return Err(Error::InvalidArgument("interior-only grid must exclude 0 and T".into()));
        }
        Ok(Self { horizon, nodes, interior_only })
    }

    /// `n_steps + 1` uniform nodes including both endpoints.
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        let dt = horizon / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
        nodes[n_steps] = horizon;
        Self::new(horizon, nodes, false)
    }

    /// `n` cell midpoints `(i + 1/2) T / n`, i.e. nodes on `[δT, T − δT]` with `δ = 1/(2n)`.
    pub fn interior(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        let dt = horizon / n as f64;
        Self::new(horizon, (0..n).map(|i| (i as f64 + 0.5) * dt).collect(), true)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn is_interior_only(&self) -> bool {
        self.interior_only
    }

    /// Trapezoid weights on closed grids. Interior-only grids use cell lengths
    /// (the midpoint rule on `interior` grids), so the weights sum to `T`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut w = vec![0.0; n];
        if self.interior_only {
            for k in 0..n {
                let lo = if k == 0 { 0.0 } else { 0.5 * (self.nodes[k - 1] + self.nodes[k]) };
                let hi = if k + 1 == n { self.horizon } else { 0.5 * (self.nodes[k] + self.nodes[k + 1]) };
                w[k] = hi - lo;
            }
            return w;
        }
        for k in 0..n.saturating_sub(1) {
            let d = self.nodes[k + 1] - self.nodes[k];
            w[k] += 0.5 * d;
            w[k + 1] += 0.5 * d;
        }
        w
    }
}

/// Spatial factor of a product quadrature.
#[derive(Clone, Debug)]
pub enum SpatialRule {
    /// Uniform rule on the torus.
    Torus(TorusGrid),
    /// Uniform torus rule times trapezoid in `x2`.
    Rect(RectGrid),
    /// Explicit weights (masked regions, boundary pairs, ...).
    Weights(Vec<f64>),
}

impl SpatialRule {
    pub fn weights(&self) -> Vec<f64> {
        match self {
            SpatialRule::Torus(g) => vec![g.spacing(); g.n_points()],
            SpatialRule::Rect(g) => {
                let q = g.vertical_weights();
                let dx = g.torus().spacing();
                let mut w = Vec::with_capacity(g.len());
                for _ in 0..g.torus().n_points() {
                    w.extend(q.iter().map(|v| v * dx));
                }
                w
            }
            SpatialRule::Weights(w) => w.clone(),
        }
    }
}

/// `∫_0^T ∫ f` for time-major samples `values[t * len + s]`.
pub fn quadrature(values: &[f64], time_grid: &TimeGrid, spatial: &SpatialRule) -> Result<f64> {
    let sw = spatial.weights();
    let tw = time_grid.weights();
    if values.len() != sw.len() * tw.len() {
        return Err(Error::DimensionMismatch(format!(
            "quadrature got {} values for {} time nodes x {} spatial nodes",
            values.len(),
            tw.len(),
            sw.len()
        )));
    }
    let mut total = 0.0;
    for (t, wt) in tw.iter().enumerate() {
        let row = &values[t * sw.len()..(t + 1) * sw.len()];
        let s: f64 = row.iter().zip(&sw).map(|(v, w)| v * w).sum();
        total += wt * s;
    }
    Ok(total)
}
