//! Per-Fourier-mode representation of coupled states. Mode `k` holds the
//! vector `(ŵ₁, …, ŵ_{M−1}, ζ̂, ζ̂t)` of length `M + 1`; `w₀ = 0` and `w_M = ζt`
//! are implied. Only `k = 0..=n/2` is stored (real data is Hermitian).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::{forward_fft, inverse_fft_real, RectFunction, RectGrid, TorusFunction};
use crate::operators::CoupledState;

#[derive(Clone, Debug, PartialEq)]
pub struct ModalLayout {
    pub grid: RectGrid,
    /// `M = n_layers − 1`.
    pub m: usize,
    pub h: f64,
}

pub type ModeVec = DVector<Complex64>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModalState {
    pub modes: Vec<ModeVec>,
}

impl ModalLayout {
    pub fn new(grid: &RectGrid) -> Self {
        Self { grid: grid.clone(), m: grid.n_layers() - 1, h: grid.vertical_spacing() }
    }

    pub fn dim(&self) -> usize {
        self.m + 1
    }

    pub fn n_points(&self) -> usize {
        self.grid.torus().n_points()
    }

    pub fn n_modes(&self) -> usize {
        self.n_points() / 2 + 1
    }

    pub fn zeta_index(&self) -> usize {
        self.m - 1
    }

    pub fn zeta_t_index(&self) -> usize {
        self.m
    }

    /// Boundary mass factor `1 + h/2` of the beam-velocity row.
    pub fn lumped_mass(&self) -> f64 {
        1.0 + 0.5 * self.h
    }

    /// Parseval multiplicity of stored mode `k` times `2π/n²`.
    pub fn mode_weight(&self, k: usize) -> f64 {
        let n = self.n_points();
        let mult = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        mult * 2.0 * std::f64::consts::PI / (n * n) as f64
    }

    /// Diagonal of the per-mode `𝓗` weight `W = diag(h, …, h, k⁴+1, 1 + h/2)`.
    pub fn h_weights(&self, k: usize) -> DVector<f64> {
        let kk = k as f64;
        let mut w = DVector::from_element(self.dim(), self.h);
        w[self.zeta_index()] = kk.powi(4) + 1.0;
        w[self.zeta_t_index()] = self.lumped_mass();
        w
    }

    /// Generator block `L_k` (rate form: `dy/dt = L_k y`).
    pub fn generator_block(&self, k: usize, alpha: f64) -> DMatrix<f64> {
        let (m, h) = (self.m, self.h);
        let kk = k as f64;
        let d = self.dim();
        let (zi, zti) = (self.zeta_index(), self.zeta_t_index());
        let mut l = DMatrix::zeros(d, d);
        let ih2 = 1.0 / (h * h);
        for j in 1..m {
            let r = j - 1;
            l[(r, r)] = -2.0 * ih2 - kk * kk;
            if j > 1 {
                l[(r, r - 1)] = ih2;
            }
            if j < m - 1 {
                l[(r, r + 1)] = ih2;
            } else {
                l[(r, zti)] = ih2;
            }
        }
        l[(zi, zti)] = 1.0;
        let mass = self.lumped_mass();
        l[(zti, m - 2)] = 1.0 / h / mass;
        l[(zti, zti)] = (-1.0 / h - 0.5 * h * kk * kk - alpha * (kk * kk + 1.0)) / mass;
        l[(zti, zi)] = -(kk.powi(4) + 1.0) / mass;
        l
    }

    pub fn zeros(&self) -> ModalState {
        ModalState { modes: vec![DVector::zeros(self.dim()); self.n_modes()] }
    }

    fn half_spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        let mut c = forward_fft(values);
        c.truncate(self.n_modes());
        c
    }

    fn from_half(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.n_points();
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for (k, &c) in half.iter().enumerate() {
            full[k] = c;
            if k != 0 && 2 * k != n {
                full[n - k] = c.conj();
            }
        }
        full[n / 2].im = 0.0;
        full[0].im = 0.0;
        inverse_fft_real(&full)
    }

    pub fn to_modal(&self, y: &CoupledState) -> ModalState {
        let mut out = self.zeros();
        for j in 1..self.m {
            for (k, c) in self.half_spectrum(&y.w.layer(j).values).into_iter().enumerate() {
                out.modes[k][j - 1] = c;
            }
        }
        for (k, c) in self.half_spectrum(&y.zeta.values).into_iter().enumerate() {
            out.modes[k][self.zeta_index()] = c;
        }
        for (k, c) in self.half_spectrum(&y.zeta_t.values).into_iter().enumerate() {
            out.modes[k][self.zeta_t_index()] = c;
        }
        out
    }

    /// Back to physical space; `with_trace` fills Γ₁ with `ζt`, otherwise leaves it 0.
    pub fn from_modal(&self, s: &ModalState, with_trace: bool) -> CoupledState {
        let mut y = CoupledState::zeros(&self.grid);
        let column = |idx: usize| -> Vec<f64> {
            let half: Vec<Complex64> = s.modes.iter().map(|v| v[idx]).collect();
            self.from_half(&half)
        };
        for j in 1..self.m {
            let vals = column(j - 1);
            y.w.set_layer(j, &TorusFunction { grid: self.grid.torus(), values: vals });
        }
        y.zeta.values = column(self.zeta_index());
        y.zeta_t.values = column(self.zeta_t_index());
        if with_trace {
            let zt = y.zeta_t.clone();
            y.w.set_layer(self.m, &zt);
        }
        y
    }

    /// Source `(G, H)` in rate form: `G` on interior rows, `(H + (h/2)G_M)/(1 + h/2)` on the ζt row.
    pub fn forcing(&self, g: &RectFunction, hb: &TorusFunction) -> ModalState {
        let mut out = self.zeros();
        for j in 1..self.m {
            for (k, c) in self.half_spectrum(&g.layer(j).values).into_iter().enumerate() {
                out.modes[k][j - 1] = c;
            }
        }
        let top = g.layer(self.m);
        let combined: Vec<f64> =
            hb.values.iter().zip(&top.values).map(|(a, b)| (a + 0.5 * self.h * b) / self.lumped_mass()).collect();
        for (k, c) in self.half_spectrum(&combined).into_iter().enumerate() {
            out.modes[k][self.zeta_t_index()] = c;
        }
        out
    }

    pub fn inner(&self, a: &ModalState, b: &ModalState) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.n_modes() {
            let w = self.h_weights(k);
            let mut s = 0.0;
            for i in 0..self.dim() {
                s += w[i] * (a.modes[k][i] * b.modes[k][i].conj()).re;
            }
            acc += self.mode_weight(k) * s;
        }
        acc
    }

    pub fn norm(&self, a: &ModalState) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

impl ModalState {
    pub fn axpy(&mut self, c: f64, other: &ModalState) {
        for (a, b) in self.modes.iter_mut().zip(&other.modes) {
            a.axpy(Complex64::new(c, 0.0), b, Complex64::new(1.0, 0.0));
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for a in &mut self.modes {
            *a *= Complex64::new(c, 0.0);
        }
    }

    /// `S = diag(1, −1, 1)` on the displacement entry.
    pub fn flip_displacement(&mut self, zeta_index: usize) {
        for a in &mut self.modes {
            a[zeta_index] = -a[zeta_index];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::operators::{apply_generator, h_inner, random_state};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> ModalLayout {
        ModalLayout::new(&RectGrid::new(TorusGrid::new(16).unwrap(), 9).unwrap())
    }

    #[test]
    fn round_trip() {
        let l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_state(&l.grid, 7, &mut rng);
        let back = l.from_modal(&l.to_modal(&y), true);
        for (a, b) in y.w.values.iter().zip(&back.w.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn modal_inner_matches_physical() {
        let l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_state(&l.grid, 8, &mut rng), random_state(&l.grid, 8, &mut rng));
        let p = h_inner(&a, &b);
        let q = l.inner(&l.to_modal(&a), &l.to_modal(&b));
        assert!((p - q).abs() < 1e-12 * (1.0 + p.abs()));
    }

    #[test]
    fn weighted_block_has_skew_beam_coupling_only() {
        let l = layout();
        for k in [0usize, 3, 8] {
            let wl = DMatrix::from_diagonal(&l.h_weights(k)) * l.generator_block(k, 0.7);
            let (zi, zti) = (l.zeta_index(), l.zeta_t_index());
            for r in 0..l.dim() {
                for c in 0..l.dim() {
                    let skew = (r == zi && c == zti) || (r == zti && c == zi);
                    let expect = if skew { -wl[(c, r)] } else { wl[(c, r)] };
                    assert!((wl[(r, c)] - expect).abs() < 1e-9 * (1.0 + wl[(r, c)].abs()));
                }
            }
        }
    }

    #[test]
    fn generator_two_paths_agree() {
        let l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_state(&l.grid, 6, &mut rng);
        let phys = apply_generator(&y, 1.7).unwrap();
        let mut s = l.to_modal(&y);
        for (k, v) in s.modes.iter_mut().enumerate() {
            let lk = l.generator_block(k, 1.7).map(|x| Complex64::new(x, 0.0));
            let mut out = &lk * &*v;
            out[l.zeta_t_index()] *= l.lumped_mass();
            *v = out;
        }
        let via = l.from_modal(&s, false);
        let scale = phys.max_abs();
        for (a, b) in phys.w.values.iter().zip(&via.w.values) {
            assert!((a - b).abs() <= 1e-11 * scale);
        }
        for (a, b) in phys.zeta_t.values.iter().zip(&via.zeta_t.values) {
            assert!((a - b).abs() <= 1e-11 * scale);
        }
    }
}
