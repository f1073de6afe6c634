//! Penalized HUM null controls, observability Gramians and cost studies.
//!
//! Everything is posed on the implicit-Euler discretization: with
//! `R = (I − dt L)⁻¹` and `y^n = R(y^{n−1} + dt B u^n)`, the control built from
//! adjoint data `Φ` is `u^n = B*(R*)^{N−n+1}Φ`, and the normal operator is
//! `ΛΦ = Σ_n dt R^{N−n+1} B B*(R*)^{N−n+1}Φ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{RectFunction, RectGrid, TimeGrid, TorusFunction};
use crate::modal::{ModalLayout, ModalState};
use crate::operators::{control_inner, observation, CoupledState, RegionMasks};
use crate::par;
use crate::report::{linear_fit, ratio, FunctionalReport, LinearFit, SampleTerms, Term};
use crate::simulator::{solve_adjoint, solve_forward, Scheme, SourceSpec, Stepper, Trajectory};
use crate::weights::{clamp_exp, WeightFamily};

pub type ControlPair = (RectFunction, TorusFunction);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HumOptions {
    pub dt: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Size of the low-mode space solved exactly inside CG (0 disables it).
    pub coarse_size: usize,
}

impl Default for HumOptions {
    fn default() -> Self {
        Self { dt: 0.01, cg_tol: 1e-10, cg_max_iter: 4000, coarse_size: 300 }
    }
}

/// Discrete control-to-state machinery on a fixed horizon.
pub struct HumOperator {
    pub stepper: Stepper,
    pub masks: RegionMasks,
    pub time_grid: TimeGrid,
}

impl HumOperator {
    pub fn new(grid: &RectGrid, masks: RegionMasks, t_final: f64, alpha: f64, dt: f64) -> Result<Self> {
        if !(t_final > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("need T > 0 and dt > 0, got T = {t_final}, dt = {dt}")));
        }
        if masks.omega.len() != grid.len() || masks.j.len() != grid.torus().n_points() {
            return Err(Error::DimensionMismatch("region masks do not match the grid".into()));
        }
        let n = ((t_final / dt).round() as usize).max(1);
        let time_grid = TimeGrid::uniform(t_final, n)?;
        let stepper = Stepper::new(grid, t_final / n as f64, alpha, Scheme::ImplicitEuler)?;
        Ok(Self { stepper, masks, time_grid })
    }

    pub fn layout(&self) -> &ModalLayout {
        &self.stepper.layout
    }

    pub fn n_steps(&self) -> usize {
        self.time_grid.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    pub fn observe(&self, psi: &ModalState) -> ControlPair {
        observation(&self.layout().from_modal(psi, true), &self.masks)
    }

    /// `(u¹, …, u^N)` and `(R*)^N Φ`.
    pub fn adjoint_observations(&self, phi: &ModalState) -> (Vec<ControlPair>, ModalState) {
        let n = self.n_steps();
        let mut psi = phi.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            self.stepper.step_adjoint(&mut psi);
            out.push(self.observe(&psi));
        }
        out.reverse();
        (out, psi)
    }

    /// Final state from `y0` (or zero) driven by `u¹..u^N`.
    pub fn drive(&self, y0: Option<&ModalState>, controls: &[ControlPair]) -> ModalState {
        let mut y = y0.cloned().unwrap_or_else(|| self.layout().zeros());
        for u in controls {
            let f = self.layout().forcing(&u.0, &u.1);
            self.stepper.step(&mut y, None, Some(&f));
        }
        y
    }

    pub fn free_final(&self, y0: &ModalState) -> ModalState {
        let mut y = y0.clone();
        for _ in 0..self.n_steps() {
            self.stepper.step(&mut y, None, None);
        }
        y
    }

    pub fn normal(&self, phi: &ModalState) -> ModalState {
        self.drive(None, &self.adjoint_observations(phi).0)
    }

    /// Per-mode `P_k = Σ_m dt R^m D (R*)^m` with `D` observing the fluid and the
    /// beam velocity everywhere; `(ρP_k + ε)` preconditions `Λ + ε`, `ρ` being the
    /// observed fraction of nodes.
    pub fn preconditioner(&self, epsilon: f64) -> Vec<LU<f64, Dyn, Dyn>> {
        let layout = self.layout();
        let (d, zi, zti) = (layout.dim(), layout.zeta_index(), layout.zeta_t_index());
        let observed = self.masks.omega.iter().chain(&self.masks.j).filter(|&&b| b).count() as f64;
        let frac = observed / (self.masks.omega.len() + self.masks.j.len()) as f64;
        let dt = self.dt();
        par::map_range(layout.n_modes(), |k| {
            let l = layout.generator_block(k, self.stepper.alpha);
            let eye = DMatrix::<f64>::identity(d, d);
            let r = (&eye - &l * dt).try_inverse().expect("invertible step matrix");
            let w = layout.h_weights(k);
            let r_adj = DMatrix::from_fn(d, d, |i, j| r[(j, i)] * w[j] / w[i]);
            let mut dd = DMatrix::<f64>::identity(d, d) * dt;
            dd[(zi, zi)] = 0.0;
            dd[(zti, zti)] = dt / layout.lumped_mass();
            let mut q = DMatrix::<f64>::zeros(d, d);
            for _ in 0..self.n_steps() {
                q = &r * (&q + &dd) * &r_adj;
            }
            (q * frac + eye * epsilon).lu()
        })
    }

    /// `dt Σ ‖uⁿ‖²`.
    pub fn cost_squared(&self, controls: &[ControlPair]) -> f64 {
        self.dt() * controls.iter().map(|u| control_inner(u, u)).sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: ModalState,
    pub iterations: usize,
    pub residual: f64,
}

fn precondition(pc: &[LU<f64, Dyn, Dyn>], r: &ModalState) -> ModalState {
    let mut z = r.clone();
    par::for_each_mut(&mut z.modes, |k, v| {
        let re = pc[k].solve(&v.map(|c| c.re)).expect("invertible preconditioner");
        let im = pc[k].solve(&v.map(|c| c.im)).expect("invertible preconditioner");
        for i in 0..v.len() {
            v[i] = Complex64::new(re[i], im[i]);
        }
    });
    z
}

/// Exact Galerkin inverse of `Λ + ε` on the low-frequency modal span.
struct CoarseSpace {
    v: Vec<ModalState>,
    av: Vec<ModalState>,
    chol: Cholesky<f64, Dyn>,
}

impl CoarseSpace {
    fn build(op: &HumOperator, epsilon: f64, size: usize) -> Result<Option<Self>> {
        let layout = op.layout();
        let size = size.min(layout.n_points() * layout.dim());
        if size == 0 {
            return Ok(None);
        }
        let v = modal_basis(layout, size)?;
        let av: Vec<ModalState> = par::map_range(size, |i| {
            let mut q = op.normal(&v[i]);
            q.axpy(epsilon, &v[i]);
            q
        });
        let a = DMatrix::from_fn(size, size, |i, j| 0.5 * (layout.inner(&v[i], &av[j]) + layout.inner(&v[j], &av[i])));
        Ok(Cholesky::new(a).map(|chol| Self { v, av, chol }))
    }

    fn coeffs(&self, layout: &ModalLayout, r: &ModalState) -> DVector<f64> {
        self.chol.solve(&DVector::from_iterator(self.v.len(), self.v.iter().map(|e| layout.inner(e, r))))
    }

    fn combine(layout: &ModalLayout, basis: &[ModalState], c: &DVector<f64>) -> ModalState {
        let mut out = layout.zeros();
        for (e, &ci) in basis.iter().zip(c.iter()) {
            out.axpy(ci, e);
        }
        out
    }

    /// `r − (Λ+ε)Q r`.
    fn deflate(&self, layout: &ModalLayout, r: &ModalState) -> ModalState {
        let c = self.coeffs(layout, r);
        let mut out = r.clone();
        out.axpy(-1.0, &Self::combine(layout, &self.av, &c));
        out
    }

    /// `Q r`.
    fn project(&self, layout: &ModalLayout, r: &ModalState) -> ModalState {
        Self::combine(layout, &self.v, &self.coeffs(layout, r))
    }
}

/// Conjugate gradient for `(Λ + ε)Φ = b` in the `𝓗` inner product, deflated by
/// an exact coarse solve on the lowest modes and preconditioned mode by mode.
pub fn conjugate_gradient(op: &HumOperator, b: &ModalState, epsilon: f64, opts: &HumOptions) -> Result<CgOutcome> {
    let layout = op.layout();
    let bnorm = layout.norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { solution: layout.zeros(), iterations: 0, residual: 0.0 });
    }
    let pc = op.preconditioner(epsilon);
    let coarse = CoarseSpace::build(op, epsilon, opts.coarse_size)?;
    let apply = |p: &ModalState| {
        let mut q = op.normal(p);
        q.axpy(epsilon, p);
        q
    };
    let deflate = |r: &ModalState| match &coarse {
        Some(c) => c.deflate(layout, r),
        None => r.clone(),
    };
    let finish = |xh: ModalState, axh: &ModalState| match &coarse {
        Some(c) => {
            let mut x = c.project(layout, b);
            x.axpy(1.0, &xh);
            x.axpy(-1.0, &c.project(layout, axh));
            x
        }
        None => xh,
    };
    // deflated residual b − (Λ+ε)x equals the residual of the reconstructed x
    let mut r = deflate(b);
    let mut res = layout.norm(&r) / bnorm;
    let mut xh = layout.zeros();
    let mut axh = layout.zeros();
    if res <= opts.cg_tol {
        return Ok(CgOutcome { solution: finish(xh, &axh), iterations: 0, residual: res });
    }
    let mut z = precondition(&pc, &r);
    let mut p = z.clone();
    let mut rz = layout.inner(&r, &z);
    for it in 1..=opts.cg_max_iter {
        let ap = apply(&p);
        let q = deflate(&ap);
        let a = rz / layout.inner(&p, &q);
        xh.axpy(a, &p);
        axh.axpy(a, &ap);
        r.axpy(-a, &q);
        res = layout.norm(&r) / bnorm;
        if res <= opts.cg_tol {
            return Ok(CgOutcome { solution: finish(xh, &axh), iterations: it, residual: res });
        }
        z = precondition(&pc, &r);
        let rz_new = layout.inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        z.axpy(beta, &p);
        p = z.clone();
    }
    Err(Error::CgNotConverged { iterations: opts.cg_max_iter, residual: res })
}

#[derive(Clone, Debug)]
pub struct ControlResult {
    pub time_grid: TimeGrid,
    /// Controls at every time node (entry 0 is unused by implicit Euler and zero).
    pub g: Vec<RectFunction>,
    pub h: Vec<TorusFunction>,
    pub cost: f64,
    /// `‖Y(T)‖_𝓗` of the closed-loop forward solve.
    pub terminal_norm: f64,
    pub epsilon: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    /// `½(cost² + ε‖Φ‖²)`, the negated optimal dual value.
    pub dual_value: f64,
    pub adjoint_norm: f64,
    pub initial_norm: f64,
}

impl ControlResult {
    /// `terminal² ≤ 2ε·dual` up to the CG residual.
    pub fn penalty_identity_holds(&self) -> bool {
        let slack = 1e-9 * (2.0 * self.epsilon * self.dual_value) + (1e-9 * self.initial_norm).powi(2);
        self.terminal_norm.powi(2) <= 2.0 * self.epsilon * self.dual_value + slack
    }

    pub fn summary(&self) -> ControlSummary {
        ControlSummary {
            t_final: self.time_grid.horizon(),
            cost: self.cost,
            terminal_norm: self.terminal_norm,
            initial_norm: self.initial_norm,
            epsilon: self.epsilon,
            cg_iterations: self.cg_iterations,
            cg_residual: self.cg_residual,
            dual_value: self.dual_value,
            penalty_identity_holds: self.penalty_identity_holds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlSummary {
    pub t_final: f64,
    pub cost: f64,
    pub terminal_norm: f64,
    pub initial_norm: f64,
    pub epsilon: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub dual_value: f64,
    pub penalty_identity_holds: bool,
}

/// Penalized HUM control steering `Y0` towards rest at `T`.
pub fn hum_control(y0: &CoupledState, t_final: f64, masks: &RegionMasks, alpha: f64, epsilon: f64, opts: &HumOptions) -> Result<ControlResult> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if masks.is_empty() {
        return Err(Error::InvalidArgument("control regions are empty".into()));
    }
    if !y0.in_domain() {
        return Err(Error::TraceViolation(format!("initial state violates the trace by {:e}", y0.trace_violation())));
    }
    let op = HumOperator::new(y0.grid(), masks.clone(), t_final, alpha, opts.dt)?;
    let layout = op.layout();
    let m0 = layout.to_modal(y0);
    let mut b = op.free_final(&m0);
    b.scale_mut(-1.0);
    let cg = conjugate_gradient(&op, &b, epsilon, opts)?;
    let (controls, _) = op.adjoint_observations(&cg.solution);
    let cost_sq = op.cost_squared(&controls);
    let phi_norm = layout.norm(&cg.solution);

    let grid = y0.grid();
    let mut g = vec![RectFunction::zeros(grid.clone())];
    let mut h = vec![TorusFunction::zeros(grid.torus())];
    for (a, c) in controls {
        g.push(a);
        h.push(c);
    }
    let src = SourceSpec { g: g.clone(), h: h.clone(), masks: Some(masks.clone()), ..SourceSpec::default() };
    let traj = solve_forward(y0, &src, &op.time_grid, alpha, Scheme::ImplicitEuler)?;
    let terminal = layout.norm(&layout.to_modal(traj.final_state()));
    Ok(ControlResult {
        time_grid: op.time_grid.clone(),
        g,
        h,
        cost: cost_sq.sqrt(),
        terminal_norm: terminal,
        epsilon,
        cg_iterations: cg.iterations,
        cg_residual: cg.residual,
        dual_value: 0.5 * (cost_sq + epsilon * phi_norm * phi_norm),
        adjoint_norm: phi_norm,
        initial_norm: layout.norm(&m0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub t_final: f64,
    pub alpha: f64,
    pub cost: f64,
    pub terminal_norm: f64,
    pub cg_iterations: usize,
}

impl CostRow {
    fn from(r: &ControlResult, alpha: f64) -> Self {
        Self {
            t_final: r.time_grid.horizon(),
            alpha,
            cost: r.cost,
            terminal_norm: r.terminal_norm,
            cg_iterations: r.cg_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostSweepT {
    pub rows: Vec<CostRow>,
    /// `log(cost)` against `1/T`; `None` when degenerate.
    pub fit: Option<LinearFit>,
    pub degenerate: bool,
    /// Costs never increase with `T`.
    pub nonincreasing: bool,
}

fn control_or_zero(y0: &CoupledState, t: f64, masks: &RegionMasks, alpha: f64, eps: f64, opts: &HumOptions) -> Result<CostRow> {
    let r = hum_control(y0, t, masks, alpha, eps, opts)?;
    Ok(CostRow::from(&r, alpha))
}

pub fn cost_sweep_t(y0: &CoupledState, t_list: &[f64], masks: &RegionMasks, alpha: f64, epsilon: f64, opts: &HumOptions) -> Result<CostSweepT> {
    if t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("T list must be increasing".into()));
    }
    let rows: Result<Vec<CostRow>> =
        par::map_range(t_list.len(), |i| control_or_zero(y0, t_list[i], masks, alpha, epsilon, opts)).into_iter().collect();
    let rows = rows?;
    let positive = rows.iter().all(|r| r.cost > 0.0);
    let fit = if positive {
        let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.t_final).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.cost.ln()).collect();
        linear_fit(&x, &y)
    } else {
        None
    };
    let nonincreasing = rows.windows(2).all(|w| w[1].cost <= w[0].cost * (1.0 + 1e-9) + 1e-300);
    Ok(CostSweepT { degenerate: fit.is_none(), fit, rows, nonincreasing })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaBranch {
    /// `λ_α = τα⁻²` for `α < 1`.
    Small,
    /// `λ_α = τα^{2/3}` for `α ≥ 1`.
    Large,
}

pub fn lambda_branch(alpha: f64) -> LambdaBranch {
    if alpha < 1.0 {
        LambdaBranch::Small
    } else {
        LambdaBranch::Large
    }
}

pub fn lambda_alpha(alpha: f64, tau: f64) -> f64 {
    match lambda_branch(alpha) {
        LambdaBranch::Small => tau / (alpha * alpha),
        LambdaBranch::Large => tau * alpha.powf(2.0 / 3.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaRow {
    pub row: CostRow,
    pub branch: LambdaBranch,
    pub lambda_alpha: f64,
    /// `ln` of the envelope `e^{e^{λ_α}(1+1/T)}`.
    pub log_envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostSweepAlpha {
    pub rows: Vec<AlphaRow>,
    /// The spread of `log(cost)` over the sweep is at most the spread of the
    /// log-envelope.
    pub within_envelope: bool,
}

pub fn cost_sweep_alpha(
    y0: &CoupledState,
    alpha_list: &[f64],
    t_final: f64,
    masks: &RegionMasks,
    epsilon: f64,
    tau: f64,
    opts: &HumOptions,
) -> Result<CostSweepAlpha> {
    if alpha_list.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidArgument("alpha list must be positive".into()));
    }
    let rows: Result<Vec<CostRow>> =
        par::map_range(alpha_list.len(), |i| control_or_zero(y0, t_final, masks, alpha_list[i], epsilon, opts))
            .into_iter()
            .collect();
    let rows: Vec<AlphaRow> = rows?
        .into_iter()
        .map(|row| {
            let la = lambda_alpha(row.alpha, tau);
            AlphaRow { branch: lambda_branch(row.alpha), lambda_alpha: la, log_envelope: la.exp() * (1.0 + 1.0 / t_final), row }
        })
        .collect();
    let spread = |v: Vec<f64>| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    let positive = rows.iter().all(|r| r.row.cost > 0.0);
    let within_envelope = positive
        && spread(rows.iter().map(|r| r.row.cost.ln()).collect()) <= spread(rows.iter().map(|r| r.log_envelope).collect()) + 1e-12;
    Ok(CostSweepAlpha { rows, within_envelope })
}

/// Lowest-frequency `𝓗`-orthonormal modal basis: discrete vertical sines for the
/// fluid, unit displacement and velocity for the beam, times `cos kx1`, `sin kx1`.
pub fn modal_basis(layout: &ModalLayout, size: usize) -> Result<Vec<ModalState>> {
    let n = layout.n_points();
    let total = n * layout.dim();
    if size > total {
        return Err(Error::InvalidArgument(format!("basis size {size} exceeds the discrete dimension {total}")));
    }
    // (frequency key, mode k, sine variant, component)
    let mut keys: Vec<(f64, usize, bool, usize)> = Vec::with_capacity(total);
    let pi2 = std::f64::consts::PI.powi(2);
    for k in 0..layout.n_modes() {
        let kk = (k * k) as f64;
        let variants: &[bool] = if k == 0 || 2 * k == n { &[false] } else { &[false, true] };
        for &sine in variants {
            for j in 1..layout.m {
                keys.push((kk + pi2 * (j * j) as f64, k, sine, j));
            }
            let beam = kk * kk + 1.0;
            keys.push((beam, k, sine, layout.m));
            keys.push((beam, k, sine, layout.m + 1));
        }
    }
    keys.sort_by(|a, b| a.partial_cmp(b).expect("finite keys"));
    let h = layout.h;
    Ok(keys
        .into_iter()
        .take(size)
        .map(|(_, k, sine, comp)| {
            let unit = if sine { Complex64::new(0.0, 1.0) } else { Complex64::new(1.0, 0.0) };
            let mut s = layout.zeros();
            if comp < layout.m {
                for i in 1..layout.m {
                    let x = i as f64 * h;
                    s.modes[k][i - 1] = unit * (std::f64::consts::PI * comp as f64 * x).sin();
                }
            } else if comp == layout.m {
                s.modes[k][layout.zeta_index()] = unit;
            } else {
                s.modes[k][layout.zeta_t_index()] = unit;
            }
            let nrm = layout.norm(&s);
            s.scale_mut(1.0 / nrm);
            s
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct GramianReport {
    pub dimension: usize,
    pub basis_size: usize,
    pub t_final: f64,
    pub alpha: f64,
    pub region: String,
    /// Smallest eigenvalue of the Gramian over adjoint data whose states at `T`
    /// are `𝓗`-orthonormal, i.e. of the pencil `G c = λ F c`.
    pub lambda_min: f64,
    /// `1/λ_min`; infinite when nothing is observed.
    pub k_t: f64,
    /// Smallest eigenvalue of `G` over the raw basis, from the triangular factor.
    pub gramian_lambda_min: f64,
    /// `max|G − Gᵀ|/max|G|` for `G` assembled from the normal operator.
    pub symmetry_error: f64,
    /// Smallest eigenvalue of that assembled `G`, relative to its largest.
    pub psd_defect: f64,
    /// `max|G_Λ − RᵀR|/max|G|`: normal operator against the factored Gramian.
    pub consistency_error: f64,
    pub iterations: usize,
    /// Relative gap between inverse iteration and the dense eigen solver.
    pub crosscheck_rel: f64,
    #[serde(skip)]
    pub gramian: DMatrix<f64>,
    /// Unit worst-case initial datum, the state at `T` of the extremal adjoint datum.
    #[serde(skip)]
    pub worst_case: Option<CoupledState>,
}

/// Memory budget for Gramian assembly, in bytes.
pub const GRAMIAN_MEMORY_BUDGET: usize = 1 << 31;

/// Square-root weights of the observed nodes, so that `Σ (√q·v)² = ‖B*V‖²`.
fn observed_nodes(grid: &RectGrid, masks: &RegionMasks) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let q = grid.vertical_weights();
    let dx = grid.torus().spacing();
    let m = grid.n_layers();
    let omega = masks.omega.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i, (q[i % m] * dx).sqrt())).collect();
    let j = masks.j.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i, dx.sqrt())).collect();
    (omega, j)
}

/// Observability Gramian on the lowest `basis_size` modes.
///
/// The observation rows `√dt·B*(R*)^m e_i` of every step are folded into a
/// triangular factor `R` with `RᵀR = G` by successive QR, which keeps the tiny
/// eigenvalues of `G` that forming `G` directly would lose to rounding.
pub fn observability_gramian(grid: &RectGrid, t_final: f64, masks: &RegionMasks, alpha: f64, basis_size: usize, dt: f64) -> Result<GramianReport> {
    let op = HumOperator::new(grid, masks.clone(), t_final, alpha, dt)?;
    let layout = op.layout();
    let (omega_nodes, j_nodes) = observed_nodes(grid, masks);
    let n_obs = omega_nodes.len() + j_nodes.len();
    let state_bytes = layout.n_modes() * layout.dim() * 16;
    let need = basis_size * (2 * state_bytes + 4 * basis_size * 8) + (n_obs + basis_size) * basis_size * 8;
    if need > GRAMIAN_MEMORY_BUDGET {
        return Err(Error::ResourceLimit(format!("basis of size {basis_size} needs about {need} bytes")));
    }
    let basis = modal_basis(layout, basis_size)?;
    let bs = basis_size;

    // Route 1: observation rows folded into a triangular factor.
    let mut states = basis.clone();
    let mut r = DMatrix::<f64>::zeros(0, bs);
    let sdt = op.dt().sqrt();
    for _ in 0..op.n_steps() {
        let cols: Vec<Vec<f64>> = par::map_range(bs, |i| {
            let mut s = states[i].clone();
            op.stepper.step_adjoint(&mut s);
            let (u, v) = op.observe(&s);
            omega_nodes
                .iter()
                .map(|&(idx, q)| sdt * q * u.values[idx])
                .chain(j_nodes.iter().map(|&(idx, q)| sdt * q * v.values[idx]))
                .collect()
        });
        par::for_each_mut(&mut states, |_, s| op.stepper.step_adjoint(s));
        let rows = r.nrows();
        let mut stacked = DMatrix::<f64>::zeros(rows + n_obs, bs);
        stacked.rows_mut(0, rows).copy_from(&r);
        for (c, col) in cols.iter().enumerate() {
            for (k, &v) in col.iter().enumerate() {
                stacked[(rows + k, c)] = v;
            }
        }
        r = if stacked.nrows() == 0 { stacked } else { stacked.qr().r() };
    }
    if r.nrows() < bs {
        let mut sq = DMatrix::<f64>::zeros(bs, bs);
        sq.rows_mut(0, r.nrows()).copy_from(&r);
        r = sq;
    }
    let finals = states;
    let f = DMatrix::from_fn(bs, bs, |a, b| layout.inner(&finals[a], &finals[b]));

    // Route 2: the Gramian assembled from the normal operator.
    let g_cols: Vec<Vec<f64>> = par::map_range(bs, |i| {
        let lam = op.normal(&basis[i]);
        basis.iter().map(|e| layout.inner(&lam, e)).collect()
    });
    let g = DMatrix::from_fn(bs, bs, |a, b| g_cols[b][a]);
    let scale = g.amax().max(1e-300);
    let symmetry_error = (&g - g.transpose()).amax() / scale;
    let gs = (&g + g.transpose()) * 0.5;
    let psd_defect = (-SymmetricEigen::new(gs.clone()).eigenvalues.min()).max(0.0) / scale;
    let consistency_error = (&gs - r.transpose() * &r).amax() / scale;

    let sv = r.clone().singular_values();
    let sigma_min = sv.min();
    let region = format!(
        "omega nodes {}, J nodes {}",
        omega_nodes.len(),
        j_nodes.len()
    );
    let mut report = GramianReport {
        dimension: layout.n_points() * layout.dim(),
        basis_size: bs,
        t_final,
        alpha,
        region,
        lambda_min: 0.0,
        k_t: f64::INFINITY,
        gramian_lambda_min: sigma_min * sigma_min,
        symmetry_error,
        psd_defect,
        consistency_error,
        iterations: 0,
        crosscheck_rel: 0.0,
        gramian: gs,
        worst_case: None,
    };
    if !(sigma_min > 1e-14 * sv.max()) {
        return Ok(report);
    }

    // Inverse iteration for the smallest λ of (G, F): power iteration on G⁻¹F.
    let solve_g = |b: &DVector<f64>| -> DVector<f64> {
        let y = r.tr_solve_upper_triangular(b).expect("nonsingular factor");
        r.solve_upper_triangular(&y).expect("nonsingular factor")
    };
    let mut x = DVector::from_element(bs, 1.0);
    let mut k_est = 0.0;
    let mut iterations = 0;
    for it in 1..=20_000 {
        let y = solve_g(&(&f * &x));
        let k_new = (&f * &y).dot(&y) / (&r * &y).norm_squared();
        x = &y / y.norm();
        iterations = it;
        let done = (k_new - k_est).abs() <= 1e-13 * k_new.abs();
        k_est = k_new;
        if done {
            break;
        }
    }
    // Dense route: top eigenvalue of R⁻ᵀ F R⁻¹.
    let rinv = r.clone().try_inverse().expect("nonsingular factor");
    let c = rinv.transpose() * &f * &rinv;
    let k_dense = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.max();

    let mut fin = layout.zeros();
    for (i, e) in finals.iter().enumerate() {
        fin.axpy(x[i], e);
    }
    let nrm = layout.norm(&fin);
    if nrm > 0.0 {
        fin.scale_mut(1.0 / nrm);
        report.worst_case = Some(layout.from_modal(&fin, true));
    }
    report.lambda_min = 1.0 / k_est;
    report.k_t = k_est;
    report.iterations = iterations;
    report.crosscheck_rel = (k_est - k_dense).abs() / k_dense.abs().max(1e-300);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityCheck {
    pub cost_squared: f64,
    pub k_t: f64,
    pub ratio: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// HUM cost² for the worst-case unit datum against `K_T`.
pub fn duality_check(report: &GramianReport, masks: &RegionMasks, epsilon: f64, tolerance: f64, opts: &HumOptions) -> Result<DualityCheck> {
    let y0 = report
        .worst_case
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("Gramian is singular; no worst-case datum".into()))?;
    let r = hum_control(y0, report.t_final, masks, report.alpha, epsilon, opts)?;
    let cs = r.cost * r.cost;
    Ok(DualityCheck {
        cost_squared: cs,
        k_t: report.k_t,
        ratio: cs / report.k_t,
        tolerance,
        holds: cs <= report.k_t * (1.0 + tolerance),
    })
}

/// Adjoint sample trajectories from random smooth data.
pub fn adjoint_samples<R: Rng>(grid: &RectGrid, tg: &TimeGrid, alpha: f64, n: usize, max_mode: usize, rng: &mut R) -> Result<Vec<Trajectory>> {
    let data: Vec<CoupledState> = (0..n).map(|_| crate::operators::random_state(grid, max_mode, rng)).collect();
    par::map_range(n, |i| solve_adjoint(&data[i], tg, alpha, Scheme::ImplicitEuler)).into_iter().collect()
}

fn masked_norm_sq_rect(u: &RectFunction, mask: &[bool]) -> f64 {
    let mut m = u.clone();
    for (v, &on) in m.values.iter_mut().zip(mask) {
        if !on {
            *v = 0.0;
        }
    }
    m.dot(&m)
}

fn masked_norm_sq_torus(u: &TorusFunction, mask: &[bool]) -> f64 {
    let mut m = u.clone();
    for (v, &on) in m.values.iter_mut().zip(mask) {
        if !on {
            *v = 0.0;
        }
    }
    m.dot(&m)
}

/// Terms of the `∂tη`-observation inequality for one adjoint trajectory.
pub fn dteta_terms(traj: &Trajectory, wf: &WeightFamily, masks: &RegionMasks) -> Result<SampleTerms> {
    let p = &wf.params;
    let tg = &traj.time_grid;
    if (tg.horizon() - p.t_final).abs() > 1e-12 * p.t_final {
        return Err(Error::DimensionMismatch(format!("trajectory horizon {} differs from T = {}", tg.horizon(), p.t_final)));
    }
    let (s, la, a) = (p.s, p.lambda, p.alpha);
    let (ls, ll) = (s.ln(), la.ln());
    let c1 = a.powi(-4) + a.powi(16);
    let c2 = a.powi(-8) + a.powi(10);
    let wts = tg.weights();
    let mut sums = [0.0; 5];
    let mut saturated = false;
    for (n, (&t, state)) in tg.nodes().iter().zip(&traj.states).enumerate() {
        if !(t > 0.0 && t < p.t_final) {
            continue;
        }
        let w = wf.eval(t, 0.0, 0.0)?;
        let mut factor = |ln: f64| {
            let (v, sat) = clamp_exp(ln);
            saturated |= sat;
            v
        };
        let lhs_w = factor(3.0 * ls + 2.0 * ll + 3.0 * w.xi1.ln() + 2.0 * s * w.phi1);
        let rhs1_w = factor(11.0 * ls + 4.0 * ll + 11.0 * w.xi2.ln() + 4.0 * s * w.phi2 - 2.0 * s * w.phi1);
        let rhs2_w = factor(7.0 * ls + 8.0 * ll + 7.0 * w.xi2.ln() + 2.0 * s * w.phi2);
        let eta = &state.zeta;
        let d1 = crate::grid::spectral_derivative(eta, 1)?;
        let d2 = crate::grid::spectral_derivative(eta, 2)?;
        let h2 = eta.dot(eta) + d1.dot(&d1) + d2.dot(&d2);
        let q = wts[n];
        sums[0] += q * lhs_w * state.w.dot(&state.w);
        sums[1] += q * lhs_w * h2;
        sums[2] += q * lhs_w * state.zeta_t.dot(&state.zeta_t);
        sums[3] += q * c1 * rhs1_w * masked_norm_sq_rect(&state.w, &masks.omega);
        sums[4] += q * c2 * rhs2_w * masked_norm_sq_torus(&state.zeta_t, &masks.j);
    }
    Ok(SampleTerms {
        lhs: vec![Term::new("u", sums[0]), Term::new("eta_H2", sums[1]), Term::new("eta_t", sums[2])],
        rhs: vec![Term::new("omega_u", sums[3]), Term::new("J_eta_t", sums[4])],
        saturated,
    })
}

/// Weighted `L²` energy of `(u, η, ∂tη)` against the `ω` and `J` observations.
pub fn check_dteta_inequality(samples: &[Trajectory], wf: &WeightFamily, masks: &RegionMasks) -> Result<FunctionalReport> {
    let terms: Result<Vec<SampleTerms>> = par::map_range(samples.len(), |i| dteta_terms(&samples[i], wf, masks)).into_iter().collect();
    Ok(FunctionalReport::from_samples("dteta-observation", Some(wf.params.clone()), terms?))
}

/// Convenience: ratio of a single trajectory.
pub fn dteta_ratio(traj: &Trajectory, wf: &WeightFamily, masks: &RegionMasks) -> Result<f64> {
    let t = dteta_terms(traj, wf, masks)?;
    Ok(ratio(t.lhs_total(), t.rhs_total()))
}
