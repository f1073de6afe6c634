//! Monolithic time stepping of the coupled heat / damped-beam system, per
//! Fourier mode, with implicit Euler or Crank–Nicolson.

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RectFunction, RectGrid, TimeGrid, TorusFunction};
use crate::modal::{ModalLayout, ModalState};
use crate::operators::{apply_generator, h_norm, random_state, CoupledState, RegionMasks};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit-euler" | "ie" => Ok(Scheme::ImplicitEuler),
            "crank-nicolson" | "cn" => Ok(Scheme::CrankNicolson),
            _ => Err(Error::Config(format!("unknown scheme '{s}' (implicit-euler | crank-nicolson)"))),
        }
    }
}

/// Time-indexed sources. Empty vectors mean zero; otherwise one entry per time node.
#[derive(Clone, Debug, Default)]
pub struct SourceSpec {
    /// `G` in the fluid equation.
    pub fluid: Vec<RectFunction>,
    /// `H` in the beam equation.
    pub beam: Vec<TorusFunction>,
    /// Control `g`, applied through `1_ω`.
    pub g: Vec<RectFunction>,
    /// Control `h`, applied through `1_J`.
    pub h: Vec<TorusFunction>,
    pub masks: Option<RegionMasks>,
}

impl SourceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.fluid.is_empty() && self.beam.is_empty() && self.g.is_empty() && self.h.is_empty()
    }

    fn validate(&self, n_nodes: usize) -> Result<()> {
        for (name, len) in [("fluid", self.fluid.len()), ("beam", self.beam.len()), ("g", self.g.len()), ("h", self.h.len())] {
            if len != 0 && len != n_nodes {
                return Err(Error::DimensionMismatch(format!("source '{name}' has {len} entries for {n_nodes} time nodes")));
            }
        }
        if (!self.g.is_empty() || !self.h.is_empty()) && self.masks.is_none() {
            return Err(Error::InvalidArgument("controls need region masks".into()));
        }
        Ok(())
    }

    fn at(&self, layout: &ModalLayout, n: usize) -> Option<ModalState> {
        if self.is_zero() {
            return None;
        }
        let grid = &layout.grid;
        let mut g = self.fluid.get(n).cloned().unwrap_or_else(|| RectFunction::zeros(grid.clone()));
        let mut hb = self.beam.get(n).cloned().unwrap_or_else(|| TorusFunction::zeros(grid.torus()));
        if let Some(masks) = &self.masks {
            if let Some(gc) = self.g.get(n) {
                for ((v, c), &on) in g.values.iter_mut().zip(&gc.values).zip(&masks.omega) {
                    if on {
                        *v += c;
                    }
                }
            }
            if let Some(hc) = self.h.get(n) {
                for ((v, c), &on) in hb.values.iter_mut().zip(&hc.values).zip(&masks.j) {
                    if on {
                        *v += c;
                    }
                }
            }
        }
        Some(layout.forcing(&g, &hb))
    }
}

/// Per-mode factored step `(I − θ dt L) y⁺ = (I + (1−θ) dt L) y + dt(θ f⁺ + (1−θ) f)`.
pub struct Stepper {
    pub layout: ModalLayout,
    pub dt: f64,
    pub scheme: Scheme,
    pub alpha: f64,
    lus: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    explicit: Vec<DMatrix<f64>>,
}

impl Stepper {
    pub fn new(grid: &RectGrid, dt: f64, alpha: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        if grid.n_layers() < 5 {
            return Err(Error::GridTooCoarse(format!("simulator needs >= 5 layers, got {}", grid.n_layers())));
        }
        let layout = ModalLayout::new(grid);
        let th = scheme.theta();
        let blocks: Vec<(usize, Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>, DMatrix<f64>)> =
            par::map_range(layout.n_modes(), |k| {
                let l = layout.generator_block(k, alpha);
                let eye = DMatrix::<f64>::identity(layout.dim(), layout.dim());
                let lu = (&eye - &l * (th * dt)).lu();
                let ok = lu.is_invertible();
                (k, ok.then_some(lu), &eye + &l * ((1.0 - th) * dt))
            });
        let mut lus = Vec::with_capacity(blocks.len());
        let mut explicit = Vec::with_capacity(blocks.len());
        for (k, lu, e) in blocks {
            lus.push(lu.ok_or(Error::SingularStep { mode: k })?);
            explicit.push(e);
        }
        Ok(Self { layout, dt, scheme, alpha, lus, explicit })
    }

    /// One step; `f_old`/`f_new` are the rate-form sources at the two ends of the step.
    pub fn step(&self, y: &mut ModalState, f_old: Option<&ModalState>, f_new: Option<&ModalState>) {
        let th = self.scheme.theta();
        let dt = self.dt;
        par::for_each_mut(&mut y.modes, |k, v| {
            let mut rhs: DVector<Complex64> = if th < 1.0 {
                self.explicit[k].map(|x| Complex64::new(x, 0.0)) * &*v
            } else {
                v.clone()
            };
            if let Some(f) = f_new {
                rhs.axpy(Complex64::new(dt * th, 0.0), &f.modes[k], Complex64::new(1.0, 0.0));
            }
            if th < 1.0 {
                if let Some(f) = f_old {
                    rhs.axpy(Complex64::new(dt * (1.0 - th), 0.0), &f.modes[k], Complex64::new(1.0, 0.0));
                }
            }
            let re = self.lus[k].solve(&rhs.map(|c| c.re)).expect("invertible step matrix");
            let im = self.lus[k].solve(&rhs.map(|c| c.im)).expect("invertible step matrix");
            for i in 0..v.len() {
                v[i] = Complex64::new(re[i], im[i]);
            }
        });
    }

    /// Adjoint step `y ← S R S y`, the `𝓗`-transpose of a homogeneous step.
    pub fn step_adjoint(&self, y: &mut ModalState) {
        let zi = self.layout.zeta_index();
        y.flip_displacement(zi);
        self.step(y, None, None);
        y.flip_displacement(zi);
    }
}

/// One line of the energy ledger (for the step ending at `t`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyEntry {
    pub t: f64,
    pub energy: f64,
    /// `‖∇w‖²` (discrete).
    pub grad_dissipation: f64,
    /// `α(‖∂x1ζt‖² + ‖ζt‖²)`.
    pub alpha_dissipation: f64,
    /// Scheme dissipation `‖y⁺ − y‖²/(2dt)` (zero for Crank–Nicolson).
    pub numerical_dissipation: f64,
    /// `(E⁺ − E)/dt + grad + alpha + numerical`; zero up to rounding.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub time_grid: TimeGrid,
    pub states: Vec<CoupledState>,
    pub scheme: Scheme,
    /// Filled for source-free runs.
    pub ledger: Vec<EnergyEntry>,
}

impl Trajectory {
    pub fn final_state(&self) -> &CoupledState {
        self.states.last().expect("nonempty trajectory")
    }
}

pub(crate) fn uniform_dt(tg: &TimeGrid) -> Result<f64> {
    if tg.is_interior_only() || tg.len() < 2 {
        return Err(Error::InvalidArgument("time stepping needs a uniform grid including both endpoints".into()));
    }
    let dt = tg.horizon() / tg.n_steps() as f64;
    for w in tg.nodes().windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidArgument("time stepping needs uniformly spaced nodes".into()));
        }
    }
    Ok(dt)
}

/// Forward solve of the controlled system from `Y0`.
pub fn solve_forward(y0: &CoupledState, src: &SourceSpec, tg: &TimeGrid, alpha: f64, scheme: Scheme) -> Result<Trajectory> {
    let dt = uniform_dt(tg)?;
    if !y0.in_domain() {
        return Err(Error::TraceViolation(format!("initial state violates the trace by {:e}", y0.trace_violation())));
    }
    src.validate(tg.len())?;
    let stepper = Stepper::new(y0.grid(), dt, alpha, scheme)?;
    let layout = &stepper.layout;
    let mut y = layout.to_modal(y0);
    let mut states = Vec::with_capacity(tg.len());
    states.push(y0.clone());
    let mut f_old = src.at(layout, 0);
    let mut ledger = Vec::new();
    let free = src.is_zero();
    for n in 1..tg.len() {
        let f_new = src.at(layout, n);
        let prev = free.then(|| y.clone());
        stepper.step(&mut y, f_old.as_ref(), f_new.as_ref());
        if let Some(p) = prev {
            ledger.push(ledger_entry(&stepper, &p, &y, tg.nodes()[n]));
        }
        states.push(layout.from_modal(&y, true));
        f_old = f_new;
    }
    Ok(Trajectory { time_grid: tg.clone(), states, scheme, ledger })
}

/// Free adjoint evolution `dV/dt = 𝒜*V` from `V0`, through `S ∘ forward ∘ S`.
pub fn solve_adjoint(v0: &CoupledState, tg: &TimeGrid, alpha: f64, scheme: Scheme) -> Result<Trajectory> {
    let mut t = solve_forward(&v0.flip_displacement(), &SourceSpec::none(), tg, alpha, scheme)?;
    for s in &mut t.states {
        *s = s.flip_displacement();
    }
    Ok(t)
}

/// `(grad, alpha)` dissipation `−⟨L y, y⟩_𝓗` split into its two parts.
fn dissipation(layout: &ModalLayout, y: &ModalState, alpha: f64) -> (f64, f64) {
    let (m, h) = (layout.m, layout.h);
    let zti = layout.zeta_t_index();
    let (mut grad, mut damp) = (0.0, 0.0);
    for (k, v) in y.modes.iter().enumerate() {
        let kk = (k * k) as f64;
        let wk = layout.mode_weight(k);
        let at = |j: usize| -> Complex64 {
            match j {
                0 => Complex64::new(0.0, 0.0),
                j if j == m => v[zti],
                j => v[j - 1],
            }
        };
        let mut g = 0.0;
        let mut mass = 0.0;
        for j in 0..m {
            g += (at(j + 1) - at(j)).norm_sqr() / h;
            mass += if j == 0 { 0.0 } else { h * at(j).norm_sqr() };
        }
        mass += 0.5 * h * v[zti].norm_sqr();
        grad += wk * (g + kk * mass);
        damp += wk * alpha * (kk + 1.0) * v[zti].norm_sqr();
    }
    (grad, damp)
}

fn ledger_entry(stepper: &Stepper, prev: &ModalState, next: &ModalState, t: f64) -> EnergyEntry {
    let layout = &stepper.layout;
    let dt = stepper.dt;
    let e0 = 0.5 * layout.inner(prev, prev);
    let e1 = 0.5 * layout.inner(next, next);
    let (eval, numerical) = match stepper.scheme {
        Scheme::ImplicitEuler => {
            let mut d = next.clone();
            d.axpy(-1.0, prev);
            (next.clone(), 0.5 * layout.inner(&d, &d) / dt)
        }
        Scheme::CrankNicolson => {
            let mut mid = next.clone();
            mid.axpy(1.0, prev);
            mid.scale_mut(0.5);
            (mid, 0.0)
        }
    };
    let (grad, damp) = dissipation(layout, &eval, stepper.alpha);
    EnergyEntry {
        t,
        energy: e1,
        grad_dissipation: grad,
        alpha_dissipation: damp,
        numerical_dissipation: numerical,
        residual: (e1 - e0) / dt + grad + damp + numerical,
    }
}

/// Energy ledger of a source-free trajectory, recomputed from its snapshots.
pub fn energy_audit(traj: &Trajectory, alpha: f64) -> Result<Vec<EnergyEntry>> {
    let dt = uniform_dt(&traj.time_grid)?;
    let grid = traj.states[0].grid();
    let stepper = Stepper::new(grid, dt, alpha, traj.scheme)?;
    let layout = &stepper.layout;
    let modal: Vec<ModalState> = traj.states.iter().map(|s| layout.to_modal(s)).collect();
    Ok((1..modal.len()).map(|n| ledger_entry(&stepper, &modal[n - 1], &modal[n], traj.time_grid.nodes()[n])).collect())
}

/// `min (1+α)‖𝒜Y‖_𝓗/‖Y‖_𝓗` over random smooth admissible states.
pub fn check_resolvent_bound<R: Rng>(grid: &RectGrid, alpha: f64, n_samples: usize, max_mode: usize, rng: &mut R) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..n_samples {
        let y = random_state(grid, max_mode, rng);
        let ay = apply_generator(&y, alpha)?;
        best = best.min((1.0 + alpha) * h_norm(&ay) / h_norm(&y));
    }
    Ok(best)
}

/// Exact `min (1+α)‖𝒜Y‖/‖Y‖` over states of a single Fourier mode, from the
/// smallest singular value of the weighted mode block.
pub fn single_mode_resolvent(grid: &RectGrid, alpha: f64, k: usize) -> f64 {
    let layout = ModalLayout::new(grid);
    let l = layout.generator_block(k, alpha);
    let w = layout.h_weights(k);
    let mut out_w = w.clone();
    out_w[layout.zeta_t_index()] = 1.0;
    let d = layout.dim();
    let mut p = l.clone();
    for c in 0..d {
        p[(layout.zeta_t_index(), c)] *= layout.lumped_mass();
    }
    let mut a = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            a[(r, c)] = out_w[r].sqrt() * p[(r, c)] / w[c].sqrt();
        }
    }
    let sv = a.singular_values();
    (1.0 + alpha) * sv.iter().cloned().fold(f64::INFINITY, f64::min)
}
