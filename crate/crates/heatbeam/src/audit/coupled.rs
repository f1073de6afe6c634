//! The coupled functional `H(s, λ, u) + B_α(s, μ, η)` against the two
//! observations and the two equation residuals, on simulated adjoint
//! trajectories.
//!
//! An adjoint state `(u, η₁, η₂)` is read with `η = −η₁`, so `∂tη = η₂ = u` on
//! `Γ₁` and the beam residual is `∂²tη − α∂t∂²x1η + α∂tη + ∂⁴x1η + η + ∂nu`.

use rand::Rng;
use serde::Serialize;

use super::beam::ProtocolOutcome;
use crate::control::adjoint_samples;
use crate::error::{Error, Result};
use crate::grid::{spectral_derivative_raw, vertical_derivative, RectGrid, TimeGrid};
use crate::operators::{normal_derivative, RegionMasks};
use crate::par;
use crate::report::{calibrate_then_verify, CalibrateVerify, FunctionalReport, SampleTerms, Term};
use crate::simulator::Trajectory;
use crate::weights::WeightFamily;

pub const DEFAULT_COUPLED_MODES: usize = 6;

/// Weight values on the fluid and beam nodes for every time node used.
struct CoupledWeights {
    /// Time node indices with `0 < t < T`.
    steps: Vec<usize>,
    l: Vec<f64>,
    q: Vec<f64>,
    /// `(F, e^{A})` per fluid node, row-major like `RectFunction`.
    rect: Vec<(f64, f64)>,
    /// `(F₀, e^{A₀})` per beam node.
    torus: Vec<(f64, f64)>,
    shift: f64,
}

impl CoupledWeights {
    fn new(wf: &WeightFamily, grid: &RectGrid, tg: &TimeGrid) -> Result<Self> {
        let t_final = wf.params.t_final;
        if (tg.horizon() - t_final).abs() > 1e-12 * t_final {
            return Err(Error::DimensionMismatch(format!("trajectory horizon {} differs from T = {t_final}", tg.horizon())));
        }
        let wts = tg.weights();
        let (mut steps, mut l, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for (n, &t) in tg.nodes().iter().enumerate() {
            if n > 0 && t > 0.0 && t < t_final {
                steps.push(n);
                l.push(wf.time_jet(t)?.l[0]);
                q.push(wts[n]);
            }
        }
        let x1 = grid.torus().nodes();
        let mut rect = Vec::with_capacity(grid.len());
        for &a in &x1 {
            for &b in grid.vertical_nodes() {
                let rf = wf.rect_factor(a, b);
                rect.push((rf.f, rf.e));
            }
        }
        let torus: Vec<(f64, f64)> = x1
            .iter()
            .map(|&a| {
                let e = wf.exponent0(a).exp();
                (e - (10.0 * wf.params.lambda * wf.spatial.big_psi).exp(), e)
            })
            .collect();
        let f_max = rect.iter().chain(&torus).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let l_min = l.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { steps, l, q, rect, torus, shift: wf.params.s * f_max * l_min })
    }
}

fn coupled_terms(traj: &Trajectory, wf: &WeightFamily, masks: &RegionMasks, w: &CoupledWeights, with_j: bool) -> Result<SampleTerms> {
    let p = &wf.params;
    let (s, la, mu, alpha) = (p.s, p.lambda, p.mu, p.alpha);
    let a2 = alpha * alpha;
    let grid = traj.states[0].w.grid.clone();
    let (n1, m) = (grid.torus().n_points(), grid.n_layers());
    let dx = grid.torus().spacing();
    let vq = grid.vertical_weights();
    let tnodes = traj.time_grid.nodes();
    // 0..5: H volume and boundary; 5..14: B_α; 14..18: RHS
    let mut acc = [0.0; 18];
    for (k, &n) in w.steps.iter().enumerate() {
        let (l, q) = (w.l[k], w.q[k]);
        let dt = tnodes[n] - tnodes[n - 1];
        let (cur, prev) = (&traj.states[n], &traj.states[n - 1]);
        let u = &cur.w;
        let u2 = vertical_derivative(u, 1)?;
        let u22 = vertical_derivative(u, 2)?;
        let mut u1 = vec![0.0; grid.len()];
        let mut u11 = vec![0.0; grid.len()];
        for j in 0..m {
            let layer = u.layer(j).values;
            let (d1, d2) = (spectral_derivative_raw(&layer, 1), spectral_derivative_raw(&layer, 2));
            for i in 0..n1 {
                u1[grid.index(i, j)] = d1[i];
                u11[grid.index(i, j)] = d2[i];
            }
        }
        for idx in 0..grid.len() {
            let (f, ea) = w.rect[idx];
            let xi = ea * l;
            let e = (2.0 * (s * f * l - w.shift)).exp() * vq[idx % m] * dx * q;
            let ut = (u.values[idx] - prev.w.values[idx]) / dt;
            let lap = u11[idx] + u22.values[idx];
            let uu = u.values[idx] * u.values[idx];
            acc[0] += e / xi * (ut * ut + lap * lap);
            acc[1] += e * xi * (u1[idx] * u1[idx] + u2.values[idx] * u2.values[idx]);
            acc[2] += e * xi.powi(3) * uu;
            acc[16] += e * (ut - lap) * (ut - lap);
            if masks.omega[idx] {
                acc[14] += e * xi.powi(3) * uu;
            }
        }

        let eta: Vec<f64> = cur.zeta.values.iter().map(|v| -v).collect();
        let eta_t = &cur.zeta_t.values;
        let eta_tt: Vec<f64> = eta_t.iter().zip(&prev.zeta_t.values).map(|(a, b)| (a - b) / dt).collect();
        let d = |f: &[f64], o: u32| spectral_derivative_raw(f, o);
        let (ex, exx, exxx, exxxx) = (d(&eta, 1), d(&eta, 2), d(&eta, 3), d(&eta, 4));
        let (etx, etxx) = (d(eta_t, 1), d(eta_t, 2));
        let dn_top = normal_derivative(u)?.values;
        for i in 0..n1 {
            let (f0, e0) = w.torus[i];
            let xi0 = e0 * l;
            let e = (2.0 * (s * f0 * l - w.shift)).exp() * dx * q;
            // Σ = Γ₀ ∪ Γ₁; ∂n = −∂x2 on Γ₀
            for (j, dn) in [(0, -u2.get(i, 0)), (m - 1, dn_top[i])] {
                let ub = u.get(i, j);
                acc[3] += 2.0 * s.powi(3) * la.powi(3) * e * xi0.powi(3) * ub * ub;
                acc[4] += 2.0 * s * la * e * xi0 * dn * dn;
            }
            let sq = |v: f64| v * v;
            acc[5] += e * xi0.powi(7) * sq(eta[i]);
            acc[6] += e * xi0.powi(5) * sq(ex[i]);
            acc[7] += e * xi0.powi(3) * sq(exx[i]);
            acc[8] += e * xi0.powi(3) * sq(eta_t[i]);
            acc[9] += e * xi0 * sq(exxx[i]);
            acc[10] += e * xi0 * sq(etx[i]);
            acc[11] += e / xi0 * sq(exxxx[i]);
            acc[12] += e / xi0 * sq(eta_tt[i]);
            acc[13] += e / xi0 * sq(etxx[i]);
            if masks.j[i] {
                acc[15] += e * xi0.powi(7) * sq(eta[i]);
            }
            let r = eta_tt[i] - alpha * etxx[i] + alpha * eta_t[i] + exxxx[i] + eta[i] + dn_top[i];
            acc[17] += e * r * r;
        }
    }
    let c = a2 / (1.0 + a2) / s;
    let lhs = vec![
        Term::new("H: s^-1 xi^-1 (|u_t|^2 + |lap u|^2)", acc[0] / s),
        Term::new("H: s l2 xi |grad u|^2", s * la * la * acc[1]),
        Term::new("H: s3 l4 xi^3 |u|^2", s.powi(3) * la.powi(4) * acc[2]),
        Term::new("H: 2 s3 l3 Sigma xi0^3 |u|^2", acc[3]),
        Term::new("H: 2 s l Sigma xi0 |dn u|^2", acc[4]),
        Term::new("B: s7 mu8 xi0^7 |eta|^2", s.powi(7) * mu.powi(8) * acc[5]),
        Term::new("B: s5 mu6 xi0^5 |eta_x|^2", s.powi(5) * mu.powi(6) * acc[6]),
        Term::new("B: s3 mu4 xi0^3 |eta_xx|^2", s.powi(3) * mu.powi(4) * acc[7]),
        Term::new("B: (1+a2) s3 mu4 xi0^3 |eta_t|^2", (1.0 + a2) * s.powi(3) * mu.powi(4) * acc[8]),
        Term::new("B: s mu2 xi0 |eta_xxx|^2", s * mu * mu * acc[9]),
        Term::new("B: (1+a2) s mu2 xi0 |eta_tx|^2", (1.0 + a2) * s * mu * mu * acc[10]),
        Term::new("B: s^-1 xi0^-1 |eta_xxxx|^2", c * acc[11]),
        Term::new("B: s^-1 xi0^-1 |eta_tt|^2", c * acc[12]),
        Term::new("B: s^-1 xi0^-1 |eta_txx|^2", a2 / s * acc[13]),
    ];
    let mut rhs = vec![
        Term::new("omega: s3 l4 xi^3 |u|^2", s.powi(3) * la.powi(4) * acc[14]),
        Term::new("heat residual", acc[16]),
        Term::new("beam residual", acc[17]),
    ];
    if with_j {
        let cj = alpha.powi(-8) + alpha.powi(4);
        rhs.insert(1, Term::new("J: (a^-8 + a^4) s7 mu8 xi0^7 |eta|^2", cj * s.powi(7) * mu.powi(8) * acc[15]));
    }
    let saturated = lhs.iter().chain(&rhs).any(|t| !t.value.is_finite());
    Ok(SampleTerms { lhs, rhs, saturated })
}

/// Evaluates the coupled functional on adjoint trajectories. `with_j = false`
/// drops the beam observation from the right-hand side.
pub fn coupled_inequality_check(trajectories: &[Trajectory], wf: &WeightFamily, masks: &RegionMasks, with_j: bool) -> Result<FunctionalReport> {
    let p = &wf.params;
    if !(p.alpha > 0.0) || !p.admissibility.theorem_1_4_admissible {
        let v = p.admissibility.violated().join(", ");
        return Err(Error::Inadmissible(format!("coupled estimate needs alpha > 0 and admissible parameters ({v})")));
    }
    let Some(first) = trajectories.first() else {
        return Ok(FunctionalReport::from_samples("theorem-1.4", Some(p.clone()), vec![]));
    };
    let grid = first.states[0].w.grid.clone();
    let w = CoupledWeights::new(wf, &grid, &first.time_grid)?;
    for t in trajectories {
        if t.time_grid != first.time_grid || t.states[0].w.grid != grid {
            return Err(Error::DimensionMismatch("trajectories use different grids".into()));
        }
    }
    let terms: Vec<SampleTerms> = par::map_range(trajectories.len(), |i| coupled_terms(&trajectories[i], wf, masks, &w, with_j))
        .into_iter()
        .collect::<Result<_>>()?;
    let name = if with_j { "theorem-1.4" } else { "theorem-1.4-without-J" };
    Ok(FunctionalReport::from_samples(name, Some(p.clone()), terms))
}

/// Fresh samples checked against the constant calibrated with the full right-hand side.
#[derive(Clone, Debug, Serialize)]
pub struct Ablation {
    pub alpha: f64,
    pub constant: f64,
    pub ablated: FunctionalReport,
    pub verdict: CalibrateVerify,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledProtocol {
    pub outcome: ProtocolOutcome,
    pub ablation: Option<Ablation>,
}

/// Calibrate-then-verify on adjoint trajectories; with `ablate`, the fresh set is
/// also scored without the `J` observation against the same constant.
#[allow(clippy::too_many_arguments)]
pub fn coupled_protocol<R: Rng>(
    wf: &WeightFamily,
    grid: &RectGrid,
    masks: &RegionMasks,
    n_steps: usize,
    n_cal: usize,
    n_fresh: usize,
    margin: f64,
    ablate: bool,
    rng: &mut R,
) -> Result<CoupledProtocol> {
    let p = &wf.params;
    let tg = TimeGrid::uniform(p.t_final, n_steps)?;
    let cal = adjoint_samples(grid, &tg, p.alpha, n_cal, DEFAULT_COUPLED_MODES, rng)?;
    let fresh = adjoint_samples(grid, &tg, p.alpha, n_fresh, DEFAULT_COUPLED_MODES, rng)?;
    let c = coupled_inequality_check(&cal, wf, masks, true)?;
    let f = coupled_inequality_check(&fresh, wf, masks, true)?;
    let verdict = calibrate_then_verify(&c.sample_ratios, &f.sample_ratios, margin);
    let ablation = if ablate {
        let a = coupled_inequality_check(&fresh, wf, masks, false)?;
        let v = calibrate_then_verify(&c.sample_ratios, &a.sample_ratios, margin);
        Some(Ablation { alpha: p.alpha, constant: v.constant, ablated: a, verdict: v })
    } else {
        None
    };
    let outcome = ProtocolOutcome { name: "theorem-1.4".into(), alpha: p.alpha, calibration: c, fresh: f, verdict };
    Ok(CoupledProtocol { outcome, ablation })
}
