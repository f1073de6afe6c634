//! Weighted beam functionals: the undamped estimate (α ≥ 0, high-order
//! observation on J), the damped one (α > 0, `(α⁻⁸+α⁴)`-weighted observation of η)
//! and the small-damping one (α < α*, no global `∂tη` term).

use rand::Rng;
use serde::Serialize;

use super::decomposition::AuditGrid;
use super::samples::BeamSample;
use super::symbolic::{torus_factor_jet, AtomTables};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, TorusGrid};
use crate::par;
use crate::report::{calibrate_then_verify, CalibrateVerify, FunctionalReport, SampleTerms, Term};
use crate::weights::regime::s_threshold;
use crate::weights::{absorption_window, alpha_star, AbsorptionWindow, Calibration, CarlemanParams, TorusArc, WeightFamily};

/// Highest Fourier mode of the random samples used by the protocols.
pub const DEFAULT_MAX_MODE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BeamTheorem {
    /// Theorem 1.6, valid for `α ≥ 0`.
    Undamped,
    /// Theorem 1.7, `α > 0`.
    Damped,
    /// Theorem 1.8, `0 < α < α*`.
    SmallDamping,
}

impl BeamTheorem {
    pub fn label(self) -> &'static str {
        match self {
            BeamTheorem::Undamped => "theorem-1.6",
            BeamTheorem::Damped => "theorem-1.7",
            BeamTheorem::SmallDamping => "theorem-1.8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1.6" | "theorem-1.6" | "undamped" => Ok(BeamTheorem::Undamped),
            "1.7" | "theorem-1.7" | "damped" => Ok(BeamTheorem::Damped),
            "1.8" | "theorem-1.8" | "small-damping" => Ok(BeamTheorem::SmallDamping),
            other => Err(Error::InvalidArgument(format!("unknown beam theorem '{other}'"))),
        }
    }
}

/// `μ = λ = θ` and `s` at the threshold `ŝ₀(1+α)(T^k+T^{k−1})`.
pub fn beam_params(alpha: f64, theta: f64, t_final: f64, k: f64) -> Result<CarlemanParams> {
    let cal = Calibration::frozen();
    let s = s_threshold(cal.s_hat0, alpha, t_final, k);
    CarlemanParams::new(alpha, s, theta, theta, k, t_final)
}

/// Weight values shared by every sample on one grid.
struct BeamWeights {
    times: Vec<f64>,
    xs: Vec<f64>,
    cell: f64,
    /// `e^{2sφ₀ − 2c}`.
    e2: Vec<f64>,
    xi0: Vec<f64>,
    in_j: Vec<bool>,
}

impl BeamWeights {
    fn new(wf: &WeightFamily, j: &TorusArc, grid: AuditGrid) -> Result<Self> {
        let t_final = wf.params.t_final;
        let times = TimeGrid::interior(t_final, grid.n_t)?.nodes().to_vec();
        let xg = TorusGrid::new(grid.n_x)?;
        let xs = xg.nodes();
        let tables = AtomTables::build(wf, &times, &xs)?;
        let s = wf.params.s;
        let c = super::decomposition::max_exponent(s, &tables);
        let nx = xs.len();
        let top: Vec<f64> = xs.iter().map(|&x| torus_factor_jet(wf, x, 0)[0] + (10.0 * wf.params.lambda * wf.spatial.big_psi).exp()).collect();
        let mut e2 = vec![0.0; times.len() * nx];
        let mut xi0 = vec![0.0; times.len() * nx];
        for i in 0..times.len() {
            for jx in 0..nx {
                let k = i * nx + jx;
                e2[k] = (2.0 * (s * tables.f[0][jx] * tables.l[0][i] - c)).exp();
                xi0[k] = top[jx] * tables.l[0][i];
            }
        }
        let in_j = xs.iter().map(|&x| j.contains(x)).collect();
        Ok(Self { times, xs, cell: xg.spacing() * t_final / grid.n_t as f64, e2, xi0, in_j })
    }

    /// `∬ E₂ ξ₀^p |f|²`, optionally restricted to `J`.
    fn weighted(&self, p: i32, f: &[f64], on_j: bool) -> f64 {
        let nx = self.xs.len();
        let mut acc = 0.0;
        for (k, v) in f.iter().enumerate() {
            if on_j && !self.in_j[k % nx] {
                continue;
            }
            acc += self.e2[k] * self.xi0[k].powi(p) * v * v;
        }
        self.cell * acc
    }
}

fn beam_terms(theorem: BeamTheorem, eta: &BeamSample, p: &CarlemanParams, w: &BeamWeights) -> SampleTerms {
    let (s, mu, alpha) = (p.s, p.mu, p.alpha);
    let a2 = alpha * alpha;
    let d = |a: usize, b: usize| eta.grid_derivative(a, b, &w.times, &w.xs);
    let (e, ex, exx, exxx, exxxx) = (d(0, 0), d(0, 1), d(0, 2), d(0, 3), d(0, 4));
    let (et, etx, etxx, ett) = (d(1, 0), d(1, 1), d(1, 2), d(2, 0));
    let p_eta: Vec<f64> = (0..e.len()).map(|k| ett[k] - alpha * etxx[k] + exxxx[k]).collect();
    let ct = if theorem == BeamTheorem::SmallDamping { 1.0 } else { 1.0 + a2 };

    let mut lhs = vec![
        Term::new("s7 mu8 xi0^7 |eta|^2", s.powi(7) * mu.powi(8) * w.weighted(7, &e, false)),
        Term::new("s5 mu6 xi0^5 |eta_x|^2", s.powi(5) * mu.powi(6) * w.weighted(5, &ex, false)),
        Term::new("s3 mu4 xi0^3 |eta_xx|^2", s.powi(3) * mu.powi(4) * w.weighted(3, &exx, false)),
        Term::new("s3 mu4 xi0^3 |eta_t|^2", ct * s.powi(3) * mu.powi(4) * w.weighted(3, &et, false)),
        Term::new("s mu2 xi0 |eta_xxx|^2", s * mu * mu * w.weighted(1, &exxx, false)),
        Term::new("s mu2 xi0 |eta_tx|^2", ct * s * mu * mu * w.weighted(1, &etx, false)),
    ];
    match theorem {
        BeamTheorem::Undamped => {}
        BeamTheorem::Damped => {
            let c = a2 / (1.0 + a2) / s;
            lhs.push(Term::new("s^-1 xi0^-1 |eta_xxxx|^2", c * w.weighted(-1, &exxxx, false)));
            lhs.push(Term::new("s^-1 xi0^-1 |eta_tt|^2", c * w.weighted(-1, &ett, false)));
            lhs.push(Term::new("s^-1 xi0^-1 |eta_txx|^2", a2 / s * w.weighted(-1, &etxx, false)));
        }
        BeamTheorem::SmallDamping => {
            lhs.push(Term::new("s^-1 xi0^-1 |eta_xxxx|^2", w.weighted(-1, &exxxx, false) / s));
            lhs.push(Term::new("s^-1 xi0^-1 |eta_tt|^2", w.weighted(-1, &ett, false) / s));
            lhs.push(Term::new("s^-1 xi0^-1 |eta_txx|^2", w.weighted(-1, &etxx, false) / s));
        }
    }

    let obs_eta = s.powi(7) * mu.powi(8) * w.weighted(7, &e, true);
    let residual = Term::new("|P eta|^2", w.weighted(0, &p_eta, false));
    let global_t = Term::new("alpha^2 s3 mu4 xi0^3 |eta_t|^2", a2 * s.powi(3) * mu.powi(4) * w.weighted(3, &et, false));
    let rhs = match theorem {
        BeamTheorem::Undamped => vec![
            Term::new("J: s7 mu8 xi0^7 |eta|^2", obs_eta),
            Term::new("J: s3 mu4 xi0^3 |eta_t|^2", (1.0 + a2) * s.powi(3) * mu.powi(4) * w.weighted(3, &et, true)),
            Term::new("J: s mu2 xi0 |eta_xxx|^2", s * mu * mu * w.weighted(1, &exxx, true)),
            Term::new("J: s mu2 xi0 |eta_tx|^2", (1.0 + a2) * s * mu * mu * w.weighted(1, &etx, true)),
            global_t,
            residual,
        ],
        BeamTheorem::Damped => vec![
            Term::new("J: (a^-8 + a^4) s7 mu8 xi0^7 |eta|^2", (alpha.powi(-8) + alpha.powi(4)) * obs_eta),
            residual,
            global_t,
        ],
        BeamTheorem::SmallDamping => vec![Term::new("J: s7 mu8 xi0^7 |eta|^2", obs_eta), residual],
    };
    let saturated = lhs.iter().chain(&rhs).any(|t| !t.value.is_finite());
    SampleTerms { lhs, rhs, saturated }
}

#[derive(Clone, Debug, Serialize)]
pub struct BeamCheck {
    pub theorem: BeamTheorem,
    pub report: FunctionalReport,
    /// Absorption window at `β*`, reported for the small-damping estimate.
    pub window: Option<AbsorptionWindow>,
    /// `false` when the estimate does not apply to this `α`; ratios are then informational.
    pub constant_claimed: bool,
}

/// Evaluates every LHS and RHS term of the chosen estimate on each sample.
pub fn beam_inequality_check(
    theorem: BeamTheorem,
    samples: &[BeamSample],
    wf: &WeightFamily,
    j: &TorusArc,
    grid: AuditGrid,
) -> Result<BeamCheck> {
    let alpha = wf.params.alpha;
    let (window, claimed) = match theorem {
        BeamTheorem::Undamped => (None, true),
        BeamTheorem::Damped => {
            if !(alpha > 0.0) {
                return Err(Error::Inadmissible(format!("{} needs alpha > 0, got {alpha}", theorem.label())));
            }
            (None, true)
        }
        BeamTheorem::SmallDamping => {
            if !(alpha > 0.0) {
                return Err(Error::Inadmissible(format!("{} needs alpha > 0, got {alpha}", theorem.label())));
            }
            let w = absorption_window(alpha_star().beta_star, alpha)?;
            let feasible = w.feasible;
            (Some(w), feasible)
        }
    };
    for s in samples {
        if (s.t_final - wf.params.t_final).abs() > 1e-14 * wf.params.t_final {
            return Err(Error::DimensionMismatch("sample horizon differs from weight horizon".into()));
        }
    }
    let weights = BeamWeights::new(wf, j, grid)?;
    let terms = par::map_range(samples.len(), |i| beam_terms(theorem, &samples[i], &wf.params, &weights));
    let report = FunctionalReport::from_samples(theorem.label(), Some(wf.params.clone()), terms);
    Ok(BeamCheck { theorem, report, window, constant_claimed: claimed })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProtocolOutcome {
    pub name: String,
    pub alpha: f64,
    pub calibration: FunctionalReport,
    pub fresh: FunctionalReport,
    pub verdict: CalibrateVerify,
}

pub fn random_beam_samples<R: Rng>(t_final: f64, n: usize, max_mode: usize, rng: &mut R) -> Result<Vec<BeamSample>> {
    (0..n).map(|_| BeamSample::random(t_final, max_mode, rng)).collect()
}

/// Calibrate the empirical constant on `n_cal` samples, verify on `n_fresh` new ones.
pub fn beam_protocol<R: Rng>(
    theorem: BeamTheorem,
    wf: &WeightFamily,
    j: &TorusArc,
    grid: AuditGrid,
    n_cal: usize,
    n_fresh: usize,
    margin: f64,
    rng: &mut R,
) -> Result<ProtocolOutcome> {
    let t = wf.params.t_final;
    let cal = random_beam_samples(t, n_cal, DEFAULT_MAX_MODE, rng)?;
    let fresh = random_beam_samples(t, n_fresh, DEFAULT_MAX_MODE, rng)?;
    let c = beam_inequality_check(theorem, &cal, wf, j, grid)?;
    let f = beam_inequality_check(theorem, &fresh, wf, j, grid)?;
    if !c.constant_claimed {
        return Err(Error::Inadmissible(format!(
            "{} makes no claim at alpha = {}: the absorption window is empty",
            theorem.label(),
            wf.params.alpha
        )));
    }
    let verdict = calibrate_then_verify(&c.report.sample_ratios, &f.report.sample_ratios, margin);
    Ok(ProtocolOutcome { name: theorem.label().into(), alpha: wf.params.alpha, calibration: c.report, fresh: f.report, verdict })
}
