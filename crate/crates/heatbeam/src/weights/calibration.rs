//! Calibrated constants (`c1`, `ŝ₀`, `μ₀`, default `τ, θ`, and one `Ĉ` per
//! weight-calculus inequality), persisted as a versioned JSON file.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::family::{exp_derivative_factors, WeightFamily};
use super::regime::{regime_params_with, s_threshold};
use super::spatial::SpatialWeights;
use crate::error::{Error, Result};

pub const CALIBRATION_FORMAT: &str = "heatbeam-calibration";
pub const CALIBRATION_VERSION: u32 = 1;
/// Safety factor applied to every empirical maximum.
pub const MARGIN: f64 = 2.0;

const FROZEN: &str = include_str!("../../calibration/default.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub format: String,
    pub version: u32,
    pub c1: f64,
    pub s_hat0: f64,
    pub mu0: f64,
    pub tau_default: f64,
    pub theta_default: f64,
    #[serde(rename = "C_hat_per_inequality")]
    pub c_hat: BTreeMap<String, f64>,
}

/// Empirical maximum of one inequality ratio against its frozen constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub observed_max: f64,
    pub constant: f64,
    pub holds: bool,
}

impl Calibration {
    /// The calibration shipped with the crate.
    pub fn frozen() -> &'static Calibration {
        static CAL: OnceLock<Calibration> = OnceLock::new();
        CAL.get_or_init(|| Self::from_json(FROZEN).expect("shipped calibration parses"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Calibration =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("calibration file: {e}")))?;
        if cal.format != CALIBRATION_FORMAT {
            return Err(Error::Config(format!("unexpected calibration format '{}'", cal.format)));
        }
        if cal.version != CALIBRATION_VERSION {
            return Err(Error::Config(format!(
                "calibration version {} is not supported (expected {CALIBRATION_VERSION})",
                cal.version
            )));
        }
        Ok(cal)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn constant(&self, name: &str) -> Result<f64> {
        self.c_hat
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("calibration has no constant '{name}'")))
    }
}

/// Sampling density of a scan; `offset` shifts the nodes so verification uses fresh points.
#[derive(Clone, Copy, Debug)]
pub struct Scan {
    pub n_x: usize,
    pub n_t: usize,
    pub offset: f64,
}

impl Scan {
    pub const CALIBRATE: Scan = Scan { n_x: 1024, n_t: 400, offset: 0.0 };
    pub const VERIFY: Scan = Scan { n_x: 1531, n_t: 613, offset: 0.37 };

    fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_x).map(move |i| 2.0 * PI * (i as f64 + self.offset) / self.n_x as f64)
    }

    fn ts(&self, t_final: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_t).map(move |i| t_final * (i as f64 + 0.5 + 0.4 * (self.offset - 0.5)) / self.n_t as f64)
    }
}

const MU_MULTIPLES: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0];
const HORIZONS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const ALPHAS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 8.0];

/// `μ₀ = 2 max(−ψ_I″/ψ_I′², 0)` outside `J₀`, so that `μψ_I″ + μ²ψ_I′² ≥ μ²ψ_I′²/2` there.
pub fn mu0_for(spatial: &SpatialWeights, j0: &super::regions::TorusArc, scan: Scan) -> f64 {
    let mut worst: f64 = 0.0;
    for x in scan.xs() {
        if j0.contains(x) {
            continue;
        }
        let d = spatial.torus.derivatives(x);
        worst = worst.max(-d[2] / (d[1] * d[1]));
    }
    2.0 * worst
}

/// Maximum over the scan of each weight-calculus ratio.
pub fn scan_ratios(
    spatial: &SpatialWeights,
    j0: &super::regions::TorusArc,
    mu0: f64,
    cal: &Calibration,
    scan: Scan,
) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    let mut bump = |name: String, v: f64| {
        let e = out.entry(name).or_insert(0.0);
        if v.is_finite() {
            *e = e.max(v);
        } else {
            *e = f64::INFINITY;
        }
    };
    let xs: Vec<f64> = scan.xs().collect();
    let jets: Vec<[f64; 6]> = xs.iter().map(|&x| spatial.torus.derivatives(x)).collect();

    // |∂ʲφ₀| + |∂ʲξ₀| ≤ Ĉ μʲ ξ₀: the ratio is 2|Bⱼ(μψ′, …)|/μʲ
    for m in MU_MULTIPLES {
        let mu = mu0 * m;
        for d in &jets {
            let b = exp_derivative_factors(&[mu * d[1], mu * d[2], mu * d[3], mu * d[4], mu * d[5]]);
            for j in 1..=4 {
                bump(format!("dx_phi0_{j}"), 2.0 * b[j].abs() / mu.powi(j as i32));
            }
        }
    }

    // outside J₀: μξ₀ ≤ Ĉ|∂φ₀| and μ²ξ₀ ≤ Ĉ ∂²φ₀
    for (x, d) in xs.iter().zip(&jets) {
        if j0.contains(*x) {
            continue;
        }
        bump("outside_j0_first".into(), 1.0 / d[1].abs());
        for m in MU_MULTIPLES {
            let mu = mu0 * m;
            let den = d[2] / mu + d[1] * d[1];
            bump("outside_j0_second".into(), if den > 0.0 { 1.0 / den } else { f64::INFINITY });
        }
    }

    // |∂tξ₀| + |∂tφ₀| ≤ Ĉ (s/s₀) ξ₀² at the smallest admissible s
    let x_sub: Vec<f64> = xs.iter().step_by(16).copied().collect();
    for t_final in HORIZONS {
        for m in [1.0, 4.0, 32.0] {
            let mu = mu0 * m;
            for lm in [1.0, 3.0, 10.0] {
                let lambda = mu * lm;
                let s = s_threshold(cal.s_hat0, 1.0, t_final, 2.0);
                let p = super::regime::CarlemanParams::with_calibration(cal, 1.0, s, lambda, mu, 2.0, t_final)
                    .expect("positive parameters");
                let wf = WeightFamily::new(spatial.clone(), p);
                let ratio_scale = t_final.powi(2) + t_final;
                let top = (10.0 * lambda * spatial.big_psi).exp();
                for t in scan.ts(t_final) {
                    let tj = wf.time_jet(t).expect("interior time");
                    for &x in &x_sub {
                        let e0 = wf.exponent0(x).exp();
                        // ξ₀ + |φ₀| = e^{10λΨ} L
                        let r = top * tj.l[1].abs() / (ratio_scale * e0 * e0 * tj.l[0] * tj.l[0]);
                        bump("dt_phi0".into(), r);
                    }
                }
            }
        }
    }

    // |ρ₃′| ≤ C ρ₀ and |ρ₄′| ≤ C ρ₃ along the default regimes
    for alpha in ALPHAS {
        let p = regime_params_with(cal, alpha, cal.tau_default, cal.theta_default, 1.0, 2.0);
        let wf = WeightFamily::new(spatial.clone(), p);
        for t in scan.ts(1.0) {
            let r = wf.ln_rho(t).expect("interior time");
            let tj = wf.time_jet(t).expect("interior time");
            // ρ′ = ρ L′ (p/L + sΦ); ratios taken in log domain
            let lp = wf.params.lambda * spatial.big_psi;
            let phi1 = (8.0 * lp).exp() - (10.0 * lp).exp();
            let g3 = (tj.l[1] * (-0.5 / tj.l[0] + wf.params.s * phi1)).abs();
            let g4 = (tj.l[1] * (-2.5 / tj.l[0] + wf.params.s * phi1)).abs();
            bump("rho3_prime_over_rho0".into(), g3 * (r[3] - r[0]).exp());
            bump("rho4_prime_over_rho3".into(), g4 * (r[4] - r[3]).exp());
        }
    }
    out
}

/// Scans the default geometry and returns constants with a 2× margin.
pub fn calibrate(spatial: &SpatialWeights, regions: &super::regions::ObservationRegions) -> Calibration {
    let mu0 = mu0_for(spatial, regions.j0(), Scan::CALIBRATE);
    let theta = (0.2f64).max((mu0 * 20.0).ceil() / 20.0);
    let mut cal = Calibration {
        format: CALIBRATION_FORMAT.into(),
        version: CALIBRATION_VERSION,
        c1: theta / 2.5,
        s_hat0: 0.5,
        mu0,
        tau_default: theta,
        theta_default: theta,
        c_hat: BTreeMap::new(),
    };
    let maxima = scan_ratios(spatial, regions.j0(), mu0, &cal, Scan::CALIBRATE);
    cal.c_hat = maxima.into_iter().map(|(k, v)| (k, MARGIN * v)).collect();
    cal
}

/// Re-scans on shifted nodes and compares against the frozen constants.
pub fn verify(
    spatial: &SpatialWeights,
    regions: &super::regions::ObservationRegions,
    cal: &Calibration,
) -> Vec<InequalityCheck> {
    let maxima = scan_ratios(spatial, regions.j0(), cal.mu0, cal, Scan::VERIFY);
    maxima
        .into_iter()
        .map(|(name, observed_max)| {
            let constant = cal.c_hat.get(&name).copied().unwrap_or(f64::NAN);
            InequalityCheck { holds: observed_max <= constant, name, observed_max, constant }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::regions::ObservationRegions;

    #[test]
    fn frozen_file_round_trips() {
        let cal = Calibration::frozen();
        let back = Calibration::from_json(&cal.to_json()).unwrap();
        assert_eq!(&back, cal);
    }

    #[test]
    fn version_is_enforced() {
        let mut cal = Calibration::frozen().clone();
        cal.version = 99;
        assert!(Calibration::from_json(&cal.to_json()).is_err());
        assert!(Calibration::from_json("{}").is_err());
    }

    #[test]
    fn frozen_constants_hold_on_fresh_samples() {
        let regions = ObservationRegions::default_geometry();
        let spatial = SpatialWeights::default_weights();
        for c in verify(&spatial, &regions, Calibration::frozen()) {
            assert!(c.holds, "{} observed {} > {}", c.name, c.observed_max, c.constant);
        }
    }

    #[test]
    fn recalibration_reproduces_frozen_file() {
        let regions = ObservationRegions::default_geometry();
        let spatial = SpatialWeights::default_weights();
        let fresh = calibrate(&spatial, &regions);
        let frozen = Calibration::frozen();
        assert!((fresh.mu0 - frozen.mu0).abs() <= 1e-9 * frozen.mu0);
        for (k, v) in &frozen.c_hat {
            assert!((fresh.c_hat[k] - v).abs() <= 1e-9 * v.abs(), "{k}");
        }
    }
}

