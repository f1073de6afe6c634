//! Spatial weights `ψ_I, ψ_Ω`, the Carleman weight family and parameter regimes.

pub mod calibration;
pub mod family;
pub mod profile;
pub mod regime;
pub mod regions;
pub mod spatial;

pub use calibration::{calibrate, Calibration};
pub use family::{clamp_exp, RhoValues, WeightFamily, WeightValues};
pub use regime::{absorption_window, alpha_star, regime_params, AbsorptionWindow, AlphaStar, CarlemanParams};
pub use regions::{Interval, ObservationRegions, RectRegion, TorusArc};
pub use spatial::{build_psi_omega, build_psi_torus, SpatialWeights};

/// Evaluates every weight at `(t, x)`; see [`WeightFamily::eval`].
pub fn eval_weight_family(wf: &WeightFamily, t: f64, x: (f64, f64)) -> crate::Result<WeightValues> {
    wf.eval(t, x.0, x.1)
}

/// `ρ₀..ρ₅` at `t`; see [`WeightFamily::eval_rho`].
pub fn eval_rho(wf: &WeightFamily, t: f64) -> RhoValues {
    wf.eval_rho(t)
}
