//! Inequality reports, the calibrate-then-verify protocol and small fits.

use serde::Serialize;

use crate::weights::CarlemanParams;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

impl Term {
    pub fn new(name: &str, value: f64) -> Self {
        Self { name: name.into(), value }
    }
}

/// One sample's worth of `LHS ≤ c·RHS` terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleTerms {
    pub lhs: Vec<Term>,
    pub rhs: Vec<Term>,
    pub saturated: bool,
}

impl SampleTerms {
    pub fn lhs_total(&self) -> f64 {
        self.lhs.iter().map(|t| t.value).sum()
    }

    pub fn rhs_total(&self) -> f64 {
        self.rhs.iter().map(|t| t.value).sum()
    }

    pub fn ratio(&self) -> f64 {
        ratio(self.lhs_total(), self.rhs_total())
    }

    pub fn is_finite(&self) -> bool {
        self.lhs.iter().chain(&self.rhs).all(|t| t.value.is_finite())
    }
}

/// `lhs/rhs`, with `0/0 = 0` and `x/0 = ∞`.
pub fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// Term-by-term values of a named inequality; terms are those of the worst sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub name: String,
    pub params: Option<CarlemanParams>,
    pub lhs_terms: Vec<Term>,
    pub rhs_terms: Vec<Term>,
    pub lhs: f64,
    pub rhs: f64,
    /// Max over samples of LHS/RHS.
    pub ratio: f64,
    pub sample_ratios: Vec<f64>,
    pub saturated: bool,
}

impl FunctionalReport {
    pub fn from_samples(name: &str, params: Option<CarlemanParams>, samples: Vec<SampleTerms>) -> Self {
        let sample_ratios: Vec<f64> = samples.iter().map(SampleTerms::ratio).collect();
        let saturated = samples.iter().any(|s| s.saturated || !s.is_finite());
        let worst = sample_ratios
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &r)| match best {
                Some((_, b)) if b >= r => best,
                _ => Some((i, r)),
            })
            .map(|(i, _)| i);
        let (lhs_terms, rhs_terms) = match worst {
            Some(i) => (samples[i].lhs.clone(), samples[i].rhs.clone()),
            None => (vec![], vec![]),
        };
        let lhs = lhs_terms.iter().map(|t| t.value).sum();
        let rhs = rhs_terms.iter().map(|t| t.value).sum();
        Self {
            name: name.into(),
            params,
            lhs_terms,
            rhs_terms,
            lhs,
            rhs,
            ratio: sample_ratios.iter().cloned().fold(0.0, f64::max),
            sample_ratios,
            saturated,
        }
    }
}

/// Empirical constant fixed on one sample set, checked on a disjoint one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrateVerify {
    pub n_calibration: usize,
    pub n_fresh: usize,
    pub calibration_max: f64,
    pub margin: f64,
    /// `margin · calibration_max`.
    pub constant: f64,
    pub fresh_max: f64,
    pub violations: usize,
    pub passed: bool,
}

pub fn calibrate_then_verify(calibration: &[f64], fresh: &[f64], margin: f64) -> CalibrateVerify {
    let calibration_max = calibration.iter().cloned().fold(0.0, f64::max);
    let constant = margin * calibration_max;
    let fresh_max = fresh.iter().cloned().fold(0.0, f64::max);
    let violations = fresh.iter().filter(|&&r| !(r <= constant)).count();
    CalibrateVerify {
        n_calibration: calibration.len(),
        n_fresh: fresh.len(),
        calibration_max,
        margin,
        constant,
        fresh_max,
        violations,
        passed: violations == 0 && constant.is_finite(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(x, y)`; `None` when `x` or `y` has no spread.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 1e-300 || syy <= 1e-24 * (1.0 + my * my) {
        return None;
    }
    let slope = sxy / sxx;
    Some(LinearFit { slope, intercept: my - slope * mx, r2: sxy * sxy / (sxx * syy) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flat_data_is_degenerate() {
        assert!(linear_fit(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_none());
    }

    #[test]
    fn protocol_counts_violations() {
        let cv = calibrate_then_verify(&[1.0, 2.0], &[3.0, 4.5, 1.0], 2.0);
        assert_eq!(cv.constant, 4.0);
        assert_eq!(cv.violations, 1);
        assert!(!cv.passed);
    }

    #[test]
    fn zero_over_zero_is_zero() {
        assert_eq!(ratio(0.0, 0.0), 0.0);
        assert!(ratio(1.0, 0.0).is_infinite());
    }
}
