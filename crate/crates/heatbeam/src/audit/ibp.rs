//! Cross products `I_ij = ∬ (i-th term of M₁z)(j-th term of M₂z)` and their
//! integrated-by-parts forms.
//!
//! Indices follow [`m_terms`]: `i = 1..=5` are the `M₁₁` terms, `6..=8` the `M₁₂`
//! terms; `j = 1..=5` the `M₂₁` terms, `6..=7` the `M₂₂` terms. Every reduced form
//! is split into main pieces (multiples of the closed-form integrals `I₁..I₈`)
//! and remainder pieces.

use std::collections::BTreeMap;

use serde::Serialize;

use super::decomposition::{m_terms, ConjugateDecomposition, Zd};
use super::symbolic::{Atom, WeightExpr, PT, PTT, PTX, PTXX, PX, PXX, PXXXX};
use crate::error::{Error, Result};

/// Relative size of the floor in `rel_err`, measured against `∬|raw integrand|`.
pub const FLOOR_FRACTION: f64 = 1e-6;

/// `coef · ∬ W·∂z·∂z`.
#[derive(Clone, Debug)]
pub struct Piece {
    pub coef: f64,
    pub weight: WeightExpr,
    pub a: Zd,
    pub b: Zd,
}

impl Piece {
    pub fn integrate(&self, d: &ConjugateDecomposition) -> Result<f64> {
        if self.weight.is_zero() || self.coef == 0.0 {
            return Ok(0.0);
        }
        let w = d.tables.eval(&self.weight)?;
        Ok(self.coef * d.z.integrate(&w, self.a, self.b))
    }

    pub fn integrate_abs(&self, d: &ConjugateDecomposition) -> Result<f64> {
        if self.weight.is_zero() || self.coef == 0.0 {
            return Ok(0.0);
        }
        let w = d.tables.eval(&self.weight)?;
        Ok(self.coef.abs() * d.z.integrate_abs(&w, self.a, self.b))
    }
}

/// Post-IBP form of one cross product.
#[derive(Clone, Debug, Default)]
pub struct ReducedForm {
    pub main: Vec<Piece>,
    pub remainder: Vec<Piece>,
}

fn w(f: &[(Atom, u32)]) -> WeightExpr {
    WeightExpr::prod(f)
}

fn pc(coef: f64, weight: WeightExpr, a: Zd, b: Zd) -> Piece {
    Piece { coef, weight, a, b }
}

/// The integrated-by-parts form of `I_ij`.
pub fn reduced_form(i: usize, j: usize, s: f64, alpha: f64, beta: f64) -> Result<ReducedForm> {
    use Zd::*;
    let sp = |n: i32| s.powi(n);
    let (al, a2) = (alpha, alpha * alpha);
    let b1 = 1.0 + beta;
    let x4xx = || w(&[(PX, 4), (PXX, 1)]);
    let x3xx = || w(&[(PX, 3), (PXX, 1)]);
    let x2xx = || w(&[(PX, 2), (PXX, 1)]);
    let x1xx = || w(&[(PX, 1), (PXX, 1)]);
    let (main, remainder) = match (i, j) {
        (1, 1) => (vec![pc(14.0 * sp(7), w(&[(PX, 6), (PXX, 1)]), Z, Z)], vec![]),
        (1, 2) => (vec![pc(-30.0 * sp(5), x4xx(), X, X)], vec![pc(10.0 * sp(5), x4xx().dx_n(2), Z, Z)]),
        (1, 3) => (
            vec![pc(-4.0 * sp(4) * al, x3xx(), X, T)],
            vec![
                pc(2.0 * sp(4) * al, x3xx().dx().dt(), Z, Z),
                pc(-2.0 * sp(4) * al, w(&[(PTX, 1), (PX, 3)]), X, X),
            ],
        ),
        (1, 4) => (vec![], vec![pc(3.0 * sp(6) * al, w(&[(PX, 5), (PTX, 1)]), Z, Z)]),
        (1, 5) => (vec![pc(-6.0 * b1 * sp(7), w(&[(PX, 6), (PXX, 1)]), Z, Z)], vec![]),
        (2, 1) => (vec![pc(60.0 * sp(5), x4xx(), X, X)], vec![]),
        (2, 2) => (vec![pc(36.0 * sp(3), x2xx(), XX, XX)], vec![]),
        (2, 3) => (vec![], vec![pc(6.0 * sp(2) * al, w(&[(PTX, 1), (PX, 1)]), XX, XX)]),
        (2, 4) => (
            vec![pc(24.0 * sp(4) * al, x3xx(), T, X)],
            vec![pc(-12.0 * sp(4) * al, w(&[(PX, 3), (PTX, 1)]), X, X)],
        ),
        (2, 5) => (
            vec![pc(36.0 * b1 * sp(5), x4xx(), X, X)],
            vec![pc(-18.0 * b1 * sp(5), x4xx().dx_n(2), Z, Z)],
        ),
        (3, 1) => (vec![pc(-18.0 * sp(3), x2xx(), XX, XX)], vec![pc(6.0 * sp(3), x2xx().dx_n(2), X, X)]),
        (3, 2) => (vec![pc(2.0 * s, w(&[(PXX, 1)]), XXX, XXX)], vec![]),
        (3, 3) => (vec![], vec![]),
        (3, 4) => (
            vec![pc(-4.0 * sp(2) * al, x1xx(), XX, TX)],
            vec![
                pc(sp(2) * al, w(&[(PX, 1), (PTX, 1)]), XX, XX),
                pc(-2.0 * sp(2) * al, x1xx().dx(), XX, T),
            ],
        ),
        (3, 5) => (
            vec![pc(-6.0 * b1 * sp(3), x2xx(), XX, XX)],
            // the |∂x1 z|² coefficient collects 6 + 6 from both intermediate terms
            vec![pc(-3.0 * b1 * sp(3), x2xx().dx_n(4), Z, Z), pc(12.0 * b1 * sp(3), x2xx().dx_n(2), X, X)],
        ),
        (4, 1) => (vec![], vec![pc(16.0 * sp(4) * al, w(&[(PTX, 1), (PX, 3)]), X, X)]),
        (4, 2) => (
            vec![pc(16.0 * sp(2) * al, x1xx(), XX, TX)],
            vec![pc(-8.0 * sp(2) * al, w(&[(PX, 1), (PTX, 1)]), XX, XX)],
        ),
        (4, 3) => (vec![pc(s * a2, w(&[(PXX, 1)]), TX, TX)], vec![]),
        (4, 4) => (vec![pc(3.0 * sp(3) * a2, x2xx(), T, T)], vec![]),
        (4, 5) => (
            vec![pc(12.0 * b1 * sp(4) * al, x3xx(), X, T)],
            vec![pc(-6.0 * b1 * sp(4) * al, x3xx().dx().dt(), Z, Z)],
        ),
        (5, 1) => (
            vec![pc(-6.0 * sp(3), x2xx(), T, T)],
            vec![pc(12.0 * sp(3), w(&[(PX, 2), (PTX, 1)]), X, T)],
        ),
        (5, 2) => (
            vec![pc(6.0 * s, w(&[(PXX, 1)]), TX, TX)],
            vec![pc(4.0 * s, w(&[(PTX, 1)]), XXX, T), pc(-2.0 * s, w(&[(PXXXX, 1)]), T, T)],
        ),
        (5, 3) => (vec![], vec![]),
        (5, 4) => (vec![], vec![pc(sp(2) * al, w(&[(PX, 1), (PTX, 1)]), T, T)]),
        (5, 5) => (
            vec![pc(6.0 * b1 * sp(3), x2xx(), T, T)],
            vec![pc(-3.0 * b1 * sp(3), x2xx().dt_n(2), Z, Z)],
        ),
        _ => (vec![], extended_form(i, j, s, alpha, beta)?),
    };
    Ok(ReducedForm { main, remainder })
}

/// Pairs involving `M₁₂` or `M₂₂`; all pieces are remainders.
fn extended_form(i: usize, j: usize, s: f64, alpha: f64, beta: f64) -> Result<Vec<Piece>> {
    use Zd::*;
    let sp = |n: i32| s.powi(n);
    let (al, a2) = (alpha, alpha * alpha);
    let b1 = 1.0 + beta;
    let xt = || w(&[(PX, 1), (PT, 1)]);
    let x2t = || w(&[(PX, 2), (PT, 1)]);
    let x3t = || w(&[(PX, 3), (PT, 1)]);
    let xt2 = || w(&[(PX, 1), (PT, 2)]);
    let pieces = match (i, j) {
        (1, 6) => vec![pc(sp(5), w(&[(PX, 4), (PT, 1)]).dt(), Z, Z)],
        (1, 7) => vec![pc(al * sp(6), w(&[(PX, 5), (PT, 1)]).dx(), Z, Z)],
        (2, 6) => vec![pc(12.0 * sp(3), x2t().dx(), X, T), pc(-6.0 * sp(3), x2t().dt(), X, X)],
        (2, 7) => vec![pc(6.0 * sp(4) * al, x3t().dx(), X, X)],
        (3, 6) => vec![
            pc(-2.0 * s, w(&[(PTXX, 1)]), T, XX),
            pc(-4.0 * s, w(&[(PTX, 1)]), TX, XX),
            pc(s, w(&[(PTT, 1)]), XX, XX),
        ],
        (3, 7) => vec![pc(sp(2) * al, xt().dx_n(3), X, X), pc(-3.0 * sp(2) * al, xt().dx(), XX, XX)],
        (4, 6) => vec![pc(2.0 * sp(2) * al, xt().dx(), T, T)],
        (4, 7) => vec![pc(2.0 * sp(3) * a2, x2t().dt(), X, X)],
        (5, 6) => vec![pc(s, w(&[(PTT, 1)]), T, T)],
        (5, 7) => vec![pc(2.0 * sp(2) * al, xt().dt(), X, T), pc(-sp(2) * al, xt().dx(), T, T)],
        (6, 1) => vec![pc(2.0 * sp(5), w(&[(PX, 3), (PT, 2)]).dx(), Z, Z)],
        (6, 2) => vec![pc(2.0 * sp(3), xt2().dx_n(3), Z, Z), pc(-6.0 * sp(3), xt2().dx(), X, X)],
        (6, 3) => {
            let tt = || w(&[(PTX, 1), (PT, 1)]);
            vec![
                pc(sp(2) * al, tt().dt().dx(), Z, Z),
                pc(-2.0 * sp(2) * al, tt(), T, X),
                pc(-sp(2) * al, w(&[(PTT, 1), (PT, 1)]), X, X),
            ]
        }
        (6, 4) => vec![pc(0.5 * sp(4) * al, w(&[(PX, 2), (PT, 2)]).dt(), Z, Z)],
        (6, 5) => vec![pc(-6.0 * b1 * sp(5), w(&[(PX, 2), (PXX, 1), (PT, 2)]), Z, Z)],
        (6, 6) => vec![pc(3.0 * sp(3), w(&[(PTT, 1), (PT, 2)]), Z, Z)],
        (6, 7) => vec![pc(sp(4) * al, w(&[(PX, 1), (PT, 3)]).dx(), Z, Z)],
        (7, 1) => vec![pc(2.0 * sp(4) * al, x3t().dx(), X, X)],
        (7, 2) => vec![pc(2.0 * sp(2) * al, xt().dx(), XX, XX)],
        (7, 3) => vec![pc(0.5 * s * a2, w(&[(PTT, 1)]), XX, XX)],
        (7, 4) => vec![pc(sp(3) * a2, x2t().dx(), T, X), pc(-0.5 * sp(3) * a2, x2t().dt(), X, X)],
        (7, 5) => {
            let q = || w(&[(PX, 2), (PXX, 1), (PT, 1)]);
            vec![pc(-3.0 * b1 * sp(4) * al, q().dx_n(2), Z, Z), pc(6.0 * b1 * sp(4) * al, q(), X, X)]
        }
        (7, 6) => vec![
            pc(4.0 * sp(2) * al, w(&[(PT, 1), (PTX, 1)]), T, X),
            pc(-2.0 * sp(2) * al, w(&[(PT, 1), (PTT, 1)]), X, X),
        ],
        (7, 7) => vec![pc(sp(3) * a2, xt2().dx(), X, X)],
        (8, 1) => vec![pc(2.0 * sp(6) * al, w(&[(PX, 5), (PT, 1)]).dx(), Z, Z)],
        (8, 2) => vec![pc(2.0 * sp(4) * al, x3t().dx_n(3), Z, Z), pc(-6.0 * sp(4) * al, x3t().dx(), X, X)],
        (8, 3) => vec![
            pc(0.5 * sp(3) * a2, x2t().dt().dx_n(2), Z, Z),
            pc(-sp(3) * a2, x2t().dx(), T, X),
            pc(-0.5 * sp(3) * a2, x2t().dt(), X, X),
        ],
        (8, 4) => vec![pc(0.5 * sp(5) * a2, w(&[(PX, 4), (PT, 1)]).dt(), Z, Z)],
        (8, 5) => vec![pc(-6.0 * b1 * sp(6) * al, w(&[(PX, 4), (PXX, 1), (PT, 1)]), Z, Z)],
        (8, 6) => vec![pc(sp(4) * al, w(&[(PX, 2), (PT, 2)]).dt(), Z, Z)],
        (8, 7) => vec![pc(sp(5) * a2, w(&[(PX, 3), (PT, 2)]).dx(), Z, Z)],
        _ => return Err(Error::InvalidArgument(format!("unknown cross product I_{i}{j}"))),
    };
    Ok(pieces)
}

/// Every implemented `(i, j)`.
pub fn index_pairs() -> Vec<(usize, usize)> {
    (1..=8).flat_map(|i| (1..=7).map(move |j| (i, j))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IbpRecord {
    pub i: usize,
    pub j: usize,
    pub raw: f64,
    pub reduced: f64,
    /// Sum of the remainder pieces `R_ij`.
    pub remainder: f64,
    pub rel_err: f64,
}

fn relative(diff: f64, reference: f64, abs_mass: f64) -> f64 {
    let denom = reference.abs().max(FLOOR_FRACTION * abs_mass);
    if denom > 0.0 {
        diff.abs() / denom
    } else {
        diff.abs()
    }
}

fn raw_piece(i: usize, j: usize, d: &ConjugateDecomposition) -> Result<Piece> {
    if !(1..=8).contains(&i) || !(1..=7).contains(&j) {
        return Err(Error::InvalidArgument(format!("unknown cross product I_{i}{j}")));
    }
    let (m1, m2) = m_terms(d.s, d.alpha, d.beta);
    let (p, q) = (&m1[i - 1], &m2[j - 1]);
    Ok(Piece { coef: p.coef * q.coef, weight: p.weight.mul(&q.weight), a: p.zd, b: q.zd })
}

/// Direct quadrature of `I_ij` against quadrature of its reduced form.
pub fn verify_ibp_identity(i: usize, j: usize, d: &ConjugateDecomposition) -> Result<IbpRecord> {
    let raw_p = raw_piece(i, j, d)?;
    let form = reduced_form(i, j, d.s, d.alpha, d.beta)?;
    let raw = raw_p.integrate(d)?;
    let mut main = 0.0;
    for p in &form.main {
        main += p.integrate(d)?;
    }
    let mut remainder = 0.0;
    for p in &form.remainder {
        remainder += p.integrate(d)?;
    }
    let reduced = main + remainder;
    let rel_err = relative(raw - reduced, raw, raw_p.integrate_abs(d)?);
    Ok(IbpRecord { i, j, raw, reduced, remainder, rel_err })
}

/// Ledger over every implemented pair.
#[derive(Clone, Debug, Serialize)]
pub struct CrossProductLedger {
    pub records: BTreeMap<String, IbpRecord>,
    pub max_rel_err: f64,
}

pub fn cross_product_ledger(d: &ConjugateDecomposition) -> Result<CrossProductLedger> {
    let mut records = BTreeMap::new();
    let mut max_rel_err: f64 = 0.0;
    for (i, j) in index_pairs() {
        let r = verify_ibp_identity(i, j, d)?;
        max_rel_err = max_rel_err.max(r.rel_err);
        records.insert(format!("I{i}{j}"), r);
    }
    Ok(CrossProductLedger { records, max_rel_err })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedFormCheck {
    pub beta: f64,
    /// `∬ M₁₁z · M₂₁z`.
    pub lhs: f64,
    /// `I₁..I₈`.
    pub integrals: [f64; 8],
    /// Reconstructed `R₂`.
    pub r2: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// `∬M₁₁z·M₂₁z = (8−6β)I₁ + (66+36β)I₂ + (12−6β)I₃ + (3α²+6β)I₄ + 2I₅ + (α²+6)I₆
/// + (32+12β)αI₇ + 12αI₈ + R₂`, with `R₂` the sum of the remainder pieces of the
/// 25 pairs `i, j ≤ 5`.
pub fn cross_product_closed_form(d: &ConjugateDecomposition) -> Result<ClosedFormCheck> {
    use Zd::*;
    let (s, alpha, beta) = (d.s, d.alpha, d.beta);
    let cell = d.z.cell;
    let lhs = cell * d.m11.iter().zip(&d.m21).map(|(a, b)| a * b).sum::<f64>();
    let abs_mass = cell * d.m11.iter().zip(&d.m21).map(|(a, b)| (a * b).abs()).sum::<f64>();
    let defs = [
        pc(s.powi(7), w(&[(PX, 6), (PXX, 1)]), Z, Z),
        pc(s.powi(5), w(&[(PX, 4), (PXX, 1)]), X, X),
        pc(s.powi(3), w(&[(PX, 2), (PXX, 1)]), XX, XX),
        pc(s.powi(3), w(&[(PX, 2), (PXX, 1)]), T, T),
        pc(s, w(&[(PXX, 1)]), XXX, XXX),
        pc(s, w(&[(PXX, 1)]), TX, TX),
        pc(s.powi(4), w(&[(PX, 3), (PXX, 1)]), T, X),
        pc(s * s, w(&[(PX, 1), (PXX, 1)]), XX, TX),
    ];
    let mut integrals = [0.0; 8];
    for (k, p) in defs.iter().enumerate() {
        integrals[k] = p.integrate(d)?;
    }
    let a2 = alpha * alpha;
    let coeffs = [
        8.0 - 6.0 * beta,
        66.0 + 36.0 * beta,
        12.0 - 6.0 * beta,
        3.0 * a2 + 6.0 * beta,
        2.0,
        a2 + 6.0,
        (32.0 + 12.0 * beta) * alpha,
        12.0 * alpha,
    ];
    let mut r2 = 0.0;
    for i in 1..=5 {
        for j in 1..=5 {
            for p in reduced_form(i, j, s, alpha, beta)?.remainder {
                r2 += p.integrate(d)?;
            }
        }
    }
    let rhs = coeffs.iter().zip(&integrals).map(|(c, v)| c * v).sum::<f64>() + r2;
    let rel_err = relative(lhs - rhs, lhs, abs_mass);
    Ok(ClosedFormCheck { beta, lhs, integrals, r2, rhs, rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::decomposition::tests::{family, sample};
    use crate::audit::decomposition::{conjugate_decompose, AuditGrid};
    use crate::audit::samples::BeamSample;
    use crate::weights::alpha_star;

    #[test]
    fn every_pair_matches_its_reduced_form() {
        for (alpha, seed) in [(0.5, 11), (1.0, 12), (2.0, 13)] {
            let d = conjugate_decompose(&sample(seed), &family(alpha), 1.0, AuditGrid::default()).unwrap();
            let ledger = cross_product_ledger(&d).unwrap();
            assert_eq!(ledger.records.len(), 56);
            for (name, r) in &ledger.records {
                assert!(r.rel_err <= 1e-7, "alpha {alpha} {name}: raw {:e} reduced {:e} rel {:e}", r.raw, r.reduced, r.rel_err);
            }
        }
    }

    #[test]
    fn vanishing_pairs_are_negligible() {
        let d = conjugate_decompose(&sample(21), &family(1.0), 1.0, AuditGrid::default()).unwrap();
        for (i, j) in [(3, 3), (5, 3)] {
            let r = verify_ibp_identity(i, j, &d).unwrap();
            assert_eq!(r.reduced, 0.0);
            assert!(r.rel_err <= 1e-7, "I{i}{j}: {:e}", r.rel_err);
        }
    }

    #[test]
    fn unknown_pair_is_rejected() {
        let d = conjugate_decompose(&sample(1), &family(1.0), 1.0, AuditGrid::default()).unwrap();
        assert!(verify_ibp_identity(9, 1, &d).is_err());
        assert!(verify_ibp_identity(1, 8, &d).is_err());
    }

    #[test]
    fn closed_form_holds_for_several_beta() {
        let beta_star = alpha_star().beta_star;
        for beta in [0.0, 1.0, beta_star] {
            let d = conjugate_decompose(&sample(31), &family(1.0), beta, AuditGrid::default()).unwrap();
            let c = cross_product_closed_form(&d).unwrap();
            assert!(c.rel_err <= 1e-7, "beta {beta}: {c:?}");
        }
    }

    #[test]
    fn zero_sample_closes_trivially() {
        let d = conjugate_decompose(&BeamSample::zero(1.0), &family(1.0), 1.0, AuditGrid::default()).unwrap();
        let c = cross_product_closed_form(&d).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
    }
}
