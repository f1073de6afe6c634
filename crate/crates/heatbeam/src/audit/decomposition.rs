//! The conjugated beam operator `e^{sφ₀}(∂²t + ∂⁴x1 − α∂t∂²x1)e^{−sφ₀}` split
//! into `M₁₁, M₁₂, M₂₁, M₂₂, N`, evaluated on a space–time grid.

use serde::Serialize;

use super::samples::BeamSample;
use super::symbolic::{AtomTables, WeightExpr, PT, PTT, PTX, PTXX, PX, PXX, PXXX, PXXXX};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, TorusGrid};
use crate::par;
use crate::weights::WeightFamily;

/// Derivatives of `z` that appear in the decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Zd {
    Z,
    X,
    XX,
    XXX,
    XXXX,
    T,
    TX,
    TXX,
    TT,
}

impl Zd {
    pub const ALL: [Zd; 9] = [Zd::Z, Zd::X, Zd::XX, Zd::XXX, Zd::XXXX, Zd::T, Zd::TX, Zd::TXX, Zd::TT];

    fn index(self) -> usize {
        self as usize
    }
}

/// How `∂t z` and `∂²t z` are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TimeDerivatives {
    /// Chain rule through the closed-form `L′, L″` and the sample's own derivatives.
    Analytic,
    /// Second-order central differences on the time grid, zero beyond it.
    FiniteDifference,
}

/// Space–time resolution of an audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AuditGrid {
    pub n_x: usize,
    pub n_t: usize,
    pub time_derivatives: TimeDerivatives,
}

impl Default for AuditGrid {
    fn default() -> Self {
        Self { n_x: 128, n_t: 240, time_derivatives: TimeDerivatives::Analytic }
    }
}

/// `z = e^{sφ₀}η` and its derivatives on the time-major grid.
#[derive(Clone, Debug)]
pub struct ZField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// Quadrature weight of one node, `Δx·Δt`.
    pub cell: f64,
    /// Stored values are `e^{−c} z` with `c = max sφ₀` over the grid, so that
    /// quadratic quantities do not underflow; multiply them by `e^{2c}` to undo.
    pub ln_scale: f64,
    data: Vec<Vec<f64>>,
}

impl ZField {
    pub fn get(&self, d: Zd) -> &[f64] {
        &self.data[d.index()]
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    /// `∬ w·a·b` with the product midpoint/trapezoid rule.
    pub fn integrate(&self, w: &[f64], a: Zd, b: Zd) -> f64 {
        let (za, zb) = (self.get(a), self.get(b));
        self.cell * w.iter().zip(za).zip(zb).map(|((w, x), y)| w * x * y).sum::<f64>()
    }

    /// Same sum with every summand replaced by its absolute value.
    pub fn integrate_abs(&self, w: &[f64], a: Zd, b: Zd) -> f64 {
        let (za, zb) = (self.get(a), self.get(b));
        self.cell * w.iter().zip(za).zip(zb).map(|((w, x), y)| (w * x * y).abs()).sum::<f64>()
    }
}

fn space_time_nodes(t_final: f64, grid: AuditGrid) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    if grid.n_t < 4 {
        return Err(Error::GridTooCoarse(format!("need at least 4 time nodes, got {}", grid.n_t)));
    }
    let tg = TimeGrid::interior(t_final, grid.n_t)?;
    let xg = TorusGrid::new(grid.n_x)?;
    let dt = t_final / grid.n_t as f64;
    Ok((tg.nodes().to_vec(), xg.nodes(), dt, xg.spacing()))
}

const JA: usize = 3;
const JB: usize = 5;

/// Truncated bivariate Taylor series in `(δt, δx)`, orders `a < 3`, `b < 5`.
#[derive(Clone, Copy, Debug)]
struct Jet([[f64; JB]; JA]);

impl Jet {
    fn mul(&self, o: &Jet) -> Jet {
        let mut c = [[0.0; JB]; JA];
        for a1 in 0..JA {
            for b1 in 0..JB {
                let v = self.0[a1][b1];
                if v == 0.0 {
                    continue;
                }
                for a2 in 0..JA - a1 {
                    for b2 in 0..JB - b1 {
                        c[a1 + a2][b1 + b2] += v * o.0[a2][b2];
                    }
                }
            }
        }
        Jet(c)
    }

    /// `e^{self}` via `e^{c₀}·Σ Nᵏ/k!` with the nilpotent part `N`.
    fn exp(&self) -> Jet {
        let e0 = self.0[0][0].exp();
        let mut n = *self;
        n.0[0][0] = 0.0;
        let mut out = [[0.0; JB]; JA];
        out[0][0] = 1.0;
        let mut power = Jet(out);
        let mut acc = Jet(out);
        for k in 1..JA + JB - 1 {
            power = power.mul(&n);
            let c = 1.0 / (1..=k).product::<usize>() as f64;
            for a in 0..JA {
                for b in 0..JB {
                    acc.0[a][b] += c * power.0[a][b];
                }
            }
        }
        for row in acc.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= e0;
            }
        }
        acc
    }

    /// `∂t^a ∂x^b` of the represented function.
    fn derivative(&self, a: usize, b: usize) -> f64 {
        let fa: usize = (1..=a).product();
        let fb: usize = (1..=b).product();
        self.0[a][b] * (fa * fb) as f64
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// `max sφ₀` over the tabulated grid.
pub fn max_exponent(s: f64, tables: &AtomTables) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &l in &tables.l[0] {
        for &f in &tables.f[0] {
            m = m.max(s * f * l);
        }
    }
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Builds `z = e^{sφ₀}η`. Mixed derivatives come from exact jet arithmetic on
/// `e^{sF₀(x1)L(t)}` times the sample's closed-form derivatives; with
/// [`TimeDerivatives::FiniteDifference`] the `t`-derivatives are replaced by
/// central differences.
pub fn build_z(eta: &BeamSample, wf: &WeightFamily, tables: &AtomTables, grid: AuditGrid) -> Result<ZField> {
    let (times, xs, dt, dx) = space_time_nodes(eta.t_final, grid)?;
    let (nt, nx) = (times.len(), xs.len());
    let s = wf.params.s;
    let ln_scale = max_exponent(s, tables);
    let wanted = [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 0), (1, 1), (1, 2), (2, 0)];
    let mut eta_d = vec![Vec::new(); JA * JB];
    for a in 0..JA {
        for b in 0..JB {
            eta_d[a * JB + b] = eta.grid_derivative(a, b, &times, &xs);
        }
    }
    let rows: Vec<Vec<[f64; 9]>> = par::map_range(nt, |i| {
        (0..nx)
            .map(|j| {
                let mut phi = [[0.0; JB]; JA];
                let mut e = [[0.0; JB]; JA];
                for a in 0..JA {
                    for b in 0..JB {
                        let c = 1.0 / (factorial(a) * factorial(b));
                        phi[a][b] = s * tables.f[b][j] * tables.l[a][i] * c;
                        e[a][b] = eta_d[a * JB + b][i * nx + j] * c;
                    }
                }
                phi[0][0] -= ln_scale;
                let zj = Jet(phi).exp().mul(&Jet(e));
                let mut out = [0.0; 9];
                for (k, &(a, b)) in wanted.iter().enumerate() {
                    out[k] = zj.derivative(a, b);
                }
                out
            })
            .collect()
    });
    let mut data = vec![vec![0.0; nt * nx]; 9];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            for k in 0..9 {
                data[k][i * nx + j] = v[k];
            }
        }
    }
    if grid.time_derivatives == TimeDerivatives::FiniteDifference {
        let central = |f: &[f64], second: bool| -> Vec<f64> {
            let at = |i: isize, j: usize| if i < 0 || i >= nt as isize { 0.0 } else { f[i as usize * nx + j] };
            let mut out = vec![0.0; nt * nx];
            for i in 0..nt {
                for j in 0..nx {
                    let (p, m) = (at(i as isize + 1, j), at(i as isize - 1, j));
                    out[i * nx + j] =
                        if second { (p - 2.0 * f[i * nx + j] + m) / (dt * dt) } else { (p - m) / (2.0 * dt) };
                }
            }
            out
        };
        data[Zd::T.index()] = central(&data[Zd::Z.index()], false);
        data[Zd::TX.index()] = central(&data[Zd::X.index()], false);
        data[Zd::TXX.index()] = central(&data[Zd::XX.index()], false);
        data[Zd::TT.index()] = central(&data[Zd::Z.index()], true);
    }
    Ok(ZField { times, xs, cell: dx * dt, ln_scale, data })
}

/// `coef · W(φ₀) · ∂z`.
#[derive(Clone, Debug)]
pub struct Term {
    pub coef: f64,
    pub weight: WeightExpr,
    pub zd: Zd,
}

fn term(coef: f64, factors: &[((u8, u8), u32)], zd: Zd) -> Term {
    Term { coef, weight: WeightExpr::prod(factors), zd }
}

/// The eight terms of `M₁z` (five of `M₁₁`, three of `M₁₂`) and the seven of `M₂z`
/// (five of `M₂₁`, two of `M₂₂`), in the order used by the `I_ij` labels.
pub fn m_terms(s: f64, alpha: f64, beta: f64) -> (Vec<Term>, Vec<Term>) {
    let b1 = 1.0 + beta;
    let m1 = vec![
        term(s.powi(4), &[(PX, 4)], Zd::Z),
        term(6.0 * s * s, &[(PX, 2)], Zd::XX),
        term(1.0, &[], Zd::XXXX),
        term(2.0 * s * alpha, &[(PX, 1)], Zd::TX),
        term(1.0, &[], Zd::TT),
        term(s * s, &[(PT, 2)], Zd::Z),
        term(s * alpha, &[(PT, 1)], Zd::XX),
        term(s.powi(3) * alpha, &[(PX, 2), (PT, 1)], Zd::Z),
    ];
    let m2 = vec![
        term(-4.0 * s.powi(3), &[(PX, 3)], Zd::X),
        term(-4.0 * s, &[(PX, 1)], Zd::XXX),
        term(-alpha, &[], Zd::TXX),
        term(-s * s * alpha, &[(PX, 2)], Zd::T),
        term(-6.0 * b1 * s.powi(3), &[(PX, 2), (PXX, 1)], Zd::Z),
        term(-2.0 * s, &[(PT, 1)], Zd::T),
        term(-2.0 * s * s * alpha, &[(PT, 1), (PX, 1)], Zd::X),
    ];
    (m1, m2)
}

/// Terms of `N z`, everything left over once `M₁` and `M₂` are split off.
pub fn n_terms(s: f64, alpha: f64, beta: f64) -> Vec<Term> {
    vec![
        term(alpha * s, &[(PXX, 1)], Zd::T),
        term(2.0 * alpha * s, &[(PTX, 1)], Zd::X),
        term(alpha * s, &[(PTXX, 1)], Zd::Z),
        term(-alpha * s * s, &[(PXX, 1), (PT, 1)], Zd::Z),
        term(-2.0 * alpha * s * s, &[(PTX, 1), (PX, 1)], Zd::Z),
        term(-s, &[(PTT, 1)], Zd::Z),
        term(-6.0 * s, &[(PXX, 1)], Zd::XX),
        term(-4.0 * s, &[(PXXX, 1)], Zd::X),
        term(12.0 * s * s, &[(PXX, 1), (PX, 1)], Zd::X),
        term(-s, &[(PXXXX, 1)], Zd::Z),
        term(4.0 * s * s, &[(PXXX, 1), (PX, 1)], Zd::Z),
        term(3.0 * s * s, &[(PXX, 2)], Zd::Z),
        term(6.0 * beta * s.powi(3), &[(PXX, 1), (PX, 2)], Zd::Z),
    ]
}

/// Pointwise value of one term on the grid.
pub fn term_field(t: &Term, tables: &AtomTables, z: &ZField) -> Result<Vec<f64>> {
    let w = tables.eval(&t.weight)?;
    Ok(w.iter().zip(z.get(t.zd)).map(|(w, v)| t.coef * w * v).collect())
}

fn sum_fields(terms: &[Term], tables: &AtomTables, z: &ZField) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; z.n_t() * z.n_x()];
    for t in terms {
        for (a, v) in acc.iter_mut().zip(term_field(t, tables, z)?) {
            *a += v;
        }
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct ConjugateDecomposition {
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub grid: AuditGrid,
    pub tables: AtomTables,
    pub z: ZField,
    pub m11: Vec<f64>,
    pub m12: Vec<f64>,
    pub m21: Vec<f64>,
    pub m22: Vec<f64>,
    pub n: Vec<f64>,
    /// `e^{sφ₀} f_η`, scaled by `e^{−c}` like [`ZField`].
    pub source: Vec<f64>,
    /// `‖M₁z + M₂z + Nz − e^{sφ₀}f_η‖` in the space–time `L²` norm.
    pub residual: f64,
    pub source_norm: f64,
}

impl ConjugateDecomposition {
    pub fn relative_residual(&self) -> f64 {
        if self.source_norm > 0.0 {
            self.residual / self.source_norm
        } else {
            self.residual
        }
    }
}

/// Evaluates every piece of the conjugated operator for one sample.
pub fn conjugate_decompose(eta: &BeamSample, wf: &WeightFamily, beta: f64, grid: AuditGrid) -> Result<ConjugateDecomposition> {
    if (eta.t_final - wf.params.t_final).abs() > 1e-14 * wf.params.t_final {
        return Err(Error::DimensionMismatch(format!(
            "sample horizon {} differs from weight horizon {}",
            eta.t_final, wf.params.t_final
        )));
    }
    if eta.max_mode() > grid.n_x / 4 {
        return Err(Error::GridTooCoarse(format!(
            "sample uses mode {} but the grid only resolves {} modes",
            eta.max_mode(),
            grid.n_x / 4
        )));
    }
    let (s, alpha) = (wf.params.s, wf.params.alpha);
    let (times, xs, _, _) = space_time_nodes(eta.t_final, grid)?;
    let tables = AtomTables::build(wf, &times, &xs)?;
    let z = build_z(eta, wf, &tables, grid)?;
    let (m1, m2) = m_terms(s, alpha, beta);
    let m11 = sum_fields(&m1[..5], &tables, &z)?;
    let m12 = sum_fields(&m1[5..], &tables, &z)?;
    let m21 = sum_fields(&m2[..5], &tables, &z)?;
    let m22 = sum_fields(&m2[5..], &tables, &z)?;
    let n = sum_fields(&n_terms(s, alpha, beta), &tables, &z)?;

    let nx = xs.len();
    let (e_tt, e_4, e_txx) = (
        eta.grid_derivative(2, 0, &times, &xs),
        eta.grid_derivative(0, 4, &times, &xs),
        eta.grid_derivative(1, 2, &times, &xs),
    );
    let mut source = vec![0.0; times.len() * nx];
    for i in 0..times.len() {
        for j in 0..nx {
            let k = i * nx + j;
            let e = (s * tables.f[0][j] * tables.l[0][i] - z.ln_scale).exp();
            source[k] = e * (e_tt[k] + e_4[k] - alpha * e_txx[k]);
        }
    }
    let mut res2 = 0.0;
    let mut src2 = 0.0;
    for k in 0..source.len() {
        let r = m11[k] + m12[k] + m21[k] + m22[k] + n[k] - source[k];
        res2 += r * r;
        src2 += source[k] * source[k];
    }
    let residual = (z.cell * res2).sqrt();
    let source_norm = (z.cell * src2).sqrt();
    if !residual.is_finite() {
        return Err(Error::ResourceLimit("weight overflow in the conjugated operator".into()));
    }
    Ok(ConjugateDecomposition { s, alpha, beta, grid, tables, z, m11, m12, m21, m22, n, source, residual, source_norm })
}
