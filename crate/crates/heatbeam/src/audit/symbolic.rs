//! Polynomials in the derivatives of `φ₀ = F₀(x1)·L(t)`.
//!
//! An atom `(a, b)` stands for `∂t^a ∂x1^b φ₀ = L⁽ᵃ⁾(t)·F₀⁽ᵇ⁾(x1)`. Expressions are
//! sums of monomials in atoms; `dx` and `dt` apply the product rule, so the
//! weights appearing after an integration by parts can be written down exactly
//! as `dx²[(∂x1φ₀)⁴ ∂²x1φ₀]` and evaluated pointwise.

use crate::error::{Error, Result};
use crate::weights::WeightFamily;

/// Highest `x1` order tabulated for `F₀`.
pub const MAX_X_ORDER: usize = 8;
/// Highest `t` order tabulated for `L`.
pub const MAX_T_ORDER: usize = 3;

pub type Atom = (u8, u8);

pub const P: Atom = (0, 0);
pub const PX: Atom = (0, 1);
pub const PXX: Atom = (0, 2);
pub const PXXX: Atom = (0, 3);
pub const PXXXX: Atom = (0, 4);
pub const PT: Atom = (1, 0);
pub const PTX: Atom = (1, 1);
pub const PTXX: Atom = (1, 2);
pub const PTT: Atom = (2, 0);

#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    /// Sorted atoms with multiplicity.
    pub atoms: Vec<Atom>,
}

impl Monomial {
    fn normalized(mut self) -> Self {
        self.atoms.sort_unstable();
        self
    }
}

/// Sum of monomials with like terms merged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightExpr {
    pub terms: Vec<Monomial>,
}

impl WeightExpr {
    pub fn one() -> Self {
        Self { terms: vec![Monomial { coef: 1.0, atoms: vec![] }] }
    }

    /// Product of atoms raised to the given powers.
    pub fn prod(factors: &[(Atom, u32)]) -> Self {
        let mut atoms = Vec::new();
        for &(a, p) in factors {
            atoms.extend(std::iter::repeat(a).take(p as usize));
        }
        Self { terms: vec![Monomial { coef: 1.0, atoms }.normalized()] }
    }

    fn merged(mut terms: Vec<Monomial>) -> Self {
        terms.sort_by(|a, b| a.atoms.cmp(&b.atoms));
        let mut out: Vec<Monomial> = Vec::with_capacity(terms.len());
        for t in terms {
            match out.last_mut() {
                Some(last) if last.atoms == t.atoms => last.coef += t.coef,
                _ => out.push(t),
            }
        }
        out.retain(|m| m.coef != 0.0);
        Self { terms: out }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::merged(self.terms.iter().map(|m| Monomial { coef: c * m.coef, atoms: m.atoms.clone() }).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::merged(self.terms.iter().chain(&other.terms).cloned().collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut atoms = a.atoms.clone();
                atoms.extend_from_slice(&b.atoms);
                out.push(Monomial { coef: a.coef * b.coef, atoms }.normalized());
            }
        }
        Self::merged(out)
    }

    fn differentiate(&self, bump: impl Fn(Atom) -> Atom) -> Self {
        let mut out = Vec::new();
        for m in &self.terms {
            for i in 0..m.atoms.len() {
                let mut atoms = m.atoms.clone();
                atoms[i] = bump(atoms[i]);
                out.push(Monomial { coef: m.coef, atoms }.normalized());
            }
        }
        Self::merged(out)
    }

    pub fn dx(&self) -> Self {
        self.differentiate(|(a, b)| (a, b + 1))
    }

    pub fn dt(&self) -> Self {
        self.differentiate(|(a, b)| (a + 1, b))
    }

    pub fn dx_n(&self, n: usize) -> Self {
        (0..n).fold(self.clone(), |e, _| e.dx())
    }

    pub fn dt_n(&self, n: usize) -> Self {
        (0..n).fold(self.clone(), |e, _| e.dt())
    }

    pub fn max_orders(&self) -> (u8, u8) {
        self.terms
            .iter()
            .flat_map(|m| m.atoms.iter())
            .fold((0, 0), |(ma, mb), &(a, b)| (ma.max(a), mb.max(b)))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `F₀⁽ᵇ⁾` at the `x1` nodes and `L⁽ᵃ⁾` at the time nodes.
#[derive(Clone, Debug)]
pub struct AtomTables {
    /// `f[b][j]`.
    pub f: Vec<Vec<f64>>,
    /// `l[a][i]`.
    pub l: Vec<Vec<f64>>,
}

/// `[F₀, F₀′, …, F₀⁽ᵐ⁾]` at `x1`, from `g = e^h` with `h = μψ_I + 8λΨ` and
/// `g⁽ⁿ⁾ = Σ_k C(n−1, k) h⁽ᵏ⁺¹⁾ g⁽ⁿ⁻¹⁻ᵏ⁾`.
pub fn torus_factor_jet(wf: &WeightFamily, x1: f64, m: usize) -> Vec<f64> {
    let mu = wf.params.mu;
    let psi = wf.spatial.torus.jet(x1, m);
    let lp = wf.params.lambda * wf.spatial.big_psi;
    let h: Vec<f64> = psi.iter().map(|p| mu * p).collect();
    let mut g = vec![(h[0] + 8.0 * lp).exp()];
    for n in 1..=m {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for k in 0..n {
            acc += binom * h[k + 1] * g[n - 1 - k];
            binom = binom * (n - 1 - k) as f64 / (k + 1) as f64;
        }
        g.push(acc);
    }
    let mut f = g;
    f[0] -= (10.0 * lp).exp();
    f
}

impl AtomTables {
    pub fn build(wf: &WeightFamily, times: &[f64], xs: &[f64]) -> Result<Self> {
        let mut f = vec![vec![0.0; xs.len()]; MAX_X_ORDER + 1];
        for (j, &x) in xs.iter().enumerate() {
            for (b, v) in torus_factor_jet(wf, x, MAX_X_ORDER).into_iter().enumerate() {
                f[b][j] = v;
            }
        }
        let mut l = vec![vec![0.0; times.len()]; MAX_T_ORDER + 1];
        for (i, &t) in times.iter().enumerate() {
            let tj = wf.time_jet(t)?;
            for a in 0..=MAX_T_ORDER {
                l[a][i] = tj.l[a];
            }
        }
        Ok(Self { f, l })
    }

    pub fn n_times(&self) -> usize {
        self.l[0].len()
    }

    pub fn n_x(&self) -> usize {
        self.f[0].len()
    }

    /// Values of `e` on the time-major `(t, x1)` grid.
    pub fn eval(&self, e: &WeightExpr) -> Result<Vec<f64>> {
        let (ma, mb) = e.max_orders();
        if ma as usize > MAX_T_ORDER || mb as usize > MAX_X_ORDER {
            return Err(Error::InvalidArgument(format!(
                "weight needs ∂t^{ma} ∂x^{mb}, tables hold {MAX_T_ORDER}, {MAX_X_ORDER}"
            )));
        }
        let (nt, nx) = (self.n_times(), self.n_x());
        let mut out = vec![0.0; nt * nx];
        for m in &e.terms {
            for i in 0..nt {
                let row = &mut out[i * nx..(i + 1) * nx];
                for (j, o) in row.iter_mut().enumerate() {
                    let mut v = m.coef;
                    for &(a, b) in &m.atoms {
                        v *= self.l[a as usize][i] * self.f[b as usize][j];
                    }
                    *o += v;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{regime_params, SpatialWeights};

    #[test]
    fn product_rule_and_merging() {
        // d/dx (φx²) = 2 φx φxx
        let e = WeightExpr::prod(&[(PX, 2)]).dx();
        assert_eq!(e, WeightExpr::prod(&[(PX, 1), (PXX, 1)]).scale(2.0));
        // d/dt (φ φx) = φt φx + φ φtx
        let e = WeightExpr::prod(&[(P, 1), (PX, 1)]).dt();
        let want = WeightExpr::prod(&[(PT, 1), (PX, 1)]).add(&WeightExpr::prod(&[(P, 1), (PTX, 1)]));
        assert_eq!(e, want);
        assert!(e.add(&e.scale(-1.0)).is_zero());
    }

    #[test]
    fn torus_jet_matches_weight_family() {
        let wf = WeightFamily::new(SpatialWeights::default_weights(), regime_params(1.0, 0.2, 0.2, 1.0, 2.0));
        for x in [0.3, 2.9, 4.4] {
            let a = torus_factor_jet(&wf, x, MAX_X_ORDER);
            let (b, _) = wf.torus_factor(x);
            for k in 0..6 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * (1.0 + b[k].abs()), "order {k}");
            }
            let h = 1e-4;
            let p = torus_factor_jet(&wf, x + h, MAX_X_ORDER);
            let q = torus_factor_jet(&wf, x - h, MAX_X_ORDER);
            for k in 5..MAX_X_ORDER {
                let fd = (p[k] - q[k]) / (2.0 * h);
                assert!((fd - a[k + 1]).abs() <= 1e-5 * (1.0 + a[k + 1].abs()), "order {}", k + 1);
            }
        }
    }
}
