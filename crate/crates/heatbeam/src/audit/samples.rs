//! Smooth space–time samples with endpoint-flat time envelopes.
//!
//! Every sample is a finite sum of Fourier modes in `x1` whose coefficients are
//! polynomials in `τ = t/T` carrying the factor `64 τ³(1 − τ)³`, so the sample
//! and its first two time derivatives vanish at `t ∈ {0, T}`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extra polynomial degree multiplying the envelope.
const TIME_DEGREE: usize = 2;
/// Degree of the `x2` polynomials in heat samples (lowest power 1).
const HEAT_X2_DEGREE: usize = 3;

/// Polynomial in `τ`, lowest coefficient first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect())
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_complex(&self, x: Complex64) -> Complex64 {
        self.0.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * x + c)
    }
}

/// `64 τ³(1 − τ)³ q(τ)` for a random `q` of degree [`TIME_DEGREE`].
fn random_time_poly<R: Rng>(scale: f64, rng: &mut R) -> Poly {
    let env = Poly(vec![0.0, 0.0, 0.0, 64.0, -192.0, 192.0, -64.0]);
    let q = Poly((0..=TIME_DEGREE).map(|_| scale * rng.gen_range(-1.0..1.0)).collect());
    env.mul(&q)
}

/// `[p, ∂t p, ∂²t p]` with `∂t = T⁻¹ ∂τ`.
fn time_jets(p: &Poly, t_final: f64) -> [Poly; 3] {
    let d1 = p.derivative();
    let d2 = d1.derivative();
    let c = 1.0 / t_final;
    [p.clone(), Poly(d1.0.iter().map(|v| v * c).collect()), Poly(d2.0.iter().map(|v| v * c * c).collect())]
}

fn trig_derivative(k: f64, x: f64, b: usize, cos_part: bool) -> f64 {
    // d^b/dx^b cos(kx) = k^b cos(kx + bπ/2); sin likewise
    let phase = k * x + b as f64 * std::f64::consts::FRAC_PI_2;
    let kb = k.powi(b as i32);
    if cos_part {
        kb * phase.cos()
    } else {
        kb * phase.sin()
    }
}

/// `η(t, x1) = Σ_k a_k(t) cos kx1 + b_k(t) sin kx1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSample {
    pub t_final: f64,
    /// `[a_k, b_k]` as `[value, ∂t, ∂²t]` polynomials in `τ`.
    modes: Vec<[[Poly; 3]; 2]>,
}

impl BeamSample {
    /// Random sample with modes `0..=max_mode` and coefficients decaying like `k⁻³`.
    pub fn random<R: Rng>(t_final: f64, max_mode: usize, rng: &mut R) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
        }
        let modes = (0..=max_mode)
            .map(|k| {
                let scale = (k.max(1) as f64).powi(-3);
                let a = random_time_poly(scale, rng);
                let b = if k == 0 { Poly(vec![0.0]) } else { random_time_poly(scale, rng) };
                [time_jets(&a, t_final), time_jets(&b, t_final)]
            })
            .collect();
        Ok(Self { t_final, modes })
    }

    pub fn zero(t_final: f64) -> Self {
        let z = Poly(vec![0.0]);
        let jets = [z.clone(), z.clone(), z];
        Self { t_final, modes: vec![[jets.clone(), jets]] }
    }

    pub fn max_mode(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            for part in m.iter_mut() {
                for p in part.iter_mut() {
                    p.0.iter_mut().for_each(|v| *v *= c);
                }
            }
        }
        out
    }

    /// `∂t^a ∂x1^b η` on the time-major grid `times × xs`.
    pub fn grid_derivative(&self, a: usize, b: usize, times: &[f64], xs: &[f64]) -> Vec<f64> {
        let nx = xs.len();
        let mut out = vec![0.0; times.len() * nx];
        for (k, [ca, cb]) in self.modes.iter().enumerate() {
            let kf = k as f64;
            let cos_k: Vec<f64> = xs.iter().map(|&x| trig_derivative(kf, x, b, true)).collect();
            let sin_k: Vec<f64> = xs.iter().map(|&x| trig_derivative(kf, x, b, false)).collect();
            for (i, &t) in times.iter().enumerate() {
                let tau = t / self.t_final;
                let (pa, pb) = (ca[a].eval(tau), if k > 0 { cb[a].eval(tau) } else { 0.0 });
                if pa == 0.0 && pb == 0.0 {
                    continue;
                }
                for (o, (c, s)) in out[i * nx..(i + 1) * nx].iter_mut().zip(cos_k.iter().zip(&sin_k)) {
                    *o += pa * c + pb * s;
                }
            }
        }
        out
    }

    /// `∂t^a ∂x1^b η` at `(t, x1)`, `a ≤ 2`.
    pub fn derivative(&self, a: usize, b: usize, t: f64, x1: f64) -> f64 {
        let tau = t / self.t_final;
        let mut acc = 0.0;
        for (k, [ca, cb]) in self.modes.iter().enumerate() {
            let kf = k as f64;
            acc += ca[a].eval(tau) * trig_derivative(kf, x1, b, true);
            if k > 0 {
                acc += cb[a].eval(tau) * trig_derivative(kf, x1, b, false);
            }
        }
        acc
    }
}

/// `u(t, x1, x2) = Σ_k Σ_p x2^p (a_{kp}(t) cos kx1 + b_{kp}(t) sin kx1)`, `p = 1..=3`,
/// so `u = 0` on `Γ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatSample {
    pub t_final: f64,
    /// `modes[k][p − 1] = [a, b]`, each `[value, ∂t, ∂²t]`.
    modes: Vec<Vec<[[Poly; 3]; 2]>>,
}

/// `u` and its first derivatives at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeatJet {
    pub u: f64,
    pub ut: f64,
    pub u1: f64,
    pub u2: f64,
    pub u11: f64,
    pub u22: f64,
}

impl HeatJet {
    pub fn laplacian(&self) -> f64 {
        self.u11 + self.u22
    }
}

impl HeatSample {
    pub fn random<R: Rng>(t_final: f64, max_mode: usize, rng: &mut R) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
        }
        let modes = (0..=max_mode)
            .map(|k| {
                let scale = (k.max(1) as f64).powi(-3);
                (1..=HEAT_X2_DEGREE)
                    .map(|_| {
                        let a = random_time_poly(scale, rng);
                        let b = if k == 0 { Poly(vec![0.0]) } else { random_time_poly(scale, rng) };
                        [time_jets(&a, t_final), time_jets(&b, t_final)]
                    })
                    .collect()
            })
            .collect();
        Ok(Self { t_final, modes })
    }

    pub fn zero(t_final: f64) -> Self {
        let z = Poly(vec![0.0]);
        let jets = [z.clone(), z.clone(), z];
        Self { t_final, modes: vec![vec![[jets.clone(), jets]]] }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            for pp in m.iter_mut() {
                for part in pp.iter_mut() {
                    for p in part.iter_mut() {
                        p.0.iter_mut().for_each(|v| *v *= c);
                    }
                }
            }
        }
        out
    }

    pub fn jet(&self, t: f64, x1: f64, x2: f64) -> HeatJet {
        let tau = t / self.t_final;
        let mut j = HeatJet::default();
        for (k, per_p) in self.modes.iter().enumerate() {
            let kf = k as f64;
            let (c, s) = ((kf * x1).cos(), (kf * x1).sin());
            for (pi, [ca, cb]) in per_p.iter().enumerate() {
                let p = (pi + 1) as i32;
                let (q, dq) = (x2.powi(p), p as f64 * x2.powi(p - 1));
                let ddq = if p >= 2 { (p * (p - 1)) as f64 * x2.powi(p - 2) } else { 0.0 };
                let (a0, a1) = (ca[0].eval(tau), ca[1].eval(tau));
                let (b0, b1) = (cb[0].eval(tau), cb[1].eval(tau));
                let trig = a0 * c + b0 * s;
                j.u += q * trig;
                j.ut += q * (a1 * c + b1 * s);
                j.u1 += q * kf * (-a0 * s + b0 * c);
                j.u11 -= q * kf * kf * trig;
                j.u2 += dq * trig;
                j.u22 += ddq * trig;
            }
        }
        j
    }

    /// `u` at complex `(t, x1, x2)`; used for complex-step derivatives.
    pub fn value_complex(&self, t: Complex64, x1: Complex64, x2: Complex64) -> Complex64 {
        let tau = t / self.t_final;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, per_p) in self.modes.iter().enumerate() {
            let kf = k as f64;
            let (c, s) = ((x1 * kf).cos(), (x1 * kf).sin());
            for (pi, [ca, cb]) in per_p.iter().enumerate() {
                let q = x2.powi((pi + 1) as i32);
                acc += q * (ca[0].eval_complex(tau) * c + cb[0].eval_complex(tau) * s);
            }
        }
        acc
    }
}
