//! Torus arcs, vertical intervals and the nested observation sets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Open arc `(start, start + length)` of the torus, read modulo 2π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusArc {
    pub start: f64,
    pub end: f64,
}

impl TorusArc {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let len = end - start;
        if !(len > 0.0 && len < TWO_PI) || !start.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "arc ({start}, {end}) must have length in (0, 2π)"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn centered(center: f64, half_width: f64) -> Result<Self> {
        Self::new(center - half_width, center + half_width)
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.length()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Offset of `x` from `start`, reduced to `[0, 2π)`.
    fn offset(&self, x: f64) -> f64 {
        (x - self.start).rem_euclid(TWO_PI)
    }

    pub fn contains(&self, x: f64) -> bool {
        let y = self.offset(x);
        y > 0.0 && y < self.length()
    }

    /// Distance of `x` to the complement of the arc (0 when outside).
    pub fn depth(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let y = self.offset(x);
        y.min(self.length() - y)
    }

    /// Smallest gap between `inner` and the complement of `self`, or a negative
    /// number if `inner` is not contained.
    pub fn margin_over(&self, inner: &TorusArc) -> f64 {
        let a = self.offset(inner.start);
        let b = a + inner.length();
        if b > self.length() {
            return -1.0;
        }
        a.min(self.length() - b)
    }
}

/// Open interval in `x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty interval ({lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn margin_over(&self, inner: &Interval) -> f64 {
        (inner.lo - self.lo).min(self.hi - inner.hi)
    }
}

/// Rectangle `arc × interval` inside Ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectRegion {
    pub x1: TorusArc,
    pub x2: Interval,
}

impl RectRegion {
    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        self.x1.contains(x1) && self.x2.contains(x2)
    }

    pub fn margin_over(&self, inner: &RectRegion) -> f64 {
        self.x1.margin_over(&inner.x1).min(self.x2.margin_over(&inner.x2))
    }
}

/// `ω₀ ⋐ ω ⊂ Ω` and `J₀ ⋐ J₁ ⋐ J₂ ⋐ J₃ ⋐ J₄ ⋐ J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRegions {
    pub omega: RectRegion,
    pub omega0: RectRegion,
    pub j: TorusArc,
    /// `J₀, J₁, J₂, J₃, J₄`.
    pub j_chain: [TorusArc; 5],
}

impl ObservationRegions {
    pub fn new(omega: RectRegion, omega0: RectRegion, j: TorusArc, j_chain: [TorusArc; 5]) -> Result<Self> {
        let regions = Self { omega, omega0, j, j_chain };
        regions.validate()?;
        Ok(regions)
    }

    fn validate(&self) -> Result<()> {
        let inside = Interval { lo: 0.0, hi: 1.0 };
        if inside.margin_over(&self.omega.x2) < 0.0 {
            return Err(Error::InvalidArgument("ω must lie inside 0 <= x2 <= 1".into()));
        }
        if !(self.omega.margin_over(&self.omega0) > 0.0) {
            return Err(Error::InvalidArgument("ω₀ must be compactly contained in ω".into()));
        }
        let names = ["J₀", "J₁", "J₂", "J₃", "J₄"];
        for i in 0..4 {
            if !(self.j_chain[i + 1].margin_over(&self.j_chain[i]) > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{} must be compactly contained in {}",
                    names[i],
                    names[i + 1]
                )));
            }
        }
        if !(self.j.margin_over(&self.j_chain[4]) > 0.0) {
            return Err(Error::InvalidArgument("J₄ must be compactly contained in J".into()));
        }
        Ok(())
    }

    pub fn j0(&self) -> &TorusArc {
        &self.j_chain[0]
    }

    /// Default geometry: everything centered at `x1 = π`, with `ω₀` covering `x2 = 1/2`.
    pub fn default_geometry() -> Self {
        let c = PI;
        let arc = |hw: f64| TorusArc::centered(c, hw).expect("valid default arc");
        let omega = RectRegion { x1: arc(1.6), x2: Interval { lo: 0.15, hi: 0.85 } };
        let omega0 = RectRegion { x1: arc(1.3), x2: Interval { lo: 0.25, hi: 0.75 } };
        Self::new(omega, omega0, arc(1.8), [arc(1.2), arc(1.3), arc(1.4), arc(1.5), arc(1.6)])
            .expect("default geometry is nested")
    }

    /// Wider layout used by the control experiments. The default one leaves
    /// too much of the torus unobserved for penalized HUM to resolve short
    /// horizons in double precision.
    pub fn control_geometry() -> Self {
        let c = PI;
        let arc = |hw: f64| TorusArc::centered(c, hw).expect("valid control arc");
        let omega = RectRegion { x1: arc(2.4), x2: Interval { lo: 0.1, hi: 0.9 } };
        let omega0 = RectRegion { x1: arc(2.1), x2: Interval { lo: 0.25, hi: 0.75 } };
        Self::new(omega, omega0, arc(2.6), [arc(2.0), arc(2.1), arc(2.2), arc(2.3), arc(2.4)])
            .expect("control geometry is nested")
    }
}
