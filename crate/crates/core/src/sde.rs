use std::fmt;
use std::sync::Arc;

use crate::error::{config, Result};

pub type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Writes the `l × d` diffusion matrix row-major.
pub type DiffusionFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type RateFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// Forward SDE `dX = b(t, X) dt + σ(t, X) dB` with `X ∈ ℝ^l`, `B ∈ ℝ^d`.
#[derive(Clone)]
pub struct SdeSpec {
    l: usize,
    d: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    pub name: String,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SdeSpec({}, l = {}, d = {})", self.name, self.l, self.d)
    }
}

impl SdeSpec {
    pub fn new(
        name: impl Into<String>,
        l: usize,
        d: usize,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
    ) -> Result<Self> {
        if l == 0 || d == 0 {
            return config("state and noise dimensions must be ≥ 1");
        }
        Ok(SdeSpec {
            l,
            d,
            drift,
            diffusion,
            name: name.into(),
        })
    }

    /// `X = s B` in `ℝ^d`.
    pub fn scaled_brownian(d: usize, s: f64) -> Self {
        SdeSpec {
            l: d,
            d,
            drift: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            diffusion: Arc::new(move |_, _, out: &mut [f64]| {
                out.fill(0.0);
                for j in 0..d {
                    out[j * d + j] = s;
                }
            }),
            name: if s == 1.0 {
                format!("brownian-{d}d")
            } else {
                format!("brownian-{d}d-x{s}")
            },
        }
    }

    pub fn brownian(d: usize) -> Self {
        Self::scaled_brownian(d, 1.0)
    }

    /// `dX = -θ X dt + σ dB` in one dimension.
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Self {
        SdeSpec {
            l: 1,
            d: 1,
            drift: Arc::new(move |_, x, out: &mut [f64]| out[0] = -theta * x[0]),
            diffusion: Arc::new(move |_, _, out: &mut [f64]| out[0] = sigma),
            name: format!("ou-{theta}-{sigma}"),
        }
    }

    /// Appends a coordinate `A` with `dA = rate(t, X) dt` (no noise).
    ///
    /// The Euler step integrates the rate by the left-point rule, so `A` at
    /// node `i` equals the left-Riemann sum used for weight integrals.
    pub fn with_running_integral(self, rate: Arc<RateFn>) -> Self {
        let base_l = self.l;
        let d = self.d;
        let drift = self.drift.clone();
        let diffusion = self.diffusion.clone();
        SdeSpec {
            l: base_l + 1,
            d,
            drift: Arc::new(move |t, x, out: &mut [f64]| {
                drift(t, &x[..base_l], &mut out[..base_l]);
                out[base_l] = rate(t, &x[..base_l]);
            }),
            diffusion: Arc::new(move |t, x, out: &mut [f64]| {
                diffusion(t, &x[..base_l], &mut out[..base_l * d]);
                out[base_l * d..].fill(0.0);
            }),
            name: format!("{}+integral", self.name),
        }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Interior,
    Boundary,
    Exterior,
}

pub type MembershipFn = dyn Fn(&[f64]) -> Membership + Send + Sync;

/// Open domain `D` with its closure used for exit detection.
#[derive(Clone)]
pub struct DomainSpec {
    membership: Arc<MembershipFn>,
    /// Asserts that every boundary point is regular (`Γ = ∂D`): a start on
    /// `∂D` exits immediately. This is a declared premise, never computed.
    pub regular_boundary: bool,
    /// `(lo, hi)` when the domain is an interval in the first coordinate.
    pub interval: Option<(f64, f64)>,
    pub name: String,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DomainSpec({})", self.name)
    }
}

impl DomainSpec {
    pub fn new(name: impl Into<String>, regular_boundary: bool, membership: Arc<MembershipFn>) -> Self {
        DomainSpec {
            membership,
            regular_boundary,
            interval: None,
            name: name.into(),
        }
    }

    /// `(lo, hi)` in the first state coordinate.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return config(format!("interval needs lo < hi (got {lo}, {hi})"));
        }
        Ok(DomainSpec {
            membership: Arc::new(move |x: &[f64]| {
                let v = x[0];
                if v > lo && v < hi {
                    Membership::Interior
                } else if v == lo || v == hi {
                    Membership::Boundary
                } else {
                    Membership::Exterior
                }
            }),
            regular_boundary: true,
            interval: Some((lo, hi)),
            name: format!("interval({lo}, {hi})"),
        })
    }

    /// Open ball in the first `center.len()` coordinates.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return config("ball radius must be > 0");
        }
        let name = format!("ball(r = {radius})");
        Ok(DomainSpec {
            membership: Arc::new(move |x: &[f64]| {
                let r2: f64 = center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum();
                let rr = radius * radius;
                if r2 < rr {
                    Membership::Interior
                } else if r2 == rr {
                    Membership::Boundary
                } else {
                    Membership::Exterior
                }
            }),
            regular_boundary: true,
            interval: None,
            name,
        })
    }

    pub fn membership(&self, x: &[f64]) -> Membership {
        (self.membership)(x)
    }

    /// Whether a path sitting at `x` on node `i` has left the domain.
    pub fn exited(&self, x: &[f64], node: usize) -> bool {
        match self.membership(x) {
            Membership::Interior => false,
            Membership::Exterior => true,
            Membership::Boundary => node == 0 && self.regular_boundary,
        }
    }
}
