use std::fmt;
use std::sync::Arc;

use rbsde_core::fixtures::{self, Horizon, Params};
use rbsde_core::rng::PathRng;
use rbsde_core::terminal::StateFn;
use rbsde_core::{AlphaRule, DomainSpec, Error, GeneratorSpec, Point, Result, SdeSpec, TerminalCondition};
use rbsde_oracle::{fd_elliptic, fd_parabolic, EllipticSpec, FdElliptic, FdParabolic, ParabolicSpec};
use serde::Serialize;

/// Envelope constants: `|h(x)| ≤ K e^{p|x|^q}` and
/// `|g(t, x, y, 0)| ≤ K e^{p|x|^q} (1 + |y|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub k: f64,
    pub p: f64,
    pub q: f64,
}

impl Growth {
    pub fn new(k: f64, p: f64, q: f64) -> Result<Self> {
        if !(k >= 0.0 && p >= 0.0 && k.is_finite() && p.is_finite()) {
            return Err(Error::Config(format!("growth constants need K, p ≥ 0 (got K = {k}, p = {p})")));
        }
        if !(1.0..2.0).contains(&q) {
            return Err(Error::Config(format!("growth exponent q must lie in [1, 2) (got {q})")));
        }
        Ok(Growth { k, p, q })
    }

    pub fn bound(&self, x: &[f64]) -> f64 {
        self.k * (self.p * norm(x).powf(self.q)).exp()
    }
}

/// Point at which `u` is evaluated. Elliptic probes ignore `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Probe {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Probe { t, x }
    }

    pub fn at(x: f64) -> Self {
        Probe { t: 0.0, x: vec![x] }
    }

    /// `t=…;x=…[,…]`, the probe label used in CSV output.
    pub fn label(&self) -> String {
        let xs: Vec<String> = self.x.iter().map(|v| v.to_string()).collect();
        format!("t={};x={}", self.t, xs.join(","))
    }
}

#[derive(Debug, Clone)]
pub enum PdeKind {
    /// `u(t, x) = Y_t^{t,x}` on `[0, horizon]`.
    Parabolic { horizon: f64 },
    /// `u(x) = Y_0^x` with `τ_x` the exit time from `domain`, simulated up to `t_cap`.
    Elliptic { domain: DomainSpec, t_cap: f64 },
}

pub type ExactFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct PdeProblemSpec {
    pub name: String,
    pub sde: SdeSpec,
    pub generator: GeneratorSpec,
    /// Terminal (parabolic) or boundary (elliptic) map `h`.
    pub h: Arc<StateFn>,
    pub kind: PdeKind,
    pub growth: Growth,
    pub probes: Vec<Probe>,
    pub alpha: Option<AlphaRule>,
    /// Closed-form `u(t, x)` when one is known.
    pub exact: Option<Arc<ExactFn>>,
}

impl fmt::Debug for PdeProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PdeProblemSpec({}, {:?}, {} probes)", self.name, self.kind, self.probes.len())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl PdeProblemSpec {
    /// Builds a problem from a catalogue fixture whose terminal value is a
    /// function of the state. Known closed forms (`heat`, `elliptic-exit`)
    /// are attached as the exact oracle.
    pub fn from_fixture(id: &str, overrides: &Params, growth: Growth, probes: Vec<Probe>) -> Result<Self> {
        let fx = fixtures::build(id, overrides)?;
        let h = match &fx.terminal {
            TerminalCondition::State { k: 1, f, .. } => f.clone(),
            TerminalCondition::Constant(c) if c.len() == 1 => {
                let c = c[0];
                Arc::new(move |_: &[f64], out: &mut [f64]| out[0] = c) as Arc<StateFn>
            }
            other => {
                return Err(Error::Config(format!(
                    "fixture '{id}' has terminal value {other:?}; a PDE problem needs a scalar function of the state"
                )))
            }
        };
        let kind = match &fx.horizon {
            Horizon::Fixed { t } => PdeKind::Parabolic { horizon: *t },
            Horizon::Exit { domain, t_cap } => PdeKind::Elliptic {
                domain: domain.clone(),
                t_cap: *t_cap,
            },
            Horizon::Infinite { .. } => {
                return Err(Error::Config(format!("fixture '{id}' has an infinite horizon and no domain")));
            }
        };
        let param = |k: &str, d: f64| overrides.get(k).copied().unwrap_or(d);
        let exact: Option<Arc<ExactFn>> = match id {
            "heat" => {
                let (mu0, t_end) = (param("mu0", 0.0), param("t", 1.0));
                Some(Arc::new(move |t, x: &[f64]| (mu0 * (t_end - t)).exp() * (x[0] * x[0] + t_end - t)))
            }
            "elliptic-exit" => Some(Arc::new(|_, x: &[f64]| 1.0 - x[0] * x[0])),
            _ => None,
        };
        let spec = PdeProblemSpec {
            name: id.to_string(),
            sde: fx.sde,
            generator: fx.generator,
            h,
            kind,
            growth,
            probes,
            alpha: fx.alpha,
            exact,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.generator.k() != 1 {
            return cfg(format!("{}: PDE problems are scalar (generator has k = {})", self.name, self.generator.k()));
        }
        if self.generator.d() != self.sde.d() {
            return cfg(format!("{}: generator d = {} but the SDE is driven by d = {}", self.name, self.generator.d(), self.sde.d()));
        }
        Growth::new(self.growth.k, self.growth.p, self.growth.q)?;
        for (j, pr) in self.probes.iter().enumerate() {
            if pr.x.len() != self.sde.l() {
                return cfg(format!("{}: probe {j} has {} coordinates, state has {}", self.name, pr.x.len(), self.sde.l()));
            }
            if let PdeKind::Parabolic { horizon } = self.kind {
                if !(pr.t < horizon) {
                    return cfg(format!("{}: probe {j} at t = {} is not before T = {horizon}", self.name, pr.t));
                }
            }
        }
        Ok(())
    }

    pub fn h_at(&self, x: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.h)(x, &mut out);
        out[0]
    }

    pub fn terminal(&self) -> TerminalCondition {
        TerminalCondition::state(1, "h", self.h.clone())
    }

    /// Spot-checks both envelopes on `n` points with coordinates uniform in
    /// `[−radius, radius]`, `y ∈ [−4, 4]` and `t` over the horizon.
    pub fn check_envelopes(&self, n: usize, radius: f64, seed: u64) -> Result<()> {
        let l = self.sde.l();
        let t_end = match self.kind {
            PdeKind::Parabolic { horizon } => horizon,
            PdeKind::Elliptic { t_cap, .. } => t_cap,
        };
        let mut rng = PathRng::new(seed, 0xE17);
        let z = vec![0.0; self.generator.d()];
        let mut x = vec![0.0; l];
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = radius * (2.0 * rng.uniform() - 1.0);
            }
            let t = t_end * rng.uniform();
            let y = 4.0 * (2.0 * rng.uniform() - 1.0);
            let bound = self.growth.bound(&x);
            let h = self.h_at(&x);
            if !(h.abs() <= bound * (1.0 + 1e-12)) {
                return Err(Error::Premise(format!("{}: |h({x:?})| = {} exceeds K e^(p|x|^q) = {bound}", self.name, h.abs())));
            }
            let g = self.generator.eval_vec(&Point::new(t, &x), &[y], &z)[0];
            let gb = bound * (1.0 + y.abs());
            if !(g.abs() <= gb * (1.0 + 1e-12)) {
                return Err(Error::Premise(format!(
                    "{}: |g({t}, {x:?}, {y}, 0)| = {} exceeds the envelope {gb}",
                    self.name,
                    g.abs()
                )));
            }
        }
        Ok(())
    }

    fn scalar_coefficients(&self) -> Result<Scalar> {
        if self.sde.l() != 1 || self.sde.d() != 1 || self.generator.needs_alpha {
            return Err(Error::Config(format!(
                "{}: finite-difference reference needs a one-dimensional problem without α",
                self.name
            )));
        }
        let (sde, g) = (self.sde.clone(), self.generator.clone());
        let sde2 = sde.clone();
        Ok(Scalar {
            drift: Arc::new(move |t, x| {
                let mut o = [0.0];
                sde.drift(t, &[x], &mut o);
                o[0]
            }),
            sigma: Arc::new(move |t, x| {
                let mut o = [0.0];
                sde2.diffusion(t, &[x], &mut o);
                o[0]
            }),
            g: Arc::new(move |t, x, u, p| g.eval_vec(&Point::new(t, &[x]), &[u], &[p])[0]),
        })
    }

    /// Finite-difference solution of the same PDE. `None` when the problem
    /// is not one-dimensional. `window` is the half-width of the parabolic
    /// spatial window (ignored for intervals).
    pub fn fd_reference(&self, nx: usize, window: f64) -> Result<Option<FdReference>> {
        let Ok(c) = self.scalar_coefficients() else {
            return Ok(None);
        };
        match &self.kind {
            PdeKind::Parabolic { horizon } => {
                let h = self.h.clone();
                let spec = ParabolicSpec {
                    drift: c.drift,
                    sigma: c.sigma,
                    g: c.g,
                    h: Arc::new(move |x| {
                        let mut o = [0.0];
                        h(&[x], &mut o);
                        o[0]
                    }),
                    horizon: *horizon,
                    x_max: window,
                    closure: rbsde_oracle::Closure::Extrapolate,
                };
                let nt = spec.min_steps(nx);
                Ok(Some(FdReference::Parabolic(fd_parabolic(&spec, nx, nt)?)))
            }
            PdeKind::Elliptic { domain, .. } => {
                let Some((lo, hi)) = domain.interval else {
                    return Ok(None);
                };
                let (drift, sigma, g) = (c.drift, c.sigma, c.g);
                let mut spec = EllipticSpec::new(
                    Arc::new(move |x| sigma(0.0, x)),
                    Arc::new(move |x, u, p| g(0.0, x, u, p)),
                    (lo, hi),
                    (self.h_at(&[lo]), self.h_at(&[hi])),
                );
                spec.drift = Arc::new(move |x| drift(0.0, x));
                Ok(Some(FdReference::Elliptic(fd_elliptic(&spec, nx)?)))
            }
        }
    }
}

struct Scalar {
    drift: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    sigma: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    g: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
}

#[derive(Debug, Clone)]
pub enum FdReference {
    Parabolic(FdParabolic),
    Elliptic(FdElliptic),
}

impl FdReference {
    pub fn value(&self, probe: &Probe) -> Option<f64> {
        match self {
            FdReference::Parabolic(s) => s.value(probe.t, probe.x[0]),
            FdReference::Elliptic(s) => s.value(probe.x[0]),
        }
    }
}
