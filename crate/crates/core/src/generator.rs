use std::fmt;
use std::sync::Arc;

use crate::error::{config, Result};

/// Where a generator is evaluated: time, forward state and (when the
/// generator needs it) the truncation level `α_t` of the current path.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub alpha: f64,
}

impl<'a> Point<'a> {
    pub fn new(t: f64, x: &'a [f64]) -> Self {
        Point { t, x, alpha: 1.0 }
    }
}

/// `g(t, x, y, z) -> out`, with `y ∈ ℝ^k` and `z ∈ ℝ^{k×d}` row-major.
pub type EvalFn = dyn Fn(&Point, &[f64], &[f64], &mut [f64]) + Send + Sync;
/// `(t, x) -> (μ_t, ν_t)`.
pub type CoeffFn = dyn Fn(f64, &[f64]) -> (f64, f64) + Send + Sync;
/// `(point, z, r) -> sup_{|y| ≤ r} |g(t, y, z) − g(t, 0, z)|`.
pub type EnvelopeFn = dyn Fn(&Point, &[f64], f64) -> f64 + Send + Sync;
/// `(t, x) -> (f_t, μ̄_t, ν̄_t)` bounding `⟨ŷ, g⟩ ≤ f + μ̄|y| + ν̄|z|`.
pub type DriverBoundFn = dyn Fn(f64, &[f64]) -> (f64, f64, f64) + Send + Sync;

/// A BSDE generator with its declared structural constants.
///
/// `coeff` gives the monotonicity constant μ_t (in y) and Lipschitz constant
/// ν_t (in z) that enter the weight process; the optional fields declare
/// further structure used by transforms and assumption checks.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    k: usize,
    d: usize,
    eval: Arc<EvalFn>,
    coeff: Arc<CoeffFn>,
    pub depends_on_z: bool,
    pub needs_alpha: bool,
    pub envelope: Option<Arc<EnvelopeFn>>,
    pub driver_bound: Option<Arc<DriverBoundFn>>,
    /// `(t, x) -> (u_t, v_t)` for `|g(y1,z1) − g(y2,z2)| ≤ u|Δy| + v|Δz|`.
    pub stochastic_lipschitz: Option<Arc<CoeffFn>>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GeneratorSpec({}, k = {}, d = {})", self.name, self.k, self.d)
    }
}

impl GeneratorSpec {
    pub fn new(name: impl Into<String>, k: usize, d: usize, eval: Arc<EvalFn>, coeff: Arc<CoeffFn>) -> Result<Self> {
        if k == 0 || d == 0 {
            return config("generator dimensions must be ≥ 1");
        }
        Ok(GeneratorSpec {
            name: name.into(),
            k,
            d,
            eval,
            coeff,
            depends_on_z: true,
            needs_alpha: false,
            envelope: None,
            driver_bound: None,
            stochastic_lipschitz: None,
        })
    }

    /// `g = μ0 y + Σ_j ν0_j z_j` (k = 1).
    pub fn linear(mu0: f64, nu0: Vec<f64>) -> Self {
        let d = nu0.len().max(1);
        let nu_norm = nu0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let depends_on_z = nu0.iter().any(|&v| v != 0.0);
        let nu_eval = nu0.clone();
        let nu_sl = nu_norm;
        let mut g = GeneratorSpec {
            name: format!("linear(mu0 = {mu0}, nu0 = {nu0:?})"),
            k: 1,
            d,
            eval: Arc::new(move |_, y, z, out| {
                let mut v = mu0 * y[0];
                for (j, c) in nu_eval.iter().enumerate() {
                    v += c * z[j];
                }
                out[0] = v;
            }),
            coeff: Arc::new(move |_, _| (mu0.max(0.0), nu_norm)),
            depends_on_z,
            needs_alpha: false,
            envelope: None,
            driver_bound: None,
            stochastic_lipschitz: None,
        };
        g.envelope = Some(Arc::new(move |_, _, r| mu0.abs() * r));
        g.driver_bound = Some(Arc::new(move |_, _| (0.0, mu0.max(0.0), nu_norm)));
        g.stochastic_lipschitz = Some(Arc::new(move |_, _| (mu0.abs(), nu_sl)));
        g
    }

    /// `g ≡ c`, independent of `(y, z)`.
    pub fn constant(c: Vec<f64>, d: usize) -> Self {
        let k = c.len();
        let c_eval = c.clone();
        let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        GeneratorSpec {
            name: format!("constant({c:?})"),
            k,
            d,
            eval: Arc::new(move |_, _, _, out| out.copy_from_slice(&c_eval)),
            coeff: Arc::new(|_, _| (0.0, 0.0)),
            depends_on_z: false,
            needs_alpha: false,
            envelope: Some(Arc::new(|_, _, _| 0.0)),
            driver_bound: Some(Arc::new(move |_, _| (c_norm, 0.0, 0.0))),
            stochastic_lipschitz: Some(Arc::new(|_, _| (0.0, 0.0))),
        }
    }

    pub fn zero(k: usize, d: usize) -> Self {
        let mut g = Self::constant(vec![0.0; k], d);
        g.name = "zero".into();
        g
    }

    pub fn with_z_free(mut self) -> Self {
        self.depends_on_z = false;
        self
    }

    pub fn with_envelope(mut self, f: Arc<EnvelopeFn>) -> Self {
        self.envelope = Some(f);
        self
    }

    pub fn with_driver_bound(mut self, f: Arc<DriverBoundFn>) -> Self {
        self.driver_bound = Some(f);
        self
    }

    pub fn with_stochastic_lipschitz(mut self, f: Arc<CoeffFn>) -> Self {
        self.stochastic_lipschitz = Some(f);
        self
    }

    /// Replaces the evaluation, keeping dimensions and declared constants.
    pub fn with_eval(mut self, name: impl Into<String>, eval: Arc<EvalFn>) -> Self {
        self.name = name.into();
        self.eval = eval;
        self
    }

    pub fn with_coeff(mut self, coeff: Arc<CoeffFn>) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eval(&self, p: &Point, y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.eval)(p, y, z, out)
    }

    pub fn eval_vec(&self, p: &Point, y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.eval(p, y, z, &mut out);
        out
    }

    pub fn coeff(&self, t: f64, x: &[f64]) -> (f64, f64) {
        (self.coeff)(t, x)
    }

    pub fn eval_fn(&self) -> Arc<EvalFn> {
        self.eval.clone()
    }

    pub fn coeff_fn(&self) -> Arc<CoeffFn> {
        self.coeff.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_evaluates() {
        let g = GeneratorSpec::linear(0.5, vec![0.3]);
        let x = [0.0];
        let p = Point::new(0.0, &x);
        assert_eq!(g.eval_vec(&p, &[2.0], &[1.0]), vec![1.0 + 0.3]);
        assert_eq!(g.coeff(0.0, &x), (0.5, 0.3));
        assert!(g.depends_on_z);
    }

    #[test]
    fn constant_is_z_free() {
        let g = GeneratorSpec::constant(vec![2.0], 1);
        assert!(!g.depends_on_z);
        let x = [0.3];
        assert_eq!(g.eval_vec(&Point::new(0.1, &x), &[5.0], &[7.0]), vec![2.0]);
    }
}
