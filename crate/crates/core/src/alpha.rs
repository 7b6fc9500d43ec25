//! Truncation levels `α_t`: adapted, non-increasing, valued in (0, 1].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One path's history as seen by an α rule. `mu` is the monotonicity trace.
#[derive(Debug, Clone, Copy)]
pub struct AlphaInput<'a> {
    pub times: &'a [f64],
    pub states: &'a [f64],
    pub l: usize,
    pub mu: &'a [f64],
    pub beta: f64,
    pub dt: f64,
}

impl AlphaInput<'_> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Euclidean norm of the first `dims` state coordinates at node `i`.
    pub fn norm(&self, i: usize, dims: usize) -> f64 {
        self.states[i * self.l..i * self.l + dims]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Left-Riemann `∫_0^{t_i} μ` for every node.
    pub fn int_mu(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mu
            .iter()
            .map(|m| {
                let v = acc;
                acc += m * self.dt;
                v
            })
            .collect()
    }
}

pub type AlphaFn = dyn Fn(&AlphaInput) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub struct AlphaRule {
    f: Arc<AlphaFn>,
    /// Apply `α_t ← α_t ∧ e^{−β∫_0^t μ}`.
    pub rescale: bool,
    pub name: String,
}

impl fmt::Debug for AlphaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AlphaRule({}, rescale = {})", self.name, self.rescale)
    }
}

fn running_sup(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    values
        .map(|v| {
            m = m.max(v);
            m
        })
        .collect()
}

impl AlphaRule {
    pub fn new(name: impl Into<String>, f: Arc<AlphaFn>) -> Self {
        AlphaRule {
            f,
            rescale: true,
            name: name.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), Arc::new(move |inp| vec![c; inp.len()]))
    }

    /// `α_t = e^{−t} / (1 + sup_{s≤t} e^{β∫_0^s μ} μ_s)`, the recipe for
    /// stochastic-Lipschitz generators.
    pub fn stochastic_lipschitz() -> Self {
        Self::new(
            "stochastic-lipschitz",
            Arc::new(|inp| {
                let im = inp.int_mu();
                let sup = running_sup((0..inp.len()).map(|i| (inp.beta * im[i]).exp() * inp.mu[i]));
                (0..inp.len()).map(|i| (-inp.times[i]).exp() / (1.0 + sup[i])).collect()
            }),
        )
    }

    /// `α_t = 1 / (1 + sup_{s≤t} |B_s|^power)` with `B` the first `dims` coordinates.
    pub fn bounded_power(power: f64, dims: usize) -> Self {
        Self::new(
            format!("bounded-power({power})"),
            Arc::new(move |inp| {
                let sup = running_sup((0..inp.len()).map(|i| inp.norm(i, dims).powf(power)));
                sup.iter().map(|s| 1.0 / (1.0 + s)).collect()
            }),
        )
    }

    /// `α_t = e^{−β∫_0^t μ − t} / sup_{s≤t} (1 + |B_s|)^4`.
    pub fn quartic(dims: usize) -> Self {
        Self::new(
            "quartic",
            Arc::new(move |inp| {
                let im = inp.int_mu();
                let sup = running_sup((0..inp.len()).map(|i| (1.0 + inp.norm(i, dims)).powi(4)));
                (0..inp.len())
                    .map(|i| (-inp.beta * im[i] - inp.times[i]).exp() / sup[i])
                    .collect()
            }),
        )
    }

    pub fn without_rescale(mut self) -> Self {
        self.rescale = false;
        self
    }

    /// Evaluates the rule on one path, applies the rescaling and checks that
    /// the result lies in (0, 1] and is non-increasing.
    pub fn evaluate(&self, inp: &AlphaInput) -> Result<Vec<f64>> {
        let mut a = (self.f)(inp);
        if a.len() != inp.len() {
            return Err(Error::Invariant(format!("α rule {} returned {} values for {} nodes", self.name, a.len(), inp.len())));
        }
        if self.rescale {
            let im = inp.int_mu();
            for (v, m) in a.iter_mut().zip(im) {
                *v = v.min((-inp.beta * m).exp());
            }
        }
        for (i, &v) in a.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Premise(format!("α must lie in (0, 1]; node {i} has {v}")));
            }
            if i > 0 && v > a[i - 1] * (1.0 + 1e-12) {
                return Err(Error::Premise(format!(
                    "α must be non-increasing; node {i}: {v} > {}",
                    a[i - 1]
                )));
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<'a>(times: &'a [f64], states: &'a [f64], mu: &'a [f64]) -> AlphaInput<'a> {
        AlphaInput {
            times,
            states,
            l: 1,
            mu,
            beta: 1.0,
            dt: times[1] - times[0],
        }
    }

    #[test]
    fn lipschitz_preset_constant_coefficients() {
        let t = [0.0, 0.5, 1.0];
        let x = [0.0; 3];
        let mu = [0.5; 3];
        let a = AlphaRule::stochastic_lipschitz().without_rescale().evaluate(&input(&t, &x, &mu)).unwrap();
        // sup_{s≤t} e^{0.5 s}·0.5 at left-Riemann nodes: s = 0, 0.5, 1.0
        let e = [1.0 / 1.5, (-0.5f64).exp() / (1.0 + 0.5 * 0.25f64.exp()), (-1.0f64).exp() / (1.0 + 0.5 * 0.5f64.exp())];
        for i in 0..3 {
            assert!((a[i] - e[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rescale_caps_by_weight() {
        let t = [0.0, 1.0, 2.0];
        let x = [0.0; 3];
        let mu = [2.0; 3];
        let a = AlphaRule::constant(1.0).evaluate(&input(&t, &x, &mu)).unwrap();
        assert_eq!(a[0], 1.0);
        assert!((a[1] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((a[2] - (-4.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn increasing_rule_is_rejected() {
        let t = [0.0, 1.0];
        let x = [0.0; 2];
        let mu = [0.0; 2];
        let rule = AlphaRule::new("bad", Arc::new(|inp: &AlphaInput| (0..inp.len()).map(|i| 0.5 + 0.1 * i as f64).collect()));
        assert!(matches!(rule.evaluate(&input(&t, &x, &mu)), Err(Error::Premise(_))));
        assert!(AlphaRule::constant(1.5).without_rescale().evaluate(&input(&t, &x, &mu)).is_err());
    }

    #[test]
    fn bounded_power_uses_running_sup() {
        let t = [0.0, 0.5, 1.0];
        let x = [0.0, 2.0, 1.0];
        let mu = [0.0; 3];
        let a = AlphaRule::bounded_power(3.0, 1).evaluate(&input(&t, &x, &mu)).unwrap();
        assert_eq!(a, vec![1.0, 1.0 / 9.0, 1.0 / 9.0]);
    }
}
