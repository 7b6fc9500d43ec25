use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::PathEnsemble;
use crate::error::{config, Error, Result};

/// Parameters of the weight process `a = β μ + (ρ/2) ν²`.
///
/// `rho_bar` is the constant used by the a priori estimates, `1 < ρ̄ ≤ ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightParams {
    pub beta: f64,
    pub rho: f64,
    pub rho_bar: f64,
}

impl WeightParams {
    pub fn new(beta: f64, rho: f64, rho_bar: f64) -> Result<Self> {
        let wp = WeightParams { beta, rho, rho_bar };
        wp.validate()?;
        Ok(wp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return config(format!("beta must be ≥ 1 (got {})", self.beta));
        }
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return config(format!("rho must be > 1 (got {})", self.rho));
        }
        if !(self.rho_bar > 1.0 && self.rho_bar <= self.rho) {
            return config(format!(
                "rho_bar must satisfy 1 < rho_bar ≤ rho (got {} with rho = {})",
                self.rho_bar, self.rho
            ));
        }
        Ok(())
    }

    pub fn a(&self, mu: f64, nu: f64) -> f64 {
        self.beta * mu + 0.5 * self.rho * nu * nu
    }

    /// `C* = 4 (2 + 33 ρ̄/(ρ̄ − 1))²`, the constant of the combined a priori bound.
    pub fn c_star(&self) -> f64 {
        let r = self.rho_bar;
        let inner = 2.0 + 33.0 * r / (r - 1.0);
        4.0 * inner * inner
    }

    /// `2ρ̄/(ρ̄ − 1)`, the constant bounding the martingale part by the sup part.
    pub fn z_constant(&self) -> f64 {
        2.0 * self.rho_bar / (self.rho_bar - 1.0)
    }
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            beta: 1.0,
            rho: 2.0,
            rho_bar: 2.0,
        }
    }
}

/// Left-Riemann running integral: `out[0] = 0`, `out[i] = Σ_{j<i} a_j dt`.
pub fn cumulative_weight(a: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len());
    let mut acc = 0.0;
    for (i, &v) in a.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(Error::Invariant(format!(
                "weight process must be non-negative, a[{i}] = {v}"
            )));
        }
        out.push(acc);
        acc += v * dt;
    }
    Ok(out)
}

/// Per-path traces of μ, ν, a and ∫a on the nodes `0..=last_index`.
#[derive(Debug, Clone)]
pub struct CoefficientTrace {
    offsets: Vec<usize>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub a: Vec<f64>,
    pub cum_a: Vec<f64>,
}

impl CoefficientTrace {
    /// Evaluates `coeff(t, x) -> (μ, ν)` along each path up to `last[p]`.
    pub fn build<F>(ens: &PathEnsemble, last: &[usize], coeff: F, wp: &WeightParams) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> (f64, f64) + Sync,
    {
        if last.len() != ens.n_paths() {
            return config("terminal index count does not match path count");
        }
        let dt = ens.grid().dt();
        let per_path: Vec<Result<[Vec<f64>; 4]>> = (0..ens.n_paths())
            .into_par_iter()
            .map(|p| {
                let n = last[p] + 1;
                if n > ens.stored_len(p) {
                    return Err(Error::Invariant(format!(
                        "path {p}: terminal index {} beyond stored nodes",
                        last[p]
                    )));
                }
                let mut mu = Vec::with_capacity(n);
                let mut nu = Vec::with_capacity(n);
                let mut a = Vec::with_capacity(n);
                for i in 0..n {
                    let (m, v) = coeff(ens.time(i), ens.state(p, i));
                    if !(m >= 0.0) || !(v >= 0.0) {
                        return Err(Error::Invariant(format!(
                            "path {p} node {i}: coefficients must be ≥ 0 (μ = {m}, ν = {v})"
                        )));
                    }
                    mu.push(m);
                    nu.push(v);
                    a.push(wp.a(m, v));
                }
                let cum = cumulative_weight(&a, dt)?;
                Ok([mu, nu, a, cum])
            })
            .collect();
        let mut offsets = Vec::with_capacity(last.len() + 1);
        offsets.push(0);
        let mut out = CoefficientTrace {
            offsets: Vec::new(),
            mu: Vec::new(),
            nu: Vec::new(),
            a: Vec::new(),
            cum_a: Vec::new(),
        };
        for r in per_path {
            let [mu, nu, a, cum] = r?;
            offsets.push(offsets.last().unwrap() + mu.len());
            out.mu.extend(mu);
            out.nu.extend(nu);
            out.a.extend(a);
            out.cum_a.extend(cum);
        }
        out.offsets = offsets;
        Ok(out)
    }

    pub fn n_paths(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub fn cum_a_at(&self, p: usize, i: usize) -> f64 {
        self.cum_a[self.offsets[p] + i]
    }

    /// `∫_0^τ a` on path `p`.
    pub fn cum_a_terminal(&self, p: usize) -> f64 {
        self.cum_a[self.offsets[p + 1] - 1]
    }

    pub fn mu_at(&self, p: usize, i: usize) -> f64 {
        self.mu[self.offsets[p] + i]
    }

    pub fn nu_at(&self, p: usize, i: usize) -> f64 {
        self.nu[self.offsets[p] + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_weight_integrates_linearly() {
        let a = vec![1.5; 5];
        let cum = cumulative_weight(&a, 0.25).unwrap();
        assert_eq!(cum, vec![0.0, 0.375, 0.75, 1.125, 1.5]);
    }

    #[test]
    fn zero_weight_stays_zero() {
        let cum = cumulative_weight(&[0.0; 9], 0.1).unwrap();
        assert!(cum.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(matches!(
            cumulative_weight(&[1.0, -0.1], 0.1),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn param_validation() {
        assert!(WeightParams::new(0.5, 2.0, 2.0).is_err());
        assert!(WeightParams::new(1.0, 1.0, 1.0).is_err());
        assert!(WeightParams::new(1.0, 2.0, 3.0).is_err());
        let wp = WeightParams::new(1.0, 2.0, 2.0).unwrap();
        assert_eq!(wp.c_star(), 18496.0);
        assert_eq!(wp.z_constant(), 4.0);
        assert_eq!(wp.a(0.5, 0.3), 0.5 + 0.09);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cumulative_is_monotone(a in proptest::collection::vec(0.0f64..10.0, 1..64), dt in 1e-4f64..1.0) {
                let cum = cumulative_weight(&a, dt).unwrap();
                prop_assert_eq!(cum[0], 0.0);
                prop_assert!(cum.windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }
}
