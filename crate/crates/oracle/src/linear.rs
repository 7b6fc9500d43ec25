//! The scalar linear BSDE `dy = −(μ y + ν z) dt + z dB`, whose solution is
//! `y_t = E[ξ e^{∫_t^τ μ + ∫_t^τ ν dB − ½∫_t^τ ν²} | F_t]`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::reduce::{mean_stderr, sum};
use rbsde_core::rng::{derive_seed, PathRng};
use rbsde_core::{
    CoefficientTrace, Error, PathEnsemble, Ragged, Result, SdeSpec, TerminalCondition, TerminalKind, TerminalTime,
};

pub type SignedCoeffFn = dyn Fn(f64, &[f64]) -> (f64, f64) + Send + Sync;

/// Signed coefficients `(μ, ν)` of the linear driver `μ y + ν z`.
#[derive(Clone)]
pub enum LinearCoefficients {
    Constant { mu: f64, nu: f64 },
    Varying(Arc<SignedCoeffFn>),
}

impl LinearCoefficients {
    fn at(&self, t: f64, x: &[f64]) -> (f64, f64) {
        match self {
            LinearCoefficients::Constant { mu, nu } => (*mu, *nu),
            LinearCoefficients::Varying(f) => f(t, x),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NestedSettings {
    /// Inner paths per (path, node); used in antithetic pairs.
    pub m: usize,
    pub seed: u64,
}

impl Default for NestedSettings {
    fn default() -> Self {
        NestedSettings { m: 256, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub y: Ragged,
    /// Closed-form `z`, when available.
    pub z: Option<Ragged>,
    /// Standard error of the nested estimate (zero when exact).
    pub stderr: Ragged,
    pub exact: bool,
}

fn deterministic_horizon(tau: &TerminalTime) -> Option<f64> {
    match tau.kind {
        TerminalKind::Deterministic { t } => Some(t),
        _ => None,
    }
}

/// Solution of the linear BSDE on every path and node `0..=τ`.
///
/// Exact when `ξ` is constant and the coefficients are constant (`y = c e^{μ(τ−t)}`,
/// any bounded `τ`), or when `ξ` is an exponential functional of the driving
/// Brownian motion with constant coefficients and deterministic horizon.
/// Otherwise a nested Monte Carlo estimate re-simulates `sde` from each
/// (node, state); this needs a deterministic horizon and a state-function `ξ`.
pub fn linear_bsde_pathwise(
    coeffs: &LinearCoefficients,
    xi: &TerminalCondition,
    ens: &PathEnsemble,
    tau: &TerminalTime,
    sde: Option<&SdeSpec>,
    nested: &NestedSettings,
) -> Result<LinearSolution> {
    if ens.d() != 1 || xi.k() != 1 {
        return Err(Error::Config("the linear oracle is scalar (k = d = 1)".into()));
    }
    if tau.n_paths() != ens.n_paths() {
        return Err(Error::Config("terminal time and ensemble disagree on the number of paths".into()));
    }
    let lens: Vec<usize> = tau.per_path_index.iter().map(|i| i + 1).collect();
    let dt = ens.grid().dt();
    match (coeffs, xi) {
        (LinearCoefficients::Constant { mu, .. }, TerminalCondition::Constant(c)) => {
            let c = c[0];
            let y = (0..ens.n_paths())
                .map(|p| {
                    let last = tau.per_path_index[p];
                    (0..=last).map(|i| c * (mu * (last - i) as f64 * dt).exp()).collect()
                })
                .collect();
            Ok(LinearSolution {
                y: Ragged::from_paths(y, 1),
                z: Some(Ragged::zeros(&lens, 1)),
                stderr: Ragged::zeros(&lens, 1),
                exact: true,
            })
        }
        (LinearCoefficients::Constant { mu, nu }, TerminalCondition::ExpFunctional(e)) if deterministic_horizon(tau).is_some() => {
            // ξ·E(ν B) = A exp((cb + ν) B_T − κb²T − ½ν²T); the conditional
            // mean of the Gaussian increment gives the closed form below.
            let (a, b) = (e.c * e.b, *nu);
            let mut y = Vec::with_capacity(ens.n_paths());
            let mut z = Vec::with_capacity(ens.n_paths());
            for p in 0..ens.n_paths() {
                let last = tau.per_path_index[p];
                let horizon = ens.grid().node(last);
                let mut w = 0.0;
                let mut yp = Vec::with_capacity(last + 1);
                let mut zp = Vec::with_capacity(last + 1);
                for i in 0..=last {
                    let s = horizon - ens.grid().node(i);
                    let log = a * w - e.kappa * e.b * e.b * horizon + mu * s + (0.5 * (a + b).powi(2) - 0.5 * b * b) * s;
                    let v = e.amplitude * log.exp();
                    yp.push(v);
                    zp.push(if i < last { a * v } else { 0.0 });
                    if i < last {
                        w += ens.increment(p, i)[0];
                    }
                }
                y.push(yp);
                z.push(zp);
            }
            Ok(LinearSolution {
                y: Ragged::from_paths(y, 1),
                z: Some(Ragged::from_paths(z, 1)),
                stderr: Ragged::zeros(&lens, 1),
                exact: true,
            })
        }
        _ => nested_estimate(coeffs, xi, ens, tau, sde, nested),
    }
}

fn nested_estimate(
    coeffs: &LinearCoefficients,
    xi: &TerminalCondition,
    ens: &PathEnsemble,
    tau: &TerminalTime,
    sde: Option<&SdeSpec>,
    nested: &NestedSettings,
) -> Result<LinearSolution> {
    let TerminalCondition::State { f: phi, .. } = xi else {
        return Err(Error::Config(format!(
            "terminal value '{}' has no closed form and nested Monte Carlo needs ξ = φ(X_T)",
            xi.name()
        )));
    };
    if nested.m == 0 {
        return Err(Error::Config("terminal value has no closed form and the nested budget m is 0".into()));
    }
    let Some(sde) = sde else {
        return Err(Error::Config("nested Monte Carlo needs the forward SDE".into()));
    };
    if deterministic_horizon(tau).is_none() {
        return Err(Error::Config("nested Monte Carlo needs a deterministic horizon".into()));
    }
    if sde.d() != 1 {
        return Err(Error::Config("nested Monte Carlo is scalar (d = 1)".into()));
    }
    let (l, dt) = (ens.l(), ens.grid().dt());
    let sq = dt.sqrt();
    let pairs = nested.m.div_ceil(2);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let last = tau.per_path_index[p];
            let mut ys = Vec::with_capacity(last + 1);
            let mut ses = Vec::with_capacity(last + 1);
            let mut drift = vec![0.0; l];
            let mut diff = vec![0.0; l];
            let mut out = [0.0];
            for i in 0..=last {
                let mut rng = PathRng::new(derive_seed(nested.seed, p as u64), i as u64);
                let steps = last - i;
                let mut normals = vec![0.0; steps];
                let mut vals = Vec::with_capacity(pairs);
                for _ in 0..pairs {
                    normals.iter_mut().for_each(|g| *g = rng.normal());
                    let mut pair = 0.0;
                    for sign in [1.0, -1.0] {
                        let mut x = ens.state(p, i).to_vec();
                        let mut logw = 0.0;
                        for (j, g) in normals.iter().enumerate() {
                            let t = ens.time(i + j);
                            let db = sign * g * sq;
                            let (mu, nu) = coeffs.at(t, &x);
                            logw += mu * dt + nu * db - 0.5 * nu * nu * dt;
                            sde.drift(t, &x, &mut drift);
                            sde.diffusion(t, &x, &mut diff);
                            for c in 0..l {
                                x[c] += drift[c] * dt + diff[c] * db;
                            }
                        }
                        phi(&x, &mut out);
                        pair += 0.5 * out[0] * logw.exp();
                    }
                    vals.push(pair);
                }
                let (m, se) = mean_stderr(&vals);
                ys.push(m);
                ses.push(if se.is_finite() { se } else { 0.0 });
            }
            (ys, ses)
        })
        .collect();
    let (y, se): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(LinearSolution {
        y: Ragged::from_paths(y, 1),
        z: None,
        stderr: Ragged::from_paths(se, 1),
        exact: false,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightConditionReport {
    pub beta_t: f64,
    pub rho_t: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Largest single-path share of the sum.
    pub max_share: f64,
    pub heavy_tail: bool,
}

/// Estimates `E[|ξ|² e^{2β̃∫μ + ρ̃∫ν²}]` with left-point integrals up to `τ`.
pub fn weight_condition_check(
    trace: &CoefficientTrace,
    xi_values: &[f64],
    dt: f64,
    beta_t: f64,
    rho_t: f64,
) -> Result<WeightConditionReport> {
    if !(beta_t >= 1.0) || !(rho_t >= 1.0) {
        return Err(Error::Config(format!("weight condition needs β̃ ≥ 1 and ρ̃ ≥ 1 (got {beta_t}, {rho_t})")));
    }
    let n = trace.n_paths();
    if n == 0 || xi_values.len() % n != 0 {
        return Err(Error::Config("terminal values do not match the coefficient trace".into()));
    }
    let k = xi_values.len() / n;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let len = trace.len(p);
            let (mut im, mut iv) = (0.0, 0.0);
            for i in 0..len - 1 {
                im += trace.mu_at(p, i) * dt;
                iv += trace.nu_at(p, i).powi(2) * dt;
            }
            let x2: f64 = xi_values[p * k..(p + 1) * k].iter().map(|v| v * v).sum();
            x2 * (2.0 * beta_t * im + rho_t * iv).exp()
        })
        .collect();
    let (estimate, stderr) = mean_stderr(&values);
    let total = sum(&values);
    let max_share = if total > 0.0 { values.iter().copied().fold(0.0, f64::max) / total } else { 0.0 };
    Ok(WeightConditionReport {
        beta_t,
        rho_t,
        estimate,
        stderr,
        max_share,
        heavy_tail: max_share > 0.5,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupGrowthRow {
    pub n_paths: usize,
    pub estimate: f64,
    pub stderr: f64,
}

/// `E[sup_t |y_t|² e^{2β̃∫μ + ρ̃∫ν²}]` on nested prefixes of the ensemble
/// (`n0, 2n0, 4n0, ...`). A moment that is infinite shows up as an estimate
/// that keeps growing as the sample doubles; this is a report, not a verdict.
pub fn sup_growth_diagnostic(
    y: &Ragged,
    trace: &CoefficientTrace,
    dt: f64,
    beta_t: f64,
    rho_t: f64,
    n0: usize,
) -> Result<Vec<SupGrowthRow>> {
    if y.n_paths() != trace.n_paths() || n0 == 0 {
        return Err(Error::Config("sup-growth diagnostic: shape mismatch or n0 = 0".into()));
    }
    let per_path: Vec<f64> = (0..y.n_paths())
        .into_par_iter()
        .map(|p| {
            let (mut im, mut iv, mut sup) = (0.0, 0.0, 0.0f64);
            for i in 0..y.len(p).min(trace.len(p)) {
                let y2: f64 = y.at(p, i).iter().map(|v| v * v).sum();
                sup = sup.max(y2 * (2.0 * beta_t * im + rho_t * iv).exp());
                im += trace.mu_at(p, i) * dt;
                iv += trace.nu_at(p, i).powi(2) * dt;
            }
            sup
        })
        .collect();
    let mut rows = Vec::new();
    let mut n = n0;
    while n <= per_path.len() {
        let (estimate, stderr) = mean_stderr(&per_path[..n]);
        rows.push(SupGrowthRow { n_paths: n, estimate, stderr });
        n *= 2;
    }
    Ok(rows)
}
