//! Least-squares Monte Carlo solver for BSDEs with random terminal time.
//!
//! One backward sweep computes `(y, z)` for a frozen `z`-argument `V`:
//!
//! ```text
//! z_i = E[y_{i+1} ΔB_i | X_i] / Δ
//! y_i = E[y_{i+1} | X_i] + Δ g(t_i, X_i, ·, V_i)
//! ```
//!
//! with conditional expectations replaced by regressions over the paths still
//! alive at node `i`. Picard iteration repeats the sweep with `V ← z` until the
//! weighted distance between successive `z` falls below tolerance.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::reduce::{mean_stderr, sum_by};
use rbsde_core::stats::bootstrap_stderr;
use rbsde_core::{
    AlphaInput, AlphaRule, CoefficientTrace, Error, GeneratorSpec, PathEnsemble, Point, Ragged, Result,
    TerminalCondition, TerminalTime, WeightParams,
};

mod assumptions;
pub mod regression;

pub use assumptions::{validate_assumptions, AssumptionCheck, AssumptionReport, AssumptionSampler};
pub use regression::{Basis, NodeRegression};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// `y_i = ŷ + Δ g(ŷ)`.
    Explicit,
    /// `y_i = ŷ + Δ g(y_i)` by a damped fixed point with step halving.
    Implicit { damping: f64, max_inner: usize },
}

/// Regression target for `z_i`; both have conditional mean `E[y_{i+1} ΔB_i | X_i]/Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZTarget {
    /// `(y_{i+1} − ŷ_i) ΔB_i / Δ`, with `ŷ_i` the regressed `y_{i+1}`.
    ControlVariate,
    /// `y_{i+1} ΔB_i / Δ`.
    Increment,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSettings {
    pub basis: Basis,
    pub scheme: Scheme,
    pub z_target: ZTarget,
    /// Relative ridge always added to the Gram matrix (0 disables).
    pub ridge: f64,
    /// Gram matrices above this condition number get a stabilising ridge.
    pub cond_limit: f64,
    pub picard_max: usize,
    pub picard_tol: f64,
    pub weight: WeightParams,
    /// Keep per-node regression coefficients in the estimate.
    pub keep_regressions: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            basis: Basis::Polynomial { degree: 3 },
            scheme: Scheme::Explicit,
            z_target: ZTarget::ControlVariate,
            ridge: 0.0,
            cond_limit: 1e10,
            picard_max: 20,
            picard_tol: 1e-8,
            weight: WeightParams::default(),
            keep_regressions: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        match self.basis {
            Basis::Polynomial { degree } if degree > 8 => return bad(format!("polynomial degree must be ≤ 8 (got {degree})")),
            Basis::PiecewiseConstant { bins: 0 } => return bad("piecewise-constant basis needs ≥ 1 bin".into()),
            _ => {}
        }
        if let Scheme::Implicit { damping, max_inner } = self.scheme {
            if !(damping > 0.0 && damping <= 1.0) {
                return bad(format!("implicit damping must lie in (0, 1] (got {damping})"));
            }
            if max_inner == 0 || max_inner > 50 {
                return bad(format!("implicit inner iterations must lie in 1..=50 (got {max_inner})"));
            }
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be ≥ 0 (got {})", self.ridge));
        }
        if !(self.cond_limit > 1.0) {
            return bad("cond_limit must be > 1".into());
        }
        if self.picard_max == 0 {
            return bad("picard_max must be ≥ 1".into());
        }
        if !(self.picard_tol > 0.0) {
            return bad(format!("picard_tol must be > 0 (got {})", self.picard_tol));
        }
        Ok(())
    }
}

/// Everything a sweep needs besides the frozen `V` and settings.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub generator: &'a GeneratorSpec,
    pub terminal: &'a TerminalCondition,
    pub ens: &'a PathEnsemble,
    pub tau: &'a TerminalTime,
    /// Per-path `α_t` on nodes `0..=τ`, required when the generator uses it.
    pub alpha: Option<&'a Ragged>,
}

impl<'a> Problem<'a> {
    pub fn new(
        generator: &'a GeneratorSpec,
        terminal: &'a TerminalCondition,
        ens: &'a PathEnsemble,
        tau: &'a TerminalTime,
    ) -> Result<Self> {
        let pb = Problem {
            generator,
            terminal,
            ens,
            tau,
            alpha: None,
        };
        pb.check()?;
        Ok(pb)
    }

    pub fn with_alpha(mut self, alpha: &'a Ragged) -> Result<Self> {
        self.alpha = Some(alpha);
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.terminal.k() != self.generator.k() {
            return cfg(format!("terminal value has dimension {}, generator has k = {}", self.terminal.k(), self.generator.k()));
        }
        if self.ens.d() != self.generator.d() {
            return cfg(format!("ensemble noise dimension {} ≠ generator d = {}", self.ens.d(), self.generator.d()));
        }
        if !self.ens.has_states() {
            return cfg("solver needs simulated forward states".into());
        }
        if self.tau.n_paths() != self.ens.n_paths() {
            return cfg("terminal time and ensemble disagree on the number of paths".into());
        }
        for p in 0..self.ens.n_paths() {
            if self.tau.per_path_index[p] >= self.ens.stored_len(p) {
                return Err(Error::Invariant(format!("path {p}: terminal index beyond stored nodes")));
            }
        }
        if self.generator.needs_alpha {
            match self.alpha {
                None => return cfg(format!("generator '{}' needs α traces", self.generator.name)),
                Some(a) if a.lens() != self.lens() => return cfg("α traces do not match terminal indices".into()),
                _ => {}
            }
        }
        Ok(())
    }

    /// Stored nodes per path for the solution, `τ index + 1`.
    pub fn lens(&self) -> Vec<usize> {
        self.tau.per_path_index.iter().map(|i| i + 1).collect()
    }

    pub fn trace(&self, weight: &WeightParams) -> Result<CoefficientTrace> {
        let g = self.generator;
        CoefficientTrace::build(self.ens, &self.tau.per_path_index, |t, x| g.coeff(t, x), weight)
    }

    pub fn terminal_values(&self) -> Result<Vec<f64>> {
        let k = self.generator.k();
        let vals: Vec<f64> = (0..self.ens.n_paths())
            .into_par_iter()
            .flat_map_iter(|p| {
                let mut out = vec![0.0; k];
                self.terminal.eval(&self.ens.view(p, self.tau.per_path_index[p]), &mut out);
                out
            })
            .collect();
        if let Some(pos) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite terminal value on path {}", pos / k)));
        }
        Ok(vals)
    }

    fn alpha_at(&self, p: usize, i: usize) -> f64 {
        self.alpha.map_or(1.0, |a| a.at(p, i)[0])
    }
}

/// Evaluates an α rule along every path up to its terminal node.
pub fn alpha_traces(rule: &AlphaRule, ens: &PathEnsemble, tau: &TerminalTime, g: &GeneratorSpec, beta: f64) -> Result<Ragged> {
    let l = ens.l();
    let paths: Vec<Result<Vec<f64>>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let n = tau.per_path_index[p] + 1;
            let times: Vec<f64> = (0..n).map(|i| ens.time(i)).collect();
            let states = &ens.path_states(p)[..n * l];
            let mu: Vec<f64> = (0..n).map(|i| g.coeff(times[i], ens.state(p, i)).0).collect();
            rule.evaluate(&AlphaInput {
                times: &times,
                states,
                l,
                mu: &mu,
                beta,
                dt: ens.grid().dt(),
            })
        })
        .collect();
    Ok(Ragged::from_paths(paths.into_iter().collect::<Result<Vec<_>>>()?, 1))
}

#[derive(Debug, Clone)]
pub struct SolutionEstimate {
    pub k: usize,
    pub d: usize,
    /// `y` on nodes `0..=τ` of each path (width `k`).
    pub y: Ragged,
    /// `z` on nodes `0..=τ` (width `k·d`, row-major `k × d`); zero at `τ`.
    pub z: Ragged,
    pub regressions: Vec<Option<NodeRegression>>,
    pub settings: SolverSettings,
}

impl SolutionEstimate {
    /// `y` at the common start node (the estimate of `Y_0`).
    pub fn y0(&self) -> &[f64] {
        self.y.at(0, 0)
    }

    pub fn z0(&self) -> &[f64] {
        self.z.at(0, 0)
    }

    /// Largest regression condition number over all nodes.
    pub fn max_condition(&self) -> f64 {
        self.regressions.iter().flatten().map(|r| r.condition).fold(1.0, f64::max)
    }
}

/// Damped fixed point of `y ↦ ŷ + Δ·g(y)`, started from `y`. Each component's
/// step is scaled down by the local slope of the residual, so stiff monotone
/// drivers (slope ≫ 1/Δ) still contract; a non-finite start falls back to `ŷ`.
fn implicit_solve(
    g: &GeneratorSpec,
    pt: &Point,
    yhat: &[f64],
    v: &[f64],
    dt: f64,
    damping: f64,
    max_inner: usize,
    y: &mut [f64],
) {
    let k = yhat.len();
    let mut gv = vec![0.0; k];
    let resid = |y: &[f64], gv: &mut [f64]| -> (Vec<f64>, f64) {
        g.eval(pt, y, v, gv);
        let r: Vec<f64> = (0..k).map(|a| y[a] - yhat[a] - dt * gv[a]).collect();
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        (r, n)
    };
    let (mut r, mut rn) = resid(y, &mut gv);
    if !rn.is_finite() {
        y.copy_from_slice(yhat);
        (r, rn) = resid(y, &mut gv);
    }
    let mut omega = damping;
    let mut trial = vec![0.0; k];
    let mut slope = vec![1.0; k];
    let mut g0 = vec![0.0; k];
    for _ in 0..max_inner {
        let scale = 1.0 + y.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if rn <= 1e-13 * scale {
            break;
        }
        g.eval(pt, y, v, &mut g0);
        trial.copy_from_slice(y);
        for a in 0..k {
            let h = 1e-7 * (1.0 + y[a].abs());
            trial[a] = y[a] + h;
            g.eval(pt, &trial, v, &mut gv);
            trial[a] = y[a];
            let s = 1.0 - dt * (gv[a] - g0[a]) / h;
            slope[a] = if s.is_finite() { s.max(1.0) } else { 1.0 };
        }
        loop {
            for a in 0..k {
                trial[a] = y[a] - omega * r[a] / slope[a];
            }
            let (r2, n2) = resid(&trial, &mut gv);
            if n2 < rn || omega < 1e-6 {
                y.copy_from_slice(&trial);
                r = r2;
                rn = n2;
                break;
            }
            omega *= 0.5;
        }
        omega = (2.0 * omega).min(damping);
    }
}

/// One backward sweep with the `z`-argument frozen at `v_prev` (zero if `None`).
pub fn backward_sweep(pb: &Problem, v_prev: Option<&Ragged>, s: &SolverSettings) -> Result<SolutionEstimate> {
    s.validate()?;
    let g = pb.generator;
    let (k, d) = (g.k(), g.d());
    let kd = k * d;
    let ens = pb.ens;
    let lens = pb.lens();
    if let Some(v) = v_prev {
        if v.lens() != lens || v.width() != kd {
            return Err(Error::Config("frozen z-process does not match the problem shape".into()));
        }
    }
    let dt = ens.grid().dt();
    let mut y = Ragged::zeros(&lens, k);
    let mut z = Ragged::zeros(&lens, kd);
    let xi = pb.terminal_values()?;
    for p in 0..ens.n_paths() {
        y.at_mut(p, lens[p] - 1).copy_from_slice(&xi[p * k..(p + 1) * k]);
    }
    let max_last = pb.tau.max_index();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); max_last + 1];
    for (p, &e) in pb.tau.per_path_index.iter().enumerate() {
        buckets[e].push(p);
    }
    let mut regressions: Vec<Option<NodeRegression>> = vec![None; max_last + 1];
    let mut alive: Vec<usize> = Vec::new();
    let nt = k + kd;
    let zero_v = vec![0.0; kd];
    for i in (0..max_last).rev() {
        alive.extend_from_slice(&buckets[i + 1]);
        if alive.is_empty() {
            continue;
        }
        // y first; z then regresses (y_{i+1} − ŷ_i)·ΔB, which has the same
        // conditional mean as y_{i+1}·ΔB but far less variance
        let ytargets: Vec<f64> = alive.iter().flat_map(|&p| y.at(p, i + 1).iter().copied()).collect();
        let mut reg = regression::fit(ens, i, &alive, &ytargets, k, s.basis, s.ridge, s.cond_limit)?;
        let yfit = reg.predict_alive(ens, &alive);
        let mut ztargets = vec![0.0; alive.len() * kd];
        ztargets.par_chunks_mut(kd.max(1)).zip(alive.par_iter()).enumerate().for_each(|(r, (t, &p))| {
            let yn = y.at(p, i + 1);
            let db = ens.increment(p, i);
            for a in 0..k {
                let dy = match s.z_target {
                    ZTarget::ControlVariate => yn[a] - yfit[r * k + a],
                    ZTarget::Increment => yn[a],
                };
                for j in 0..d {
                    t[a * d + j] = dy * db[j] / dt;
                }
            }
        });
        let zreg = regression::fit(ens, i, &alive, &ztargets, kd, s.basis, s.ridge, s.cond_limit)?;
        reg.append_targets(&zreg);
        let fitted = reg.predict_alive(ens, &alive);
        let t_i = ens.time(i);
        let mut out = vec![0.0; alive.len() * nt];
        out.par_chunks_mut(nt)
            .zip(alive.par_iter())
            .zip(fitted.par_chunks(nt))
            .for_each(|((o, &p), f)| {
                let pt = Point {
                    t: t_i,
                    x: ens.state(p, i),
                    alpha: pb.alpha_at(p, i),
                };
                let v = v_prev.map_or(&zero_v[..], |v| v.at(p, i));
                let yhat = &f[..k];
                let mut gv = vec![0.0; k];
                g.eval(&pt, yhat, v, &mut gv);
                for a in 0..k {
                    o[a] = yhat[a] + dt * gv[a];
                }
                if let Scheme::Implicit { damping, max_inner } = s.scheme {
                    implicit_solve(g, &pt, yhat, v, dt, damping, max_inner, &mut o[..k]);
                }
                o[k..].copy_from_slice(&f[k..]);
            });
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite solution at node {i} (path {})",
                alive[pos / nt]
            )));
        }
        for (r, &p) in alive.iter().enumerate() {
            y.at_mut(p, i).copy_from_slice(&out[r * nt..r * nt + k]);
            z.at_mut(p, i).copy_from_slice(&out[r * nt + k..(r + 1) * nt]);
        }
        if s.keep_regressions {
            regressions[i] = Some(reg);
        }
    }
    Ok(SolutionEstimate {
        k,
        d,
        y,
        z,
        regressions,
        settings: s.clone(),
    })
}

/// Per-path `Σ_{i<τ} e^{2∫a} |z1 − z2|² Δ`.
pub fn weighted_z_contributions(z1: &Ragged, z2: &Ragged, trace: &CoefficientTrace, dt: f64) -> Vec<f64> {
    (0..z1.n_paths())
        .into_par_iter()
        .map(|p| {
            (0..z1.len(p) - 1)
                .map(|i| {
                    let w = (2.0 * trace.cum_a_at(p, i)).exp();
                    let dz: f64 = z1.at(p, i).iter().zip(z2.at(p, i)).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * dz * dt
                })
                .sum()
        })
        .collect()
}

/// Per-path `ξ + Σ_{i<τ} g(t_i, X_i, y_i, z_i) Δ − Σ_{i<τ} z_i ΔB_i`
/// (`n_paths × k`, row-major). Its mean is `Y_0` for any adapted `z`, so the
/// spread measures the Monte Carlo error of the root value with `z` acting
/// as a control variate.
pub fn root_samples(pb: &Problem, est: &SolutionEstimate) -> Result<Vec<f64>> {
    let xi = pb.terminal_values()?;
    let (g, ens) = (pb.generator, pb.ens);
    let (k, d) = (g.k(), g.d());
    let dt = ens.grid().dt();
    Ok((0..ens.n_paths())
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut v = xi[p * k..(p + 1) * k].to_vec();
            let mut gv = vec![0.0; k];
            for i in 0..pb.tau.per_path_index[p] {
                let pt = Point {
                    t: ens.time(i),
                    x: ens.state(p, i),
                    alpha: pb.alpha_at(p, i),
                };
                let z = est.z.at(p, i);
                g.eval(&pt, est.y.at(p, i), z, &mut gv);
                let db = ens.increment(p, i);
                for a in 0..k {
                    v[a] += gv[a] * dt - (0..d).map(|j| z[a * d + j] * db[j]).sum::<f64>();
                }
            }
            v
        })
        .collect())
}

/// Path-bootstrap standard error of each component of `Y_0`, from
/// [`root_samples`].
pub fn root_stderr(pb: &Problem, est: &SolutionEstimate, n_boot: usize, seed: u64) -> Result<Vec<f64>> {
    let v = root_samples(pb, est)?;
    let k = pb.generator.k();
    Ok((0..k)
        .map(|a| {
            bootstrap_stderr(pb.ens.n_paths(), n_boot, seed.wrapping_add(a as u64), |idx| {
                idx.iter().map(|&p| v[p * k + a]).sum::<f64>() / idx.len() as f64
            })
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub estimate: SolutionEstimate,
    /// `‖z^m − z^{m−1}‖²` in the weighted norm, `m = 1, 2, ...` (`z^0 = 0`).
    pub distances: Vec<f64>,
    /// Per-path contributions to each distance (for resampling).
    pub contributions: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Iterates `V ↦ z(V)` from `V = 0`.
///
/// Stops when the weighted distance drops below `picard_tol` or after
/// `picard_max` sweeps; three consecutive increases abort with a divergence
/// error. A generator that ignores `z` is solved in a single sweep (the next
/// iterate would be identical, so its distance is recorded as 0).
pub fn picard_solve(pb: &Problem, s: &SolverSettings) -> Result<PicardOutcome> {
    s.validate()?;
    let trace = pb.trace(&s.weight)?;
    let dt = pb.ens.grid().dt();
    let lens = pb.lens();
    let kd = pb.generator.k() * pb.generator.d();
    let mut v = Ragged::zeros(&lens, kd);
    let mut distances = Vec::new();
    let mut contributions = Vec::new();
    let mut increases = 0;
    let mut est = None;
    for m in 1..=s.picard_max {
        let e = backward_sweep(pb, if m == 1 { None } else { Some(&v) }, s)?;
        let c = weighted_z_contributions(&e.z, &v, &trace, dt);
        let dist = sum_by(c.len(), |p| c[p]) / c.len() as f64;
        if !dist.is_finite() {
            return Err(Error::Numerical(format!("weighted distance is not finite at iterate {m}")));
        }
        if let Some(&prev) = distances.last() {
            if dist > prev {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        distances.push(dist);
        contributions.push(c);
        v = e.z.clone();
        est = Some(e);
        if !pb.generator.depends_on_z {
            distances.push(0.0);
            contributions.push(vec![0.0; lens.len()]);
            return Ok(PicardOutcome {
                estimate: est.unwrap(),
                distances,
                contributions,
                converged: true,
            });
        }
        if increases >= 3 {
            let last = distances.len();
            let ratio = distances[last - 1] / distances[last - 2];
            return Err(Error::Divergence(format!(
                "weighted distance increased 3 times in a row (last ratio {ratio:.3} vs 1/ρ = {:.3}); \
                 the declared ρ > 1 premise or the ν bound is likely violated",
                1.0 / s.weight.rho
            )));
        }
        if dist < s.picard_tol {
            return Ok(PicardOutcome {
                estimate: est.unwrap(),
                distances,
                contributions,
                converged: true,
            });
        }
    }
    Ok(PicardOutcome {
        estimate: est.unwrap(),
        distances,
        contributions,
        converged: false,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioEstimate {
    /// `ratio = d_{m+1} / d_m`.
    pub m: usize,
    pub ratio: f64,
    pub stderr: f64,
}

/// Successive distance ratios with path-bootstrap standard errors.
pub fn contraction_ratios(out: &PicardOutcome, n_boot: usize, seed: u64) -> Vec<RatioEstimate> {
    (1..out.distances.len())
        .map(|m| {
            let (a, b) = (&out.contributions[m], &out.contributions[m - 1]);
            let ratio = out.distances[m] / out.distances[m - 1];
            let stderr = bootstrap_stderr(a.len(), n_boot, seed.wrapping_add(m as u64), |idx| {
                let num: f64 = idx.iter().map(|&p| a[p]).sum();
                let den: f64 = idx.iter().map(|&p| b[p]).sum();
                num / den
            });
            RatioEstimate { m, ratio, stderr }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeResidual {
    pub node: usize,
    pub n_alive: usize,
    pub mean: f64,
    pub stderr: f64,
    /// RMS over alive paths of the regressed conditional mean.
    pub cond_rms: f64,
    /// RMS expected from regression noise alone, `σ √(m/n)`.
    pub cond_noise: f64,
    pub allowance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub nodes: Vec<NodeResidual>,
    pub flagged: Vec<usize>,
}

/// Discrete residual `R_i = y_i − y_{i+1} − Δ g(t_i, X_i, y_i, z_i) + z_i ΔB_i`.
///
/// A node is flagged when the RMS of the regressed conditional mean of `R_i`
/// exceeds four times its noise level plus the discretisation allowance
/// `allowance_factor · Δ · (1 + mean |y_i|)`.
pub fn residual_check(pb: &Problem, est: &SolutionEstimate, s: &SolverSettings, allowance_factor: f64) -> Result<ResidualReport> {
    let g = pb.generator;
    let (k, d) = (g.k(), g.d());
    let ens = pb.ens;
    let dt = ens.grid().dt();
    let max_last = pb.tau.max_index();
    let mut nodes = Vec::new();
    for i in 0..max_last {
        let alive = pb.tau.alive_at(i);
        if alive.is_empty() {
            continue;
        }
        let t_i = ens.time(i);
        let res: Vec<f64> = alive
            .par_iter()
            .flat_map_iter(|&p| {
                let pt = Point {
                    t: t_i,
                    x: ens.state(p, i),
                    alpha: pb.alpha_at(p, i),
                };
                let (yi, yn, zi) = (est.y.at(p, i), est.y.at(p, i + 1), est.z.at(p, i));
                let mut gv = vec![0.0; k];
                g.eval(&pt, yi, zi, &mut gv);
                let db = ens.increment(p, i);
                (0..k)
                    .map(|a| {
                        let zdb: f64 = (0..d).map(|j| zi[a * d + j] * db[j]).sum();
                        yi[a] - yn[a] - dt * gv[a] + zdb
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let reg = regression::fit(ens, i, &alive, &res, k, s.basis, s.ridge, s.cond_limit)?;
        let fitted = reg.predict_alive(ens, &alive);
        let n = alive.len();
        let ymag = alive.iter().map(|&p| est.y.at(p, i).iter().map(|v| v.abs()).fold(0.0, f64::max)).sum::<f64>() / n as f64;
        let allowance = allowance_factor * dt * (1.0 + ymag);
        let mut worst: Option<NodeResidual> = None;
        for a in 0..k {
            let col: Vec<f64> = (0..n).map(|r| res[r * k + a]).collect();
            let (mean, se) = mean_stderr(&col);
            let se = if se.is_finite() { se } else { 0.0 };
            let cond_rms = ((0..n).map(|r| fitted[r * k + a].powi(2)).sum::<f64>() / n as f64).sqrt();
            let cond_noise = se * (reg.n_basis as f64).sqrt();
            let cand = NodeResidual {
                node: i,
                n_alive: n,
                mean,
                stderr: se,
                cond_rms,
                cond_noise,
                allowance,
                flagged: cond_rms > 4.0 * cond_noise + allowance,
            };
            let excess = |r: &NodeResidual| r.cond_rms - 4.0 * r.cond_noise;
            worst = match worst {
                Some(w) if excess(&w) >= excess(&cand) => Some(w),
                _ => Some(cand),
            };
        }
        let worst = worst.unwrap();
        nodes.push(worst);
    }
    let flagged = nodes.iter().filter(|n| n.flagged).map(|n| n.node).collect();
    Ok(ResidualReport { nodes, flagged })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Settings {
        schema_version: u32,
        seed: u64,
        settings: &'a SolverSettings,
        converged: bool,
        y0: &'a [f64],
    },
    Iterate {
        m: usize,
        distance: f64,
    },
    Node(&'a NodeResidual),
}

/// Solver report as JSON lines: a settings record, one record per Picard
/// iterate and (optionally) one per node of the residual check.
pub fn write_report_jsonl<W: Write>(out: &PicardOutcome, residual: Option<&ResidualReport>, seed: u64, mut w: W) -> Result<()> {
    let mut line = |rec: &ReportLine| -> Result<()> {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&ReportLine::Settings {
        schema_version: SCHEMA_VERSION,
        seed,
        settings: &out.estimate.settings,
        converged: out.converged,
        y0: out.estimate.y0(),
    })?;
    for (m, &distance) in out.distances.iter().enumerate() {
        line(&ReportLine::Iterate { m: m + 1, distance })?;
    }
    if let Some(r) = residual {
        for n in &r.nodes {
            line(&ReportLine::Node(n))?;
        }
    }
    Ok(())
}
