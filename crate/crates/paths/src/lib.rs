//! Brownian increments, Euler–Maruyama paths and exit-time detection.
//!
//! Every path draws from its own counter-addressed stream, so an ensemble is
//! bit-identical whatever the worker count, and a path simulated only until
//! its exit agrees node for node with the same path simulated on the full grid.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::fixtures::{Fixture, Horizon};
use rbsde_core::rng::PathRng;
use rbsde_core::{
    make_grid, DomainSpec, Error, PathEnsemble, Result, SdeSpec, TerminalKind, TerminalTime, TimeGrid,
};

pub const SCHEMA_VERSION: u32 = 1;

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be ≥ 1".into()));
    }
    Ok(())
}

/// Increments `ΔB ~ N(0, Δ I_d)` on every step of `grid` for `n_paths` paths.
pub fn simulate_brownian(grid: &TimeGrid, n_paths: usize, d: usize, seed: u64) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    if d == 0 {
        return Err(Error::Config("Brownian dimension must be ≥ 1".into()));
    }
    let n = grid.n_steps();
    let sq = grid.dt().sqrt();
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(seed, p as u64);
            (0..n * d).map(|_| rng.normal() * sq).collect()
        })
        .collect();
    let increments = per_path.concat();
    PathEnsemble::from_parts(*grid, 0.0, seed, d, 0, &vec![n + 1; n_paths], increments, Vec::new())
}

struct Stepper<'a> {
    sde: &'a SdeSpec,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sde: &'a SdeSpec) -> Self {
        Stepper {
            sde,
            drift: vec![0.0; sde.l()],
            sigma: vec![0.0; sde.l() * sde.d()],
        }
    }

    /// `next = x + b(t, x) Δ + σ(t, x) dB`.
    fn step(&mut self, t: f64, dt: f64, x: &[f64], db: &[f64], next: &mut [f64]) {
        let (l, d) = (self.sde.l(), self.sde.d());
        self.sde.drift(t, x, &mut self.drift);
        self.sde.diffusion(t, x, &mut self.sigma);
        for r in 0..l {
            let mut v = x[r] + self.drift[r] * dt;
            for c in 0..d {
                v += self.sigma[r * d + c] * db[c];
            }
            next[r] = v;
        }
    }
}

fn non_finite(p: usize, i: usize) -> Error {
    Error::Numerical(format!("non-finite state on path {p} at node {i}"))
}

/// Euler–Maruyama states of `X^{t0, x0}` driven by the increments of `ens`.
pub fn euler_maruyama(sde: &SdeSpec, t0: f64, x0: &[f64], ens: &PathEnsemble) -> Result<PathEnsemble> {
    let (l, d) = (sde.l(), sde.d());
    if x0.len() != l {
        return Err(Error::Config(format!("x0 has {} coordinates, SDE state has {l}", x0.len())));
    }
    if ens.d() != d {
        return Err(Error::Config(format!("ensemble noise dimension {} ≠ SDE noise dimension {d}", ens.d())));
    }
    let grid = *ens.grid();
    let dt = grid.dt();
    let per_path: Vec<Result<Vec<f64>>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let len = ens.stored_len(p);
            let mut st = vec![0.0; len * l];
            st[..l].copy_from_slice(x0);
            let mut stepper = Stepper::new(sde);
            for i in 0..len - 1 {
                let (head, tail) = st.split_at_mut((i + 1) * l);
                stepper.step(t0 + grid.node(i), dt, &head[i * l..], ens.increment(p, i), &mut tail[..l]);
                if tail[..l].iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(p, i + 1));
                }
            }
            Ok(st)
        })
        .collect();
    let mut states = Vec::with_capacity(ens.lens().iter().sum::<usize>() * l);
    for s in per_path {
        states.extend(s?);
    }
    PathEnsemble::from_parts(
        grid,
        t0,
        ens.seed(),
        d,
        l,
        &ens.lens(),
        ens.increments_raw().to_vec(),
        states,
    )
}

/// Convenience: increments and Euler states on the full grid.
pub fn simulate(sde: &SdeSpec, t0: f64, x0: &[f64], grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    let b = simulate_brownian(grid, n_paths, sde.d(), seed)?;
    euler_maruyama(sde, t0, x0, &b)
}

/// First node at which each path has left the closed domain (or starts on a
/// regular boundary point). Paths that never leave are capped at the last node.
pub fn detect_exit(ens: &PathEnsemble, domain: &DomainSpec) -> Result<TerminalTime> {
    if !ens.has_states() {
        return Err(Error::Config("exit detection needs simulated states".into()));
    }
    let idx: Vec<(usize, bool)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let len = ens.stored_len(p);
            for i in 0..len {
                if domain.exited(ens.state(p, i), i) {
                    return (i, false);
                }
            }
            (len - 1, true)
        })
        .collect();
    Ok(terminal_from(ens, idx, TerminalKind::StoppingTime {
        domain: domain.name.clone(),
        t_cap: ens.grid().t_cap(),
    }))
}

fn terminal_from(ens: &PathEnsemble, idx: Vec<(usize, bool)>, kind: TerminalKind) -> TerminalTime {
    let capped: Vec<bool> = idx.iter().map(|x| x.1).collect();
    let mass = capped.iter().filter(|&&c| c).count() as f64 / ens.n_paths() as f64;
    TerminalTime {
        kind,
        per_path_index: idx.into_iter().map(|x| x.0).collect(),
        capped,
        truncation_mass: mass,
    }
}

/// `τ ≡ ∞` observed up to `t_cap`: every path is capped.
pub fn capped_infinite(ens: &PathEnsemble) -> TerminalTime {
    let n = ens.grid().n_steps();
    terminal_from(
        ens,
        vec![(n, true); ens.n_paths()],
        TerminalKind::CappedInfinite { t_cap: ens.grid().t_cap() },
    )
}

/// Simulates each path only until it leaves `domain` (or reaches `t_cap`).
///
/// The stored prefix of every path is identical to what
/// `simulate` + `detect_exit` would produce with the same seed.
pub fn simulate_until_exit(
    sde: &SdeSpec,
    t0: f64,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    domain: &DomainSpec,
) -> Result<(PathEnsemble, TerminalTime)> {
    check_paths(n_paths)?;
    let (l, d) = (sde.l(), sde.d());
    if x0.len() != l {
        return Err(Error::Config(format!("x0 has {} coordinates, SDE state has {l}", x0.len())));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let sq = dt.sqrt();
    type PathOut = (Vec<f64>, Vec<f64>, usize, bool);
    let per_path: Vec<Result<PathOut>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(seed, p as u64);
            let mut st = x0.to_vec();
            let mut inc = Vec::new();
            let mut db = vec![0.0; d];
            let mut next = vec![0.0; l];
            let mut stepper = Stepper::new(sde);
            let mut i = 0;
            loop {
                if domain.exited(&st[i * l..(i + 1) * l], i) {
                    return Ok((st, inc, i, false));
                }
                if i == n {
                    return Ok((st, inc, n, true));
                }
                for v in db.iter_mut() {
                    *v = rng.normal() * sq;
                }
                stepper.step(t0 + grid.node(i), dt, &st[i * l..(i + 1) * l], &db, &mut next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(p, i + 1));
                }
                inc.extend_from_slice(&db);
                st.extend_from_slice(&next);
                i += 1;
            }
        })
        .collect();
    let mut lens = Vec::with_capacity(n_paths);
    let mut idx = Vec::with_capacity(n_paths);
    let mut states = Vec::new();
    let mut increments = Vec::new();
    for r in per_path {
        let (st, inc, e, capped) = r?;
        lens.push(e + 1);
        idx.push((e, capped));
        states.extend(st);
        increments.extend(inc);
    }
    let ens = PathEnsemble::from_parts(*grid, t0, seed, d, l, &lens, increments, states)?;
    let kind = TerminalKind::StoppingTime {
        domain: domain.name.clone(),
        t_cap: grid.t_cap(),
    };
    let tau = terminal_from(&ens, idx, kind);
    Ok((ens, tau))
}

/// Simulates a fixture from `(t0, x0)` with `n_steps` steps over `[t0, cap]`,
/// where `cap` is the fixed horizon or the exit-time cap.
pub fn simulate_fixture(
    fx: &Fixture,
    t0: f64,
    x0: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<(PathEnsemble, TerminalTime)> {
    match &fx.horizon {
        Horizon::Fixed { t } => {
            if !(t0 < *t) {
                return Err(Error::Config(format!("start time {t0} must be before the horizon {t}")));
            }
            let grid = make_grid(t - t0, n_steps)?;
            let ens = simulate(&fx.sde, t0, x0, &grid, n_paths, seed)?;
            let tau = TerminalTime::deterministic(&grid, n_paths);
            Ok((ens, tau))
        }
        Horizon::Exit { domain, t_cap } => {
            let grid = make_grid(t_cap - t0, n_steps)?;
            simulate_until_exit(&fx.sde, t0, x0, &grid, n_paths, seed, domain)
        }
        Horizon::Infinite { t_cap } => {
            let grid = make_grid(t_cap - t0, n_steps)?;
            let ens = simulate(&fx.sde, t0, x0, &grid, n_paths, seed)?;
            let tau = capped_infinite(&ens);
            Ok((ens, tau))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpMomentReport {
    pub estimate: f64,
    pub stderr: f64,
    /// Largest single-path share of the sum; above one half the estimate is
    /// dominated by one path.
    pub max_share: f64,
    pub heavy_tail: bool,
}

/// Estimates `E[exp(γ sup_{s ≤ τ} |X_s|^q)]` over the stored nodes.
pub fn exp_moment_check(ens: &PathEnsemble, tau: Option<&TerminalTime>, gamma: f64, q: f64) -> Result<ExpMomentReport> {
    if !ens.has_states() {
        return Err(Error::Config("exponential moment check needs simulated states".into()));
    }
    let values: Vec<f64> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let last = tau.map_or(ens.stored_len(p) - 1, |t| t.per_path_index[p]);
            let sup = (0..=last)
                .map(|i| ens.state(p, i).iter().map(|v| v * v).sum::<f64>().sqrt().powf(q))
                .fold(0.0, f64::max);
            (gamma * sup).exp()
        })
        .collect();
    let (estimate, stderr) = rbsde_core::reduce::mean_stderr(&values);
    let total = rbsde_core::reduce::sum(&values);
    let max_share = values.iter().copied().fold(0.0, f64::max) / total;
    Ok(ExpMomentReport {
        estimate,
        stderr,
        max_share,
        heavy_tail: max_share > 0.5,
    })
}

#[derive(Serialize)]
struct PathRecord<'a> {
    schema_version: u32,
    path_id: usize,
    nodes: Vec<f64>,
    states: Vec<&'a [f64]>,
    exit_index: usize,
}

/// One JSON object per path: `{schema_version, path_id, nodes, states, exit_index}`.
pub fn write_jsonl<W: Write>(ens: &PathEnsemble, tau: &TerminalTime, max_paths: usize, mut w: W) -> Result<()> {
    for p in 0..ens.n_paths().min(max_paths) {
        let len = ens.stored_len(p);
        let rec = PathRecord {
            schema_version: SCHEMA_VERSION,
            path_id: p,
            nodes: (0..len).map(|i| ens.time(i)).collect(),
            states: (0..len).map(|i| ens.state(p, i)).collect(),
            exit_index: tau.per_path_index[p],
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// RMS strong error of Euler–Maruyama for `dX = −θX dt + σ dB` at time `t`,
/// against the exact solution evaluated on the finest increments.
///
/// Returns `(Δ, error)` for each coarse step count in `coarse` (each must
/// divide `fine`).
pub fn ou_strong_error(
    theta: f64,
    sigma: f64,
    x0: f64,
    t: f64,
    fine: usize,
    coarse: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let grid = make_grid(t, fine)?;
    for &c in coarse {
        if c == 0 || fine % c != 0 {
            return Err(Error::Config(format!("coarse step count {c} must divide {fine}")));
        }
    }
    let dtf = grid.dt();
    let errs: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(seed, p as u64);
            let db: Vec<f64> = (0..fine).map(|_| rng.normal() * dtf.sqrt()).collect();
            // X_t = e^{−θt} x0 + σ ∫ e^{−θ(t−s)} dB_s, integrand at step midpoints
            let exact = (-theta * t).exp() * x0
                + sigma
                    * db.iter()
                        .enumerate()
                        .map(|(j, b)| (-theta * (t - (j as f64 + 0.5) * dtf)).exp() * b)
                        .sum::<f64>();
            coarse
                .iter()
                .map(|&c| {
                    let m = fine / c;
                    let dt = t / c as f64;
                    let mut x = x0;
                    for s in 0..c {
                        let b: f64 = db[s * m..(s + 1) * m].iter().sum();
                        x += -theta * x * dt + sigma * b;
                    }
                    (x - exact).powi(2)
                })
                .collect()
        })
        .collect();
    Ok(coarse
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let ms = errs.iter().map(|e| e[k]).sum::<f64>() / n_paths as f64;
            (t / c as f64, ms.sqrt())
        })
        .collect())
}
