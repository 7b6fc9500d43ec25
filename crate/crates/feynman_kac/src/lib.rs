//! Feynman–Kac evaluation of semilinear PDEs through the BSDE solver.
//!
//! Parabolic problems are solved from each probe `(t, x)` on `[t, T]`;
//! elliptic ones run until the forward process leaves the domain. Every
//! row carries its Monte Carlo error, the root `z` (the `∇u σ` proxy) and,
//! where available, a closed-form or finite-difference reference.

mod growth;
mod solve;
mod spec;

use std::io::Write;

use rbsde_core::reduce::mean_stderr;
use rbsde_core::rng::derive_seed;
use rbsde_core::{Error, Result};
use rbsde_solver::SolverSettings;
use serde::Serialize;

pub use growth::{growth_bound_check, GrowthVerdict};
pub use solve::{solve_elliptic, solve_parabolic, Budget, EllipticOptions, PdeRow, EXIT_SHIFT};
pub use spec::{ExactFn, FdReference, Growth, PdeKind, PdeProblemSpec, Probe};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct PdeSolutionTable {
    pub schema_version: u32,
    pub problem: String,
    pub rows: Vec<PdeRow>,
}

impl PdeSolutionTable {
    /// Largest `|u − oracle|` over rows with an oracle.
    pub fn max_abs_error(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.oracle.map(|o| (r.u - o).abs())).reduce(f64::max)
    }

    /// Largest `|u − fd| / |fd|` over rows with a finite-difference value.
    pub fn max_fd_rel_error(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.fd.map(|f| (r.u - f).abs() / f.abs().max(f64::MIN_POSITIVE)))
            .reduce(f64::max)
    }

    pub fn max_truncation_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.truncation_mass).fold(0.0, f64::max)
    }

    /// CSV with columns `probe,u,stderr,oracle,rel_err,z,fd,truncation_mass`;
    /// missing values are empty and multi-dimensional `z` is `;`-joined.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        wr.write_record(["probe", "u", "stderr", "oracle", "rel_err", "z", "fd", "truncation_mass"]).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let z: Vec<String> = r.z.iter().map(|v| v.to_string()).collect();
            wr.write_record([
                r.probe.label(),
                r.u.to_string(),
                r.stderr.to_string(),
                opt(r.oracle),
                opt(r.rel_err()),
                z.join(";"),
                opt(r.fd),
                r.truncation_mass.to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Settings for a full probe sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TableSettings {
    pub budget: Budget,
    pub solver: SolverSettings,
    pub elliptic: EllipticOptions,
    /// Grid points of the finite-difference reference (0 disables it).
    pub fd_nx: usize,
    /// Half-width of the parabolic finite-difference window.
    pub fd_window: f64,
}

impl Default for TableSettings {
    fn default() -> Self {
        TableSettings {
            budget: Budget {
                n_paths: 20_000,
                n_steps: 64,
            },
            solver: SolverSettings::default(),
            elliptic: EllipticOptions::default(),
            fd_nx: 800,
            fd_window: 8.0,
        }
    }
}

/// Solves every probe of `spec`. Probes are independent jobs seeded by
/// their index; the finite-difference reference, when the problem is
/// one-dimensional, fills the `fd` column and stands in for a missing
/// closed form.
pub fn solve_table(spec: &PdeProblemSpec, ts: &TableSettings, seed: u64) -> Result<PdeSolutionTable> {
    spec.validate()?;
    let fd = if ts.fd_nx > 0 {
        spec.fd_reference(ts.fd_nx, ts.fd_window)?
    } else {
        None
    };
    let mut rows = Vec::with_capacity(spec.probes.len());
    for (j, probe) in spec.probes.iter().enumerate() {
        let seed = derive_seed(seed, j as u64);
        let mut row = match spec.kind {
            PdeKind::Parabolic { .. } => solve_parabolic(spec, probe, ts.budget, &ts.solver, seed)?,
            PdeKind::Elliptic { .. } => solve_elliptic(spec, probe, ts.budget, &ts.solver, &ts.elliptic, seed)?,
        };
        if let Some(f) = &fd {
            row.fd = f.value(probe);
            if row.oracle.is_none() {
                row.oracle = row.fd;
            }
        }
        rows.push(row);
    }
    Ok(PdeSolutionTable {
        schema_version: SCHEMA_VERSION,
        problem: spec.name.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovRow {
    pub x: Vec<f64>,
    pub regressed: f64,
    pub resolved: f64,
    pub resolved_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovReport {
    pub t: f64,
    pub rows: Vec<MarkovRow>,
    pub mean_diff: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Dynamic-programming consistency: solves from `probe`, then re-solves
/// from `(t′, X_{t′})` on the first `n_restarts` paths (`t′` the time of
/// `node`) and compares with the regressed `y` there. Passes when the mean
/// difference is within 4σ, σ combining the spread of the differences and
/// the re-solve errors.
pub fn markov_consistency(
    spec: &PdeProblemSpec,
    probe: &Probe,
    budget: Budget,
    restart_budget: Budget,
    node: usize,
    n_restarts: usize,
    s: &SolverSettings,
    seed: u64,
) -> Result<MarkovReport> {
    let PdeKind::Parabolic { horizon } = spec.kind else {
        return Err(Error::Config(format!("{}: Markov consistency needs a parabolic problem", spec.name)));
    };
    if spec.generator.needs_alpha {
        return Err(Error::Config(format!("{}: Markov consistency does not support α-dependent generators", spec.name)));
    }
    if node == 0 || node >= budget.n_steps || n_restarts < 2 || n_restarts > budget.n_paths {
        return Err(Error::Config("restart node must be interior and 2 ≤ restarts ≤ paths".into()));
    }
    let grid = rbsde_core::make_grid(horizon - probe.t, budget.n_steps)?;
    let ens = rbsde_paths::simulate(&spec.sde, probe.t, &probe.x, &grid, budget.n_paths, seed)?;
    let tau = rbsde_core::TerminalTime::deterministic(&grid, budget.n_paths);
    let terminal = spec.terminal();
    let pb = rbsde_solver::Problem::new(&spec.generator, &terminal, &ens, &tau)?;
    let est = rbsde_solver::picard_solve(&pb, s)?.estimate;
    let t = ens.time(node);
    let mut rows = Vec::with_capacity(n_restarts);
    for p in 0..n_restarts {
        let x = ens.state(p, node).to_vec();
        let r = solve_parabolic(spec, &Probe::new(t, x.clone()), restart_budget, s, derive_seed(seed, 1 + p as u64))?;
        rows.push(MarkovRow {
            x,
            regressed: est.y.at(p, node)[0],
            resolved: r.u,
            resolved_stderr: r.stderr,
        });
    }
    let diffs: Vec<f64> = rows.iter().map(|r| r.resolved - r.regressed).collect();
    let (mean_diff, se) = mean_stderr(&diffs);
    let m = rows.len() as f64;
    let resolve_se = (rows.iter().map(|r| r.resolved_stderr.powi(2)).sum::<f64>() / m).sqrt() / m.sqrt();
    let sigma = se.max(resolve_se);
    Ok(MarkovReport {
        t,
        rows,
        mean_diff,
        sigma,
        pass: mean_diff.abs() <= 4.0 * sigma,
    })
}
