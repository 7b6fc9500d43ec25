use rbsde_core::rng::derive_seed;
use rbsde_core::{make_grid, DomainSpec, Error, Membership, PathEnsemble, Ragged, Result, TerminalTime};
use rbsde_paths::{simulate, simulate_until_exit};
use rbsde_solver::{alpha_traces, picard_solve, root_stderr, Problem, SolutionEstimate, SolverSettings};
use serde::Serialize;

use crate::spec::{PdeKind, PdeProblemSpec, Probe};

/// Simulation budget for one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Budget {
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Discrete monitoring misses excursions between nodes, which biases the
/// exit time upwards by about `0.5826 σ √Δ` in distance. Shrinking the
/// interval by that amount removes the leading term.
pub const EXIT_SHIFT: f64 = 0.5826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticOptions {
    /// Shrink interval domains by `EXIT_SHIFT σ √Δ` for exit detection.
    pub exit_correction: bool,
    /// Double `t_cap` (and the step count) until the truncation mass drops
    /// below `target_mass`, at most `max_extensions` times; fail if it is
    /// still above `fail_mass`.
    pub strict: bool,
    pub target_mass: f64,
    pub fail_mass: f64,
    pub max_extensions: usize,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        EllipticOptions {
            exit_correction: true,
            strict: false,
            target_mass: 0.005,
            fail_mass: 0.05,
            max_extensions: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeRow {
    pub probe: Probe,
    pub u: f64,
    pub stderr: f64,
    /// `z` at the root node, the `(∇_x u σ)` proxy.
    pub z: Vec<f64>,
    pub oracle: Option<f64>,
    pub fd: Option<f64>,
    pub truncation_mass: f64,
    pub t_cap: f64,
    pub n_steps: usize,
    pub picard_iterations: usize,
    pub warnings: Vec<String>,
}

impl PdeRow {
    /// `|u − oracle| / |oracle|`, or the absolute error where the oracle vanishes.
    pub fn rel_err(&self) -> Option<f64> {
        self.oracle.map(|o| {
            let e = (self.u - o).abs();
            if o == 0.0 {
                e
            } else {
                e / o.abs()
            }
        })
    }
}

fn tagged(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        Error::Invariant(m) => Error::Invariant(format!("{name}: {m}")),
        Error::Premise(m) => Error::Premise(format!("{name}: {m}")),
        Error::IllPosed(m) => Error::IllPosed(format!("{name}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{name}: {m}")),
        Error::Divergence(m) => Error::Divergence(format!("{name}: {m}")),
        Error::Io(e) => Error::Io(e),
    }
}

struct Solved {
    est: SolutionEstimate,
    iterations: usize,
    stderr: f64,
}

/// Runs the solver; the error of `Y_0` comes from the unbiased per-path
/// representation of the root value.
fn solve(spec: &PdeProblemSpec, ens: &PathEnsemble, tau: &TerminalTime, s: &SolverSettings, seed: u64) -> Result<Solved> {
    let terminal = spec.terminal();
    let alpha: Option<Ragged> = match &spec.alpha {
        Some(rule) if spec.generator.needs_alpha => Some(alpha_traces(rule, ens, tau, &spec.generator, s.weight.beta)?),
        _ => None,
    };
    let mut pb = Problem::new(&spec.generator, &terminal, ens, tau)?;
    if let Some(a) = alpha.as_ref() {
        pb = pb.with_alpha(a)?;
    }
    let out = picard_solve(&pb, s)?;
    let stderr = root_stderr(&pb, &out.estimate, 200, seed)?[0];
    Ok(Solved {
        iterations: out.distances.len(),
        est: out.estimate,
        stderr,
    })
}

/// `u(t, x) = Y_t^{t,x}`: simulates `X^{t,x}` on `[t, T]`, sets `ξ = h(X_T)`
/// and reads `y` at the (degenerate) root node.
pub fn solve_parabolic(spec: &PdeProblemSpec, probe: &Probe, budget: Budget, s: &SolverSettings, seed: u64) -> Result<PdeRow> {
    let PdeKind::Parabolic { horizon } = spec.kind else {
        return Err(Error::Config(format!("{}: not a parabolic problem", spec.name)));
    };
    if !(probe.t < horizon) {
        return Err(Error::Config(format!("{}: probe time {} must be before T = {horizon}", spec.name, probe.t)));
    }
    let run = || -> Result<PdeRow> {
        let grid = make_grid(horizon - probe.t, budget.n_steps)?;
        let ens = simulate(&spec.sde, probe.t, &probe.x, &grid, budget.n_paths, seed)?;
        let tau = TerminalTime::deterministic(&grid, budget.n_paths);
        let sol = solve(spec, &ens, &tau, s, seed)?;
        Ok(PdeRow {
            probe: probe.clone(),
            u: sol.est.y0()[0],
            stderr: sol.stderr,
            z: sol.est.z0().to_vec(),
            oracle: spec.exact.as_ref().map(|f| f(probe.t, &probe.x)),
            fd: None,
            truncation_mass: 0.0,
            t_cap: horizon,
            n_steps: budget.n_steps,
            picard_iterations: sol.iterations,
            warnings: Vec::new(),
        })
    };
    run().map_err(|e| tagged(&spec.name, e))
}

fn detection_domain(spec: &PdeProblemSpec, domain: &DomainSpec, x: &[f64], dt: f64) -> Result<DomainSpec> {
    let Some((lo, hi)) = domain.interval else {
        return Ok(domain.clone());
    };
    let (l, d) = (spec.sde.l(), spec.sde.d());
    let mut sig = vec![0.0; l * d];
    let mut shift = |edge: f64| {
        let mut at = x.to_vec();
        at[0] = edge;
        spec.sde.diffusion(0.0, &at, &mut sig);
        EXIT_SHIFT * sig[..d].iter().map(|v| v * v).sum::<f64>().sqrt() * dt.sqrt()
    };
    let (a, b) = (lo + shift(lo), hi - shift(hi));
    if !(a < b) {
        return Err(Error::Config(format!(
            "{}: time step too coarse for the exit correction on ({lo}, {hi})",
            spec.name
        )));
    }
    DomainSpec::interval(a, b)
}

/// `u(x) = Y_0^x` with `τ_x` the first exit from the domain. Paths still
/// inside at `t_cap` use `h` at the cap state and count towards the
/// truncation mass.
pub fn solve_elliptic(
    spec: &PdeProblemSpec,
    probe: &Probe,
    budget: Budget,
    s: &SolverSettings,
    opts: &EllipticOptions,
    seed: u64,
) -> Result<PdeRow> {
    let PdeKind::Elliptic { domain, t_cap } = &spec.kind else {
        return Err(Error::Config(format!("{}: not an elliptic problem", spec.name)));
    };
    let x = &probe.x;
    let oracle = spec.exact.as_ref().map(|f| f(0.0, x));
    match domain.membership(x) {
        Membership::Exterior => {
            return Err(Error::Config(format!("{}: probe {x:?} lies outside the closed domain", spec.name)));
        }
        Membership::Boundary if domain.regular_boundary => {
            return Ok(PdeRow {
                probe: probe.clone(),
                u: spec.h_at(x),
                stderr: 0.0,
                z: vec![0.0; spec.sde.d()],
                oracle,
                fd: None,
                truncation_mass: 0.0,
                t_cap: 0.0,
                n_steps: 0,
                picard_iterations: 0,
                warnings: Vec::new(),
            });
        }
        _ => {}
    }
    let run = || -> Result<PdeRow> {
        let (mut cap, mut steps) = (*t_cap, budget.n_steps);
        let mut warnings = Vec::new();
        let mut extensions = 0;
        let (ens, tau) = loop {
            let grid = make_grid(cap, steps)?;
            let det = if opts.exit_correction {
                detection_domain(spec, domain, x, grid.dt())?
            } else {
                domain.clone()
            };
            let (ens, tau) = simulate_until_exit(&spec.sde, 0.0, x, &grid, budget.n_paths, seed, &det)?;
            if !opts.strict || tau.truncation_mass < opts.target_mass || extensions == opts.max_extensions {
                break (ens, tau);
            }
            extensions += 1;
            cap *= 2.0;
            steps *= 2;
        };
        let mass = tau.truncation_mass;
        if mass > opts.fail_mass {
            let msg = format!("truncation mass {mass:.4} exceeds {} at t_cap = {cap}", opts.fail_mass);
            if opts.strict {
                return Err(Error::Premise(msg));
            }
            warnings.push(msg);
        } else if opts.strict && mass >= opts.target_mass {
            warnings.push(format!("truncation mass {mass:.4} still above {} after {extensions} extensions", opts.target_mass));
        }
        let sol = solve(spec, &ens, &tau, s, derive_seed(seed, 1))?;
        Ok(PdeRow {
            probe: probe.clone(),
            u: sol.est.y0()[0],
            stderr: sol.stderr,
            z: sol.est.z0().to_vec(),
            oracle,
            fd: None,
            truncation_mass: mass,
            t_cap: cap,
            n_steps: steps,
            picard_iterations: sol.iterations,
            warnings,
        })
    };
    run().map_err(|e| tagged(&spec.name, e))
}
