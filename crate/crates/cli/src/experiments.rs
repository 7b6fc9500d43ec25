//! Experiment kinds: resolution of a configuration table into runnable
//! settings, and the runners that produce artifacts and check rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::Serialize;
use toml::Spanned;

use rbsde_core::fixtures::{build, catalogue, Fixture, Horizon, Params};
use rbsde_core::rng::derive_seed;
use rbsde_core::{Error, GeneratorSpec, PathEnsemble, Ragged, Result, TerminalTime};
use rbsde_estimates::{
    apriori_check, dependence_scaling, stability_sequence, truncation_approximants, write_checks_csv, CheckRow, Verdict,
};
use rbsde_feynman_kac::{
    growth_bound_check, solve_table, Budget, EllipticOptions, Growth, PdeKind, PdeProblemSpec, PdeSolutionTable, Probe,
    TableSettings,
};
use rbsde_paths::{exp_moment_check, simulate_fixture, write_jsonl};
use rbsde_solver::{
    alpha_traces, contraction_ratios, picard_solve, residual_check, root_stderr, validate_assumptions, write_report_jsonl,
    AssumptionSampler, Basis, PicardOutcome, Problem, Scheme, SolverSettings, ZTarget,
};

use crate::config::{Experiment, Kind, SchemaError, SchemeCfg, ZTargetCfg};

const N_BOOT: usize = 200;

/// A validated experiment, ready to run.
pub struct Prepared {
    pub id: String,
    pub kind: Kind,
    pub fixture_id: String,
    pub seed: u64,
    fixture: Fixture,
    generator: GeneratorSpec,
    n_paths: usize,
    n_steps: usize,
    solver: SolverSettings,
    task: Task,
}

enum Task {
    Simulate { max_dump: usize, exp_moment: Option<(f64, f64)> },
    Solve { exact: Option<(f64, f64)>, contraction: bool, residual_factor: f64 },
    Apriori { c: Option<f64> },
    Dependence { deltas: Vec<f64>, slope_tol: f64 },
    Stability { ns: Vec<usize> },
    FeynmanKac(Box<FkTask>),
    Validate { sampler: AssumptionSampler },
    Refine { steps: Vec<usize>, exact: f64 },
}

struct FkTask {
    spec: PdeProblemSpec,
    table: TableSettings,
    max_abs_err: Option<f64>,
    max_rel_err: Option<f64>,
    fd_rel_err: Option<f64>,
    max_truncation_mass: f64,
    growth_check: bool,
    envelope_samples: usize,
}

fn error_text(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Premise(m) | Error::Invariant(m) | Error::IllPosed(m) | Error::Numerical(m) | Error::Divergence(m) => {
            m.clone()
        }
        Error::Io(e) => e.to_string(),
    }
}

/// Fixture parameters after applying overrides to the catalogue defaults.
fn resolved_params(id: &str, overrides: &Params) -> Params {
    let mut p: Params = catalogue()
        .iter()
        .find(|f| f.id == id)
        .map(|f| f.params.iter().map(|(k, v)| (k.to_string(), *v)).collect())
        .unwrap_or_default();
    p.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));
    p
}

/// `Y_0` in closed form, for fixtures that have one (started at `x0 = 0`).
pub fn closed_form_y0(id: &str, overrides: &Params) -> Option<f64> {
    let p = resolved_params(id, overrides);
    match id {
        "zero" => Some(0.0),
        "linear-constant-coeff" => Some(p["xi"] * (p["mu0"] * p["t"]).exp()),
        // Girsanov: E[B_T E(ν0 B)_T] = ν0 T
        "linear-scaled-terminal" => Some(p["scale"] * p["nu0"] * p["t"] * (p["mu0"] * p["t"]).exp()),
        "motivational-counterexample-rho1" => Some(1.0),
        "heat" => Some((p["mu0"] * p["t"]).exp() * p["t"]),
        "elliptic-exit" => Some(1.0),
        _ => None,
    }
}

struct Ctx<'a> {
    j: usize,
    span: Range<usize>,
    e: &'a Experiment,
}

impl Ctx<'_> {
    fn err(&self, field: &str, msg: impl Into<String>) -> SchemaError {
        self.err_at(Some(self.span.clone()), field, msg)
    }

    fn err_at(&self, span: Option<Range<usize>>, field: &str, msg: impl Into<String>) -> SchemaError {
        let path = if field.is_empty() {
            format!("experiment[{}]", self.j)
        } else {
            format!("experiment[{}].{field}", self.j)
        };
        SchemaError::new(span, path, msg)
    }

    fn positive(&self, field: &str, v: Option<f64>, default: f64) -> std::result::Result<f64, SchemaError> {
        let v = v.unwrap_or(default);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(field, format!("must be a positive number (got {v})")))
        }
    }
}

fn solver_settings(cx: &Ctx, fx: &Fixture) -> std::result::Result<SolverSettings, SchemaError> {
    let mut s = SolverSettings {
        weight: fx.weight,
        ..Default::default()
    };
    if let Some(w) = &cx.e.weight {
        let span = Some(w.span());
        let w = w.get_ref();
        s.weight.beta = w.beta.unwrap_or(s.weight.beta);
        s.weight.rho = w.rho.unwrap_or(s.weight.rho);
        s.weight.rho_bar = w.rho_bar.unwrap_or(s.weight.rho_bar);
        s.weight.validate().map_err(|e| cx.err_at(span, "weight", error_text(&e)))?;
    }
    if let Some(sc) = &cx.e.solver {
        let span = Some(sc.span());
        let sc = sc.get_ref();
        let bad = |m: String| cx.err_at(span.clone(), "solver", m);
        s.basis = match (sc.degree, sc.bins) {
            (Some(_), Some(_)) => return Err(bad("set either degree or bins, not both".into())),
            (_, Some(bins)) => Basis::PiecewiseConstant { bins },
            (degree, None) => Basis::Polynomial { degree: degree.unwrap_or(3) },
        };
        s.scheme = match sc.scheme.unwrap_or(SchemeCfg::Explicit) {
            SchemeCfg::Explicit if sc.damping.is_some() || sc.max_inner.is_some() => {
                return Err(bad("damping and max_inner apply to the implicit scheme only".into()));
            }
            SchemeCfg::Explicit => Scheme::Explicit,
            SchemeCfg::Implicit => Scheme::Implicit {
                damping: sc.damping.unwrap_or(1.0),
                max_inner: sc.max_inner.unwrap_or(20),
            },
        };
        if let Some(z) = sc.z_target {
            s.z_target = match z {
                ZTargetCfg::ControlVariate => ZTarget::ControlVariate,
                ZTargetCfg::Increment => ZTarget::Increment,
            };
        }
        s.picard_max = sc.picard_max.unwrap_or(s.picard_max);
        s.picard_tol = sc.picard_tol.unwrap_or(s.picard_tol);
        s.ridge = sc.ridge.unwrap_or(s.ridge);
        s.validate().map_err(|e| bad(error_text(&e)))?;
    }
    Ok(s)
}

/// Resolves experiment `j`: builds the fixture and every setting, so that
/// all value errors surface before anything runs.
pub fn prepare(j: usize, exp: &Spanned<Experiment>, master_seed: u64) -> std::result::Result<Prepared, SchemaError> {
    let cx = Ctx {
        j,
        span: exp.span(),
        e: exp.get_ref(),
    };
    let e = cx.e;
    let fixture_id = e.fixture.clone().ok_or_else(|| cx.err("fixture", "missing fixture id"))?;
    let fx = build(&fixture_id, &e.params).map_err(|err| {
        let field = if e.params.is_empty() { "fixture" } else { "params" };
        cx.err(field, error_text(&err))
    })?;
    let solver = solver_settings(&cx, &fx)?;
    let n_paths = e.n_paths.unwrap_or(if e.kind == Kind::FeynmanKac { 20_000 } else { 10_000 });
    let n_steps = e.n_steps.unwrap_or(if e.kind == Kind::FeynmanKac { 64 } else { 32 });
    if n_paths < 2 {
        return Err(cx.err("n_paths", format!("need at least 2 paths (got {n_paths})")));
    }
    if n_steps == 0 {
        return Err(cx.err("n_steps", "must be ≥ 1"));
    }
    let mut generator = fx.generator.clone();
    if let Some(t) = e.truncated_generator {
        if fx.alpha.is_none() {
            return Err(cx.err("truncated_generator", format!("fixture '{fixture_id}' declares no α rule")));
        }
        generator = rbsde_transforms::truncated_generator(&generator, t.n, t.r).map_err(|err| cx.err("truncated_generator", error_text(&err)))?;
    }
    if generator.needs_alpha && fx.alpha.is_none() {
        return Err(cx.err("fixture", format!("generator '{}' needs α but the fixture declares no rule", generator.name)));
    }
    let exact = closed_form_y0(&fixture_id, &e.params);
    let task = match e.kind {
        Kind::Simulate => Task::Simulate {
            max_dump: e.max_dump.unwrap_or(16),
            exp_moment: match e.exp_moment {
                Some(m) => Some((cx.positive("exp_moment.gamma", Some(m.gamma), 0.0)?, cx.positive("exp_moment.q", Some(m.q), 0.0)?)),
                None => None,
            },
        },
        Kind::Solve => {
            let tol = cx.positive("oracle_tol", e.oracle_tol, 0.02)?;
            if e.oracle_tol.is_some() && exact.is_none() {
                return Err(cx.err("oracle_tol", format!("fixture '{fixture_id}' has no closed-form Y_0")));
            }
            if e.truncated_generator.is_some() && e.oracle_tol.is_some() {
                return Err(cx.err("oracle_tol", "the closed form does not apply to a truncated generator"));
            }
            Task::Solve {
                exact: if e.truncated_generator.is_some() { None } else { exact.map(|x| (x, tol)) },
                contraction: e.contraction.unwrap_or(false),
                residual_factor: cx.positive("residual_factor", e.residual_factor, 1.0)?,
            }
        }
        Kind::Apriori => {
            if generator.driver_bound.is_none() {
                return Err(cx.err("fixture", format!("generator '{}' declares no driver bound (f, μ̄, ν̄)", generator.name)));
            }
            let c = match e.c {
                Some(c) => Some(cx.positive("c", Some(c), 0.0)?),
                None => None,
            };
            Task::Apriori { c }
        }
        Kind::Dependence => {
            let deltas = e.deltas.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
            if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(cx.err("deltas", "need at least two positive δ"));
            }
            if generator.needs_alpha || generator.k() != 1 {
                return Err(cx.err("fixture", "dependence scaling needs a scalar generator without α"));
            }
            Task::Dependence {
                deltas,
                slope_tol: cx.positive("slope_tol", e.slope_tol, 0.3)?,
            }
        }
        Kind::Stability => {
            if fx.alpha.is_none() {
                return Err(cx.err("fixture", format!("fixture '{fixture_id}' declares no α rule")));
            }
            let ns = e.ns.clone().unwrap_or_else(|| vec![1, 2, 4, 8]);
            if ns.len() < 2 || ns.contains(&0) || ns.windows(2).any(|w| w[1] <= w[0]) {
                return Err(cx.err("ns", "need at least two increasing positive levels"));
            }
            Task::Stability { ns }
        }
        Kind::FeynmanKac => Task::FeynmanKac(Box::new(prepare_fk(&cx, &fixture_id, n_paths, n_steps, &solver)?)),
        Kind::Validate => {
            let mut sampler = AssumptionSampler::new(fx.sde.l(), fx.horizon.t_cap(), 0);
            sampler.n_samples = e.samples.unwrap_or(sampler.n_samples);
            if sampler.n_samples == 0 {
                return Err(cx.err("samples", "must be ≥ 1"));
            }
            sampler.x_scale = cx.positive("x_scale", e.x_scale, 1.0)?;
            sampler.y_scale = cx.positive("y_scale", e.y_scale, 1.0)?;
            sampler.z_scale = cx.positive("z_scale", e.z_scale, 1.0)?;
            Task::Validate { sampler }
        }
        Kind::Refine => {
            let Some(exact) = exact else {
                return Err(cx.err("fixture", format!("fixture '{fixture_id}' has no closed-form Y_0 to refine against")));
            };
            let steps = e.steps.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
            if steps.len() < 2 || steps.contains(&0) || steps.windows(2).any(|w| w[1] <= w[0]) {
                return Err(cx.err("steps", "need at least two increasing positive step counts"));
            }
            Task::Refine { steps, exact }
        }
    };
    let mut prepared = Prepared {
        id: crate::config::experiment_id(j, e),
        kind: e.kind,
        fixture_id,
        seed: derive_seed(master_seed, j as u64),
        fixture: fx,
        generator,
        n_paths,
        n_steps,
        solver,
        task,
    };
    if let Task::Validate { sampler } = &mut prepared.task {
        sampler.seed = prepared.seed;
    }
    Ok(prepared)
}

fn prepare_fk(cx: &Ctx, fixture_id: &str, n_paths: usize, n_steps: usize, solver: &SolverSettings) -> std::result::Result<FkTask, SchemaError> {
    let e = cx.e;
    let g = e.growth.map(|g| (g.k, g.p, g.q)).unwrap_or((2.0, 1.0, 1.0));
    let growth = Growth::new(g.0, g.1, g.2).map_err(|err| cx.err("growth", error_text(&err)))?;
    let xs = e.probes.clone().unwrap_or_else(|| vec![0.0]);
    if xs.is_empty() {
        return Err(cx.err("probes", "need at least one probe"));
    }
    let t = e.probe_t.unwrap_or(0.0);
    let probes = xs.iter().map(|&x| Probe::new(t, vec![x])).collect();
    let spec = PdeProblemSpec::from_fixture(fixture_id, &e.params, growth, probes).map_err(|err| cx.err("fixture", error_text(&err)))?;
    spec.validate().map_err(|err| cx.err("probes", error_text(&err)))?;
    let elliptic = matches!(spec.kind, PdeKind::Elliptic { .. });
    if !elliptic && (e.strict.is_some() || e.exit_correction.is_some() || e.max_truncation_mass.is_some()) {
        return Err(cx.err("", "strict, exit_correction and max_truncation_mass apply to elliptic problems only"));
    }
    let opt = |field: &str, v: Option<f64>| -> std::result::Result<Option<f64>, SchemaError> {
        match v {
            Some(v) => Ok(Some(cx.positive(field, Some(v), 0.0)?)),
            None => Ok(None),
        }
    };
    let table = TableSettings {
        budget: Budget { n_paths, n_steps },
        solver: solver.clone(),
        elliptic: EllipticOptions {
            strict: e.strict.unwrap_or(false),
            exit_correction: e.exit_correction.unwrap_or(true),
            ..EllipticOptions::default()
        },
        fd_nx: e.fd_nx.unwrap_or(800),
        ..TableSettings::default()
    };
    Ok(FkTask {
        spec,
        table,
        max_abs_err: opt("max_abs_err", e.max_abs_err)?,
        max_rel_err: opt("max_rel_err", e.max_rel_err)?,
        fd_rel_err: opt("fd_rel_err", e.fd_rel_err)?,
        max_truncation_mass: cx.positive("max_truncation_mass", e.max_truncation_mass, 0.005)?,
        growth_check: e.growth_check.unwrap_or(true),
        envelope_samples: e.envelope_samples.unwrap_or(1000),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `lhs ≤ rhs`; NaN fails.
fn bound_row(id: impl Into<String>, lhs: f64, rhs: f64, stderr: f64) -> CheckRow {
    CheckRow {
        check_id: id.into(),
        lhs,
        rhs,
        stderr,
        verdict: Verdict::from_bool(lhs <= rhs),
    }
}

fn flag_row(id: impl Into<String>, ok: bool) -> CheckRow {
    bound_row(id, if ok { 0.0 } else { 1.0 }, 0.0, 0.0)
}

struct Solved {
    ens: PathEnsemble,
    tau: TerminalTime,
    alpha: Option<Ragged>,
    out: PicardOutcome,
}

impl Prepared {
    fn simulate(&self, n_steps: usize, seed: u64) -> Result<(PathEnsemble, TerminalTime)> {
        simulate_fixture(&self.fixture, 0.0, &self.fixture.x0, n_steps, self.n_paths, seed)
    }

    fn alpha(&self, ens: &PathEnsemble, tau: &TerminalTime, always: bool) -> Result<Option<Ragged>> {
        match &self.fixture.alpha {
            Some(rule) if always || self.generator.needs_alpha => {
                Ok(Some(alpha_traces(rule, ens, tau, &self.generator, self.solver.weight.beta)?))
            }
            _ => Ok(None),
        }
    }

    fn problem<'a>(&'a self, ens: &'a PathEnsemble, tau: &'a TerminalTime, alpha: Option<&'a Ragged>) -> Result<Problem<'a>> {
        let pb = Problem::new(&self.generator, &self.fixture.terminal, ens, tau)?;
        match alpha {
            Some(a) if self.generator.needs_alpha => pb.with_alpha(a),
            _ => Ok(pb),
        }
    }

    fn solve(&self, n_steps: usize, seed: u64) -> Result<Solved> {
        let (ens, tau) = self.simulate(n_steps, seed)?;
        let alpha = self.alpha(&ens, &tau, false)?;
        let out = picard_solve(&self.problem(&ens, &tau, alpha.as_ref())?, &self.solver)?;
        Ok(Solved { ens, tau, alpha, out })
    }

    /// Runs the experiment, writing artifacts into `dir`.
    pub fn run(&self, dir: &Path) -> Result<Vec<CheckRow>> {
        match &self.task {
            Task::Simulate { max_dump, exp_moment } => self.run_simulate(dir, *max_dump, *exp_moment),
            Task::Solve {
                exact,
                contraction,
                residual_factor,
            } => self.run_solve(dir, *exact, *contraction, *residual_factor),
            Task::Apriori { c } => self.run_apriori(dir, *c),
            Task::Dependence { deltas, slope_tol } => self.run_dependence(dir, deltas, *slope_tol),
            Task::Stability { ns } => self.run_stability(dir, ns),
            Task::FeynmanKac(t) => self.run_fk(dir, t),
            Task::Validate { sampler } => self.run_validate(dir, sampler),
            Task::Refine { steps, exact } => self.run_refine(dir, steps, *exact),
        }
    }

    fn run_simulate(&self, dir: &Path, max_dump: usize, exp_moment: Option<(f64, f64)>) -> Result<Vec<CheckRow>> {
        let (ens, tau) = self.simulate(self.n_steps, self.seed)?;
        let mut w = create(dir, "paths.jsonl")?;
        write_jsonl(&ens, &tau, max_dump, &mut w)?;
        w.flush()?;
        let n = ens.n_paths();
        let nonfinite = (0..n).filter(|&p| ens.path_states(p).iter().any(|v| !v.is_finite())).count();
        let mean_tau = (0..n).map(|p| ens.time(tau.per_path_index[p])).sum::<f64>() / n as f64;
        #[derive(Serialize)]
        struct Summary {
            n_paths: usize,
            n_steps: usize,
            dt: f64,
            mean_terminal_time: f64,
            truncation_mass: f64,
        }
        write_rows(
            dir,
            "summary.csv",
            &[Summary {
                n_paths: n,
                n_steps: self.n_steps,
                dt: ens.grid().dt(),
                mean_terminal_time: mean_tau,
                truncation_mass: tau.truncation_mass,
            }],
        )?;
        let mut checks = vec![bound_row("finite_states", nonfinite as f64, 0.0, 0.0)];
        if let Some((gamma, q)) = exp_moment {
            let r = exp_moment_check(&ens, Some(&tau), gamma, q)?;
            write_json(dir, "exp_moment.json", &r)?;
            checks.push(CheckRow {
                check_id: "exp_moment".into(),
                lhs: r.estimate,
                rhs: f64::INFINITY,
                stderr: r.stderr,
                verdict: Verdict::from_bool(r.estimate.is_finite() && !r.heavy_tail),
            });
        }
        Ok(checks)
    }

    fn run_solve(&self, dir: &Path, exact: Option<(f64, f64)>, contraction: bool, residual_factor: f64) -> Result<Vec<CheckRow>> {
        let sol = self.solve(self.n_steps, self.seed)?;
        let pb = self.problem(&sol.ens, &sol.tau, sol.alpha.as_ref())?;
        let est = &sol.out.estimate;
        let res = residual_check(&pb, est, &self.solver, residual_factor)?;
        let mut w = create(dir, "solver.jsonl")?;
        write_report_jsonl(&sol.out, Some(&res), self.seed, &mut w)?;
        w.flush()?;
        let se = root_stderr(&pb, est, N_BOOT, derive_seed(self.seed, 1))?;
        #[derive(Serialize)]
        struct Root {
            component: usize,
            y0: f64,
            stderr: f64,
            z0: String,
            exact: Option<f64>,
        }
        let d = self.generator.d();
        let roots: Vec<Root> = (0..self.generator.k())
            .map(|a| Root {
                component: a,
                y0: est.y0()[a],
                stderr: se[a],
                z0: est.z0()[a * d..(a + 1) * d].iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
                exact: exact.map(|e| e.0),
            })
            .collect();
        write_rows(dir, "root.csv", &roots)?;

        let mut checks = vec![bound_row("residual", res.flagged.len() as f64, 0.0, 0.0)];
        if !contraction {
            checks.push(flag_row("converged", sol.out.converged));
        }
        if let Some((x, tol)) = exact {
            checks.push(bound_row("oracle", (est.y0()[0] - x).abs(), tol * x.abs() + 4.0 * se[0], se[0]));
        }
        if contraction {
            let ratios = contraction_ratios(&sol.out, N_BOOT, derive_seed(self.seed, 2));
            #[derive(Serialize)]
            struct Ratio {
                m: usize,
                distance: f64,
                next_distance: f64,
                ratio: f64,
                stderr: f64,
            }
            let rows: Vec<Ratio> = ratios
                .iter()
                .map(|r| Ratio {
                    m: r.m,
                    distance: sol.out.distances[r.m - 1],
                    next_distance: sol.out.distances[r.m],
                    ratio: r.ratio,
                    stderr: r.stderr,
                })
                .collect();
            write_rows(dir, "contraction.csv", &rows)?;
            let inv_rho = 1.0 / self.solver.weight.rho;
            for r in &ratios {
                checks.push(bound_row(format!("contraction_m{}", r.m), r.ratio, inv_rho + 3.0 * r.stderr, r.stderr));
            }
        }
        Ok(checks)
    }

    fn run_apriori(&self, dir: &Path, c: Option<f64>) -> Result<Vec<CheckRow>> {
        let sol = self.solve(self.n_steps, self.seed)?;
        let rep = apriori_check(&sol.out.estimate, &self.generator, &sol.ens, &sol.tau, &self.solver.weight, c)?;
        write_checks_csv(&rep.checks, create(dir, "apriori.csv")?)?;
        write_json(dir, "apriori.json", &rep)?;
        Ok(rep.checks)
    }

    fn run_dependence(&self, dir: &Path, deltas: &[f64], slope_tol: f64) -> Result<Vec<CheckRow>> {
        let (ens, tau) = self.simulate(self.n_steps, self.seed)?;
        let rep = dependence_scaling(&self.generator, &self.fixture.terminal, &ens, &tau, deltas, &self.solver)?;
        #[derive(Serialize)]
        struct Row {
            delta: f64,
            distance: f64,
            stderr: f64,
        }
        let rows: Vec<Row> = (0..rep.deltas.len())
            .map(|i| Row {
                delta: rep.deltas[i],
                distance: rep.lhs[i],
                stderr: rep.lhs_stderr[i],
            })
            .collect();
        write_rows(dir, "dependence.csv", &rows)?;
        let mut checks = rep.rows.clone();
        checks.push(bound_row("slope", (rep.slope - 2.0).abs(), slope_tol, 0.0));
        Ok(checks)
    }

    fn run_stability(&self, dir: &Path, ns: &[usize]) -> Result<Vec<CheckRow>> {
        let (ens, tau) = self.simulate(self.n_steps, self.seed)?;
        let alpha = self.alpha(&ens, &tau, true)?;
        let rule = self.fixture.alpha.as_ref().expect("checked in prepare");
        let aps = truncation_approximants(&self.generator, &self.fixture.terminal, rule, self.solver.weight.beta, ns)?;
        let t = stability_sequence(&self.generator, &self.fixture.terminal, &aps, &ens, &tau, alpha.as_ref(), &self.solver)?;
        write_rows(dir, "stability.csv", &t.rows)?;
        Ok(vec![
            flag_row("premise_decreasing", t.premise_decreasing),
            flag_row("distance_decreasing", t.distance_decreasing),
            flag_row("premise_at_floor", t.premise_at_floor),
            flag_row("distance_at_floor", t.distance_at_floor),
        ])
    }

    fn run_fk(&self, dir: &Path, t: &FkTask) -> Result<Vec<CheckRow>> {
        let mut checks = Vec::new();
        let radius = t.spec.probes.iter().flat_map(|p| p.x.iter()).fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
        match t.spec.check_envelopes(t.envelope_samples, radius, derive_seed(self.seed, 3)) {
            Ok(()) => checks.push(flag_row("envelope", true)),
            Err(Error::Premise(m)) => {
                eprintln!("{}: {m}", self.id);
                checks.push(flag_row("envelope", false));
            }
            Err(e) => return Err(e),
        }
        let table = solve_table(&t.spec, &t.table, self.seed)?;
        table.write_csv(create(dir, "table.csv")?)?;
        for r in &table.rows {
            for w in &r.warnings {
                eprintln!("{}: probe {}: {w}", self.id, r.probe.label());
            }
        }
        let nan = f64::NAN;
        if let Some(tol) = t.max_abs_err {
            checks.push(bound_row("max_abs_err", table.max_abs_error().unwrap_or(nan), tol, max_stderr(&table)));
        }
        if let Some(tol) = t.max_rel_err {
            let worst = table
                .rows
                .iter()
                .filter_map(|r| r.oracle.map(|o| ((r.u - o).abs() + 4.0 * r.stderr) / o.abs()))
                .reduce(f64::max)
                .unwrap_or(nan);
            checks.push(bound_row("max_rel_err", worst, tol, max_stderr(&table)));
        }
        if let Some(tol) = t.fd_rel_err {
            checks.push(bound_row("fd_rel_err", table.max_fd_rel_error().unwrap_or(nan), tol, 0.0));
        }
        if matches!(t.spec.kind, PdeKind::Elliptic { .. }) {
            checks.push(bound_row("truncation_mass", table.max_truncation_mass(), t.max_truncation_mass, 0.0));
        }
        if t.growth_check {
            let v = growth_bound_check(&table, &t.spec.growth);
            write_json(dir, "growth.json", &v)?;
            checks.push(CheckRow {
                check_id: "growth".into(),
                lhs: v.c,
                rhs: 2.0 * v.c_inner,
                stderr: 0.0,
                verdict: Verdict::from_bool(v.pass),
            });
        }
        Ok(checks)
    }

    fn run_validate(&self, dir: &Path, sampler: &AssumptionSampler) -> Result<Vec<CheckRow>> {
        let rep = validate_assumptions(&self.generator, sampler)?;
        #[derive(Serialize)]
        struct Row<'a> {
            assumption: &'a str,
            tested: bool,
            max_violation: f64,
            n_violations: usize,
            n_nonfinite: usize,
            pass: bool,
        }
        let rows: Vec<Row> = rep
            .checks
            .iter()
            .map(|c| Row {
                assumption: c.name,
                tested: c.tested,
                max_violation: c.max_violation,
                n_violations: c.n_violations,
                n_nonfinite: c.n_nonfinite,
                pass: c.pass,
            })
            .collect();
        write_rows(dir, "assumptions.csv", &rows)?;
        for c in rep.checks.iter().filter(|c| !c.pass) {
            if let Some(s) = &c.worst_sample {
                eprintln!("{}: {} violated at {s}", self.id, c.name);
            }
        }
        Ok(rep
            .checks
            .iter()
            .filter(|c| c.tested)
            .map(|c| CheckRow {
                check_id: c.name.to_string(),
                lhs: c.max_violation,
                rhs: 1e-9,
                stderr: 0.0,
                verdict: Verdict::from_bool(c.pass),
            })
            .collect())
    }

    fn run_refine(&self, dir: &Path, steps: &[usize], exact: f64) -> Result<Vec<CheckRow>> {
        #[derive(Serialize)]
        struct Row {
            n_steps: usize,
            y0: f64,
            stderr: f64,
            exact: f64,
            abs_err: f64,
        }
        let mut rows = Vec::new();
        for &n in steps {
            let sol = self.solve(n, derive_seed(self.seed, n as u64))?;
            let pb = self.problem(&sol.ens, &sol.tau, sol.alpha.as_ref())?;
            let se = root_stderr(&pb, &sol.out.estimate, N_BOOT, derive_seed(self.seed, 1))?[0];
            let y0 = sol.out.estimate.y0()[0];
            rows.push(Row {
                n_steps: n,
                y0,
                stderr: se,
                exact,
                abs_err: (y0 - exact).abs(),
            });
        }
        write_rows(dir, "refine.csv", &rows)?;
        Ok(rows
            .windows(2)
            .map(|w| {
                let band = 4.0 * w[0].stderr.hypot(w[1].stderr);
                bound_row(format!("refine_{}_{}", w[0].n_steps, w[1].n_steps), w[1].abs_err, w[0].abs_err + band, band / 4.0)
            })
            .collect())
    }
}

fn max_stderr(t: &PdeSolutionTable) -> f64 {
    t.rows.iter().map(|r| r.stderr).fold(0.0, f64::max)
}

/// Horizon of a fixture as a short label, for listings.
pub fn horizon_label(h: &Horizon) -> String {
    match h {
        Horizon::Fixed { t } => format!("T = {t}"),
        Horizon::Exit { domain, t_cap } => format!("exit from {} (cap {t_cap})", domain.name),
        Horizon::Infinite { t_cap } => format!("infinite (cap {t_cap})"),
    }
}
