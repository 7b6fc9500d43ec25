//! Weighted norms and the inequality suite (a priori estimates, continuous
//! dependence, stability) as paired Monte Carlo checks.
//!
//! Every check compares per-path quantities on the same ensemble: with
//! `D_p = lhs_p − C·rhs_p`, a check passes iff `mean(D) ≤ 4·stderr(D)`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::reduce::mean_stderr;
use rbsde_core::stats::loglog_slope;
use rbsde_core::{
    AlphaInput, AlphaRule, CoefficientTrace, Error, GeneratorSpec, PathEnsemble, Point, Ragged, Result,
    TerminalCondition, TerminalTime, WeightParams,
};
use rbsde_solver::{picard_solve, Problem, SolutionEstimate, SolverSettings};
use rbsde_transforms::{clamp_q, third_step_generator};

pub const SCHEMA_VERSION: u32 = 1;

const SLACK: f64 = 4.0;

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn se_or_zero(se: f64) -> f64 {
    if se.is_finite() {
        se
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedNorms {
    pub xi_norm_sq: f64,
    pub y_norm_sq: f64,
    pub z_norm_sq: f64,
    /// Standard errors of the three entries above, in order.
    pub std_err: [f64; 3],
    pub n_paths: usize,
}

/// `‖ξ‖²`, `‖Y‖²_c` (grid supremum) and `‖Z‖²` with weight `e^{2∫a}` from `trace`.
pub fn weighted_norms(y: &Ragged, z: &Ragged, trace: &CoefficientTrace, dt: f64) -> Result<WeightedNorms> {
    let n = y.n_paths();
    if z.n_paths() != n || trace.n_paths() != n || (0..n).any(|p| y.len(p) != trace.len(p)) {
        return Err(Error::Config("weighted norms: solution and coefficient trace disagree in shape".into()));
    }
    let rows: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|p| {
            let last = y.len(p) - 1;
            let mut ysup = 0.0f64;
            let mut zint = 0.0;
            for i in 0..=last {
                let w = (2.0 * trace.cum_a_at(p, i)).exp();
                ysup = ysup.max(w * sq(y.at(p, i)));
                if i < last {
                    zint += w * sq(z.at(p, i)) * dt;
                }
            }
            [(2.0 * trace.cum_a_terminal(p)).exp() * sq(y.at(p, last)), ysup, zint]
        })
        .collect();
    let col = |c: usize| mean_stderr(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
    let (x, y_, z_) = (col(0), col(1), col(2));
    Ok(WeightedNorms {
        xi_norm_sq: x.0,
        y_norm_sq: y_.0,
        z_norm_sq: z_.0,
        std_err: [se_or_zero(x.1), se_or_zero(y_.1), se_or_zero(z_.1)],
        n_paths: n,
    })
}

/// One row of a check report (`check_id, lhs, rhs, stderr, verdict`).
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the paired difference `lhs − rhs`.
    pub stderr: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Paired comparison of per-path `lhs` and `rhs` samples.
pub fn paired_row(check_id: impl Into<String>, lhs: &[f64], rhs: &[f64]) -> CheckRow {
    let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let (l, r) = (mean_stderr(lhs).0, mean_stderr(rhs).0);
    let (d, se) = mean_stderr(&diff);
    let se = se_or_zero(se);
    CheckRow {
        check_id: check_id.into(),
        lhs: l,
        rhs: r,
        stderr: se,
        verdict: Verdict::from_bool(d <= SLACK * se || d <= 0.0),
    }
}

/// CSV report with columns `check_id,lhs,rhs,stderr,verdict`.
pub fn write_checks_csv<W: Write>(rows: &[CheckRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["check_id", "lhs", "rhs", "stderr", "verdict"]).map_err(csv_err)?;
    for r in rows {
        wr.write_record([
            r.check_id.clone(),
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            format!("{:e}", r.stderr),
            r.verdict.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Coefficient trace of the driver bound `(μ̄, ν̄)` and the process `f` along
/// each path, from the generator's declared bound `⟨ŷ, g⟩ ≤ f + μ̄|y| + ν̄|z|`.
pub fn driver_bound_trace(
    g: &GeneratorSpec,
    ens: &PathEnsemble,
    tau: &TerminalTime,
    wp: &WeightParams,
) -> Result<(CoefficientTrace, Ragged)> {
    let Some(bound) = g.driver_bound.clone() else {
        return Err(Error::Config(format!("generator '{}' declares no driver bound (f, μ̄, ν̄)", g.name)));
    };
    let b2 = bound.clone();
    let trace = CoefficientTrace::build(ens, &tau.per_path_index, move |t, x| {
        let (_, m, v) = b2(t, x);
        (m, v)
    }, wp)?;
    let f = (0..ens.n_paths())
        .map(|p| (0..=tau.per_path_index[p]).map(|i| bound(ens.time(i), ens.state(p, i)).0).collect())
        .collect();
    Ok((trace, Ragged::from_paths(f, 1)))
}

#[derive(Debug, Clone, Serialize)]
pub struct AprioriReport {
    pub weight: WeightParams,
    /// Constant of the `z_by_sup` bound: `2ρ̄/(ρ̄ − 1)`.
    pub z_constant: f64,
    /// `C* = 4(2 + 33ρ̄/(ρ̄ − 1))²`, used for `combined_c_star` and, unless
    /// overridden, for `sup_z_by_xi_f` and `sup_z_by_xi_yf`.
    pub c_star: f64,
    pub c_used: f64,
    pub checks: Vec<CheckRow>,
    /// Smallest constants that make the sample means of `sup_z_by_xi_f` and
    /// `sup_z_by_xi_yf` hold.
    pub empirical_c: [f64; 2],
    /// `E ∫ e^{2∫ā} ā |Y|²`, reported without a verdict.
    pub weighted_a_y_integral: f64,
    pub pass: bool,
}

/// Evaluates the four a priori inequalities unconditionally (`r = t = 0`).
///
/// The weight is built from the driver bound `(μ̄, ν̄)`; `c` overrides the
/// constant of the last two bounds (default `C*`).
pub fn apriori_check(
    est: &SolutionEstimate,
    g: &GeneratorSpec,
    ens: &PathEnsemble,
    tau: &TerminalTime,
    wp: &WeightParams,
    c: Option<f64>,
) -> Result<AprioriReport> {
    wp.validate()?;
    let (trace, f) = driver_bound_trace(g, ens, tau, wp)?;
    let dt = ens.grid().dt();
    let n = ens.n_paths();
    if est.y.n_paths() != n || (0..n).any(|p| est.y.len(p) != trace.len(p)) {
        return Err(Error::Config("a priori check: solution does not match the ensemble".into()));
    }
    let (beta, rho, rho_bar) = (wp.beta, wp.rho, wp.rho_bar);
    // per path: sup term, z integral, middle term, ξ term, (∫e^{A} f)², ∫e^{2A}|y| f, ∫e^{2A} ā |y|²
    let terms: Vec<[f64; 7]> = (0..n)
        .into_par_iter()
        .map(|p| {
            let last = trace.len(p) - 1;
            let mut t = [0.0f64; 7];
            let mut fint = 0.0;
            for i in 0..=last {
                let a = trace.cum_a_at(p, i);
                let w = (2.0 * a).exp();
                let y2 = sq(est.y.at(p, i));
                t[0] = t[0].max(w * y2);
                if i < last {
                    let (mu, nu) = (trace.mu_at(p, i), trace.nu_at(p, i));
                    let fi = f.at(p, i)[0];
                    t[1] += w * sq(est.z.at(p, i)) * dt;
                    t[2] += w * ((2.0 * beta - 2.0) * mu + (rho - rho_bar) * nu * nu) * y2 * dt;
                    fint += a.exp() * fi * dt;
                    t[5] += w * y2.sqrt() * fi * dt;
                    t[6] += w * trace.a[trace.range(p).start + i] * y2 * dt;
                }
            }
            t[3] = (2.0 * trace.cum_a_terminal(p)).exp() * sq(est.y.at(p, last));
            t[4] = fint * fint;
            t
        })
        .collect();
    let col = |j: usize| -> Vec<f64> { terms.iter().map(|t| t[j]).collect() };
    let (ysup, zint, mid, xi, fsq, yf, ay) = (col(0), col(1), col(2), col(3), col(4), col(5), col(6));
    let c1 = wp.z_constant();
    let c_star = wp.c_star();
    let c_used = c.unwrap_or(c_star);
    let comb = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| s * (x + y)).collect() };
    let yz: Vec<f64> = ysup.iter().zip(&zint).map(|(a, b)| a + b).collect();
    let yzm: Vec<f64> = yz.iter().zip(&mid).map(|(a, b)| a + b).collect();
    let checks = vec![
        paired_row("z_by_sup", &zint, &comb(&ysup, &fsq, c1)),
        paired_row("combined_c_star", &yzm, &comb(&xi, &fsq, c_star)),
        paired_row("sup_z_by_xi_f", &yz, &comb(&xi, &fsq, c_used)),
        paired_row("sup_z_by_xi_yf", &yz, &comb(&xi, &yf, c_used)),
    ];
    let mean = |v: &[f64]| mean_stderr(v).0;
    let ratio = |num: f64, den: f64| if num <= 0.0 { 0.0 } else if den > 0.0 { num / den } else { f64::INFINITY };
    let empirical_c = [
        ratio(mean(&yz), mean(&xi) + mean(&fsq)),
        ratio(mean(&yz), mean(&xi) + mean(&yf)),
    ];
    let pass = checks.iter().all(|c| c.verdict.passed());
    Ok(AprioriReport {
        weight: *wp,
        z_constant: c1,
        c_star,
        c_used,
        checks,
        empirical_c,
        weighted_a_y_integral: mean(&ay),
        pass,
    })
}

/// A solved problem on a shared ensemble.
#[derive(Clone, Copy)]
pub struct Solved<'a> {
    pub generator: &'a GeneratorSpec,
    pub estimate: &'a SolutionEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct DependenceReport {
    /// `‖Y − Y′‖²_c + ‖Z − Z′‖²`.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `E[e^{2∫a}|ξ − ξ′|²] + E[(∫ e^{∫a}|g − g′|(t, Y′, Z′) dt)²]`.
    pub rhs_driver: f64,
    pub rhs_stderr: f64,
    pub ratio: f64,
    /// Paired check of `lhs ≤ C·rhs_driver`.
    pub row: CheckRow,
}

fn dependence_one(a: Solved, b: Solved, ens: &PathEnsemble, trace: &CoefficientTrace, c: f64, id: &str) -> DependenceReport {
    let dt = ens.grid().dt();
    let k = a.generator.k();
    let rows: Vec<[f64; 2]> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let last = trace.len(p) - 1;
            let (ya, za, yb, zb) = (&a.estimate.y, &a.estimate.z, &b.estimate.y, &b.estimate.z);
            let mut sup = 0.0f64;
            let mut zint = 0.0;
            let mut gint = 0.0;
            let (mut ga, mut gb) = (vec![0.0; k], vec![0.0; k]);
            for i in 0..=last {
                let cum = trace.cum_a_at(p, i);
                let w = (2.0 * cum).exp();
                sup = sup.max(w * sq_diff(ya.at(p, i), yb.at(p, i)));
                if i < last {
                    zint += w * sq_diff(za.at(p, i), zb.at(p, i)) * dt;
                    let pt = Point::new(ens.time(i), ens.state(p, i));
                    a.generator.eval(&pt, yb.at(p, i), zb.at(p, i), &mut ga);
                    b.generator.eval(&pt, yb.at(p, i), zb.at(p, i), &mut gb);
                    gint += cum.exp() * sq_diff(&ga, &gb).sqrt() * dt;
                }
            }
            let xi = (2.0 * trace.cum_a_terminal(p)).exp() * sq_diff(ya.at(p, last), yb.at(p, last));
            [sup + zint, xi + gint * gint]
        })
        .collect();
    let lhs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let (l, lse) = mean_stderr(&lhs);
    let (r, rse) = mean_stderr(&rhs);
    let scaled: Vec<f64> = rhs.iter().map(|v| c * v).collect();
    DependenceReport {
        lhs: l,
        lhs_stderr: se_or_zero(lse),
        rhs_driver: r,
        rhs_stderr: se_or_zero(rse),
        ratio: if r > 0.0 { l / r } else if l > 0.0 { f64::INFINITY } else { 0.0 },
        row: paired_row(id, &lhs, &scaled),
    }
}

/// Both orderings of the continuous-dependence bound, weighted by the
/// generators' (H4)/(H5) coefficients (`trace`), with constant `c`.
pub fn continuous_dependence(
    a: Solved,
    b: Solved,
    ens: &PathEnsemble,
    trace: &CoefficientTrace,
    c: f64,
) -> Result<[DependenceReport; 2]> {
    let n = ens.n_paths();
    for s in [a, b] {
        if s.estimate.y.n_paths() != n || (0..n).any(|p| s.estimate.y.len(p) != trace.len(p)) {
            return Err(Error::Config("continuous dependence: solutions are not on the same grid and ensemble".into()));
        }
    }
    if a.generator.k() != b.generator.k() || a.generator.d() != b.generator.d() {
        return Err(Error::Config("continuous dependence: generators differ in dimension".into()));
    }
    Ok([
        dependence_one(a, b, ens, trace, c, "dependence(Y,Y')"),
        dependence_one(b, a, ens, trace, c, "dependence(Y',Y)"),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub deltas: Vec<f64>,
    pub lhs: Vec<f64>,
    pub lhs_stderr: Vec<f64>,
    pub slope: f64,
    pub rows: Vec<CheckRow>,
}

/// `ξ ↦ ξ + δ` shifts on a solved base problem: squared solution distance
/// against `δ`, with its log-log slope.
pub fn dependence_scaling(
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    ens: &PathEnsemble,
    tau: &TerminalTime,
    deltas: &[f64],
    s: &SolverSettings,
) -> Result<ScalingReport> {
    if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Config("dependence scaling needs at least two positive δ".into()));
    }
    let pb = Problem::new(g, xi, ens, tau)?;
    let trace = pb.trace(&s.weight)?;
    let base = picard_solve(&pb, s)?.estimate;
    let mut out = ScalingReport {
        deltas: deltas.to_vec(),
        lhs: Vec::new(),
        lhs_stderr: Vec::new(),
        slope: f64::NAN,
        rows: Vec::new(),
    };
    for &delta in deltas {
        let shifted = shift_terminal(xi, delta);
        let est = picard_solve(&Problem::new(g, &shifted, ens, tau)?, s)?.estimate;
        let [r, _] = continuous_dependence(
            Solved { generator: g, estimate: &est },
            Solved { generator: g, estimate: &base },
            ens,
            &trace,
            s.weight.c_star(),
        )?;
        out.lhs.push(r.lhs);
        out.lhs_stderr.push(r.lhs_stderr);
        let mut row = r.row;
        row.check_id = format!("dependence(delta={delta})");
        out.rows.push(row);
    }
    out.slope = loglog_slope(deltas, &out.lhs);
    Ok(out)
}

/// `ξ + δ` in every component.
pub fn shift_terminal(xi: &TerminalCondition, delta: f64) -> TerminalCondition {
    let inner = xi.clone();
    TerminalCondition::path(xi.k(), format!("{} + {delta}", xi.name()), Arc::new(move |v, out| {
        inner.eval(v, out);
        out.iter_mut().for_each(|o| *o += delta);
    }))
}

/// `q_{n α_τ²}(ξ)`, with `α` evaluated along the stopped path.
pub fn clamped_terminal(xi: &TerminalCondition, rule: &AlphaRule, g: &GeneratorSpec, beta: f64, n: usize) -> TerminalCondition {
    let (inner, rule, g) = (xi.clone(), rule.clone(), g.clone());
    TerminalCondition::path(xi.k(), format!("q_(n·α²)({}) n = {n}", xi.name()), Arc::new(move |v, out| {
        inner.eval(v, out);
        let len = v.index + 1;
        let times: Vec<f64> = (0..len).map(|i| v.time(i)).collect();
        let mu: Vec<f64> = (0..len).map(|i| g.coeff(times[i], v.state(i)).0).collect();
        let alpha = rule.evaluate(&AlphaInput {
            times: &times,
            states: &v.states[..len * v.l],
            l: v.l,
            mu: &mu,
            beta,
            dt: v.grid.dt(),
        });
        match alpha {
            Ok(a) => {
                let r = n as f64 * a[v.index] * a[v.index];
                match clamp_q(out, r) {
                    Ok(c) => out.copy_from_slice(&c),
                    Err(_) => out.fill(f64::NAN),
                }
            }
            Err(_) => out.fill(f64::NAN),
        }
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub n: usize,
    pub premise: f64,
    pub premise_stderr: f64,
    pub distance: f64,
    pub distance_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    pub premise_decreasing: bool,
    pub distance_decreasing: bool,
    pub premise_at_floor: bool,
    pub distance_at_floor: bool,
    pub pass: bool,
}

/// A column decreases to its noise floor when each entry is at most the
/// previous one plus one standard error (of either), and the last entry is
/// ≤ 1% of the first or within 4 standard errors of zero.
fn trend(values: &[(f64, f64)]) -> (bool, bool) {
    let dec = values.windows(2).all(|w| w[1].0 <= w[0].0 + w[0].1.max(w[1].1));
    let (first, last) = (values[0], values[values.len() - 1]);
    let floor = last.0 <= 0.01 * first.0 || last.0 <= SLACK * last.1;
    (dec, floor)
}

pub fn stability_table(rows: Vec<StabilityRow>) -> Result<StabilityTable> {
    if rows.len() < 2 {
        return Err(Error::Config("stability table needs at least two rows".into()));
    }
    let (pd, pf) = trend(&rows.iter().map(|r| (r.premise, r.premise_stderr)).collect::<Vec<_>>());
    let (dd, df) = trend(&rows.iter().map(|r| (r.distance, r.distance_stderr)).collect::<Vec<_>>());
    Ok(StabilityTable {
        rows,
        premise_decreasing: pd,
        distance_decreasing: dd,
        premise_at_floor: pf,
        distance_at_floor: df,
        pass: pd && dd && pf && df,
    })
}

/// One approximating problem `(ξⁿ, gⁿ)` of a stability sequence.
pub struct Approximant {
    pub n: usize,
    pub generator: GeneratorSpec,
    pub terminal: TerminalCondition,
}

/// Solves the limit problem and each approximant on the same ensemble and
/// tabulates the premise `E[e^{2∫a}|ξⁿ − ξ|² + (∫e^{∫a}|gⁿ − g|(t, Y, Z) dt)²]`
/// against the solution distance `‖Yⁿ − Y‖²_c + ‖Zⁿ − Z‖²`.
pub fn stability_sequence(
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    approximants: &[Approximant],
    ens: &PathEnsemble,
    tau: &TerminalTime,
    alpha: Option<&Ragged>,
    s: &SolverSettings,
) -> Result<StabilityTable> {
    let mk = |generator, terminal| -> Result<Problem<'_>> {
        match alpha {
            Some(a) => Problem {
                generator,
                terminal,
                ens,
                tau,
                alpha: None,
            }
            .with_alpha(a),
            None => Problem::new(generator, terminal, ens, tau),
        }
    };
    let pb = mk(g, xi)?;
    let trace = pb.trace(&s.weight)?;
    let base = picard_solve(&pb, s)?.estimate;
    let mut rows = Vec::new();
    for ap in approximants {
        let pbn = mk(&ap.generator, &ap.terminal)?;
        let est = picard_solve(&pbn, s)?.estimate;
        // premise: driver difference at the limit solution (Y, Z)
        let [fwd, _] = continuous_dependence(
            Solved { generator: &ap.generator, estimate: &est },
            Solved { generator: g, estimate: &base },
            ens,
            &trace,
            s.weight.c_star(),
        )?;
        let premise = premise_terms(g, &ap.generator, &base, &est, ens, &trace, alpha);
        let (pm, pse) = mean_stderr(&premise);
        rows.push(StabilityRow {
            n: ap.n,
            premise: pm,
            premise_stderr: se_or_zero(pse),
            distance: fwd.lhs,
            distance_stderr: fwd.lhs_stderr,
        });
    }
    stability_table(rows)
}

fn premise_terms(
    g: &GeneratorSpec,
    gn: &GeneratorSpec,
    base: &SolutionEstimate,
    approx: &SolutionEstimate,
    ens: &PathEnsemble,
    trace: &CoefficientTrace,
    alpha: Option<&Ragged>,
) -> Vec<f64> {
    let dt = ens.grid().dt();
    let k = g.k();
    (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let last = trace.len(p) - 1;
            let (mut ga, mut gb) = (vec![0.0; k], vec![0.0; k]);
            let mut gint = 0.0;
            for i in 0..last {
                let pt = Point {
                    t: ens.time(i),
                    x: ens.state(p, i),
                    alpha: alpha.map_or(1.0, |a| a.at(p, i)[0]),
                };
                let (y, z) = (base.y.at(p, i), base.z.at(p, i));
                gn.eval(&pt, y, z, &mut ga);
                g.eval(&pt, y, z, &mut gb);
                gint += trace.cum_a_at(p, i).exp() * sq_diff(&ga, &gb).sqrt() * dt;
            }
            let xi = (2.0 * trace.cum_a_terminal(p)).exp() * sq_diff(approx.y.at(p, last), base.y.at(p, last));
            xi + gint * gint
        })
        .collect()
}

/// Approximants `(q_{nα_τ²}(ξ), gⁿ)` with `gⁿ` from the truncation
/// `g − g(t, 0, z) + q_{n e^{−t} α_t²}(g(t, 0, z))`.
pub fn truncation_approximants(
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    rule: &AlphaRule,
    beta: f64,
    ns: &[usize],
) -> Result<Vec<Approximant>> {
    ns.iter()
        .map(|&n| {
            Ok(Approximant {
                n,
                generator: third_step_generator(g, n)?,
                terminal: clamped_terminal(xi, rule, g, beta, n),
            })
        })
        .collect()
}
