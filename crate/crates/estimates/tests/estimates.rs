use proptest::prelude::*;

use rbsde_core::fixtures::{build, Params};
use rbsde_core::{make_grid, CoefficientTrace, GeneratorSpec, Ragged, TerminalTime, WeightParams};
use rbsde_estimates::*;
use rbsde_oracle::{linear_bsde_pathwise, LinearCoefficients, NestedSettings};
use rbsde_paths::{simulate, simulate_fixture};
use rbsde_solver::{alpha_traces, picard_solve, Problem, SolverSettings};

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn unit_weight_gives_plain_statistics() {
    let grid = make_grid(1.0, 8).unwrap();
    let ens = simulate(&rbsde_core::SdeSpec::brownian(1), 0.0, &[0.0], &grid, 50, 1).unwrap();
    let tau = TerminalTime::deterministic(&grid, 50);
    let trace = CoefficientTrace::build(&ens, &tau.per_path_index, |_, _| (0.0, 0.0), &WeightParams::default()).unwrap();
    let y = Ragged::from_paths((0..50).map(|p| ens.path_states(p).to_vec()).collect(), 1);
    let z = Ragged::from_paths((0..50).map(|_| vec![1.0; 9]).collect(), 1);
    let nrm = weighted_norms(&y, &z, &trace, 1.0 / 8.0).unwrap();
    let xi2: f64 = (0..50).map(|p| ens.state(p, 8)[0].powi(2)).sum::<f64>() / 50.0;
    let sup2: f64 = (0..50).map(|p| (0..=8).map(|i| ens.state(p, i)[0].powi(2)).fold(0.0, f64::max)).sum::<f64>() / 50.0;
    assert!((nrm.xi_norm_sq - xi2).abs() < 1e-12);
    assert!((nrm.y_norm_sq - sup2).abs() < 1e-12);
    assert!((nrm.z_norm_sq - 1.0).abs() < 1e-12);
}

#[test]
fn deterministic_weight_on_unit_terminal() {
    let grid = make_grid(1.0, 10).unwrap();
    let ens = simulate(&rbsde_core::SdeSpec::brownian(1), 0.0, &[0.0], &grid, 20, 2).unwrap();
    let tau = TerminalTime::deterministic(&grid, 20);
    // β = 1, ν = 0: a = μ = 0.7
    let trace = CoefficientTrace::build(&ens, &tau.per_path_index, |_, _| (0.7, 0.0), &WeightParams::default()).unwrap();
    let ones = Ragged::from_paths(vec![vec![1.0; 11]; 20], 1);
    let nrm = weighted_norms(&ones, &ones, &trace, 0.1).unwrap();
    assert!((nrm.xi_norm_sq - 1.4f64.exp()).abs() < 1e-12);
    assert_eq!(nrm.std_err[0], 0.0);
}

#[test]
fn oracle_solution_norm_matches_closed_form() {
    let fx = build("linear-constant-coeff", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 64, 200, 3).unwrap();
    let sol = linear_bsde_pathwise(&LinearCoefficients::Constant { mu: 0.5, nu: 0.3 }, &fx.terminal, &ens, &tau, None, &NestedSettings::default()).unwrap();
    let wp = fx.weight;
    let trace = CoefficientTrace::build(&ens, &tau.per_path_index, |t, x| fx.generator.coeff(t, x), &wp).unwrap();
    let nrm = weighted_norms(&sol.y, sol.z.as_ref().unwrap(), &trace, 1.0 / 64.0).unwrap();
    // a = β μ + ρ ν²/2 = 0.59 > μ, so e^{2at} e^{2μ(T−t)} peaks at t = T
    let a = wp.beta * 0.5 + 0.5 * wp.rho * 0.09;
    let want = (2.0 * a).exp();
    assert!((nrm.y_norm_sq - want).abs() <= 2.0 * nrm.std_err[1] + 1e-9 * want, "{} vs {want}", nrm.y_norm_sq);
}

#[test]
fn zero_solution_passes_with_equality() {
    let fx = build("zero", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 16, 500, 4).unwrap();
    let est = picard_solve(&Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap(), &SolverSettings::default()).unwrap().estimate;
    let rep = apriori_check(&est, &fx.generator, &ens, &tau, &fx.weight, None).unwrap();
    assert!(rep.pass);
    for c in &rep.checks {
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0), "{c:?}");
    }
}

#[test]
fn linear_fixture_apriori_suite() {
    let fx = build("linear-constant-coeff", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 32, 4000, 5).unwrap();
    let s = SolverSettings { weight: fx.weight, ..Default::default() };
    let est = picard_solve(&Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap(), &s).unwrap().estimate;
    let rep = apriori_check(&est, &fx.generator, &ens, &tau, &fx.weight, None).unwrap();
    assert_eq!(rep.c_star, 18496.0);
    assert_eq!(rep.z_constant, 4.0);
    assert!(rep.pass, "{:#?}", rep.checks);
    assert!(rep.empirical_c[0] < rep.c_star);

    // the combined bound's middle term shrinks as ρ̄ approaches ρ
    let lhs = |rho_bar: f64| {
        let wp = WeightParams::new(1.5, 2.0, rho_bar).unwrap();
        apriori_check(&est, &fx.generator, &ens, &tau, &wp, None).unwrap().checks[1].lhs
    };
    assert!(lhs(1.2) > lhs(1.6) && lhs(1.6) > lhs(2.0));

    // the verdict is monotone in the constant
    let tight = apriori_check(&est, &fx.generator, &ens, &tau, &fx.weight, Some(rep.empirical_c[0] * 0.5)).unwrap();
    assert!(!tight.checks[2].verdict.passed());
}

#[test]
fn missing_driver_bound_is_a_config_error() {
    let fx = build("heat", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &[0.0], 4, 10, 1).unwrap();
    let est = picard_solve(&Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap(), &SolverSettings::default()).unwrap().estimate;
    let g = GeneratorSpec::new("bare", 1, 1, std::sync::Arc::new(|_, _, _, o| o[0] = 0.0), std::sync::Arc::new(|_, _| (0.0, 0.0))).unwrap();
    assert!(matches!(apriori_check(&est, &g, &ens, &tau, &WeightParams::default(), None), Err(rbsde_core::Error::Config(_))));
}

#[test]
fn identical_problems_have_zero_distance_and_delta_scaling_is_quadratic() {
    let fx = build("linear-constant-coeff", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 32, 2000, 6).unwrap();
    let s = SolverSettings { weight: fx.weight, ..Default::default() };
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let est = picard_solve(&pb, &s).unwrap().estimate;
    let trace = pb.trace(&s.weight).unwrap();
    let me = Solved { generator: &fx.generator, estimate: &est };
    let [a, b] = continuous_dependence(me, me, &ens, &trace, s.weight.c_star()).unwrap();
    assert_eq!((a.lhs, b.lhs), (0.0, 0.0));
    assert!(a.row.verdict.passed());

    let rep = dependence_scaling(&fx.generator, &fx.terminal, &ens, &tau, &[0.1, 0.05, 0.025], &s).unwrap();
    assert!((rep.slope - 2.0).abs() <= 0.3, "{rep:?}");
    assert!(rep.rows.iter().all(|r| r.verdict.passed()));
}

#[test]
fn constant_driver_shift_has_bounded_ratio() {
    let fx = build("linear-constant-coeff", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 32, 2000, 7).unwrap();
    let s = SolverSettings { weight: fx.weight, ..Default::default() };
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let trace = pb.trace(&s.weight).unwrap();
    let base = picard_solve(&pb, &s).unwrap().estimate;
    let mut ratios = Vec::new();
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let g2 = fx.generator.clone().with_eval("shifted", {
            let g = fx.generator.clone();
            std::sync::Arc::new(move |pt, y, z, out| {
                g.eval(pt, y, z, out);
                out[0] += eps;
            })
        });
        let est = picard_solve(&Problem::new(&g2, &fx.terminal, &ens, &tau).unwrap(), &s).unwrap().estimate;
        let reps = continuous_dependence(
            Solved { generator: &g2, estimate: &est },
            Solved { generator: &fx.generator, estimate: &base },
            &ens,
            &trace,
            s.weight.c_star(),
        )
        .unwrap();
        assert!(reps.iter().all(|r| r.row.verdict.passed()));
        ratios.push(reps[0].ratio);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 1.1, "{ratios:?}");
}

fn stability_setup(seed: u64) -> (rbsde_core::fixtures::Fixture, rbsde_core::PathEnsemble, TerminalTime, Ragged, SolverSettings) {
    let fx = build("linear-scaled-terminal", &params(&[("scale", 0.1)])).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 32, 4000, seed).unwrap();
    let rule = fx.alpha.clone().unwrap();
    let alpha = alpha_traces(&rule, &ens, &tau, &fx.generator, fx.weight.beta).unwrap();
    let s = SolverSettings { weight: fx.weight, ..Default::default() };
    (fx, ens, tau, alpha, s)
}

#[test]
fn truncation_sequence_reaches_noise_floor() {
    let (fx, ens, tau, alpha, s) = stability_setup(8);
    let aps = truncation_approximants(&fx.generator, &fx.terminal, fx.alpha.as_ref().unwrap(), fx.weight.beta, &[1, 2, 4, 8]).unwrap();
    let table = stability_sequence(&fx.generator, &fx.terminal, &aps, &ens, &tau, Some(&alpha), &s).unwrap();
    assert!(table.pass, "{table:#?}");
    assert!(table.rows[0].premise > 0.0 && table.rows[0].distance > 0.0);
}

#[test]
fn constant_sequence_sits_at_floor_and_shift_sequence_is_quadratic() {
    let (fx, ens, tau, alpha, s) = stability_setup(9);
    let same: Vec<Approximant> = [1, 2, 4]
        .iter()
        .map(|&n| Approximant { n, generator: fx.generator.clone(), terminal: fx.terminal.clone() })
        .collect();
    let t = stability_sequence(&fx.generator, &fx.terminal, &same, &ens, &tau, Some(&alpha), &s).unwrap();
    assert!(t.rows.iter().all(|r| r.distance == 0.0 && r.premise == 0.0));
    assert!(t.pass);

    let ns = [1usize, 2, 4, 8];
    let shifted: Vec<Approximant> = ns
        .iter()
        .map(|&n| Approximant { n, generator: fx.generator.clone(), terminal: shift_terminal(&fx.terminal, 1.0 / n as f64) })
        .collect();
    let t = stability_sequence(&fx.generator, &fx.terminal, &shifted, &ens, &tau, None, &s).unwrap();
    let inv: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let d: Vec<f64> = t.rows.iter().map(|r| r.distance).collect();
    let slope = rbsde_core::stats::loglog_slope(&inv, &d);
    assert!((slope - 2.0).abs() <= 0.3, "{slope}");
}

#[test]
fn checks_csv_layout() {
    let rows = vec![paired_row("z_by_sup", &[1.0, 2.0], &[3.0, 4.0]), paired_row("x", &[5.0, 5.0], &[1.0, 1.0])];
    let mut buf = Vec::new();
    write_checks_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "check_id,lhs,rhs,stderr,verdict");
    assert!(lines[1].starts_with("z_by_sup,") && lines[1].ends_with(",PASS"));
    assert!(lines[2].ends_with(",FAIL"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // raising β or ρ never lowers a weighted norm of a fixed solution
    #[test]
    fn norms_monotone_in_weight(
        beta in 1.0f64..3.0, dbeta in 0.0f64..2.0,
        rho in 1.01f64..4.0, drho in 0.0f64..2.0,
        seed in 0u64..500,
    ) {
        let grid = make_grid(1.0, 6).unwrap();
        let ens = simulate(&rbsde_core::SdeSpec::brownian(1), 0.0, &[0.3], &grid, 20, seed).unwrap();
        let tau = TerminalTime::deterministic(&grid, 20);
        let coeff = |_: f64, x: &[f64]| (x[0].abs(), 0.5 * x[0].abs());
        let y = Ragged::from_paths((0..20).map(|p| ens.path_states(p).to_vec()).collect(), 1);
        let z = Ragged::from_paths((0..20).map(|p| ens.path_states(p).iter().map(|v| v.sin()).collect()).collect(), 1);
        let norms = |b: f64, r: f64| {
            let wp = WeightParams::new(b, r, r).unwrap();
            let tr = CoefficientTrace::build(&ens, &tau.per_path_index, coeff, &wp).unwrap();
            weighted_norms(&y, &z, &tr, grid.dt()).unwrap()
        };
        let (a, b) = (norms(beta, rho), norms(beta + dbeta, rho + drho));
        prop_assert!(b.xi_norm_sq >= a.xi_norm_sq && b.y_norm_sq >= a.y_norm_sq && b.z_norm_sq >= a.z_norm_sq);
    }
}

#[test]
fn terminal_shift_is_exact() {
    let fx = build("linear-scaled-terminal", &Params::new()).unwrap();
    let (ens, _) = simulate_fixture(&fx, 0.0, &fx.x0, 4, 3, 1).unwrap();
    let sh = shift_terminal(&fx.terminal, 0.25);
    let (mut a, mut b) = ([0.0], [0.0]);
    fx.terminal.eval(&ens.view(1, 4), &mut a);
    sh.eval(&ens.view(1, 4), &mut b);
    assert_eq!(b[0], a[0] + 0.25);
}
