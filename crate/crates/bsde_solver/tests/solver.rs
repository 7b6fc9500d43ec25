use proptest::prelude::*;

use rbsde_core::fixtures::{build, Params};
use rbsde_core::{Error, GeneratorSpec, TerminalCondition};
use rbsde_paths::simulate_fixture;
use rbsde_solver::{
    backward_sweep, contraction_ratios, picard_solve, residual_check, root_samples, root_stderr, validate_assumptions,
    AssumptionSampler, Problem, Scheme, SolverSettings,
};

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn constant_terminal_matches_discrete_closed_form() {
    let fx = build("linear-constant-coeff", &params(&[("mu0", 0.5), ("nu0", 0.3), ("xi", 1.0)])).unwrap();
    let n = 50;
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, n, 4000, 11).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();

    let out = picard_solve(&pb, &SolverSettings::default()).unwrap();
    let dt = 1.0 / n as f64;
    // ξ is constant, so every regression reproduces it exactly and z vanishes
    let explicit = (1.0 + 0.5 * dt).powi(n as i32);
    assert!((out.estimate.y0()[0] - explicit).abs() < 1e-9, "{}", out.estimate.y0()[0]);
    assert!((out.estimate.y0()[0] - 0.5f64.exp()).abs() < 0.01);

    let s = SolverSettings {
        scheme: Scheme::Implicit { damping: 1.0, max_inner: 50 },
        ..Default::default()
    };
    let imp = picard_solve(&pb, &s).unwrap();
    let implicit = (1.0 - 0.5 * dt).powi(-(n as i32));
    assert!((imp.estimate.y0()[0] - implicit).abs() < 1e-9, "{}", imp.estimate.y0()[0]);
}

#[test]
fn heat_solution_and_gradient() {
    // u(t, x) = x² + T − t, ∂ₓu = 2x
    let fx = build("heat", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &[0.5], 20, 20_000, 3).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let est = backward_sweep(&pb, None, &SolverSettings::default()).unwrap();
    assert!((est.y0()[0] - 1.25).abs() < 0.03, "y0 = {}", est.y0()[0]);
    assert!((est.z0()[0] - 1.0).abs() < 0.1, "z0 = {}", est.z0()[0]);
}

#[test]
fn root_samples_average_to_the_root_value() {
    let fx = build("heat", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &[0.5], 20, 20_000, 4).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let est = picard_solve(&pb, &SolverSettings::default()).unwrap().estimate;
    let v = root_samples(&pb, &est).unwrap();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let se = root_stderr(&pb, &est, 200, 1).unwrap()[0];
    // the control variate removes most of the spread of ξ = X_T² (sd ≈ 1.6)
    assert!(se > 0.0 && se < 0.3 * 1.6 / (v.len() as f64).sqrt(), "{se}");
    assert!((mean - 1.25).abs() < 4.0 * se + 0.02, "{mean}");

    // deterministic data: no spread, and agreement with y0 up to the
    // left-point discretisation of ∫g
    let fx = build("linear-constant-coeff", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 16, 500, 4).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let est = picard_solve(&pb, &SolverSettings::default()).unwrap().estimate;
    let v = root_samples(&pb, &est).unwrap();
    assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-12));
    assert!((v[0] - est.y0()[0]).abs() < 0.5 / 16.0 * est.y0()[0], "{} vs {}", v[0], est.y0()[0]);
    assert!(root_stderr(&pb, &est, 50, 1).unwrap()[0] < 1e-12);
}

#[test]
fn picard_distances_contract() {
    let fx = build("linear-scaled-terminal", &params(&[("scale", 1.0)])).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 20, 4000, 5).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let s = SolverSettings {
        picard_max: 6,
        picard_tol: 1e-30,
        ..Default::default()
    };
    let out = picard_solve(&pb, &s).unwrap();
    assert_eq!(out.distances.len(), 6);
    let ratios = contraction_ratios(&out, 200, 1);
    for r in &ratios {
        assert!(r.ratio <= 1.0 / s.weight.rho + 2.0 * r.stderr, "{r:?}");
    }
}

#[test]
fn z_free_generator_needs_one_sweep() {
    let g = GeneratorSpec::constant(vec![2.0], 1);
    let xi = TerminalCondition::Constant(vec![0.0]);
    let fx = build("zero", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 10, 200, 1).unwrap();
    let pb = Problem::new(&g, &xi, &ens, &tau).unwrap();
    let out = picard_solve(&pb, &SolverSettings::default()).unwrap();
    assert!(out.converged);
    assert_eq!(out.distances.len(), 2);
    assert_eq!(out.distances[1], 0.0);
    assert!((out.estimate.y0()[0] - 2.0).abs() < 1e-12);
}

#[test]
fn residual_check_flags_injected_defect() {
    let fx = build("heat", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &[0.0], 50, 20_000, 9).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let s = SolverSettings::default();
    let mut est = backward_sweep(&pb, None, &s).unwrap();
    let clean = residual_check(&pb, &est, &s, 1.0).unwrap();
    assert!(clean.flagged.is_empty(), "{:?}", clean.flagged);

    for p in 0..ens.n_paths() {
        est.y.at_mut(p, 7)[0] += 0.1;
    }
    let bad = residual_check(&pb, &est, &s, 1.0).unwrap();
    assert!(bad.flagged.contains(&7), "{:?}", bad.flagged);
}

#[test]
fn identical_across_thread_counts() {
    let fx = build("linear-scaled-terminal", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 16, 3000, 21).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
            picard_solve(&pb, &SolverSettings::default()).unwrap()
        })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.estimate.y0()[0].to_bits(), b.estimate.y0()[0].to_bits());
    assert_eq!(a.distances, b.distances);
}

#[test]
fn random_horizon_solves_on_exit_fixture() {
    let fx = build("ex3.11-sigma-switch", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 60, 4000, 2).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let out = picard_solve(&pb, &SolverSettings::default()).unwrap();
    assert!(out.converged);
    assert!(out.estimate.y0()[0].is_finite());
}

#[test]
fn mismatched_dimensions_rejected() {
    let fx = build("heat", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &[0.0], 4, 10, 1).unwrap();
    let xi = TerminalCondition::Constant(vec![0.0, 0.0]);
    assert!(matches!(Problem::new(&fx.generator, &xi, &ens, &tau), Err(Error::Config(_))));
}

#[test]
fn polynomial_monotone_generator_satisfies_assumptions() {
    let fx = build("ex3.12-polynomial-monotone", &Params::new()).unwrap();
    let mut s = AssumptionSampler::new(fx.sde.l(), 1.0, 4);
    s.n_samples = 5000;
    let r = validate_assumptions(&fx.generator, &s).unwrap();
    assert!(r.pass, "{:#?}", r.checks);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // y scales linearly with the terminal value for a linear generator
    #[test]
    fn linear_in_terminal_value(c in -3.0f64..3.0, seed in 0u64..1000) {
        let fx = build("linear-scaled-terminal", &params(&[("scale", 1.0)])).unwrap();
        let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 8, 400, seed).unwrap();
        let scaled = build("linear-scaled-terminal", &params(&[("scale", c)])).unwrap();
        // a fixed number of sweeps: the stopping rule is not scale-invariant
        let s = SolverSettings { picard_max: 4, picard_tol: 1e-300, ..Default::default() };
        let a = picard_solve(&Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap(), &s).unwrap();
        let b = picard_solve(&Problem::new(&scaled.generator, &scaled.terminal, &ens, &tau).unwrap(), &s).unwrap();
        let (ya, yb) = (a.estimate.y0()[0], b.estimate.y0()[0]);
        prop_assert!((yb - c * ya).abs() <= 1e-8 * (1.0 + ya.abs()), "{} vs {}", yb, c * ya);
    }
}

#[test]
fn polynomial_monotone_system_converges_and_passes_residual_check() {
    let fx = build("ex3.12-polynomial-monotone", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 50, 10_000, 17).unwrap();
    let pb = Problem::new(&fx.generator, &fx.terminal, &ens, &tau).unwrap();
    let s = SolverSettings {
        scheme: Scheme::Implicit { damping: 1.0, max_inner: 50 },
        weight: fx.weight,
        ..Default::default()
    };
    let out = picard_solve(&pb, &s).unwrap();
    assert!(out.converged, "{:?}", out.distances);
    let res = residual_check(&pb, &out.estimate, &s, 1.0).unwrap();
    assert!(res.flagged.is_empty(), "{:?}", res.flagged);
}
