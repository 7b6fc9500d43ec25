use std::sync::Arc;

use rbsde_core::fixtures::{build, Params};
use rbsde_core::stats::loglog_slope;
use rbsde_core::{make_grid, SdeSpec, TerminalCondition, TerminalTime, WeightParams};
use rbsde_oracle::*;
use rbsde_paths::{simulate, simulate_fixture};

fn brownian(n_steps: usize, n_paths: usize, seed: u64) -> (rbsde_core::PathEnsemble, TerminalTime) {
    let grid = make_grid(1.0, n_steps).unwrap();
    let ens = simulate(&SdeSpec::brownian(1), 0.0, &[0.0], &grid, n_paths, seed).unwrap();
    let tau = TerminalTime::deterministic(&grid, n_paths);
    (ens, tau)
}

#[test]
fn constant_terminal_closed_form() {
    let (ens, tau) = brownian(16, 10, 1);
    let coeffs = LinearCoefficients::Constant { mu: 0.5, nu: 0.3 };
    let sol = linear_bsde_pathwise(&coeffs, &TerminalCondition::Constant(vec![2.0]), &ens, &tau, None, &NestedSettings::default()).unwrap();
    assert!(sol.exact);
    for i in 0..=16 {
        let t = i as f64 / 16.0;
        assert!((sol.y.at(3, i)[0] - 2.0 * (0.5 * (1.0 - t)).exp()).abs() < 1e-12);
    }
    let zero = linear_bsde_pathwise(&coeffs, &TerminalCondition::Constant(vec![0.0]), &ens, &tau, None, &NestedSettings::default()).unwrap();
    assert!(zero.y.path(5).iter().all(|&v| v == 0.0));
}

#[test]
fn discrete_residual_vanishes_at_first_order() {
    // mean over paths and nodes of y_i − y_{i+1} − Δ(μ y_i + ν z_i) + z_i ΔB_i
    let worst = |n: usize| {
        let (ens, tau) = brownian(n, 50, 2);
        let sol = linear_bsde_pathwise(
            &LinearCoefficients::Constant { mu: 0.5, nu: 0.3 },
            &TerminalCondition::Constant(vec![1.0]),
            &ens,
            &tau,
            None,
            &NestedSettings::default(),
        )
        .unwrap();
        let z = sol.z.unwrap();
        let dt = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let m: f64 = (0..50)
                    .map(|p| {
                        let (y0, y1, zi) = (sol.y.at(p, i)[0], sol.y.at(p, i + 1)[0], z.at(p, i)[0]);
                        y0 - y1 - dt * (0.5 * y0 + 0.3 * zi) + zi * ens.increment(p, i)[0]
                    })
                    .sum::<f64>()
                    / 50.0;
                m.abs() / dt
            })
            .fold(0.0, f64::max)
    };
    let (a, b) = (worst(32), worst(64));
    assert!(a < 0.05 && (a / b - 2.0).abs() < 0.2, "{a} {b}");
}

#[test]
fn counterexample_pathwise_identity() {
    let fx = build("motivational-counterexample-rho1", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 64, 2000, 7).unwrap();
    let sol = linear_bsde_pathwise(&LinearCoefficients::Constant { mu: 0.0, nu: 1.0 }, &fx.terminal, &ens, &tau, None, &NestedSettings::default()).unwrap();
    let dt = 1.0 / 64.0;
    for p in 0..ens.n_paths() {
        let mut b = 0.0;
        for i in 0..=64 {
            let want = (b - 1.5 * i as f64 * dt).exp();
            let got = sol.y.at(p, i)[0];
            assert!((got - want).abs() <= 1e-10 * want.max(1.0), "path {p} node {i}: {got} vs {want}");
            if i < 64 {
                b += ens.increment(p, i)[0];
            }
        }
    }
    // ξ at the terminal node agrees with the terminal condition itself
    let mut out = [0.0];
    fx.terminal.eval(&ens.view(0, 64), &mut out);
    assert!((sol.y.at(0, 64)[0] - out[0]).abs() < 1e-12 * out[0]);
}

#[test]
fn nested_estimate_matches_girsanov_formula() {
    // y_0 = e^{μT} E[(x0 + B_T)² E(νB)_T] = e^{μT} ((x0 + νT)² + T)
    let (mu, nu, x0) = (0.5, 0.3, 0.2);
    let grid = make_grid(1.0, 16).unwrap();
    let sde = SdeSpec::brownian(1);
    let ens = simulate(&sde, 0.0, &[x0], &grid, 4, 3).unwrap();
    let tau = TerminalTime::deterministic(&grid, 4);
    let xi = TerminalCondition::state(1, "x²", Arc::new(|x, o| o[0] = x[0] * x[0]));
    let coeffs = LinearCoefficients::Varying(Arc::new(move |_, _| (mu, nu)));
    let nested = NestedSettings { m: 20_000, seed: 5 };
    let sol = linear_bsde_pathwise(&coeffs, &xi, &ens, &tau, Some(&sde), &nested).unwrap();
    assert!(!sol.exact);
    let want = mu.exp() * ((x0 + nu).powi(2) + 1.0);
    let (got, se) = (sol.y.at(0, 0)[0], sol.stderr.at(0, 0)[0]);
    assert!((got - want).abs() < 4.0 * se + 1e-3 * want, "{got} ± {se} vs {want}");
    // at the terminal node the estimate is ξ itself
    let last = ens.state(1, 16)[0];
    assert!((sol.y.at(1, 16)[0] - last * last).abs() < 1e-12);

    let zero_budget = NestedSettings { m: 0, seed: 0 };
    assert!(linear_bsde_pathwise(&coeffs, &xi, &ens, &tau, Some(&sde), &zero_budget).is_err());
}

#[test]
fn weight_condition_examples() {
    let (ens, tau) = brownian(32, 100_000, 4);
    let wp = WeightParams::default();
    let zero = rbsde_core::CoefficientTrace::build(&ens, &tau.per_path_index, |_, _| (0.0, 0.0), &wp).unwrap();
    let ones = vec![1.0; ens.n_paths()];
    let r = weight_condition_check(&zero, &ones, 1.0 / 32.0, 1.0, 1.0).unwrap();
    assert_eq!(r.estimate, 1.0);

    let exp_b: Vec<f64> = (0..ens.n_paths()).map(|p| ens.state(p, 32)[0].exp()).collect();
    let r = weight_condition_check(&zero, &exp_b, 1.0 / 32.0, 1.0, 1.0).unwrap();
    let e2 = 2f64.exp();
    assert!((r.estimate - e2).abs() < 4.0 * r.stderr, "{r:?}");

    let fx = build("motivational-counterexample-rho1", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 64, 100_000, 8).unwrap();
    let trace = rbsde_core::CoefficientTrace::build(&ens, &tau.per_path_index, |t, x| fx.generator.coeff(t, x), &wp).unwrap();
    let xi: Vec<f64> = (0..ens.n_paths())
        .map(|p| {
            let mut o = [0.0];
            fx.terminal.eval(&ens.view(p, 64), &mut o);
            o[0]
        })
        .collect();
    let r = weight_condition_check(&trace, &xi, 1.0 / 64.0, 1.0, 1.0).unwrap();
    assert!(r.estimate.is_finite() && r.estimate <= 1.0 + 4.0 * r.stderr, "{r:?}");
    assert!(weight_condition_check(&trace, &xi, 1.0 / 64.0, 0.5, 1.0).is_err());
}

#[test]
fn sup_growth_rows_double() {
    let fx = build("motivational-counterexample-rho1", &Params::new()).unwrap();
    let (ens, tau) = simulate_fixture(&fx, 0.0, &fx.x0, 32, 4096, 9).unwrap();
    let sol = linear_bsde_pathwise(&LinearCoefficients::Constant { mu: 0.0, nu: 1.0 }, &fx.terminal, &ens, &tau, None, &NestedSettings::default()).unwrap();
    let trace = rbsde_core::CoefficientTrace::build(&ens, &tau.per_path_index, |t, x| fx.generator.coeff(t, x), &WeightParams::default()).unwrap();
    let rows = sup_growth_diagnostic(&sol.y, &trace, 1.0 / 32.0, 1.0, 1.0, 256).unwrap();
    let ns: Vec<usize> = rows.iter().map(|r| r.n_paths).collect();
    assert_eq!(ns, vec![256, 512, 1024, 2048, 4096]);
    assert!(rows.iter().all(|r| r.estimate >= 1.0));
}

#[test]
fn heat_polynomial_on_window() {
    let spec = ParabolicSpec::linear_heat(1.0, 0.0, Arc::new(|x| x * x), 1.0, 3.0);
    let nt = spec.min_steps(200);
    let sol = fd_parabolic(&spec, 200, nt).unwrap();
    let mut err = 0.0f64;
    for (n, t) in sol.ts.iter().enumerate() {
        for (j, x) in sol.xs.iter().enumerate() {
            err = err.max((sol.u[n][j] - (x * x + 1.0 - t)).abs());
        }
    }
    assert!(err <= 2e-3, "{err}");
    assert!((sol.value(0.0, 0.0).unwrap() - 1.0).abs() < 2e-3);

    let c = ParabolicSpec::linear_heat(1.0, 0.0, Arc::new(|_| 3.5), 1.0, 3.0);
    let sol = fd_parabolic(&c, 50, c.min_steps(50)).unwrap();
    assert!(sol.u[0].iter().all(|v| (v - 3.5).abs() < 1e-12));
}

#[test]
fn linear_driver_integrating_factor() {
    let mu0 = 0.5;
    let spec = ParabolicSpec::linear_heat(1.0, mu0, Arc::new(|x| x * x), 1.0, 3.0);
    let sol = fd_parabolic(&spec, 200, spec.min_steps(200)).unwrap();
    for x in [-1.0, 0.0, 0.5, 2.0] {
        let want = mu0.exp() * (x * x + 1.0);
        assert!((sol.value(0.0, x).unwrap() - want).abs() < 2e-3 * want.max(1.0), "x = {x}");
    }
}

#[test]
fn parabolic_second_order_in_space() {
    // u = e^{−(T−t)/2} cos x; the window is wide enough that the closure
    // does not reach |x| ≤ 1.5
    let spec = ParabolicSpec::linear_heat(1.0, 0.0, Arc::new(f64::cos), 1.0, 8.0);
    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    for nx in [40, 80, 160, 320] {
        let sol = fd_parabolic(&spec, nx, spec.min_steps(nx)).unwrap();
        let err = sol
            .xs
            .iter()
            .zip(&sol.u[0])
            .filter(|(x, _)| x.abs() <= 1.5)
            .map(|(x, u)| (u - (-0.5f64).exp() * x.cos()).abs())
            .fold(0.0, f64::max);
        hs.push(16.0 / nx as f64);
        errs.push(err);
    }
    let slope = loglog_slope(&hs, &errs);
    assert!((slope - 2.0).abs() <= 0.3, "slope {slope}, errors {errs:?}");
}

#[test]
fn elliptic_quadratic_exact() {
    let spec = EllipticSpec::new(Arc::new(|_| 2f64.sqrt()), Arc::new(|_, _, _| 2.0), (-1.0, 1.0), (0.0, 0.0));
    let sol = fd_elliptic(&spec, 400).unwrap();
    let err = sol.xs.iter().zip(&sol.u).map(|(x, u)| (u - (1.0 - x * x)).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
    assert!(*sol.residuals.last().unwrap() < 1e-10);

    let c = EllipticSpec::new(Arc::new(|_| 1.0), Arc::new(|_, _, _| 0.0), (-1.0, 1.0), (0.7, 0.7));
    let sol = fd_elliptic(&c, 40).unwrap();
    assert!(sol.u.iter().all(|u| (u - 0.7).abs() < 1e-12));
}

#[test]
fn elliptic_manufactured_solution() {
    use std::f64::consts::FRAC_PI_2;
    let exact = |x: f64| (FRAC_PI_2 * x).cos();
    let g = Arc::new(move |x: f64, u: f64, _| -u + (1.0 + FRAC_PI_2 * FRAC_PI_2) * exact(x));
    let spec = EllipticSpec::new(Arc::new(|_| 2f64.sqrt()), g, (-1.0, 1.0), (0.0, 0.0));
    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    for nx in [50, 100, 200, 1600] {
        let sol = fd_elliptic(&spec, nx).unwrap();
        hs.push(2.0 / nx as f64);
        errs.push(sol.xs.iter().zip(&sol.u).map(|(x, u)| (u - exact(*x)).abs()).fold(0.0, f64::max));
    }
    assert!(errs[3] <= 1e-6, "{errs:?}");
    let slope = loglog_slope(&hs, &errs);
    assert!((slope - 2.0).abs() <= 0.3, "{slope}");
}

#[test]
fn elliptic_divergence_reports_history() {
    // u ↦ e^{u} blows up the lagged iteration for large forcing
    let spec = EllipticSpec {
        max_iter: 5,
        ..EllipticSpec::new(Arc::new(|_| 0.1), Arc::new(|_, u: f64, p: f64| 50.0 * p.abs() + u.exp()), (-1.0, 1.0), (0.0, 0.0))
    };
    let err = fd_elliptic(&spec, 50).unwrap_err().to_string();
    assert!(err.contains("not converged") || err.contains("non-finite"), "{err}");
}

#[test]
fn mesh_csv_has_header_and_rows() {
    let spec = ParabolicSpec::linear_heat(1.0, 0.0, Arc::new(|x| x), 1.0, 1.0);
    let sol = fd_parabolic(&spec, 10, spec.min_steps(10)).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf, sol.ts.len() - 1).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,x,u\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 11);
}
