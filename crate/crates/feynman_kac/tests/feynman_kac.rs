use std::sync::{Arc, OnceLock};

use rbsde_core::fixtures::Params;
use rbsde_core::{Error, GeneratorSpec};
use rbsde_feynman_kac::*;
use rbsde_solver::SolverSettings;

fn growth() -> Growth {
    Growth::new(2.0, 1.0, 1.0).unwrap()
}

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn heat(probes: Vec<Probe>) -> PdeProblemSpec {
    PdeProblemSpec::from_fixture("heat", &Params::new(), growth(), probes).unwrap()
}

fn elliptic_grid() -> Vec<Probe> {
    (-4..=4).map(|j| Probe::at(0.2 * j as f64)).collect()
}

fn elliptic_settings() -> TableSettings {
    TableSettings {
        budget: Budget {
            n_paths: 20_000,
            n_steps: 2048,
        },
        elliptic: EllipticOptions {
            strict: true,
            ..EllipticOptions::default()
        },
        ..TableSettings::default()
    }
}

fn elliptic_table() -> &'static PdeSolutionTable {
    static T: OnceLock<PdeSolutionTable> = OnceLock::new();
    T.get_or_init(|| {
        let spec = PdeProblemSpec::from_fixture("elliptic-exit", &Params::new(), growth(), elliptic_grid()).unwrap();
        solve_table(&spec, &elliptic_settings(), 17).unwrap()
    })
}

#[test]
fn heat_at_origin() {
    let spec = heat(vec![Probe::new(0.0, vec![0.0])]);
    let b = Budget {
        n_paths: 100_000,
        n_steps: 64,
    };
    let r = solve_parabolic(&spec, &spec.probes[0], b, &SolverSettings::default(), 5).unwrap();
    assert!((r.u - 1.0).abs() + 4.0 * r.stderr <= 0.03, "u = {} ± {}", r.u, r.stderr);
    assert!(r.stderr > 0.0 && r.stderr < 0.01);
    assert_eq!(r.oracle, Some(1.0));
}

#[test]
fn heat_gradient_readout() {
    // ∇u σ = 2x at t = 0
    let spec = heat(vec![Probe::new(0.0, vec![0.5])]);
    let b = Budget {
        n_paths: 50_000,
        n_steps: 32,
    };
    let r = solve_parabolic(&spec, &spec.probes[0], b, &SolverSettings::default(), 8).unwrap();
    assert!((r.u - 1.25).abs() < 0.03, "{}", r.u);
    assert!((r.z[0] - 1.0).abs() < 0.05, "{:?}", r.z);
}

#[test]
fn constant_terminal_is_reproduced() {
    let mut spec = heat(vec![Probe::new(0.3, vec![1.7])]);
    spec.h = Arc::new(|_, out| out[0] = 2.5);
    let b = Budget {
        n_paths: 2000,
        n_steps: 16,
    };
    let r = solve_parabolic(&spec, &spec.probes[0], b, &SolverSettings::default(), 1).unwrap();
    assert!((r.u - 2.5).abs() < 1e-9, "{}", r.u);
}

#[test]
fn linear_driver_integrating_factor() {
    let mut spec = PdeProblemSpec::from_fixture("heat", &params(&[("mu0", 0.4)]), growth(), vec![Probe::at(0.0)]).unwrap();
    spec.h = Arc::new(|_, out| out[0] = 1.0);
    let b = Budget {
        n_paths: 5000,
        n_steps: 64,
    };
    let r = solve_parabolic(&spec, &spec.probes[0], b, &SolverSettings::default(), 2).unwrap();
    assert!((r.u / 0.4f64.exp() - 1.0).abs() < 0.02, "{}", r.u);
}

#[test]
fn heat_agrees_with_finite_differences() {
    let spec = heat(vec![Probe::new(0.0, vec![0.0]), Probe::new(0.5, vec![-0.7]), Probe::new(0.25, vec![1.2])]);
    let ts = TableSettings {
        budget: Budget {
            n_paths: 50_000,
            n_steps: 32,
        },
        ..TableSettings::default()
    };
    let t = solve_table(&spec, &ts, 3).unwrap();
    for r in &t.rows {
        let (o, f) = (r.oracle.unwrap(), r.fd.unwrap());
        assert!((f / o - 1.0).abs() < 1e-3, "fd {f} vs {o}");
        assert!((r.u / f - 1.0).abs() < 0.03, "{} vs fd {f}", r.u);
    }
}

#[test]
fn elliptic_grid_matches_both_oracles() {
    let t = elliptic_table();
    for r in &t.rows {
        eprintln!("x = {:+.1}: u = {:.4} ± {:.4}, exact {:.4}, fd {:.4}, mass {:.4}, steps {}", r.probe.x[0], r.u, r.stderr, r.oracle.unwrap(), r.fd.unwrap(), r.truncation_mass, r.n_steps);
    }
    assert!(t.max_abs_error().unwrap() <= 0.05, "{:?}", t.max_abs_error());
    assert!(t.max_fd_rel_error().unwrap() <= 0.05, "{:?}", t.max_fd_rel_error());
    assert!(t.max_truncation_mass() < 0.005);
}

#[test]
fn elliptic_monotone_from_center() {
    let t = elliptic_table();
    let c = t.rows.iter().find(|r| r.probe.x[0] == 0.0).unwrap();
    for r in &t.rows {
        assert!(r.u >= -4.0 * r.stderr);
        let s = (c.stderr.powi(2) + r.stderr.powi(2)).sqrt();
        assert!(c.u >= r.u - 4.0 * s, "u(0) = {} < u({}) = {}", c.u, r.probe.x[0], r.u);
    }
}

#[test]
fn boundary_probe_exits_immediately() {
    let spec = PdeProblemSpec::from_fixture("elliptic-exit", &Params::new(), growth(), vec![]).unwrap();
    let b = Budget {
        n_paths: 100,
        n_steps: 100,
    };
    let r = solve_elliptic(&spec, &Probe::at(1.0), b, &SolverSettings::default(), &EllipticOptions::default(), 1).unwrap();
    assert_eq!((r.u, r.stderr), (0.0, 0.0));
    let e = solve_elliptic(&spec, &Probe::at(1.5), b, &SolverSettings::default(), &EllipticOptions::default(), 1);
    assert!(matches!(e, Err(Error::Config(_))));
}

#[test]
fn strict_mode_extends_the_cap() {
    let spec = PdeProblemSpec::from_fixture("elliptic-exit", &params(&[("t_cap", 0.5)]), growth(), vec![]).unwrap();
    let b = Budget {
        n_paths: 4000,
        n_steps: 256,
    };
    let s = SolverSettings::default();
    let loose = solve_elliptic(&spec, &Probe::at(0.0), b, &s, &EllipticOptions::default(), 4).unwrap();
    assert!(loose.truncation_mass > 0.1 && !loose.warnings.is_empty());
    let strict = EllipticOptions {
        strict: true,
        ..EllipticOptions::default()
    };
    let r = solve_elliptic(&spec, &Probe::at(0.0), b, &s, &strict, 4).unwrap();
    assert!(r.truncation_mass < 0.005 && r.t_cap > 0.5, "{} at {}", r.truncation_mass, r.t_cap);
    assert_eq!(r.n_steps as f64 / r.t_cap, 512.0);
    let capped = EllipticOptions {
        max_extensions: 0,
        ..strict
    };
    let e = solve_elliptic(&spec, &Probe::at(0.0), b, &s, &capped, 4);
    assert!(matches!(e, Err(Error::Premise(ref m)) if m.contains("elliptic-exit")), "{e:?}");
}

#[test]
fn exit_correction_reduces_bias() {
    let spec = PdeProblemSpec::from_fixture("elliptic-exit", &Params::new(), growth(), vec![]).unwrap();
    let b = Budget {
        n_paths: 20_000,
        n_steps: 256,
    };
    let s = SolverSettings::default();
    let on = solve_elliptic(&spec, &Probe::at(0.0), b, &s, &EllipticOptions::default(), 6).unwrap();
    let off_opts = EllipticOptions {
        exit_correction: false,
        ..EllipticOptions::default()
    };
    let off = solve_elliptic(&spec, &Probe::at(0.0), b, &s, &off_opts, 6).unwrap();
    assert!(off.u - 1.0 > 4.0 * off.stderr, "uncorrected {}", off.u);
    assert!((on.u - 1.0).abs() < (off.u - 1.0).abs() / 2.0, "{} vs {}", on.u, off.u);
}

#[test]
fn markov_consistency_on_heat() {
    let spec = heat(vec![]);
    let b = Budget {
        n_paths: 20_000,
        n_steps: 16,
    };
    let rb = Budget {
        n_paths: 4000,
        n_steps: 8,
    };
    let rep = markov_consistency(&spec, &Probe::at(0.2), b, rb, 8, 12, &SolverSettings::default(), 9).unwrap();
    assert!(rep.pass, "{} vs σ {}", rep.mean_diff, rep.sigma);
    assert_eq!(rep.t, 0.5);
}

#[test]
fn solver_errors_name_the_problem() {
    let mut spec = heat(vec![]);
    spec.generator = GeneratorSpec::zero(1, 1);
    let s = SolverSettings {
        picard_max: 0,
        ..SolverSettings::default()
    };
    let b = Budget { n_paths: 10, n_steps: 4 };
    let e = solve_parabolic(&spec, &Probe::at(0.0), b, &s, 1).unwrap_err();
    assert!(e.to_string().contains("heat"), "{e}");
}

fn table_of(rows: &[(f64, f64)]) -> PdeSolutionTable {
    PdeSolutionTable {
        schema_version: SCHEMA_VERSION,
        problem: "manual".into(),
        rows: rows
            .iter()
            .map(|&(x, u)| PdeRow {
                probe: Probe::at(x),
                u,
                stderr: 0.0,
                z: vec![0.0],
                oracle: None,
                fd: None,
                truncation_mass: 0.0,
                t_cap: 1.0,
                n_steps: 1,
                picard_iterations: 1,
                warnings: vec![],
            })
            .collect(),
    }
}

#[test]
fn growth_verdicts() {
    let g = growth();
    let xs: Vec<f64> = (0..=16).map(|j| -4.0 + 0.5 * j as f64).collect();
    let zero = growth_bound_check(&table_of(&xs.iter().map(|&x| (x, 0.0)).collect::<Vec<_>>()), &g);
    assert!(zero.pass && zero.c == 0.0);
    let quad = growth_bound_check(&table_of(&xs.iter().map(|&x| (x, x * x + 1.0)).collect::<Vec<_>>()), &g);
    assert!(quad.pass && quad.c.is_finite() && quad.c >= 1.0, "{quad:?}");
    let cubic = growth_bound_check(&table_of(&xs.iter().map(|&x| (x, x.abs().powi(3).exp())).collect::<Vec<_>>()), &g);
    assert!(!cubic.pass && !cubic.violations.is_empty(), "{cubic:?}");
}

#[test]
fn heat_table_has_finite_growth_constant() {
    let probes: Vec<Probe> = (-3..=3).map(|j| Probe::at(j as f64)).collect();
    let spec = heat(probes);
    let ts = TableSettings {
        budget: Budget {
            n_paths: 5000,
            n_steps: 16,
        },
        fd_nx: 0,
        ..TableSettings::default()
    };
    let t = solve_table(&spec, &ts, 11).unwrap();
    let v = growth_bound_check(&t, &spec.growth);
    assert!(v.pass && v.c.is_finite(), "{v:?}");
}

#[test]
fn csv_layout_and_determinism() {
    let spec = PdeProblemSpec::from_fixture("elliptic-exit", &Params::new(), growth(), vec![Probe::at(-0.5), Probe::at(1.0)]).unwrap();
    let ts = TableSettings {
        budget: Budget {
            n_paths: 1000,
            n_steps: 128,
        },
        fd_nx: 200,
        ..TableSettings::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let t = pool.install(|| solve_table(&spec, &ts, 21)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(4));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "probe,u,stderr,oracle,rel_err,z,fd,truncation_mass");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("t=0;x=1,0,0,0,0,"), "{}", lines[2]);
}
