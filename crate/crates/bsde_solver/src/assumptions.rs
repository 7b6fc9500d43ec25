//! Sampled checks of the structural assumptions a generator declares.
//!
//! Each inequality `lhs ≤ rhs` is tested on random points; a sample violates
//! it when `(lhs − rhs) / (1 + |lhs| + |rhs| + m) > 1e-9`, where `m` is the
//! size of the generator values entering `lhs`. Without `m`, a generator
//! like `e^{−|x|⁴y}` at 10¹⁵ would fail on rounding noise alone.

use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::rng::PathRng;
use rbsde_core::{Error, GeneratorSpec, Point, Result};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionSampler {
    pub n_samples: usize,
    pub t_max: f64,
    /// State dimension `l` of the forward process.
    pub l: usize,
    pub x_scale: f64,
    pub y_scale: f64,
    pub z_scale: f64,
    pub seed: u64,
}

impl AssumptionSampler {
    pub fn new(l: usize, t_max: f64, seed: u64) -> Self {
        AssumptionSampler {
            n_samples: 20_000,
            t_max,
            l,
            x_scale: 1.0,
            y_scale: 1.0,
            z_scale: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub tested: bool,
    pub max_violation: f64,
    pub n_violations: usize,
    /// Samples skipped because the generator returned a non-finite value.
    pub n_nonfinite: usize,
    pub worst_sample: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub generator: String,
    pub checks: Vec<AssumptionCheck>,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

struct Sample {
    t: f64,
    x: Vec<f64>,
    y1: Vec<f64>,
    y2: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
}

fn draw(s: &AssumptionSampler, k: usize, kd: usize, j: usize) -> Sample {
    let mut r = PathRng::new(s.seed, j as u64);
    let t = r.uniform() * s.t_max;
    let x: Vec<f64> = (0..s.l).map(|_| s.x_scale * r.normal()).collect();
    let y1: Vec<f64> = (0..k).map(|_| s.y_scale * r.normal()).collect();
    let z1: Vec<f64> = (0..kd).map(|_| s.z_scale * r.normal()).collect();
    // every other sample is a close pair, to probe local behaviour
    let near = if j % 2 == 0 { 1.0 } else { 0.05 };
    let y2: Vec<f64> = y1.iter().map(|v| if near < 1.0 { v + near * s.y_scale * r.normal() } else { s.y_scale * r.normal() }).collect();
    let z2: Vec<f64> = z1.iter().map(|v| if near < 1.0 { v + near * s.z_scale * r.normal() } else { s.z_scale * r.normal() }).collect();
    Sample { t, x, y1, y2, z1, z2 }
}

/// `(lhs, rhs, magnitude)`: the inequality `lhs ≤ rhs` and the size of the
/// generator values it was computed from, which sets the rounding scale.
type Test<'a> = Box<dyn Fn(&Sample) -> Option<(f64, f64, f64)> + Sync + 'a>;

fn run(name: &'static str, description: &'static str, s: &AssumptionSampler, k: usize, kd: usize, test: Option<Test>) -> AssumptionCheck {
    let Some(test) = test else {
        return AssumptionCheck {
            name,
            description,
            tested: false,
            max_violation: 0.0,
            n_violations: 0,
            n_nonfinite: 0,
            worst_sample: None,
            pass: true,
        };
    };
    let results: Vec<(usize, Option<f64>)> = (0..s.n_samples)
        .into_par_iter()
        .map(|j| {
            let smp = draw(s, k, kd, j);
            match test(&smp) {
                Some((lhs, rhs, mag)) if lhs.is_finite() && rhs.is_finite() && mag.is_finite() => {
                    (j, Some((lhs - rhs) / (1.0 + lhs.abs() + rhs.abs() + mag)))
                }
                _ => (j, None),
            }
        })
        .collect();
    let n_nonfinite = results.iter().filter(|r| r.1.is_none()).count();
    let mut worst = (f64::NEG_INFINITY, 0usize);
    let mut n_violations = 0;
    for (j, v) in &results {
        if let Some(v) = v {
            if *v > TOL {
                n_violations += 1;
            }
            if *v > worst.0 {
                worst = (*v, *j);
            }
        }
    }
    let worst_sample = (worst.0 > TOL).then(|| {
        let smp = draw(s, k, kd, worst.1);
        format!(
            "t = {:.4}, x = {:?}, y1 = {:?}, y2 = {:?}, z1 = {:?}, z2 = {:?}",
            smp.t, smp.x, smp.y1, smp.y2, smp.z1, smp.z2
        )
    });
    let finite = results.len() - n_nonfinite;
    AssumptionCheck {
        name,
        description,
        tested: true,
        max_violation: worst.0.max(0.0),
        n_violations,
        n_nonfinite,
        worst_sample,
        pass: n_violations == 0 && finite > 0,
    }
}

/// Samples the monotonicity (H4), z-Lipschitz (H5), continuity (H2) and,
/// when declared, stochastic-Lipschitz (SL) and driver-bound (A) conditions.
pub fn validate_assumptions(g: &GeneratorSpec, s: &AssumptionSampler) -> Result<AssumptionReport> {
    if s.n_samples == 0 || s.l == 0 || !(s.t_max > 0.0) {
        return Err(Error::Config("assumption sampler needs n_samples ≥ 1, l ≥ 1 and t_max > 0".into()));
    }
    let (k, kd) = (g.k(), g.k() * g.d());
    let eval = |smp: &Sample, y: &[f64], z: &[f64]| {
        let pt = Point::new(smp.t, &smp.x);
        g.eval_vec(&pt, y, z)
    };
    let h4: Test = Box::new(|smp| {
        let (mu, _) = g.coeff(smp.t, &smp.x);
        let (g1, g2) = (eval(smp, &smp.y1, &smp.z1), eval(smp, &smp.y2, &smp.z1));
        let dy = diff(&smp.y1, &smp.y2);
        Some((dot(&dy, &diff(&g1, &g2)), mu * dot(&dy, &dy), norm(&dy) * (norm(&g1) + norm(&g2))))
    });
    let h5: Test = Box::new(|smp| {
        let (_, nu) = g.coeff(smp.t, &smp.x);
        let (g1, g2) = (eval(smp, &smp.y1, &smp.z1), eval(smp, &smp.y1, &smp.z2));
        Some((norm(&diff(&g1, &g2)), nu * norm(&diff(&smp.z1, &smp.z2)), norm(&g1) + norm(&g2)))
    });
    let h2: Test = Box::new(|smp| {
        // a step of 1e-7 must not move g by more than 1e-3 relative
        let h = 1e-7 * (1.0 + norm(&smp.y1));
        let dir = diff(&smp.y2, &smp.y1);
        let nd = norm(&dir).max(1e-300);
        let y: Vec<f64> = smp.y1.iter().zip(&dir).map(|(a, b)| a + h * b / nd).collect();
        let g0 = eval(smp, &smp.y1, &smp.z1);
        let g1 = eval(smp, &y, &smp.z1);
        Some((norm(&diff(&g1, &g0)), 1e-3 * (1.0 + norm(&g0)), 0.0))
    });
    let sl: Option<Test> = g.stochastic_lipschitz.clone().map(|f| -> Test {
        Box::new(move |smp: &Sample| {
            let (u, v) = f(smp.t, &smp.x);
            let (g1, g2) = (eval(smp, &smp.y1, &smp.z1), eval(smp, &smp.y2, &smp.z2));
            let rhs = u * norm(&diff(&smp.y1, &smp.y2)) + v * norm(&diff(&smp.z1, &smp.z2));
            Some((norm(&diff(&g1, &g2)), rhs, norm(&g1) + norm(&g2)))
        })
    });
    let a: Option<Test> = g.driver_bound.clone().map(|f| -> Test {
        Box::new(move |smp: &Sample| {
            let (f0, mub, nub) = f(smp.t, &smp.x);
            let ny = norm(&smp.y1);
            let gv = eval(smp, &smp.y1, &smp.z1);
            let lhs = if ny > 0.0 { dot(&smp.y1, &gv) / ny } else { 0.0 };
            Some((lhs, f0 + mub * ny + nub * norm(&smp.z1), 0.0))
        })
    });
    let checks = vec![
        run("H4", "⟨y1 − y2, g(y1) − g(y2)⟩ ≤ μ|y1 − y2|²", s, k, kd, Some(h4)),
        run("H5", "|g(z1) − g(z2)| ≤ ν|z1 − z2|", s, k, kd, Some(h5)),
        run("H2", "g continuous in y", s, k, kd, Some(h2)),
        run("SL", "|g(y1,z1) − g(y2,z2)| ≤ u|Δy| + v|Δz|", s, k, kd, sl),
        run("A", "⟨ŷ, g(y,z)⟩ ≤ f + μ̄|y| + ν̄|z|", s, k, kd, a),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(AssumptionReport {
        generator: g.name.clone(),
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn sampler() -> AssumptionSampler {
        let mut s = AssumptionSampler::new(1, 1.0, 5);
        s.n_samples = 4000;
        s
    }

    #[test]
    fn linear_generator_passes() {
        let r = validate_assumptions(&GeneratorSpec::linear(0.5, vec![0.3]), &sampler()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.check("SL").unwrap().tested);
    }

    #[test]
    fn square_in_y_fails_monotonicity() {
        let g = GeneratorSpec::new(
            "y²",
            1,
            1,
            Arc::new(|_, y, _, out| out[0] = y[0] * y[0]),
            Arc::new(|_, _| (0.0, 0.0)),
        )
        .unwrap();
        let r = validate_assumptions(&g, &sampler()).unwrap();
        assert!(!r.check("H4").unwrap().pass);
        assert!(r.check("H5").unwrap().pass);
    }

    #[test]
    fn understated_lipschitz_constant_fails() {
        let g = GeneratorSpec::new(
            "2|z|",
            1,
            1,
            Arc::new(|_, _, z, out| out[0] = 2.0 * z[0].abs()),
            Arc::new(|_, _| (0.0, 1.0)),
        )
        .unwrap();
        let r = validate_assumptions(&g, &sampler()).unwrap();
        assert!(!r.check("H5").unwrap().pass);
        assert!(r.check("H5").unwrap().worst_sample.is_some());
    }

    #[test]
    fn rounding_at_large_magnitude_is_not_a_violation() {
        // g = e^{-40 y} + |z| passes 10²⁵ on the sampled range
        let g = GeneratorSpec::new(
            "stiff",
            1,
            1,
            Arc::new(|_, y, z, out| out[0] = (-40.0 * y[0]).exp() + z[0].abs()),
            Arc::new(|_, _| (0.0, 1.0)),
        )
        .unwrap();
        let r = validate_assumptions(&g, &sampler()).unwrap();
        assert!(r.check("H5").unwrap().pass, "{:?}", r.check("H5"));
        assert!(r.check("H4").unwrap().pass);
    }

    #[test]
    fn discontinuity_detected() {
        let g = GeneratorSpec::new(
            "sign",
            1,
            1,
            Arc::new(|_, y, _, out| out[0] = -((y[0] > 0.0) as i32 as f64)),
            Arc::new(|_, _| (0.0, 0.0)),
        )
        .unwrap();
        let mut s = sampler();
        s.y_scale = 1e-7;
        let r = validate_assumptions(&g, &s).unwrap();
        assert!(!r.check("H2").unwrap().pass);
    }
}
