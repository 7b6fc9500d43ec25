//! Named problem instances: forward SDE, generator, terminal value, horizon
//! and truncation rule bundled under a stable id.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::alpha::AlphaRule;
use crate::error::{config, Result};
use crate::generator::GeneratorSpec;
use crate::sde::{DomainSpec, SdeSpec};
use crate::terminal::{ExpFunctional, TerminalCondition};
use crate::weight::WeightParams;

pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub enum Horizon {
    Fixed { t: f64 },
    Exit { domain: DomainSpec, t_cap: f64 },
    Infinite { t_cap: f64 },
}

impl Horizon {
    pub fn t_cap(&self) -> f64 {
        match self {
            Horizon::Fixed { t } => *t,
            Horizon::Exit { t_cap, .. } | Horizon::Infinite { t_cap } => *t_cap,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub id: String,
    pub sde: SdeSpec,
    pub generator: GeneratorSpec,
    pub terminal: TerminalCondition,
    pub horizon: Horizon,
    pub x0: Vec<f64>,
    pub alpha: Option<AlphaRule>,
    pub weight: WeightParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureInfo {
    pub id: &'static str,
    pub summary: &'static str,
    pub params: &'static [(&'static str, f64)],
    /// Declared `(μ, ν, α)`.
    pub recipe: &'static str,
    /// Properties the fixture is used to check.
    pub exercises: &'static str,
}

const CATALOGUE: &[FixtureInfo] = &[
    FixtureInfo {
        id: "zero",
        summary: "g = 0, ξ = 0 on [0, T]; the solution vanishes",
        params: &[("t", 1.0)],
        recipe: "μ = 0, ν = 0, α = stochastic-lipschitz",
        exercises: "a priori estimates (degenerate case), determinism",
    },
    FixtureInfo {
        id: "linear-constant-coeff",
        summary: "g = μ0 y + ν0 z, ξ = c on [0, T]; y_t = c e^{μ0 (T − t)}, z = 0",
        params: &[("mu0", 0.5), ("nu0", 0.3), ("xi", 1.0), ("t", 1.0)],
        recipe: "μ = μ0, ν = |ν0|, α = stochastic-lipschitz",
        exercises: "explicit linear solution, Picard contraction, a priori estimates, continuous dependence, grid refinement",
    },
    FixtureInfo {
        id: "linear-scaled-terminal",
        summary: "g = μ0 y + ν0 z, ξ = s·B_T; used for the stability sequence",
        params: &[("mu0", 0.5), ("nu0", 0.3), ("scale", 0.1), ("t", 1.0)],
        recipe: "μ = μ0, ν = |ν0|, α = stochastic-lipschitz",
        exercises: "stability under terminal truncation",
    },
    FixtureInfo {
        id: "motivational-counterexample-rho1",
        summary: "g = b z, ξ = exp(∫b dB − 1.5∫b²); weighted moment finite only at ρ = 1",
        params: &[("b", 1.0), ("t", 1.0)],
        recipe: "μ = 0, ν = |b|, α = stochastic-lipschitz",
        exercises: "weighted-moment failure at ρ = 1 (pathwise closed form)",
    },
    FixtureInfo {
        id: "heat",
        summary: "X = B, g = μ0 y, ξ = X_T²; u = e^{μ0 (T − t)} (x² + T − t)",
        params: &[("mu0", 0.0), ("t", 1.0)],
        recipe: "μ = μ0, ν = 0, α unused",
        exercises: "parabolic Feynman–Kac representation",
    },
    FixtureInfo {
        id: "elliptic-exit",
        summary: "X = √2 B on D = (−1, 1), g = 2, h = 0; u = 1 − x²",
        params: &[("t_cap", 2.5)],
        recipe: "μ = 0, ν = 0, α unused",
        exercises: "elliptic Feynman–Kac representation with exit times",
    },
    FixtureInfo {
        id: "ex3.8-exp-cubic",
        summary: "g = e^{−|B|³ y} + |z|, bounded exit time from (−1.5, 1.5) ∧ T",
        params: &[("t", 1.0)],
        recipe: "μ = 0, ν = 1, α = 1/(1 + sup|B|³)",
        exercises: "existence and uniqueness for a bounded stopping time with exponential y-growth",
    },
    FixtureInfo {
        id: "ex3.9-exp-quartic",
        summary: "g = e^{−|B|⁴ y} + |B|(|y| + |z|) − 1, ξ = e^{−∫a}(1 + |B_T|)",
        params: &[("t", 1.0), ("beta", 1.0), ("rho", 2.0), ("rho_bar", 2.0)],
        recipe: "μ = |B|, ν = |B|, α = e^{−β∫μ − t}/sup(1 + |B|)⁴",
        exercises: "existence and uniqueness under stochastic monotonicity, a priori estimates",
    },
    FixtureInfo {
        id: "ex3.10-infinite-horizon",
        summary: "τ = ∞ capped at t_cap, g = e^{−(ρ/2)∫|B| − t} e^{y⁻} + ν_t sin|z|",
        params: &[("t_cap", 4.0), ("beta", 1.0), ("rho", 2.0), ("rho_bar", 2.0)],
        recipe: "μ = 0, ν = √(|B|1_{t≤1} + 1/(1 + t²)), α = stochastic-lipschitz",
        exercises: "infinite horizon (capped), stochastic Lipschitz in z",
    },
    FixtureInfo {
        id: "ex3.11-sigma-switch",
        summary: "g = |B|⁶(1 − e^{y⁺}) + |B|1_{t≤1} sin y + √(|B|1_{t≤1}) |z|, exit from (−2, 2)",
        params: &[("t_cap", 3.0)],
        recipe: "μ = |B|1_{t≤1}, ν = √(|B|1_{t≤1}), α = stochastic-lipschitz",
        exercises: "exit time with a time-switching coefficient",
    },
    FixtureInfo {
        id: "ex3.12-polynomial-monotone",
        summary: "k = 2: g = |B|³(−y1⁵ + y2, −y2³ − y1) + |B|(sin|z|, |z|), ξ = e^{−∫a} B_T",
        params: &[("t", 1.0), ("beta", 1.0), ("rho", 2.0), ("rho_bar", 2.0)],
        recipe: "μ = |B|³, ν = √2|B|, α = stochastic-lipschitz",
        exercises: "two-dimensional monotone generator, assumption validation, implicit scheme",
    },
];

pub fn catalogue() -> &'static [FixtureInfo] {
    CATALOGUE
}

fn resolve(id: &str, overrides: &Params) -> Result<(&'static FixtureInfo, Params)> {
    let Some(info) = CATALOGUE.iter().find(|f| f.id == id) else {
        let ids: Vec<_> = CATALOGUE.iter().map(|f| f.id).collect();
        return config(format!("unknown fixture '{id}' (known: {})", ids.join(", ")));
    };
    let mut p: Params = info.params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        if !p.contains_key(k) {
            let keys: Vec<_> = info.params.iter().map(|(k, _)| *k).collect();
            return config(format!("fixture '{id}' has no parameter '{k}' (allowed: {})", keys.join(", ")));
        }
        if !v.is_finite() {
            return config(format!("fixture parameter '{k}' must be finite"));
        }
        p.insert(k.clone(), *v);
    }
    Ok((info, p))
}

fn weight_from(p: &Params) -> Result<WeightParams> {
    let d = WeightParams::default();
    WeightParams::new(
        *p.get("beta").unwrap_or(&d.beta),
        *p.get("rho").unwrap_or(&d.rho),
        *p.get("rho_bar").unwrap_or(&d.rho_bar),
    )
}

fn positive(p: &Params, key: &str) -> Result<f64> {
    let v = p[key];
    if v > 0.0 {
        Ok(v)
    } else {
        config(format!("fixture parameter '{key}' must be > 0 (got {v})"))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn build(id: &str, overrides: &Params) -> Result<Fixture> {
    let (info, p) = resolve(id, overrides)?;
    let weight = weight_from(&p)?;
    let fx = match info.id {
        "zero" => Fixture {
            id: id.into(),
            sde: SdeSpec::brownian(1),
            generator: GeneratorSpec::zero(1, 1),
            terminal: TerminalCondition::Constant(vec![0.0]),
            horizon: Horizon::Fixed { t: positive(&p, "t")? },
            x0: vec![0.0],
            alpha: Some(AlphaRule::stochastic_lipschitz()),
            weight,
        },
        "linear-constant-coeff" => Fixture {
            id: id.into(),
            sde: SdeSpec::brownian(1),
            generator: GeneratorSpec::linear(p["mu0"], vec![p["nu0"]]),
            terminal: TerminalCondition::Constant(vec![p["xi"]]),
            horizon: Horizon::Fixed { t: positive(&p, "t")? },
            x0: vec![0.0],
            alpha: Some(AlphaRule::stochastic_lipschitz()),
            weight,
        },
        "linear-scaled-terminal" => {
            let s = p["scale"];
            Fixture {
                id: id.into(),
                sde: SdeSpec::brownian(1),
                generator: GeneratorSpec::linear(p["mu0"], vec![p["nu0"]]),
                terminal: TerminalCondition::state(1, format!("{s}·B_T"), Arc::new(move |x, out| out[0] = s * x[0])),
                horizon: Horizon::Fixed { t: positive(&p, "t")? },
                x0: vec![0.0],
                alpha: Some(AlphaRule::stochastic_lipschitz()),
                weight,
            }
        }
        "motivational-counterexample-rho1" => {
            let b = p["b"];
            Fixture {
                id: id.into(),
                sde: SdeSpec::brownian(1),
                generator: GeneratorSpec::linear(0.0, vec![b]),
                terminal: TerminalCondition::ExpFunctional(ExpFunctional {
                    amplitude: 1.0,
                    c: 1.0,
                    kappa: 1.5,
                    b,
                }),
                horizon: Horizon::Fixed { t: positive(&p, "t")? },
                x0: vec![0.0],
                alpha: Some(AlphaRule::stochastic_lipschitz()),
                weight,
            }
        }
        "heat" => {
            let mu0 = p["mu0"];
            let generator = if mu0 == 0.0 {
                GeneratorSpec::zero(1, 1)
            } else {
                GeneratorSpec::linear(mu0, vec![0.0])
            };
            Fixture {
                id: id.into(),
                sde: SdeSpec::brownian(1),
                generator,
                terminal: TerminalCondition::state(1, "x²", Arc::new(|x, out| out[0] = x[0] * x[0])),
                horizon: Horizon::Fixed { t: positive(&p, "t")? },
                x0: vec![0.0],
                alpha: None,
                weight,
            }
        }
        "elliptic-exit" => Fixture {
            id: id.into(),
            sde: SdeSpec::scaled_brownian(1, std::f64::consts::SQRT_2),
            generator: GeneratorSpec::constant(vec![2.0], 1),
            terminal: TerminalCondition::state(1, "0", Arc::new(|_, out| out[0] = 0.0)),
            horizon: Horizon::Exit {
                domain: DomainSpec::interval(-1.0, 1.0)?,
                t_cap: positive(&p, "t_cap")?,
            },
            x0: vec![0.0],
            alpha: None,
            weight,
        },
        "ex3.8-exp-cubic" => {
            let eval = Arc::new(|pt: &crate::Point, y: &[f64], z: &[f64], out: &mut [f64]| {
                let b3 = pt.x[0].abs().powi(3);
                out[0] = (-b3 * y[0]).exp() + norm(z);
            });
            let generator = GeneratorSpec::new("exp-cubic", 1, 1, eval, Arc::new(|_, _| (0.0, 1.0)))?
                .with_envelope(Arc::new(|pt, _, r| (pt.x[0].abs().powi(3) * r).exp() - 1.0))
                .with_driver_bound(Arc::new(|_, _| (1.0, 0.0, 1.0)));
            Fixture {
                id: id.into(),
                sde: SdeSpec::brownian(1),
                generator,
                terminal: TerminalCondition::state(1, "cos(B_τ)", Arc::new(|x, out| out[0] = x[0].cos())),
                horizon: Horizon::Exit {
                    domain: DomainSpec::interval(-1.5, 1.5)?,
                    t_cap: positive(&p, "t")?,
                },
                x0: vec![0.0],
                alpha: Some(AlphaRule::bounded_power(3.0, 1)),
                weight,
            }
        }
        "ex3.9-exp-quartic" => {
            let wp = weight;
            let sde = SdeSpec::brownian(1)
                .with_running_integral(Arc::new(move |_, x: &[f64]| wp.a(x[0].abs(), x[0].abs())));
            let eval = Arc::new(|pt: &crate::Point, y: &[f64], z: &[f64], out: &mut [f64]| {
                let b = pt.x[0].abs();
                out[0] = (-b.powi(4) * y[0]).exp() + b * (y[0].abs() + z[0].abs()) - 1.0;
            });
            let coeff = Arc::new(|_: f64, x: &[f64]| (x[0].abs(), x[0].abs()));
            let generator = GeneratorSpec::new("exp-quartic", 1, 1, eval, coeff)?
                .with_envelope(Arc::new(|pt, _, r| {
                    let b = pt.x[0].abs();
                    (b.powi(4) * r).exp() - 1.0 + b * r
                }))
                .with_driver_bound(Arc::new(|_, x| (0.0, x[0].abs(), x[0].abs())));
            Fixture {
                id: id.into(),
                sde,
                generator,
                terminal: TerminalCondition::state(
                    1,
                    "e^{-∫a}(1 + |B_T|)",
                    Arc::new(|x, out| out[0] = (-x[1]).exp() * (1.0 + x[0].abs())),
                ),
                horizon: Horizon::Fixed { t: positive(&p, "t")? },
                x0: vec![0.0, 0.0],
                alpha: Some(AlphaRule::quartic(1)),
                weight,
            }
        }
        "ex3.10-infinite-horizon" => {
            let rho = weight.rho;
            let gate = |t: f64| if t <= 1.0 { 1.0 } else { 0.0 };
            let sde = SdeSpec::brownian(1).with_running_integral(Arc::new(move |t, x: &[f64]| x[0].abs() * gate(t)));
            let nu = move |t: f64, x: &[f64]| (x[0].abs() * gate(t) + 1.0 / (1.0 + t * t)).sqrt();
            let eval = Arc::new(move |pt: &crate::Point, y: &[f64], z: &[f64], out: &mut [f64]| {
                let damp = (-0.5 * rho * pt.x[1] - pt.t).exp();
                out[0] = damp * (-y[0]).max(0.0).exp() + nu(pt.t, pt.x) * z[0].abs().sin();
            });
            let generator = GeneratorSpec::new("infinite-horizon", 1, 1, eval, Arc::new(move |t, x| (0.0, nu(t, x))))?;
            Fixture {
                id: id.into(),
                sde,
                generator,
                terminal: TerminalCondition::Constant(vec![0.0]),
                horizon: Horizon::Infinite { t_cap: positive(&p, "t_cap")? },
                x0: vec![0.0, 0.0],
                alpha: Some(AlphaRule::stochastic_lipschitz()),
                weight,
            }
        }
        "ex3.11-sigma-switch" => {
            let gate = |t: f64| if t <= 1.0 { 1.0 } else { 0.0 };
            let eval = Arc::new(move |pt: &crate::Point, y: &[f64], z: &[f64], out: &mut [f64]| {
                let b = pt.x[0].abs();
                let s = b * gate(pt.t);
                out[0] = b.powi(6) * (1.0 - y[0].max(0.0).exp()) + s * y[0].sin() + s.sqrt() * z[0].abs();
            });
            let coeff = Arc::new(move |t: f64, x: &[f64]| {
                let s = x[0].abs() * gate(t);
                (s, s.sqrt())
            });
            Fixture {
                id: id.into(),
                sde: SdeSpec::brownian(1),
                generator: GeneratorSpec::new("sigma-switch", 1, 1, eval, coeff)?,
                terminal: TerminalCondition::state(1, "tanh(B_τ)", Arc::new(|x, out| out[0] = x[0].tanh())),
                horizon: Horizon::Exit {
                    domain: DomainSpec::interval(-2.0, 2.0)?,
                    t_cap: positive(&p, "t_cap")?,
                },
                x0: vec![0.0],
                alpha: Some(AlphaRule::stochastic_lipschitz()),
                weight,
            }
        }
        "ex3.12-polynomial-monotone" => {
            let wp = weight;
            // The z-part |B|(sin|z|, |z|) is √2|B|-Lipschitz, not |B|-Lipschitz.
            let nu = |b: f64| std::f64::consts::SQRT_2 * b;
            let sde = SdeSpec::brownian(2).with_running_integral(Arc::new(move |_, x: &[f64]| {
                let b = norm(&x[..2]);
                wp.a(b.powi(3), nu(b))
            }));
            let eval = Arc::new(|pt: &crate::Point, y: &[f64], z: &[f64], out: &mut [f64]| {
                let b = norm(&pt.x[..2]);
                let b3 = b.powi(3);
                let zn = norm(z);
                out[0] = b3 * (-y[0].powi(5) + y[1]) + b * zn.sin();
                out[1] = b3 * (-y[1].powi(3) - y[0]) + b * zn;
            });
            let coeff = Arc::new(move |_: f64, x: &[f64]| {
                let b = norm(&x[..2]);
                (b.powi(3), nu(b))
            });
            Fixture {
                id: id.into(),
                sde,
                generator: GeneratorSpec::new("polynomial-monotone", 2, 2, eval, coeff)?,
                terminal: TerminalCondition::state(
                    2,
                    "e^{-∫a} B_T",
                    Arc::new(|x, out| {
                        let w = (-x[2]).exp();
                        out[0] = w * x[0];
                        out[1] = w * x[1];
                    }),
                ),
                horizon: Horizon::Fixed { t: positive(&p, "t")? },
                x0: vec![0.0, 0.0, 0.0],
                alpha: Some(AlphaRule::stochastic_lipschitz()),
                weight,
            }
        }
        _ => unreachable!("catalogue and builder out of sync"),
    };
    Ok(fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_catalogue_entry_builds() {
        for info in catalogue() {
            let f = build(info.id, &Params::new()).unwrap();
            assert_eq!(f.sde.d(), f.generator.d(), "{}", info.id);
            assert_eq!(f.terminal.k(), f.generator.k(), "{}", info.id);
            assert_eq!(f.x0.len(), f.sde.l(), "{}", info.id);
        }
    }

    #[test]
    fn required_ids_present() {
        for id in ["ex3.12-polynomial-monotone", "linear-constant-coeff", "motivational-counterexample-rho1"] {
            assert!(catalogue().iter().any(|f| f.id == id));
        }
    }

    #[test]
    fn unknown_ids_and_params_rejected() {
        assert!(build("nope", &Params::new()).is_err());
        let mut p = Params::new();
        p.insert("gamma".into(), 1.0);
        assert!(build("linear-constant-coeff", &p).is_err());
        let mut p = Params::new();
        p.insert("beta".into(), 0.5);
        assert!(build("ex3.9-exp-quartic", &p).is_err());
    }
}
