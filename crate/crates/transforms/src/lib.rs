//! Truncation and smoothing of terminal values and generators.
//!
//! These maps turn a monotone generator with arbitrary growth in `y` into a
//! sequence of bounded, Lipschitz-in-`y` generators converging back to it.

use std::sync::{Arc, OnceLock};

use rbsde_core::generator::EnvelopeFn;
use rbsde_core::{Error, GeneratorSpec, Point, Result};

mod quadrature;

pub use quadrature::gauss_legendre;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Radial clamp `q_r(x) = x r / (|x| ∨ r)`.
pub fn clamp_q(x: &[f64], r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(Error::Config(format!("clamp radius must be > 0 (got {r})")));
    }
    Ok(clamp_unchecked(x, r))
}

fn clamp_unchecked(x: &[f64], r: f64) -> Vec<f64> {
    let m = norm(x);
    if m <= r {
        return x.to_vec();
    }
    x.iter().map(|v| v * r / m).collect()
}

/// Piecewise-linear cutoff in `u = |y|`: `α` up to `rα`, slope −1 down to zero
/// at `(r+1)α`, zero beyond.
pub fn truncation_theta(u: f64, r: usize, alpha: f64) -> f64 {
    let r = r as f64;
    if u <= r * alpha {
        alpha
    } else if u <= (r + 1.0) * alpha {
        (r + 1.0) * alpha - u
    } else {
        0.0
    }
}

/// Both sides of `|e^{λx} − 1| ≤ λ (e^{|x|} + |x| − 1)`, valid for `λ ∈ [0, 1]`.
pub fn lemma38_gap(x: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("λ must lie in [0, 1] (got {lambda})")));
    }
    let lhs = (lambda * x).exp_m1().abs();
    let rhs = lambda * (x.abs().exp_m1() + x.abs());
    Ok((lhs, rhs))
}

/// `c ∫_{|u|<1} exp(−1/(1 − |u|²)) du = 1` fixes `c`; returns `1/c`.
fn bump_mass(k: usize) -> f64 {
    static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = CACHE.get_or_init(|| {
        let (x, w) = gauss_legendre(400);
        (1..=3)
            .map(|k| {
                // radial integral on [0, 1] via the affine map of [−1, 1]
                let radial: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(xi, wi)| {
                        let r = 0.5 * (xi + 1.0);
                        0.5 * wi * r.powi(k as i32 - 1) * bump(r * r)
                    })
                    .sum();
                let sphere = match k {
                    1 => 2.0,
                    2 => 2.0 * std::f64::consts::PI,
                    _ => 4.0 * std::f64::consts::PI,
                };
                sphere * radial
            })
            .collect()
    });
    table[k - 1]
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Quadrature for `∫_{|u| ≤ 1} φ(u) f(u) du` with the normalised bump `φ`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub k: usize,
    /// Nodes inside the unit ball, `k` coordinates each.
    pub nodes: Vec<f64>,
    /// Renormalised weights (sum to 1).
    pub weights: Vec<f64>,
    /// `|Σ raw weights − 1|` before renormalisation.
    pub raw_defect: f64,
}

impl Mollifier {
    pub fn new(k: usize, n_quad: usize) -> Result<Self> {
        if !(1..=3).contains(&k) {
            return Err(Error::Config(format!("mollification supports 1 ≤ k ≤ 3 (got {k})")));
        }
        if n_quad < 2 {
            return Err(Error::Config("n_quad must be ≥ 2".into()));
        }
        let (x, w) = gauss_legendre(n_quad);
        let c = 1.0 / bump_mass(k);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let total = n_quad.pow(k as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut u = [0.0; 3];
            let mut wt = c;
            for ui in u.iter_mut().take(k) {
                let j = rem % n_quad;
                rem /= n_quad;
                *ui = x[j];
                wt *= w[j];
            }
            let r2: f64 = u[..k].iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                let v = wt * bump(r2);
                if v > 0.0 {
                    nodes.extend_from_slice(&u[..k]);
                    weights.push(v);
                }
            }
        }
        let raw: f64 = weights.iter().sum();
        let raw_defect = (raw - 1.0).abs();
        if raw_defect > 1e-4 {
            return Err(Error::Config(format!(
                "mollifier quadrature too coarse: n_quad = {n_quad} gives bump mass {raw} (defect {raw_defect:.2e} > 1e-4)"
            )));
        }
        for v in weights.iter_mut() {
            *v /= raw;
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Config(format!("mollifier weights sum to {sum}, not 1")));
        }
        Ok(Mollifier {
            k,
            nodes,
            weights,
            raw_defect,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.k..(j + 1) * self.k]
    }
}

/// `g_n(y) = ∫ φ(u) g(y − u/n) du` in the `y` argument.
pub fn mollify_generator(g: &GeneratorSpec, n: usize, n_quad: usize) -> Result<GeneratorSpec> {
    if n == 0 {
        return Err(Error::Config("mollification index n must be ≥ 1".into()));
    }
    let k = g.k();
    let m = Arc::new(Mollifier::new(k, n_quad)?);
    let inner = g.eval_fn();
    let scale = 1.0 / n as f64;
    let eval = Arc::new(move |p: &Point, y: &[f64], z: &[f64], out: &mut [f64]| {
        let mut shifted = vec![0.0; k];
        let mut val = vec![0.0; k];
        out.fill(0.0);
        for j in 0..m.len() {
            let u = m.node(j);
            for i in 0..k {
                shifted[i] = y[i] - u[i] * scale;
            }
            inner(p, &shifted, z, &mut val);
            for i in 0..k {
                out[i] += m.weights[j] * val[i];
            }
        }
    });
    Ok(g.clone().with_eval(format!("mollified[n = {n}]({})", g.name), eval))
}

/// 64 deterministic points in the ball `|y| ≤ radius` of `ℝ^k`.
pub fn ball_samples(k: usize, radius: f64) -> Vec<Vec<f64>> {
    match k {
        1 => (0..64).map(|j| vec![radius * (-1.0 + 2.0 * j as f64 / 63.0)]).collect(),
        2 => {
            let mut v = Vec::with_capacity(64);
            for a in 0..8 {
                for ri in 1..=8 {
                    let th = 2.0 * std::f64::consts::PI * (a as f64 + 0.5 * (ri % 2) as f64) / 8.0;
                    let r = radius * ri as f64 / 8.0;
                    v.push(vec![r * th.cos(), r * th.sin()]);
                }
            }
            v
        }
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut v = Vec::with_capacity(64);
            for ri in 1..=4 {
                let r = radius * ri as f64 / 4.0;
                for j in 0..16 {
                    // Fibonacci directions on the sphere, padded with zeros for k > 3
                    let zc = 1.0 - 2.0 * (j as f64 + 0.5) / 16.0;
                    let s = (1.0 - zc * zc).sqrt();
                    let th = golden * j as f64;
                    let mut p = vec![0.0; k];
                    p[0] = r * s * th.cos();
                    p[1] = r * s * th.sin();
                    p[2] = r * zc;
                    v.push(p);
                }
            }
            v
        }
    }
}

/// Second-step truncation: with `θ = truncation_theta(|y|, r, α_t)`,
///
/// `g^n = θ (g(y) − g(0)) · n e^{−t} / (ψ̄ ∨ n e^{−t} α_t) + g(0)`,
///
/// where `ψ̄ = sup_{|y| ≤ (r+1)α_t} |g(y) − g(0)|` is taken from the declared
/// envelope or, failing that, from 64 sample points of the ball together
/// with the evaluation point itself (so the pointwise bound
/// `|g^n − g(0)| ≤ n e^{−t} α_t` holds exactly).
pub fn truncated_generator(g: &GeneratorSpec, n: usize, r: usize) -> Result<GeneratorSpec> {
    if n == 0 {
        return Err(Error::Config("truncation index n must be ≥ 1".into()));
    }
    let k = g.k();
    let inner = g.eval_fn();
    let envelope: Option<Arc<EnvelopeFn>> = g.envelope.clone();
    let nf = n as f64;
    let eval = Arc::new(move |p: &Point, y: &[f64], z: &[f64], out: &mut [f64]| {
        let zero = vec![0.0; k];
        let mut g0 = vec![0.0; k];
        inner(p, &zero, z, &mut g0);
        let radius = (r as f64 + 1.0) * p.alpha;
        let ny = norm(y);
        let theta = truncation_theta(ny, r, p.alpha);
        if theta == 0.0 {
            out.copy_from_slice(&g0);
            return;
        }
        let mut gy = vec![0.0; k];
        inner(p, y, z, &mut gy);
        let diff: Vec<f64> = gy.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let psi = match &envelope {
            Some(env) => env(p, z, radius),
            None => {
                let mut tmp = vec![0.0; k];
                let sampled = ball_samples(k, radius)
                    .iter()
                    .map(|s| {
                        inner(p, s, z, &mut tmp);
                        tmp.iter().zip(&g0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                    })
                    .fold(0.0, f64::max);
                sampled.max(norm(&diff))
            }
        };
        let level = nf * (-p.t).exp();
        let factor = theta * level / psi.max(level * p.alpha);
        for i in 0..k {
            out[i] = factor * diff[i] + g0[i];
        }
    });
    let mut out = g.clone().with_eval(format!("truncated[n = {n}, r = {r}]({})", g.name), eval);
    out.needs_alpha = true;
    Ok(out)
}

/// Third-step clamp of the free term: `ḡ_n = g − g(t, 0, z) + q_{n e^{−t} α_t²}(g(t, 0, z))`.
pub fn third_step_generator(g: &GeneratorSpec, n: usize) -> Result<GeneratorSpec> {
    if n == 0 {
        return Err(Error::Config("truncation index n must be ≥ 1".into()));
    }
    let k = g.k();
    let inner = g.eval_fn();
    let nf = n as f64;
    let eval = Arc::new(move |p: &Point, y: &[f64], z: &[f64], out: &mut [f64]| {
        let zero = vec![0.0; k];
        let mut g0 = vec![0.0; k];
        inner(p, &zero, z, &mut g0);
        inner(p, y, z, out);
        let radius = nf * (-p.t).exp() * p.alpha * p.alpha;
        let q = clamp_unchecked(&g0, radius);
        for i in 0..k {
            out[i] += q[i] - g0[i];
        }
    });
    let mut out = g.clone().with_eval(format!("third-step[n = {n}]({})", g.name), eval);
    out.needs_alpha = true;
    Ok(out)
}
