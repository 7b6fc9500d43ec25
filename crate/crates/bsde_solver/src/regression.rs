//! Least-squares projection onto a finite basis of the forward state.
//!
//! Gram matrices are accumulated over fixed chunks of the alive set and
//! combined by a pairwise tree, so fitted coefficients do not depend on the
//! worker count. The normal equations are solved by Cholesky; a ridge term is
//! added when the Gram matrix is too ill-conditioned.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use rbsde_core::reduce::chunked;
use rbsde_core::{Error, PathEnsemble, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// Monomials of total degree ≤ `degree` in the standardised state.
    Polynomial { degree: usize },
    /// Indicators of equal-width bins of the first non-degenerate coordinate.
    PiecewiseConstant { bins: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeRegression {
    pub node: usize,
    pub n_alive: usize,
    pub basis: Basis,
    pub n_basis: usize,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// State coordinates with non-degenerate spread.
    pub active: Vec<usize>,
    #[serde(skip)]
    exponents: Vec<Vec<u32>>,
    #[serde(skip)]
    bins: Option<(f64, f64, usize)>,
    pub n_targets: usize,
    /// `n_basis × n_targets`, row-major.
    pub coeffs: Vec<f64>,
    pub condition: f64,
    pub ridge: f64,
}

fn monomials(dims: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dims]];
    for total in 1..=degree {
        // all exponent vectors with the given total, in lexicographic order
        let mut cur = vec![0u32; dims];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(cur.clone());
                return;
            }
            for e in (0..=left).rev() {
                cur[pos] = e;
                rec(pos + 1, left - e, cur, out);
            }
        }
        if dims > 0 {
            rec(0, total as u32, &mut cur, &mut out);
        }
    }
    out
}

fn n_monomials(dims: usize, degree: usize) -> usize {
    // C(dims + degree, degree)
    let mut c = 1usize;
    for j in 1..=degree {
        c = c * (dims + j) / j;
    }
    c
}

impl NodeRegression {
    pub fn basis_values(&self, x: &[f64], out: &mut [f64]) {
        if let Some((lo, width, bins)) = self.bins {
            out.fill(0.0);
            let b = match self.active.first() {
                Some(&c) if width > 0.0 => (((x[c] - lo) / width).floor().max(0.0) as usize).min(bins - 1),
                _ => 0,
            };
            out[b] = 1.0;
            return;
        }
        let a = self.active.len();
        let deg = self.exponents.iter().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0) as usize;
        let mut pw = [[1.0f64; 9]; 8];
        let mut dyn_pw;
        let powers: &mut [[f64; 9]] = if a <= 8 && deg <= 8 {
            &mut pw[..a]
        } else {
            dyn_pw = vec![[1.0f64; 9]; a];
            &mut dyn_pw[..]
        };
        for (j, &c) in self.active.iter().enumerate() {
            let s = (x[c] - self.center[j]) / self.scale[j];
            for e in 1..=deg.min(8) {
                powers[j][e] = powers[j][e - 1] * s;
            }
        }
        for (b, e) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (j, &ej) in e.iter().enumerate() {
                if ej > 0 {
                    v *= powers[j][ej as usize];
                }
            }
            out[b] = v;
        }
    }

    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        let mut phi = vec![0.0; self.n_basis];
        self.basis_values(x, &mut phi);
        self.predict_from_basis(&phi, out);
    }

    fn predict_from_basis(&self, phi: &[f64], out: &mut [f64]) {
        let nt = self.n_targets;
        out[..nt].fill(0.0);
        for (b, &v) in phi.iter().enumerate() {
            if v != 0.0 {
                let row = &self.coeffs[b * nt..(b + 1) * nt];
                for t in 0..nt {
                    out[t] += v * row[t];
                }
            }
        }
    }

    /// Appends the target columns of `other`, fitted on the same node and
    /// alive set.
    pub fn append_targets(&mut self, other: &NodeRegression) {
        let (a, b) = (self.n_targets, other.n_targets);
        let mut coeffs = Vec::with_capacity(self.n_basis * (a + b));
        for r in 0..self.n_basis {
            coeffs.extend_from_slice(&self.coeffs[r * a..(r + 1) * a]);
            coeffs.extend_from_slice(&other.coeffs[r * b..(r + 1) * b]);
        }
        self.coeffs = coeffs;
        self.n_targets = a + b;
    }

    /// Fitted values for every alive path, `alive.len() × n_targets`.
    pub fn predict_alive(&self, ens: &PathEnsemble, alive: &[usize]) -> Vec<f64> {
        let nt = self.n_targets;
        let mut out = vec![0.0; alive.len() * nt];
        out.par_chunks_mut(nt).zip(alive.par_iter()).for_each_init(
            || vec![0.0; self.n_basis],
            |phi, (o, &p)| {
                self.basis_values(ens.state(p, self.node), phi);
                self.predict_from_basis(phi, o);
            },
        );
        out
    }
}

/// Fits `targets` (row `r` belongs to `alive[r]`, `n_targets` columns) on the
/// states of node `node`.
pub fn fit(
    ens: &PathEnsemble,
    node: usize,
    alive: &[usize],
    targets: &[f64],
    n_targets: usize,
    basis: Basis,
    ridge: f64,
    cond_limit: f64,
) -> Result<NodeRegression> {
    let n = alive.len();
    if n == 0 {
        return Err(Error::Numerical(format!("node {node}: no paths to regress on")));
    }
    let l = ens.l();
    let mean: Vec<f64> = chunked(
        n,
        |r| {
            let mut s = vec![0.0; l];
            for q in r {
                for (c, v) in ens.state(alive[q], node).iter().enumerate() {
                    s[c] += v;
                }
            }
            s
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    )
    .unwrap()
    .into_iter()
    .map(|s| s / n as f64)
    .collect();
    let var: Vec<f64> = chunked(
        n,
        |r| {
            let mut s = vec![0.0; l];
            for q in r {
                for (c, v) in ens.state(alive[q], node).iter().enumerate() {
                    s[c] += (v - mean[c]).powi(2);
                }
            }
            s
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    )
    .unwrap()
    .into_iter()
    .map(|s| s / n as f64)
    .collect();
    let active: Vec<usize> = (0..l)
        .filter(|&c| var[c].sqrt() > 1e-10 * (1.0 + mean[c].abs()))
        .collect();
    let center: Vec<f64> = active.iter().map(|&c| mean[c]).collect();
    let scale: Vec<f64> = active.iter().map(|&c| var[c].sqrt()).collect();

    let mut reg = NodeRegression {
        node,
        n_alive: n,
        basis,
        n_basis: 1,
        center,
        scale,
        active,
        exponents: vec![vec![]],
        bins: None,
        n_targets,
        coeffs: Vec::new(),
        condition: 1.0,
        ridge: 0.0,
    };
    match basis {
        Basis::Polynomial { degree } => {
            let mut deg = degree;
            while deg > 0 && n_monomials(reg.active.len(), deg) > n {
                deg -= 1;
            }
            reg.exponents = monomials(reg.active.len(), deg);
            reg.n_basis = reg.exponents.len();
            reg.basis = Basis::Polynomial { degree: deg };
        }
        Basis::PiecewiseConstant { bins } => {
            let bins = bins.max(1);
            let (lo, hi) = match reg.active.first() {
                Some(&c) => alive
                    .iter()
                    .map(|&p| ens.state(p, node)[c])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v))),
                None => (0.0, 0.0),
            };
            let bins = if reg.active.is_empty() { 1 } else { bins };
            reg.bins = Some((lo, (hi - lo) / bins as f64, bins));
            reg.n_basis = bins;
        }
    }
    let m = reg.n_basis;
    let nt = n_targets;
    let (mut gram, mut rhs) = chunked(
        n,
        |r| {
            let mut g = vec![0.0; m * m];
            let mut h = vec![0.0; m * nt];
            let mut phi = vec![0.0; m];
            for q in r {
                reg.basis_values(ens.state(alive[q], node), &mut phi);
                for a in 0..m {
                    let pa = phi[a];
                    if pa == 0.0 {
                        continue;
                    }
                    for b in a..m {
                        g[a * m + b] += pa * phi[b];
                    }
                    for t in 0..nt {
                        h[a * nt + t] += pa * targets[q * nt + t];
                    }
                }
            }
            (g, h)
        },
        |(mut g1, mut h1), (g2, h2)| {
            g1.iter_mut().zip(&g2).for_each(|(x, y)| *x += y);
            h1.iter_mut().zip(&h2).for_each(|(x, y)| *x += y);
            (g1, h1)
        },
    )
    .unwrap();
    for a in 0..m {
        for b in 0..a {
            gram[a * m + b] = gram[b * m + a];
        }
    }
    if reg.bins.is_some() {
        // empty bins fall back to the overall mean
        let count: f64 = (0..m).map(|a| gram[a * m + a]).sum();
        let totals: Vec<f64> = (0..nt).map(|t| (0..m).map(|a| rhs[a * nt + t]).sum::<f64>() / count).collect();
        for a in 0..m {
            if gram[a * m + a] == 0.0 {
                gram[a * m + a] = 1.0;
                rhs[a * nt..(a + 1) * nt].copy_from_slice(&totals);
            }
        }
    }
    let g = DMatrix::from_row_slice(m, m, &gram);
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let lmax = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
    reg.condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let trace_mean = (0..m).map(|a| gram[a * m + a]).sum::<f64>() / m as f64;
    let mut lambda = ridge * trace_mean;
    if reg.condition > cond_limit {
        lambda = lambda.max(lmax / cond_limit);
    }
    let mut gr = g;
    for a in 0..m {
        gr[(a, a)] += lambda;
    }
    reg.ridge = lambda;
    let chol = gr
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("node {node}: Gram matrix not positive definite (condition {:.3e})", reg.condition)))?;
    let sol = chol.solve(&DMatrix::from_row_slice(m, nt, &rhs));
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("node {node}: non-finite regression coefficients")));
    }
    reg.coeffs = (0..m).flat_map(|a| (0..nt).map(move |t| (a, t))).map(|(a, t)| sol[(a, t)]).collect();
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rbsde_core::make_grid;

    fn ensemble(xs: &[[f64; 2]]) -> PathEnsemble {
        let g = make_grid(1.0, 1).unwrap();
        let n = xs.len();
        let mut st = Vec::new();
        for x in xs {
            st.extend_from_slice(&[0.0, 0.0]);
            st.extend_from_slice(x);
        }
        PathEnsemble::from_parts(g, 0.0, 0, 1, 2, &vec![2; n], vec![0.0; n], st).unwrap()
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(n_monomials(2, 2), 6);
        assert_eq!(n_monomials(3, 3), 20);
        assert_eq!(monomials(0, 3).len(), 1);
    }

    #[test]
    fn reproduces_basis_functions() {
        let xs: Vec<[f64; 2]> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.137;
                [t.sin() * 3.0, (1.7 * t).cos() + 0.2 * t]
            })
            .collect();
        let e = ensemble(&xs);
        let alive: Vec<usize> = (0..200).collect();
        let f = |x: &[f64; 2]| 1.0 - 2.0 * x[0] + 0.5 * x[0] * x[1] + 0.25 * x[1] * x[1];
        let targets: Vec<f64> = xs.iter().map(f).collect();
        let reg = fit(&e, 1, &alive, &targets, 1, Basis::Polynomial { degree: 2 }, 0.0, 1e12).unwrap();
        let fitted = reg.predict_alive(&e, &alive);
        for (a, b) in fitted.iter().zip(&targets) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let mut out = [0.0];
        reg.predict(&[0.5, -0.5], &mut out);
        assert!((out[0] - f(&[0.5, -0.5])).abs() < 1e-10);
    }

    #[test]
    fn degenerate_node_reduces_to_mean() {
        let xs = vec![[0.0, 0.0]; 10];
        let e = ensemble(&xs);
        let alive: Vec<usize> = (0..10).collect();
        let targets: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let reg = fit(&e, 1, &alive, &targets, 1, Basis::Polynomial { degree: 3 }, 0.0, 1e12).unwrap();
        assert!(reg.active.is_empty());
        assert_eq!(reg.n_basis, 1);
        assert!((reg.coeffs[0] - 4.5).abs() < 1e-14);
    }

    #[test]
    fn piecewise_constant_bin_means() {
        let xs: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 0.0]).collect();
        let e = ensemble(&xs);
        let alive: Vec<usize> = (0..8).collect();
        let targets: Vec<f64> = (0..8).map(|i| (i / 4) as f64 * 10.0).collect();
        let reg = fit(&e, 1, &alive, &targets, 1, Basis::PiecewiseConstant { bins: 2 }, 0.0, 1e12).unwrap();
        let fitted = reg.predict_alive(&e, &alive);
        assert_eq!(fitted, targets);
    }
}
