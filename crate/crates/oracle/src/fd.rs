//! Finite-difference references for one-dimensional Feynman–Kac problems.
//!
//! Parabolic: `u_t + ½σ²u_xx + b u_x + g(t, x, u, σ u_x) = 0`, `u(T, ·) = h`,
//! explicit in time on a window `|x| ≤ x_max`.
//! Elliptic: `½σ²u'' + b u' + g(x, u, σ u') = 0` on `(lo, hi)` with Dirichlet
//! data, solved by a damped Newton iteration in `u` with `u'` lagged.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use rbsde_core::{Error, Result};

pub type Coeff1 = dyn Fn(f64, f64) -> f64 + Send + Sync;
pub type Driver1 = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;

/// How the parabolic solver closes the window at `±x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// `u_0 = 3u_1 − 3u_2 + u_3` (exact for quadratics). Like any local
    /// closure it imposes a boundary condition of its own, so the window must
    /// be wide enough that the edge does not reach the probes.
    Extrapolate,
    /// `u = h` on the window edge at every time.
    Dirichlet,
}

#[derive(Clone)]
pub struct ParabolicSpec {
    /// `b(t, x)`.
    pub drift: Arc<Coeff1>,
    /// `σ(t, x)`.
    pub sigma: Arc<Coeff1>,
    /// `g(t, x, u, σ u_x)`.
    pub g: Arc<Driver1>,
    pub h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub horizon: f64,
    pub x_max: f64,
    pub closure: Closure,
}

impl ParabolicSpec {
    /// Heat equation `u_t + ½ s² u_xx + μ0 u = 0` with terminal data `h`.
    pub fn linear_heat(s: f64, mu0: f64, h: Arc<dyn Fn(f64) -> f64 + Send + Sync>, horizon: f64, x_max: f64) -> Self {
        ParabolicSpec {
            drift: Arc::new(|_, _| 0.0),
            sigma: Arc::new(move |_, _| s),
            g: Arc::new(move |_, _, u, _| mu0 * u),
            h,
            horizon,
            x_max,
            closure: Closure::Extrapolate,
        }
    }

    fn sigma_max(&self, nx: usize) -> f64 {
        let dx = 2.0 * self.x_max / nx as f64;
        let mut m = 0.0f64;
        for k in 0..=8 {
            let t = self.horizon * k as f64 / 8.0;
            for j in 0..=nx {
                m = m.max((self.sigma)(t, -self.x_max + j as f64 * dx).abs());
            }
        }
        m
    }

    /// Smallest number of time steps satisfying `σ² Δt / Δx² ≤ 1`.
    pub fn min_steps(&self, nx: usize) -> usize {
        let dx = 2.0 * self.x_max / nx as f64;
        (self.horizon * self.sigma_max(nx).powi(2) / (dx * dx)).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdParabolic {
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    /// `u[n][j]` at `(ts[n], xs[j])`.
    pub u: Vec<Vec<f64>>,
}

fn interp(xs: &[f64], u: &[f64], x: f64) -> Option<f64> {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(x >= lo && x <= hi) {
        return None;
    }
    let dx = xs[1] - xs[0];
    let j = (((x - lo) / dx).floor() as usize).min(xs.len() - 2);
    let w = (x - xs[j]) / dx;
    Some((1.0 - w) * u[j] + w * u[j + 1])
}

impl FdParabolic {
    /// Linear interpolation in `x` and `t`; `None` outside the mesh.
    pub fn value(&self, t: f64, x: f64) -> Option<f64> {
        let nt = self.ts.len() - 1;
        if !(t >= self.ts[0] && t <= self.ts[nt]) {
            return None;
        }
        let dt = self.ts[1] - self.ts[0];
        let n = (((t - self.ts[0]) / dt).floor() as usize).min(nt - 1);
        let w = (t - self.ts[n]) / dt;
        Some((1.0 - w) * interp(&self.xs, &self.u[n], x)? + w * interp(&self.xs, &self.u[n + 1], x)?)
    }

    /// CSV with columns `t,x,u`, every `stride`-th time level.
    pub fn write_csv<W: Write>(&self, w: W, stride: usize) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "u"]).map_err(csv_err)?;
        for n in (0..self.ts.len()).step_by(stride.max(1)) {
            for (j, x) in self.xs.iter().enumerate() {
                wr.serialize((self.ts[n], x, self.u[n][j])).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Explicit backward-in-time solve on `nx + 1` points and `nt` steps.
pub fn fd_parabolic(spec: &ParabolicSpec, nx: usize, nt: usize) -> Result<FdParabolic> {
    if nx < 4 || nt == 0 || !(spec.horizon > 0.0) || !(spec.x_max > 0.0) {
        return Err(Error::Config("fd_parabolic needs nx ≥ 4, nt ≥ 1, T > 0 and x_max > 0".into()));
    }
    let required = spec.min_steps(nx);
    if nt < required {
        return Err(Error::Config(format!("CFL condition violated: nt = {nt} but at least {required} steps are needed for nx = {nx}")));
    }
    let dx = 2.0 * spec.x_max / nx as f64;
    let dt = spec.horizon / nt as f64;
    let xs: Vec<f64> = (0..=nx).map(|j| -spec.x_max + j as f64 * dx).collect();
    let ts: Vec<f64> = (0..=nt).map(|n| if n == nt { spec.horizon } else { n as f64 * dt }).collect();
    let mut u = vec![vec![0.0; nx + 1]; nt + 1];
    u[nt] = xs.iter().map(|&x| (spec.h)(x)).collect();
    for n in (0..nt).rev() {
        let t = ts[n + 1];
        let (next, cur) = {
            let (a, b) = u.split_at_mut(n + 1);
            (&b[0], &mut a[n])
        };
        for j in 1..nx {
            let x = xs[j];
            let s = (spec.sigma)(t, x);
            let ux = (next[j + 1] - next[j - 1]) / (2.0 * dx);
            let uxx = (next[j + 1] - 2.0 * next[j] + next[j - 1]) / (dx * dx);
            let g = (spec.g)(t, x, next[j], s * ux);
            cur[j] = next[j] + dt * (0.5 * s * s * uxx + (spec.drift)(t, x) * ux + g);
        }
        match spec.closure {
            Closure::Extrapolate => {
                cur[0] = 3.0 * cur[1] - 3.0 * cur[2] + cur[3];
                cur[nx] = 3.0 * cur[nx - 1] - 3.0 * cur[nx - 2] + cur[nx - 3];
            }
            Closure::Dirichlet => {
                cur[0] = (spec.h)(xs[0]);
                cur[nx] = (spec.h)(xs[nx]);
            }
        }
        if let Some(j) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("fd_parabolic: non-finite value at t = {}, x = {}", ts[n], xs[j])));
        }
    }
    Ok(FdParabolic { ts, xs, u })
}

#[derive(Clone)]
pub struct EllipticSpec {
    /// `b(x)`.
    pub drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// `σ(x)`.
    pub sigma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// `g(x, u, σ u')`.
    pub g: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub lo: f64,
    pub hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub tol: f64,
}

impl EllipticSpec {
    pub fn new(
        sigma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        g: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
        (lo, hi): (f64, f64),
        (h_lo, h_hi): (f64, f64),
    ) -> Self {
        EllipticSpec {
            drift: Arc::new(|_| 0.0),
            sigma,
            g,
            lo,
            hi,
            h_lo,
            h_hi,
            max_iter: 200,
            damping: 1.0,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdElliptic {
    pub xs: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Scaled max-norm residual after each iteration (see [`fd_elliptic`]).
    pub residuals: Vec<f64>,
}

impl FdElliptic {
    pub fn value(&self, x: f64) -> Option<f64> {
        interp(&self.xs, &self.u, x)
    }

    /// CSV with columns `x,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "u"]).map_err(csv_err)?;
        for (x, u) in self.xs.iter().zip(&self.u) {
            wr.serialize((x, u)).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Solves `a_j x_{j−1} + b_j x_j + c_j x_{j+1} = d_j` (Thomas algorithm).
fn tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for j in 1..n {
        let m = b[j] - a[j] * cp[j - 1];
        cp[j] = c[j] / m;
        dp[j] = (d[j] - a[j] * dp[j - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = dp[j] - cp[j] * x[j + 1];
    }
    x
}

/// Solves on `nx + 1` points (`nx − 1` unknowns) until the max-norm residual
/// of the discrete equations, divided by the diagonal weight `σ²/Δx²` so that
/// it is measured in units of `u`, drops below `tol`.
pub fn fd_elliptic(spec: &EllipticSpec, nx: usize) -> Result<FdElliptic> {
    if nx < 2 || !(spec.hi > spec.lo) || !(spec.damping > 0.0 && spec.damping <= 1.0) || spec.max_iter == 0 {
        return Err(Error::Config("fd_elliptic needs nx ≥ 2, lo < hi, damping in (0, 1] and max_iter ≥ 1".into()));
    }
    let dx = (spec.hi - spec.lo) / nx as f64;
    let xs: Vec<f64> = (0..=nx).map(|j| if j == nx { spec.hi } else { spec.lo + j as f64 * dx }).collect();
    let m = nx - 1;
    let mut u = vec![0.0; nx + 1];
    u[0] = spec.h_lo;
    u[nx] = spec.h_hi;
    // the linear part: ½σ² D² + b D
    let (mut lower, mut diag, mut upper) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in 0..m {
        let x = xs[r + 1];
        let s = (spec.sigma)(x);
        let b = (spec.drift)(x);
        let e = 0.5 * s * s / (dx * dx);
        lower[r] = e - b / (2.0 * dx);
        diag[r] = -2.0 * e;
        upper[r] = e + b / (2.0 * dx);
    }
    let grad = |u: &[f64], j: usize| (spec.sigma)(xs[j]) * (u[j + 1] - u[j - 1]) / (2.0 * dx);
    let residual = |u: &[f64]| {
        (0..m)
            .map(|r| {
                let j = r + 1;
                let v = lower[r] * u[j - 1] + diag[r] * u[j] + upper[r] * u[j + 1] + (spec.g)(xs[j], u[j], grad(u, j));
                // in units of u: divide by the stencil's diagonal weight
                v.abs() / diag[r].abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    };
    let mut residuals = Vec::new();
    for it in 1..=spec.max_iter {
        let (mut a, mut b, mut c, mut d) = (lower.clone(), vec![0.0; m], upper.clone(), vec![0.0; m]);
        for r in 0..m {
            let j = r + 1;
            let p = grad(&u, j);
            let g0 = (spec.g)(xs[j], u[j], p);
            let h = 1e-6 * (1.0 + u[j].abs());
            let gu = ((spec.g)(xs[j], u[j] + h, p) - (spec.g)(xs[j], u[j] - h, p)) / (2.0 * h);
            b[r] = diag[r] + gu;
            d[r] = -g0 + gu * u[j];
        }
        d[0] -= a[0] * u[0];
        d[m - 1] -= c[m - 1] * u[nx];
        a[0] = 0.0;
        c[m - 1] = 0.0;
        let sol = tridiagonal(&a, &b, &c, &d);
        for r in 0..m {
            u[r + 1] += spec.damping * (sol[r] - u[r + 1]);
        }
        let res = residual(&u);
        if !res.is_finite() {
            return Err(Error::Numerical(format!("fd_elliptic: non-finite residual at iteration {it}; history {residuals:?}")));
        }
        residuals.push(res);
        if res < spec.tol {
            return Ok(FdElliptic {
                xs,
                u,
                iterations: it,
                residuals,
            });
        }
    }
    let tail: Vec<String> = residuals.iter().rev().take(5).rev().map(|r| format!("{r:.3e}")).collect();
    Err(Error::Numerical(format!(
        "fd_elliptic: fixed point not converged after {} iterations (last residuals {})",
        spec.max_iter,
        tail.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let (a, b, c) = ([0.0, 1.0, 1.0], [4.0, 4.0, 4.0], [1.0, 1.0, 0.0]);
        let x = [1.0, -2.0, 3.0];
        let d: Vec<f64> = (0..3)
            .map(|j| b[j] * x[j] + if j > 0 { a[j] * x[j - 1] } else { 0.0 } + if j < 2 { c[j] * x[j + 1] } else { 0.0 })
            .collect();
        let got = tridiagonal(&a, &b, &c, &d);
        for j in 0..3 {
            assert!((got[j] - x[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_is_exact_for_linear_data() {
        let xs: Vec<f64> = (0..=10).map(|j| j as f64 * 0.1).collect();
        let u: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((interp(&xs, &u, 0.37).unwrap() - 1.74).abs() < 1e-14);
        assert!(interp(&xs, &u, 1.01).is_none());
    }

    #[test]
    fn cfl_violation_reports_required_steps() {
        let spec = ParabolicSpec::linear_heat(1.0, 0.0, Arc::new(|x| x), 1.0, 1.0);
        let err = fd_parabolic(&spec, 100, 10).unwrap_err().to_string();
        assert!(err.contains("2500"), "{err}");
    }
}
