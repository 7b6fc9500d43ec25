use lambert_w::lambert_w0;
use serde::Serialize;

use crate::spec::Growth;
use crate::PdeSolutionTable;

#[derive(Debug, Clone, Serialize)]
pub struct GrowthVerdict {
    /// Smallest `C` with `|u| − 4σ ≤ C e^{C|x|^q}` over all probes.
    pub c: f64,
    /// The same fit restricted to probes with `|x| ≤ x_max / 2`.
    pub c_inner: f64,
    pub growth: Growth,
    /// Outer probes (by row index) exceeding the doubled inner envelope.
    pub violations: Vec<usize>,
    pub pass: bool,
}

/// Smallest `C ≥ 0` with `v ≤ C e^{C s}`.
fn smallest_c(v: f64, s: f64) -> f64 {
    if !v.is_finite() || !s.is_finite() {
        f64::INFINITY
    } else if v <= 0.0 {
        0.0
    } else if s == 0.0 {
        v
    } else {
        lambert_w0(v * s) / s
    }
}

/// Fits the growth constant of `|u(x)| ≤ C e^{C|x|^q}`.
///
/// A finite set of probes always admits some `C`, so the verdict asks the
/// fit to extrapolate: `C` fitted on the inner half of the probe range,
/// doubled, must still dominate the outer probes. Exponential-type growth
/// with exponent `q` passes; faster growth leaves the doubled envelope.
/// Each `|u|` is reduced by 4 standard errors first.
pub fn growth_bound_check(table: &PdeSolutionTable, growth: &Growth) -> GrowthVerdict {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .map(|r| {
            let x = r.probe.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let v = if r.u.is_finite() { (r.u.abs() - 4.0 * r.stderr).max(0.0) } else { f64::INFINITY };
            (x, v)
        })
        .collect();
    let x_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let fit = |inner: bool| {
        pts.iter()
            .filter(|p| !inner || p.0 <= 0.5 * x_max)
            .map(|&(x, v)| smallest_c(v, x.powf(growth.q)))
            .fold(0.0, f64::max)
    };
    let (c, c_inner) = (fit(false), fit(true));
    let violations: Vec<usize> = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| p.0 > 0.5 * x_max)
        .filter(|(_, &(x, v))| !(v <= 2.0 * c_inner * (2.0 * c_inner * x.powf(growth.q)).exp()))
        .map(|(j, _)| j)
        .collect();
    GrowthVerdict {
        c,
        c_inner,
        growth: *growth,
        pass: c.is_finite() && violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambert_fit_is_tight() {
        for &(v, s) in &[(5.0, 2.0), (1e20, 4.0), (0.3, 0.5)] {
            let c = smallest_c(v, s);
            assert!(((c * (c * s).exp()) / v - 1.0).abs() < 1e-12);
        }
        assert_eq!(smallest_c(0.0, 3.0), 0.0);
        assert_eq!(smallest_c(2.5, 0.0), 2.5);
    }
}
