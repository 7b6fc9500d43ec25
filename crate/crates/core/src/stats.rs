use rayon::prelude::*;

use crate::rng::{derive_seed, PathRng};

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Standard deviation of `statistic` over `n_boot` resamples (with
/// replacement) of the index set `0..n`. Resample `b` draws from its own
/// stream, so the answer does not depend on the worker count.
pub fn bootstrap_stderr<F>(n: usize, n_boot: usize, seed: u64, statistic: F) -> f64
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n < 2 || n_boot < 2 {
        return f64::NAN;
    }
    let boot_seed = derive_seed(seed, 0xB007);
    let stats: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = PathRng::new(boot_seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            statistic(&idx)
        })
        .collect();
    let m = stats.iter().sum::<f64>() / n_boot as f64;
    (stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n_boot - 1) as f64).sqrt()
}
