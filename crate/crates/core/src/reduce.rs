//! Reductions whose floating-point result is independent of the worker count.
//!
//! Work is cut into fixed-size chunks, each chunk is reduced sequentially, and
//! the chunk partials are combined by a pairwise tree in chunk order.

use rayon::prelude::*;
use std::ops::Range;

pub const CHUNK: usize = 512;

pub fn tree_reduce<T>(mut parts: Vec<T>, combine: impl Fn(T, T) -> T) -> Option<T> {
    if parts.is_empty() {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

pub fn chunked<T, M, C>(n: usize, map: M, combine: C) -> Option<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
    C: Fn(T, T) -> T,
{
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| map(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    tree_reduce(parts, combine)
}

/// Sum of `f(i)` for `i in 0..n`.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunked(n, |r| r.map(&f).sum::<f64>(), |a, b| a + b).unwrap_or(0.0)
}

pub fn sum(values: &[f64]) -> f64 {
    sum_by(values.len(), |i| values[i])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum(values) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let ss = sum_by(n, |i| (values[i] - mean).powi(2));
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_orders() {
        let v: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let r = tree_reduce(v, |a, b| format!("({a}{b})")).unwrap();
        assert_eq!(r, "(((01)(23))4)");
    }

    #[test]
    fn sum_is_thread_count_invariant() {
        let xs: Vec<f64> = (0..100_003).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sum(&xs));
        let b = four.install(|| sum(&xs));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn mean_stderr_basic() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
