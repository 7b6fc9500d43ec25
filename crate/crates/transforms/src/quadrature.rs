/// Gauss–Legendre nodes and weights on `[−1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            dp = nf * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // ∫ x^8 = 2/9
        let m8: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(8)).sum();
        assert!((m8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn large_rule_is_symmetric() {
        let (x, w) = gauss_legendre(64);
        for i in 0..32 {
            assert_eq!(x[i], -x[63 - i]);
            assert_eq!(w[i], w[63 - i]);
        }
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }
}
