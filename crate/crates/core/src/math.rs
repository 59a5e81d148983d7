//! Small numerical helpers shared across modules.

use statrs::function::erf::erf;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Table of `ln(k!)` for `k = 0..=max`, built by cumulative summation of `ln k`.
#[derive(Debug, Clone)]
pub struct LogFactorials(Vec<f64>);

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        let mut acc = 0.0;
        table.push(0.0);
        for k in 1..=max {
            acc += (k as f64).ln();
            table.push(acc);
        }
        LogFactorials(table)
    }

    #[inline]
    pub fn ln_fact(&self, k: usize) -> f64 {
        self.0[k]
    }

    #[inline]
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        debug_assert!(k <= n);
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

/// Poisson probability `e^{-mean} mean^k / k!`, with the `mean = 0` limit handled exactly.
pub fn poisson_pmf(mean: f64, k: usize, lf: &LogFactorials) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-mean + k as f64 * mean.ln() - lf.ln_fact(k)).exp()
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z * FRAC_1_SQRT_2))
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_factorials_match_direct_products() {
        let lf = LogFactorials::new(20);
        let mut fact = 1.0f64;
        for k in 1..=20 {
            fact *= k as f64;
            assert!((lf.ln_fact(k) - fact.ln()).abs() < 1e-12);
        }
        assert!((lf.ln_choose(10, 3).exp() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn poisson_pmf_at_zero_mean_is_vacuum() {
        let lf = LogFactorials::new(5);
        assert_eq!(poisson_pmf(0.0, 0, &lf), 1.0);
        assert_eq!(poisson_pmf(0.0, 3, &lf), 0.0);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) + normal_cdf(-1.0) - 1.0).abs() < 1e-15);
    }
}
