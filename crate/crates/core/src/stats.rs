//! Nonclassicality statistics.
//!
//! The central quantity is `Γ = P_2 / (P_1 + P_2 + P_3)`. Every Poisson
//! distribution has `Γ <= 3/(3 + 2√6)`, attained at mean `√6`, and because the
//! ratio of two weighted sums never exceeds the larger of the component
//! ratios the same bound holds for every mixture of Poissons, i.e. for every
//! classical field. Pair sources seen through a detector of efficiency
//! `η > 3/(3 + √6)` exceed it.

use crate::distribution::PhotonDistribution;
use crate::error::{Error, Result};
use crate::math::{poisson_pmf, LogFactorials};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `Γ = P_2 / (P_1 + P_2 + P_3)`.
pub fn gamma(d: &PhotonDistribution) -> Result<f64> {
    gamma_from_probs(d.get(1), d.get(2), d.get(3))
}

pub fn gamma_from_probs(p1: f64, p2: f64, p3: f64) -> Result<f64> {
    let denom = p1 + p2 + p3;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("P_1 + P_2 + P_3 is zero"));
    }
    Ok(p2 / denom)
}

/// Largest `Γ` reachable by any classical field: `3 / (3 + 2√6) ≈ 0.3798`.
pub fn classical_gamma_bound() -> f64 {
    3.0 / (3.0 + 2.0 * 6f64.sqrt())
}

/// Efficiency above which a weak pair source violates the classical bound:
/// `3 / (3 + √6) ≈ 0.5505`.
pub fn efficiency_threshold() -> f64 {
    3.0 / (3.0 + 6f64.sqrt())
}

/// `Γ` of a weak pair source behind efficiency `eta`: `η / (2 - η)`.
pub fn gamma_under_loss(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("eta", format!("must lie in (0, 1], got {eta}")));
    }
    Ok(eta / (2.0 - eta))
}

/// Weak-pump efficiency estimate `2r / (1 + 2r)` with `r = P_2 / P_1`.
pub fn eta_from_ratio(p1: f64, p2: f64) -> Result<f64> {
    if p1 == 0.0 {
        return Err(Error::ZeroDenominator("P_1 is zero"));
    }
    if p1 < 0.0 || p2 < 0.0 {
        return Err(Error::invalid("p1/p2", "probabilities must be non-negative"));
    }
    let r = p2 / p1;
    Ok(2.0 * r / (1.0 + 2.0 * r))
}

/// Event counts in the one-, two- and three-photon peaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsBasis {
    pub n1: u64,
    pub n2: u64,
    pub n3: u64,
    /// Events in all peaks, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<u64>,
}

/// `Γ` with its uncertainty and distance from the classical bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma: f64,
    pub std_error: f64,
    /// `(Γ - bound) / std_error`; absent when `std_error` is zero.
    pub n_std_above_classical: Option<f64>,
    pub classical_bound: f64,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_basis: Option<CountsBasis>,
}

impl GammaReport {
    /// Report for an exact distribution, with no counting uncertainty.
    pub fn exact(d: &PhotonDistribution) -> Result<Self> {
        Ok(Self::assemble(gamma(d)?, 0.0, None))
    }

    fn assemble(gamma: f64, std_error: f64, counts_basis: Option<CountsBasis>) -> Self {
        let bound = classical_gamma_bound();
        GammaReport {
            gamma,
            std_error,
            n_std_above_classical: (std_error > 0.0).then(|| (gamma - bound) / std_error),
            classical_bound: bound,
            violated: gamma - bound > 0.0,
            counts_basis,
        }
    }
}

/// Standard error of `Γ` estimated from `S = N_1 + N_2 + N_3` events.
///
/// Conditional on `S`, `N_2` is binomial, so `Var(Γ) = Γ(1 - Γ) / S`.
pub fn gamma_std_error(gamma: f64, n_sum: u64) -> f64 {
    (gamma * (1.0 - gamma) / n_sum as f64).sqrt()
}

/// `Γ` and its significance from peak event counts.
pub fn gamma_significance(n1: u64, n2: u64, n3: u64) -> Result<GammaReport> {
    let s = n1 + n2 + n3;
    if s == 0 {
        return Err(Error::ZeroDenominator("N_1 + N_2 + N_3 is zero"));
    }
    let g = n2 as f64 / s as f64;
    Ok(GammaReport::assemble(
        g,
        gamma_std_error(g, s),
        Some(CountsBasis {
            n1,
            n2,
            n3,
            n_total: None,
        }),
    ))
}

/// Even/odd photon-number balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub p_even: f64,
    pub p_odd: f64,
    pub parity: f64,
    /// `⟨(-1)^n⟩ < 0`, impossible for any mixture of Poissons.
    pub nonclassical: bool,
}

pub fn parity_test(d: &PhotonDistribution) -> ParityReport {
    let (mut p_even, mut p_odd) = (0.0, 0.0);
    for (n, p) in d.probs().iter().enumerate() {
        if n % 2 == 0 {
            p_even += p;
        } else {
            p_odd += p;
        }
    }
    let parity = p_even - p_odd;
    ParityReport {
        p_even,
        p_odd,
        parity,
        nonclassical: parity < 0.0,
    }
}

/// Brute-force search for the largest `Γ` attainable by Poisson mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Candidate Poisson means.
    pub grid: Vec<f64>,
    /// Number of random finite mixtures to draw.
    pub weights_trials: usize,
    pub seed: u64,
    /// Largest number of components in a random mixture.
    #[serde(default = "default_max_components")]
    pub max_components: usize,
}

fn default_max_components() -> usize {
    6
}

impl OracleConfig {
    /// Uniform grid over `[lo, hi]` with spacing `step`.
    pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Largest `Γ` over single Poissons and random mixtures.
    pub max_gamma: f64,
    /// Largest `Γ` over the single-Poisson grid.
    pub max_single_gamma: f64,
    /// Grid mean attaining `max_single_gamma`.
    pub argmax_mean: f64,
    /// Largest `Γ` among the random mixtures.
    pub max_mixture_gamma: f64,
}

/// `(P_1 + P_2 + P_3, P_2)` of a Poisson with the given mean.
fn poisson_low_terms(mean: f64, lf: &LogFactorials) -> (f64, f64) {
    let p: [f64; 3] = std::array::from_fn(|k| poisson_pmf(mean, k + 1, lf));
    (p[0] + p[1] + p[2], p[1])
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

const ORACLE_CHUNK: usize = 1024;

/// Maximizes `Γ` over every single Poisson on the grid and over
/// `weights_trials` random mixtures of grid Poissons. Vacuum counts as
/// `Γ = 0`. Trials are drawn in fixed chunks seeded by `(seed, chunk)` and
/// merged by max, so the result does not depend on the thread count.
pub fn poisson_mixture_oracle(cfg: &OracleConfig) -> Result<OracleResult> {
    if cfg.grid.is_empty() {
        return Err(Error::invalid("grid", "must be nonempty"));
    }
    if cfg.grid.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::invalid("grid", "means must be finite and >= 0"));
    }
    let lf = LogFactorials::new(3);
    let terms: Vec<(f64, f64)> = cfg.grid.iter().map(|m| poisson_low_terms(*m, &lf)).collect();

    let (max_single_gamma, argmax_mean) = terms
        .iter()
        .zip(&cfg.grid)
        .map(|((den, num), m)| (ratio_or_zero(*num, *den), *m))
        .fold((f64::NEG_INFINITY, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best });

    let max_components = cfg.max_components.max(2);
    let n_chunks = cfg.weights_trials.div_ceil(ORACLE_CHUNK);
    let max_mixture_gamma = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(chunk as u64);
            let trials = ORACLE_CHUNK.min(cfg.weights_trials - chunk * ORACLE_CHUNK);
            let mut best = f64::NEG_INFINITY;
            for _ in 0..trials {
                let k = rng.random_range(2..=max_components);
                let (mut num, mut den, mut wsum) = (0.0, 0.0, 0.0);
                let picks: Vec<(usize, f64)> = (0..k)
                    .map(|_| (rng.random_range(0..terms.len()), rng.random::<f64>()))
                    .collect();
                for (_, w) in &picks {
                    wsum += w;
                }
                for (idx, w) in picks {
                    let w = w / wsum;
                    num += w * terms[idx].1;
                    den += w * terms[idx].0;
                }
                best = best.max(ratio_or_zero(num, den));
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);

    Ok(OracleResult {
        max_gamma: max_single_gamma.max(max_mixture_gamma),
        max_single_gamma,
        argmax_mean,
        max_mixture_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{SourceKind, SourceSpec};
    use proptest::prelude::*;

    #[test]
    fn published_probabilities() {
        let g = gamma_from_probs(0.0818, 0.0696, 0.0061).unwrap();
        assert!((g - 0.442).abs() < 5e-4);
    }

    #[test]
    fn perfect_pair_detection() {
        let d = PhotonDistribution::fock(2, 10).unwrap();
        assert_eq!(gamma(&d).unwrap(), 1.0);
    }

    #[test]
    fn vacuum_has_no_gamma() {
        let d = PhotonDistribution::fock(0, 10).unwrap();
        assert!(matches!(gamma(&d), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn poisson_at_sqrt6_saturates_bound() {
        let d = SourceSpec::poisson(6f64.sqrt(), 40).unwrap().make_distribution().unwrap();
        let g = gamma(&d).unwrap();
        assert!((g - classical_gamma_bound()).abs() < 1e-9);
        assert!((classical_gamma_bound() - 0.37979).abs() < 1e-5);
        assert!(classical_gamma_bound() < 0.442);
    }

    #[test]
    fn oracle_single_points() {
        let r = poisson_mixture_oracle(&OracleConfig {
            grid: vec![6f64.sqrt()],
            weights_trials: 0,
            seed: 1,
            max_components: 6,
        })
        .unwrap();
        assert!((r.max_gamma - 0.3798).abs() < 1e-4);
        let r = poisson_mixture_oracle(&OracleConfig {
            grid: vec![0.0],
            weights_trials: 100,
            seed: 1,
            max_components: 6,
        })
        .unwrap();
        assert_eq!(r.max_gamma, 0.0);
        assert!(poisson_mixture_oracle(&OracleConfig {
            grid: vec![],
            weights_trials: 1,
            seed: 1,
            max_components: 2,
        })
        .is_err());
    }

    #[test]
    fn oracle_dense_grid_respects_bound() {
        let r = poisson_mixture_oracle(&OracleConfig {
            grid: OracleConfig::uniform_grid(0.0, 10.0, 1e-3),
            weights_trials: 10_000,
            seed: 42,
            max_components: 6,
        })
        .unwrap();
        assert!(r.max_gamma <= classical_gamma_bound() + 1e-9);
        assert!((r.argmax_mean - 6f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn oracle_is_thread_count_independent() {
        let cfg = OracleConfig {
            grid: OracleConfig::uniform_grid(0.0, 5.0, 0.01),
            weights_trials: 5000,
            seed: 9,
            max_components: 4,
        };
        let a = poisson_mixture_oracle(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| poisson_mixture_oracle(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn significance_hand_values() {
        let r = gamma_significance(100, 100, 0).unwrap();
        assert_eq!(r.gamma, 0.5);
        assert!((r.std_error - 0.0354).abs() < 1e-4);
        assert!((r.n_std_above_classical.unwrap() - 3.40).abs() < 5e-3);
        assert!(r.violated);

        let r = gamma_significance(1, 0, 0).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert!(!r.violated);

        assert!(gamma_significance(0, 0, 0).is_err());
    }

    #[test]
    fn efficiency_estimator() {
        assert_eq!(eta_from_ratio(1.0, 0.5).unwrap(), 0.5);
        assert_eq!(eta_from_ratio(0.2, 0.0).unwrap(), 0.0);
        assert!((eta_from_ratio(0.0818, 0.0696).unwrap() - 0.6298).abs() < 1e-4);
        assert!(eta_from_ratio(0.0, 0.1).is_err());
    }

    #[test]
    fn loss_formula() {
        assert_eq!(gamma_under_loss(1.0).unwrap(), 1.0);
        assert!((gamma_under_loss(0.67).unwrap() - 0.5038).abs() < 1e-4);
        let at_threshold = gamma_under_loss(efficiency_threshold()).unwrap();
        assert!((at_threshold - classical_gamma_bound()).abs() < 1e-12);
        assert!((efficiency_threshold() - 0.55).abs() < 1e-2);
        assert!(gamma_under_loss(0.0).is_err());
    }

    #[test]
    fn parity_of_single_photon() {
        let r = parity_test(&PhotonDistribution::fock(1, 5).unwrap());
        assert_eq!(r.parity, -1.0);
        assert!(r.nonclassical);
    }

    fn mixture_distribution(means: &[f64], raw_weights: &[f64]) -> PhotonDistribution {
        let total: f64 = raw_weights.iter().sum();
        let mut weights: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
        let last: f64 = weights[..weights.len() - 1].iter().sum();
        *weights.last_mut().unwrap() = 1.0 - last;
        let components = means.iter().map(|m| SourceKind::Poisson { mean: *m }).collect();
        SourceSpec::mixture(weights, components, 80).unwrap().make_distribution().unwrap()
    }

    proptest! {
        #[test]
        fn poisson_never_beats_bound(mean in 0.001f64..20.0) {
            let d = SourceSpec::poisson(mean, 120).unwrap().make_distribution().unwrap();
            prop_assert!(gamma(&d).unwrap() <= classical_gamma_bound() + 1e-9);
            // e^{-2n̄} drops below rounding noise past n̄ ≈ 8
            if mean < 8.0 {
                prop_assert!(d.parity_expectation() > 0.0);
            }
        }

        #[test]
        fn poisson_mixtures_stay_classical(
            parts in proptest::collection::vec((0.01f64..8.0, 0.01f64..1.0), 1..6)
        ) {
            let (means, weights): (Vec<f64>, Vec<f64>) = parts.into_iter().unzip();
            let d = mixture_distribution(&means, &weights);
            prop_assert!(gamma(&d).unwrap() <= classical_gamma_bound() + 1e-9);
            let parity = parity_test(&d);
            prop_assert!(parity.parity > 0.0);
            prop_assert!(!parity.nonclassical);
            let closed: f64 = means
                .iter()
                .zip(&weights)
                .map(|(m, w)| w * (-2.0 * m).exp())
                .sum::<f64>()
                / weights.iter().sum::<f64>();
            prop_assert!((parity.parity - closed).abs() < 1e-9);
        }

        #[test]
        fn mediant_inequality(
            x in 0.0f64..10.0, y in 0.01f64..10.0,
            xp in 0.0f64..10.0, yp in 0.01f64..10.0,
            alpha in 0.0f64..1.0,
        ) {
            prop_assume!(xp / yp < x / y);
            let blend = (alpha * x + (1.0 - alpha) * xp) / (alpha * y + (1.0 - alpha) * yp);
            prop_assert!(blend < x / y * (1.0 + 1e-12));
        }

        #[test]
        fn significance_scales_with_sqrt_counts(
            n1 in 1u64..5000, n2 in 1u64..5000, n3 in 0u64..500, k in 1u64..50
        ) {
            let base = gamma_significance(n1, n2, n3).unwrap();
            let scaled = gamma_significance(k * n1, k * n2, k * n3).unwrap();
            let (a, b) = (base.n_std_above_classical.unwrap(), scaled.n_std_above_classical.unwrap());
            prop_assert!((b - a * (k as f64).sqrt()).abs() <= 1e-9 * b.abs().max(1e-300));
        }

        #[test]
        fn report_flags_match_sign(n1 in 0u64..1000, n2 in 0u64..1000, n3 in 0u64..1000) {
            prop_assume!(n1 + n2 + n3 > 0);
            let r = gamma_significance(n1, n2, n3).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.gamma));
            prop_assert_eq!(r.violated, r.gamma - r.classical_bound > 0.0);
        }
    }
}
