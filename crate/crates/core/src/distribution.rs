//! Finite photon-number distributions and the source models that produce them.
//!
//! A [`PhotonDistribution`] is a probability vector over photon numbers
//! `0..=cutoff`. Source models ([`SourceSpec`]) cover coherent (Poisson)
//! light, pair-emitting downconversion with either Poissonian or thermal pair
//! statistics, Fock states, and convex mixtures of these.

use crate::error::{Error, Result};
use crate::math::{poisson_pmf, LogFactorials};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Smallest cutoff that still holds `P_1`, `P_2` and `P_3`.
pub const MIN_CUTOFF: usize = 3;

/// Default truncation for analysis and reconstruction.
pub const DEFAULT_CUTOFF: usize = 10;

/// Mass that may be dropped by truncation before it becomes an error.
pub const MAX_TRUNCATION_LOSS: f64 = 1e-6;

/// Tolerance on the total probability of a normalized distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Whether negative entries are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    /// Every entry is a genuine probability (`>= 0`).
    Physical,
    /// Produced by channel inversion; entries may be slightly negative.
    Signed,
}

/// Probability vector `p_0..p_N` over photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
    sign: Sign,
}

impl PhotonDistribution {
    /// Builds a physical distribution. Entries must be finite and non-negative.
    /// The vector need not sum to one (measured distributions may leak mass);
    /// see [`is_normalized`](Self::is_normalized).
    pub fn physical(probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(&probs)?;
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| **p < 0.0) {
            return Err(Error::invalid(
                "probs",
                format!("entry {n} is negative ({p}) in a physical distribution"),
            ));
        }
        Ok(PhotonDistribution {
            probs,
            sign: Sign::Physical,
        })
    }

    /// Builds a signed distribution, as returned by channel inversion.
    pub fn signed(probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(&probs)?;
        Ok(PhotonDistribution {
            probs,
            sign: Sign::Signed,
        })
    }

    /// Point mass at `n` on `0..=cutoff`.
    pub fn fock(n: usize, cutoff: usize) -> Result<Self> {
        if n > cutoff {
            return Err(Error::invalid(
                "n",
                format!("Fock number {n} exceeds cutoff {cutoff}"),
            ));
        }
        let mut probs = vec![0.0; cutoff + 1];
        probs[n] = 1.0;
        Self::physical(probs)
    }

    fn check_shape(probs: &[f64]) -> Result<()> {
        if probs.len() < MIN_CUTOFF + 1 {
            return Err(Error::invalid(
                "cutoff",
                format!("need cutoff >= {MIN_CUTOFF}, got {}", probs.len() as isize - 1),
            ));
        }
        if let Some(n) = probs.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid("probs", format!("entry {n} is not finite")));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Highest photon number represented.
    pub fn cutoff(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn is_physical(&self) -> bool {
        self.sign == Sign::Physical
    }

    /// `P_n`, or zero above the cutoff.
    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// `Σ n p_n`.
    pub fn mean_photon_number(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// `⟨(-1)^n⟩ = P_even - P_odd`.
    pub fn parity_expectation(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
            .sum()
    }

    /// Keeps entries `0..=cutoff` without renormalizing; extends with zeros
    /// when `cutoff` is above the current one.
    pub fn resized(&self, cutoff: usize) -> Result<Self> {
        let mut probs = self.probs.clone();
        probs.resize(cutoff + 1, 0.0);
        Self::check_shape(&probs)?;
        Ok(PhotonDistribution {
            probs,
            sign: self.sign,
        })
    }

    /// Divides through by the total mass.
    pub fn renormalized(&self) -> Result<Self> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::ZeroDenominator("distribution has no positive mass"));
        }
        Ok(PhotonDistribution {
            probs: self.probs.iter().map(|p| p / total).collect(),
            sign: self.sign,
        })
    }

    /// CSV with header `n,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,probability\n");
        for (n, p) in self.probs.iter().enumerate() {
            writeln!(out, "{n},{p}").unwrap();
        }
        out
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv). Any negative
    /// entry makes the result [`Sign::Signed`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut probs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with('n')) {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                line: idx + 1,
                reason,
            };
            let (n, p) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `n,probability`".into()))?;
            let n: usize = n.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let p: f64 = p.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            if n != probs.len() {
                return Err(parse_err(format!(
                    "photon numbers must be consecutive from 0, got {n}"
                )));
            }
            probs.push(p);
        }
        if probs.iter().any(|p| *p < 0.0) {
            Self::signed(probs)
        } else {
            Self::physical(probs)
        }
    }
}

/// Distribution of the number of pairs emitted per pump pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatistics {
    /// Many independent modes: pair number is Poisson distributed.
    #[default]
    Poissonian,
    /// Single mode: pair number is Bose-Einstein distributed.
    Thermal,
}

impl PairStatistics {
    fn pmf(self, mean: f64, k: usize, lf: &LogFactorials) -> f64 {
        match self {
            PairStatistics::Poissonian => poisson_pmf(mean, k, lf),
            PairStatistics::Thermal => {
                if mean == 0.0 {
                    return if k == 0 { 1.0 } else { 0.0 };
                }
                let ratio = mean / (1.0 + mean);
                (k as f64 * ratio.ln()).exp() / (1.0 + mean)
            }
        }
    }
}

/// Light-source model.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Poisson {
        mean: f64,
    },
    PdcPairs {
        mean_pairs: f64,
        pair_statistics: PairStatistics,
    },
    Fock {
        n: usize,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<SourceKind>,
    },
}

/// A source model together with the photon-number cutoff it is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceDoc", into = "SourceDoc")]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub cutoff: usize,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, cutoff: usize) -> Result<Self> {
        let spec = SourceSpec { kind, cutoff };
        spec.validate()?;
        Ok(spec)
    }

    pub fn poisson(mean: f64, cutoff: usize) -> Result<Self> {
        Self::new(SourceKind::Poisson { mean }, cutoff)
    }

    pub fn pdc_pairs(mean_pairs: f64, pair_statistics: PairStatistics, cutoff: usize) -> Result<Self> {
        Self::new(
            SourceKind::PdcPairs {
                mean_pairs,
                pair_statistics,
            },
            cutoff,
        )
    }

    pub fn fock(n: usize, cutoff: usize) -> Result<Self> {
        Self::new(SourceKind::Fock { n }, cutoff)
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<SourceKind>, cutoff: usize) -> Result<Self> {
        Self::new(
            SourceKind::Mixture {
                weights,
                components,
            },
            cutoff,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff < MIN_CUTOFF {
            return Err(Error::invalid(
                "cutoff",
                format!("need cutoff >= {MIN_CUTOFF}, got {}", self.cutoff),
            ));
        }
        validate_kind(&self.kind, self.cutoff)
    }

    /// Evaluates the source on `0..=cutoff`.
    ///
    /// Mass beyond the cutoff is redistributed by renormalization when it is
    /// below [`MAX_TRUNCATION_LOSS`]; larger losses are reported as
    /// [`Error::TruncationLoss`]. Mixtures are the weighted sum of their
    /// individually evaluated components.
    pub fn make_distribution(&self) -> Result<PhotonDistribution> {
        self.validate()?;
        let lf = LogFactorials::new(self.cutoff);
        let probs = evaluate(&self.kind, self.cutoff, &lf)?;
        PhotonDistribution::physical(probs)
    }
}

fn validate_kind(kind: &SourceKind, cutoff: usize) -> Result<()> {
    match kind {
        SourceKind::Poisson { mean } => check_mean("mean", *mean),
        SourceKind::PdcPairs { mean_pairs, .. } => check_mean("mean_pairs", *mean_pairs),
        SourceKind::Fock { n } if *n > cutoff => Err(Error::invalid(
            "n",
            format!("Fock number {n} exceeds cutoff {cutoff}"),
        )),
        SourceKind::Fock { .. } => Ok(()),
        SourceKind::Mixture {
            weights,
            components,
        } => {
            if weights.is_empty() || weights.len() != components.len() {
                return Err(Error::invalid(
                    "weights",
                    format!(
                        "{} weights for {} components",
                        weights.len(),
                        components.len()
                    ),
                ));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid("weights", "weights must be finite and >= 0"));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::invalid(
                    "weights",
                    format!("weights sum to {total}, expected 1"),
                ));
            }
            components.iter().try_for_each(|c| validate_kind(c, cutoff))
        }
    }
}

fn check_mean(name: &'static str, mean: f64) -> Result<()> {
    if mean.is_finite() && mean >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and >= 0, got {mean}")))
    }
}

fn evaluate(kind: &SourceKind, cutoff: usize, lf: &LogFactorials) -> Result<Vec<f64>> {
    let raw = match kind {
        SourceKind::Poisson { mean } => (0..=cutoff).map(|n| poisson_pmf(*mean, n, lf)).collect(),
        SourceKind::PdcPairs {
            mean_pairs,
            pair_statistics,
        } => {
            let mut probs = vec![0.0; cutoff + 1];
            for pairs in 0..=cutoff / 2 {
                probs[2 * pairs] = pair_statistics.pmf(*mean_pairs, pairs, lf);
            }
            probs
        }
        SourceKind::Fock { n } => {
            let mut probs = vec![0.0; cutoff + 1];
            probs[*n] = 1.0;
            probs
        }
        SourceKind::Mixture {
            weights,
            components,
        } => {
            let mut probs = vec![0.0; cutoff + 1];
            for (w, c) in weights.iter().zip(components) {
                let part = evaluate(c, cutoff, lf)?;
                for (acc, p) in probs.iter_mut().zip(part) {
                    *acc += w * p;
                }
            }
            return Ok(probs);
        }
    };
    renormalize_truncated(raw, cutoff)
}

fn renormalize_truncated(mut probs: Vec<f64>, cutoff: usize) -> Result<Vec<f64>> {
    let kept: f64 = probs.iter().sum();
    let lost = 1.0 - kept;
    if lost > MAX_TRUNCATION_LOSS {
        return Err(Error::TruncationLoss {
            cutoff,
            lost_mass: lost,
            limit: MAX_TRUNCATION_LOSS,
        });
    }
    probs.iter_mut().for_each(|p| *p /= kept);
    Ok(probs)
}

/// Flat JSON form of a source: `kind`, `mean`, `pair_statistics`, `n`,
/// `weights`, `components`, `cutoff`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDoc {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_statistics: Option<PairStatistics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<SourceDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
}

impl SourceDoc {
    fn into_kind(self) -> Result<SourceKind> {
        let need_mean = |m: Option<f64>| m.ok_or_else(|| Error::invalid("mean", "missing"));
        Ok(match self.kind.as_str() {
            "poisson" => SourceKind::Poisson {
                mean: need_mean(self.mean)?,
            },
            "pdc_pairs" => SourceKind::PdcPairs {
                mean_pairs: need_mean(self.mean)?,
                pair_statistics: self.pair_statistics.unwrap_or_default(),
            },
            "fock" => SourceKind::Fock {
                n: self.n.ok_or_else(|| Error::invalid("n", "missing"))?,
            },
            "mixture" => SourceKind::Mixture {
                weights: self
                    .weights
                    .ok_or_else(|| Error::invalid("weights", "missing"))?,
                components: self
                    .components
                    .ok_or_else(|| Error::invalid("components", "missing"))?
                    .into_iter()
                    .map(SourceDoc::into_kind)
                    .collect::<Result<_>>()?,
            },
            other => return Err(Error::invalid("kind", format!("unknown source kind `{other}`"))),
        })
    }

    fn from_kind(kind: SourceKind, cutoff: Option<usize>) -> Self {
        let mut doc = SourceDoc {
            kind: String::new(),
            mean: None,
            pair_statistics: None,
            n: None,
            weights: None,
            components: None,
            cutoff,
        };
        match kind {
            SourceKind::Poisson { mean } => {
                doc.kind = "poisson".into();
                doc.mean = Some(mean);
            }
            SourceKind::PdcPairs {
                mean_pairs,
                pair_statistics,
            } => {
                doc.kind = "pdc_pairs".into();
                doc.mean = Some(mean_pairs);
                doc.pair_statistics = Some(pair_statistics);
            }
            SourceKind::Fock { n } => {
                doc.kind = "fock".into();
                doc.n = Some(n);
            }
            SourceKind::Mixture {
                weights,
                components,
            } => {
                doc.kind = "mixture".into();
                doc.weights = Some(weights);
                doc.components = Some(
                    components
                        .into_iter()
                        .map(|c| SourceDoc::from_kind(c, None))
                        .collect(),
                );
            }
        }
        doc
    }
}

impl TryFrom<SourceDoc> for SourceSpec {
    type Error = Error;

    fn try_from(doc: SourceDoc) -> Result<Self> {
        let cutoff = doc.cutoff.unwrap_or(DEFAULT_CUTOFF);
        SourceSpec::new(doc.into_kind()?, cutoff)
    }
}

impl From<SourceSpec> for SourceDoc {
    fn from(spec: SourceSpec) -> Self {
        SourceDoc::from_kind(spec.kind, Some(spec.cutoff))
    }
}
