//! Detector transfer matrices: binomial loss, additive dark counts, and the
//! truncated inversion used to recover source statistics from detected ones.
//!
//! Matrices act on column vectors indexed by photon number, `f = M p`, with
//! rows indexed by the detected count and columns by the incident count.

use crate::distribution::{PhotonDistribution, Sign};
use crate::error::{Error, Result};
use crate::math::LogFactorials;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Leakage above the cutoff tolerated by [`TransferMatrix::apply`].
pub const MAX_LEAKAGE: f64 = 1e-6;

/// Default 1-norm condition number above which inversion attaches a warning.
pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e12;

/// Order in which loss and dark counts act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOrder {
    /// Photons are thinned first, then dark counts are added.
    #[default]
    DarkAfterLoss,
    /// Dark counts are added first and are subject to loss as well.
    DarkBeforeLoss,
}

/// Dense `(N+1)×(N+1)` photon-number transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    entries: DMatrix<f64>,
    eta: f64,
    dark_mean: f64,
}

impl TransferMatrix {
    pub fn identity(cutoff: usize) -> Self {
        TransferMatrix {
            entries: DMatrix::identity(cutoff + 1, cutoff + 1),
            eta: 1.0,
            dark_mean: 0.0,
        }
    }

    /// Entry `(i, j) = C(j, i) η^i (1-η)^(j-i)` for `j >= i`.
    pub fn binomial_loss(eta: f64, cutoff: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid("eta", format!("must lie in [0, 1], got {eta}")));
        }
        let lf = LogFactorials::new(cutoff);
        let entries = DMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| {
            if i > j {
                return 0.0;
            }
            if eta == 1.0 {
                return if i == j { 1.0 } else { 0.0 };
            }
            if eta == 0.0 {
                return if i == 0 { 1.0 } else { 0.0 };
            }
            let ln = lf.ln_choose(j, i) + i as f64 * eta.ln() + (j - i) as f64 * (1.0 - eta).ln();
            ln.exp()
        });
        Ok(TransferMatrix {
            entries,
            eta,
            dark_mean: 0.0,
        })
    }

    /// Entry `(i, j) = e^{-ν} ν^(i-j) / (i-j)!` for `i >= j`: Poisson-distributed
    /// additive counts.
    pub fn dark_convolution(dark_mean: f64, cutoff: usize) -> Result<Self> {
        if !(dark_mean.is_finite() && dark_mean >= 0.0) {
            return Err(Error::invalid(
                "dark_mean",
                format!("must be finite and >= 0, got {dark_mean}"),
            ));
        }
        let lf = LogFactorials::new(cutoff);
        let entries = DMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| {
            if i < j {
                0.0
            } else {
                crate::math::poisson_pmf(dark_mean, i - j, &lf)
            }
        });
        Ok(TransferMatrix {
            entries,
            eta: 1.0,
            dark_mean,
        })
    }

    /// Full detector model for efficiency `eta` and dark mean `dark_mean`.
    pub fn detector(eta: f64, dark_mean: f64, cutoff: usize, order: ChannelOrder) -> Result<Self> {
        let loss = Self::binomial_loss(eta, cutoff)?;
        let dark = Self::dark_convolution(dark_mean, cutoff)?;
        match order {
            ChannelOrder::DarkAfterLoss => dark.compose(&loss),
            ChannelOrder::DarkBeforeLoss => loss.compose(&dark),
        }
    }

    /// `self ∘ inner`, i.e. `inner` acts first.
    pub fn compose(&self, inner: &TransferMatrix) -> Result<Self> {
        if self.cutoff() != inner.cutoff() {
            return Err(Error::CutoffMismatch {
                left: self.cutoff(),
                right: inner.cutoff(),
            });
        }
        Ok(TransferMatrix {
            entries: &self.entries * &inner.entries,
            eta: self.eta * inner.eta,
            dark_mean: self.dark_mean + inner.dark_mean,
        })
    }

    pub fn cutoff(&self) -> usize {
        self.entries.nrows() - 1
    }

    /// Nominal overall efficiency.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Nominal dark counts per gate.
    pub fn dark_mean(&self) -> f64 {
        self.dark_mean
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, detected: usize, incident: usize) -> f64 {
        self.entries[(detected, incident)]
    }

    /// Probability that an input of `incident` photons stays within the cutoff.
    pub fn column_mass(&self, incident: usize) -> f64 {
        self.entries.column(incident).sum()
    }

    /// Forward channel `f = M p`.
    pub fn apply(&self, p: &PhotonDistribution) -> Result<ChannelOutput> {
        if p.cutoff() != self.cutoff() {
            return Err(Error::CutoffMismatch {
                left: self.cutoff(),
                right: p.cutoff(),
            });
        }
        if !p.is_physical() {
            return Err(Error::invalid("p", "forward channel needs a physical distribution"));
        }
        let input = DVector::from_column_slice(p.probs());
        let out = &self.entries * input;
        let leakage = (p.total() - out.sum()).max(0.0);
        if leakage > MAX_LEAKAGE {
            return Err(Error::TruncationLoss {
                cutoff: self.cutoff(),
                lost_mass: leakage,
                limit: MAX_LEAKAGE,
            });
        }
        Ok(ChannelOutput {
            distribution: PhotonDistribution::physical(out.iter().map(|v| v.max(0.0)).collect())?,
            leakage,
        })
    }

    /// Solves `M p = f` on the truncated space by LU with partial pivoting.
    ///
    /// The result is [`Sign::Signed`]: negative entries produced by truncation
    /// are kept as they are. A condition number above `condition_threshold`
    /// attaches a warning but still returns the solution.
    pub fn invert(&self, f: &PhotonDistribution, condition_threshold: f64) -> Result<Reconstruction> {
        if f.cutoff() != self.cutoff() {
            return Err(Error::CutoffMismatch {
                left: self.cutoff(),
                right: f.cutoff(),
            });
        }
        if self.eta == 0.0 || self.entries.diagonal().iter().any(|d| *d == 0.0) && self.dark_mean == 0.0 {
            return Err(Error::SingularChannel);
        }
        let lu = self.entries.clone().lu();
        let rhs = DVector::from_column_slice(f.probs());
        let mut p = lu.solve(&rhs).ok_or(Error::SingularChannel)?;
        // one round of iterative refinement
        let residual = &rhs - &self.entries * &p;
        if let Some(delta) = lu.solve(&residual) {
            p += delta;
        }
        let inverse = lu.try_inverse().ok_or(Error::SingularChannel)?;
        let condition_number = one_norm(&self.entries) * one_norm(&inverse);
        let ill_conditioned = !(condition_number <= condition_threshold);
        let warning = ill_conditioned.then(|| {
            format!(
                "transfer matrix condition number {condition_number:.3e} exceeds {condition_threshold:.3e}"
            )
        });
        Ok(Reconstruction {
            distribution: PhotonDistribution::signed(p.iter().copied().collect())?,
            condition_number,
            ill_conditioned,
            warning,
        })
    }

    /// Dense row-major CSV, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv) back into a matrix.
    pub fn entries_from_csv(text: &str) -> Result<DMatrix<f64>> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse {
                line: 0,
                reason: "transfer matrix must be square".into(),
            });
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Result of [`TransferMatrix::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub distribution: PhotonDistribution,
    /// Probability pushed above the cutoff.
    pub leakage: f64,
}

/// Result of [`TransferMatrix::invert`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub distribution: PhotonDistribution,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub warning: Option<String>,
}

/// Summary of the negative entries of a reconstructed distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativityReport {
    /// Smallest entry, or 0 when nothing is negative.
    pub most_negative: f64,
    pub most_negative_index: Option<usize>,
    /// Photon numbers carrying negative probability, ascending.
    pub negative_indices: Vec<usize>,
    /// Magnitude of the summed negative entries.
    pub negative_mass: f64,
    /// `Σ p_n - 1`.
    pub sum_deviation: f64,
}

impl NegativityReport {
    pub fn has_negativity(&self) -> bool {
        !self.negative_indices.is_empty()
    }
}

pub fn truncation_diagnostics(p: &PhotonDistribution) -> NegativityReport {
    let mut most_negative = 0.0;
    let mut most_negative_index = None;
    let mut negative_indices = Vec::new();
    let mut negative_mass = 0.0;
    for (n, &v) in p.probs().iter().enumerate() {
        if v < 0.0 {
            negative_indices.push(n);
            negative_mass -= v;
            if v < most_negative {
                most_negative = v;
                most_negative_index = Some(n);
            }
        }
    }
    NegativityReport {
        most_negative,
        most_negative_index,
        negative_indices,
        negative_mass,
        sum_deviation: p.total() - 1.0,
    }
}

impl Reconstruction {
    pub fn diagnostics(&self) -> NegativityReport {
        truncation_diagnostics(&self.distribution)
    }

    pub fn is_signed(&self) -> bool {
        self.distribution.sign() == Sign::Signed
    }
}
