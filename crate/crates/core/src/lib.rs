//! Photon-number statistics of pulsed pair sources seen through a lossy,
//! photon-number-resolving detector.
//!
//! The crate covers the whole chain: source models ([`distribution`]),
//! detector transfer matrices and their inversion ([`channel`]), the
//! `Γ` nonclassicality statistic and its classical bound ([`stats`]), a
//! Monte Carlo model of gated pulse-area acquisition ([`acquisition`]),
//! Gaussian peak fitting of pulse-area histograms ([`fitting`]), and the
//! end-to-end analysis used by the command-line tool ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod channel;
pub mod distribution;
pub mod error;
pub mod fitting;
pub mod math;
pub mod pipeline;
pub mod stats;

pub use channel::{ChannelOrder, NegativityReport, Reconstruction, TransferMatrix};
pub use distribution::{PairStatistics, PhotonDistribution, SourceKind, SourceSpec};
pub use error::{Error, Result};
pub use fitting::{FitMode, FitOptions, PeakFitResult};
pub use pipeline::{Analysis, RunConfig};
pub use stats::{GammaReport, ParityReport};
