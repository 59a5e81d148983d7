//! End-to-end runs: simulate an acquisition, analyze a histogram, reconstruct
//! the incident distribution and sweep the pump power.

use crate::acquisition::{acquire, Acquisition, AreaHistogram, DetectorModel, PumpModel};
use crate::channel::{NegativityReport, TransferMatrix, DEFAULT_CONDITION_THRESHOLD};
use crate::distribution::{PhotonDistribution, SourceSpec, DEFAULT_CUTOFF};
use crate::error::{Error, Result};
use crate::fitting::{areas_to_probabilities, detect_peaks, fit_peaks, FitOptions, PeakFitResult};
use crate::stats::{eta_from_ratio, gamma_significance, parity_test, GammaReport, ParityReport};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Version stamped into every JSON document the pipeline writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Cutoff for source distributions built from a pump power.
pub const TRUTH_CUTOFF: usize = 40;

/// Overflow fraction above which an analysis carries a warning.
const OVERFLOW_WARNING_FRACTION: f64 = 1e-3;

fn default_cutoff() -> usize {
    DEFAULT_CUTOFF
}

fn default_condition_threshold() -> f64 {
    DEFAULT_CONDITION_THRESHOLD
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required by `simulate`; `sweep` builds its sources from `pump`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<PumpModel>,
    pub n_gates: usize,
    /// Analysis and reconstruction cutoff.
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    pub seed: u64,
    /// Histogram bins; by default twenty per gain step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Parallel shards; 0 uses one per thread. Never changes results.
    #[serde(default)]
    pub shards: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "default_condition_threshold")]
    pub condition_threshold: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gates == 0 {
            return Err(Error::invalid("n_gates", "must be >= 1"));
        }
        if self.cutoff < crate::distribution::MIN_CUTOFF {
            return Err(Error::invalid("cutoff", "must be >= 3"));
        }
        if let Some(s) = &self.source {
            s.validate()?;
        }
        if let Some(p) = &self.pump {
            p.validate()?;
        }
        if !(self.condition_threshold > 1.0) {
            return Err(Error::invalid("condition_threshold", "must be > 1"));
        }
        self.detector.validate(crate::distribution::MIN_CUTOFF)
    }

    pub fn bins(&self) -> usize {
        self.bins.unwrap_or_else(|| default_bins(&self.detector))
    }

    pub fn shards(&self) -> usize {
        if self.shards == 0 {
            rayon::current_num_threads()
        } else {
            self.shards
        }
    }

    pub fn require_source(&self) -> Result<&SourceSpec> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::invalid("source", "missing from config"))
    }

    pub fn require_pump(&self) -> Result<&PumpModel> {
        self.pump
            .as_ref()
            .ok_or_else(|| Error::invalid("pump", "missing from config"))
    }
}

/// Twenty bins per gain step over the digitized range, at least ten.
pub fn default_bins(det: &DetectorModel) -> usize {
    let step = det.gain / 20.0;
    (((det.adc_max - det.range_lo()) / step).round() as usize).max(10)
}

/// Runs the acquisition described by `cfg`.
pub fn simulate(cfg: &RunConfig) -> Result<Acquisition> {
    acquire(
        cfg.require_source()?,
        &cfg.detector,
        cfg.n_gates,
        cfg.bins(),
        cfg.seed,
        cfg.shards(),
    )
}

/// Detected-count distribution the simulator samples from, on `0..=cutoff`.
pub fn channel_probabilities(source: &SourceSpec, det: &DetectorModel, cutoff: usize) -> Result<PhotonDistribution> {
    let truth = source.make_distribution()?;
    let m = TransferMatrix::detector(det.eta, det.dark_mean, truth.cutoff(), det.order)?;
    m.apply(&truth)?.distribution.resized(cutoff)
}

/// Summary written next to a simulated histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub n_gates: u64,
    pub overflow: u64,
    /// Gates that detected `k` photons.
    pub tally: Vec<u64>,
    /// `tally / n_gates`.
    pub empirical: Vec<f64>,
    /// Exact detected-count probabilities on `0..=cutoff`.
    pub channel_probabilities: Vec<f64>,
}

pub fn gate_summary(cfg: &RunConfig, acq: &Acquisition) -> Result<GateSummary> {
    let n = acq.n_gates();
    let expected = channel_probabilities(cfg.require_source()?, &cfg.detector, cfg.cutoff)?;
    Ok(GateSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        n_gates: n,
        overflow: acq.histogram.overflow(),
        tally: acq.tally.clone(),
        empirical: acq.tally.iter().map(|t| *t as f64 / n as f64).collect(),
        channel_probabilities: expected.into_probs(),
    })
}

/// Result of analyzing one histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub schema_version: u32,
    pub converged: bool,
    pub n_gates: u64,
    pub overflow: u64,
    /// Fitted detection probabilities indexed by photon number.
    pub probabilities: Vec<f64>,
    pub prob_std_errors: Vec<f64>,
    /// Fitted peak areas rounded to events.
    pub counts: Vec<u64>,
    pub gamma: GammaReport,
    pub parity: ParityReport,
    /// Efficiency implied by `P_2 / P_1`; absent without a one-photon peak.
    pub eta_estimate: Option<f64>,
    pub fit: PeakFitResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn distribution(&self) -> Result<PhotonDistribution> {
        PhotonDistribution::physical(self.probabilities.clone())
    }
}

/// Peak detection, fit, normalization, `Γ`, parity and efficiency.
pub fn analyze_histogram(h: &AreaHistogram, opts: &FitOptions) -> Result<Analysis> {
    let guesses = detect_peaks(h)?;
    let fit = fit_peaks(h, &guesses, opts)?;
    let measured = areas_to_probabilities(&fit)?;
    let mut gamma = gamma_significance(measured.count(1), measured.count(2), measured.count(3))?;
    if let Some(basis) = gamma.counts_basis.as_mut() {
        basis.n_total = Some(measured.counts.iter().sum());
    }
    let d = measured.distribution()?;
    let parity = parity_test(&d);
    let eta_estimate = eta_from_ratio(d.get(1), d.get(2)).ok();

    let mut warnings = fit.warnings.clone();
    let n = h.n_gates();
    if n > 0 && h.overflow() as f64 > OVERFLOW_WARNING_FRACTION * n as f64 {
        warnings.push(format!(
            "{} of {} gates overflowed the digitizer and are excluded from the normalization",
            h.overflow(),
            n
        ));
    }
    Ok(Analysis {
        schema_version: SCHEMA_VERSION,
        converged: fit.converged,
        n_gates: n,
        overflow: h.overflow(),
        probabilities: measured.probabilities,
        prob_std_errors: measured.std_errors,
        counts: measured.counts,
        gamma,
        parity,
        eta_estimate,
        fit,
        warnings,
    })
}

/// Reconstruction of the incident distribution from measured probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRun {
    pub matrix: TransferMatrix,
    pub distribution: PhotonDistribution,
    pub report: ReconstructionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub schema_version: u32,
    pub cutoff: usize,
    pub eta: f64,
    pub dark_mean: f64,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub negativity: NegativityReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Inverts the detector channel on `measured`, padded or truncated to `cutoff`.
pub fn reconstruct(
    measured: &PhotonDistribution,
    det: &DetectorModel,
    cutoff: usize,
    condition_threshold: f64,
) -> Result<ReconstructionRun> {
    if !(det.eta > 0.0) {
        return Err(Error::invalid("eta", "reconstruction needs eta > 0"));
    }
    let mut warnings = Vec::new();
    let dropped: f64 = measured.probs().iter().skip(cutoff + 1).sum();
    if dropped > 0.0 {
        warnings.push(format!("measured probability {dropped:e} above n = {cutoff} was dropped"));
    }
    let f = measured.resized(cutoff)?;
    let matrix = TransferMatrix::detector(det.eta, det.dark_mean, cutoff, det.order)?;
    let rec = matrix.invert(&f, condition_threshold)?;
    warnings.extend(rec.warning.clone());
    let report = ReconstructionReport {
        schema_version: SCHEMA_VERSION,
        cutoff,
        eta: det.eta,
        dark_mean: det.dark_mean,
        condition_number: rec.condition_number,
        ill_conditioned: rec.ill_conditioned,
        negativity: rec.diagnostics(),
        warnings,
    };
    Ok(ReconstructionRun {
        matrix,
        distribution: rec.distribution,
        report,
    })
}

/// One row of a pump sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub power_uw: f64,
    pub mean_pairs: f64,
    pub converged: bool,
    pub gamma: GammaReport,
}

/// Seed for the `i`-th power of a sweep.
fn sweep_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Simulates and analyzes one acquisition per pump power.
pub fn pump_sweep(
    pump: &PumpModel,
    det: &DetectorModel,
    n_gates: usize,
    seed: u64,
    bins: usize,
    shards: usize,
    fit: &FitOptions,
) -> Result<Vec<SweepPoint>> {
    pump.validate()?;
    pump.powers
        .iter()
        .enumerate()
        .map(|(i, &power)| {
            let mean_pairs = pump.mean_pairs(power);
            let source = SourceSpec::pdc_pairs(mean_pairs, pump.pair_statistics, TRUTH_CUTOFF)?;
            let acq = acquire(&source, det, n_gates, bins, sweep_seed(seed, i), shards)?;
            let analysis = analyze_histogram(&acq.histogram, fit)?;
            Ok(SweepPoint {
                power_uw: power,
                mean_pairs,
                converged: analysis.converged,
                gamma: analysis.gamma,
            })
        })
        .collect()
}

pub fn sweep_config(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    pump_sweep(
        cfg.require_pump()?,
        &cfg.detector,
        cfg.n_gates,
        cfg.seed,
        cfg.bins(),
        cfg.shards(),
        &cfg.fit,
    )
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("power_uW,gamma,std_error,n_std\n");
    for p in points {
        let n_std = p.gamma.n_std_above_classical.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.power_uw, p.gamma.gamma, p.gamma.std_error, n_std));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::PairStatistics;

    fn config(source: SourceSpec, n_gates: usize) -> RunConfig {
        RunConfig {
            source: Some(source),
            detector: DetectorModel::default(),
            pump: None,
            n_gates,
            cutoff: 10,
            seed: 7,
            bins: None,
            shards: 0,
            output_dir: None,
            fit: FitOptions::default(),
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
        }
    }

    #[test]
    fn default_bins_follow_gain() {
        assert_eq!(default_bins(&DetectorModel::default()), 216);
    }

    #[test]
    fn config_json_defaults() {
        let cfg = RunConfig::from_json(r#"{"source": {"kind": "poisson", "mean": 1.0}, "n_gates": 10, "seed": 1}"#).unwrap();
        assert_eq!(cfg.cutoff, 10);
        assert_eq!(cfg.detector, DetectorModel::default());
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::from_json(r#"{"n_gates": 10}"#).is_err());
        assert!(RunConfig::from_json(r#"{"n_gates": 10, "seed": 1, "colour": 2}"#).is_err());
    }

    #[test]
    fn pedestal_only_has_no_gamma() {
        let mut cfg = config(SourceSpec::poisson(1.0, 10).unwrap(), 20_000);
        cfg.detector.eta = 0.0;
        cfg.detector.dark_mean = 0.0;
        let acq = simulate(&cfg).unwrap();
        assert!(matches!(
            analyze_histogram(&acq.histogram, &cfg.fit),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn weak_pump_efficiency() {
        let mut cfg = config(SourceSpec::pdc_pairs(0.01, PairStatistics::Poissonian, 10).unwrap(), 2_000_000);
        cfg.detector.dark_mean = 0.0;
        let a = analyze_histogram(&simulate(&cfg).unwrap().histogram, &cfg.fit).unwrap();
        assert!(a.converged);
        assert!((a.eta_estimate.unwrap() - 0.67).abs() < 0.03, "{:?}", a.eta_estimate);
        assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_detector_reconstruction() {
        let det = DetectorModel {
            eta: 1.0,
            dark_mean: 0.0,
            ..DetectorModel::default()
        };
        let m = PhotonDistribution::physical(vec![0.5, 0.3, 0.2, 0.0]).unwrap();
        let run = reconstruct(&m, &det, 10, DEFAULT_CONDITION_THRESHOLD).unwrap();
        assert_eq!(run.distribution.cutoff(), 10);
        for n in 0..=10 {
            assert!((run.distribution.get(n) - m.get(n)).abs() < 1e-15);
        }
        assert!(!run.report.negativity.has_negativity());
    }

    #[test]
    fn reconstruction_needs_efficiency() {
        let det = DetectorModel {
            eta: 0.0,
            ..DetectorModel::default()
        };
        let m = PhotonDistribution::fock(0, 10).unwrap();
        assert!(reconstruct(&m, &det, 10, DEFAULT_CONDITION_THRESHOLD).is_err());
    }

    #[test]
    fn sweep_rejects_empty_powers() {
        let pump = PumpModel {
            powers: vec![],
            pairs_per_uw: 0.2253,
            pair_statistics: PairStatistics::Poissonian,
        };
        let r = pump_sweep(&pump, &DetectorModel::default(), 100, 1, 216, 1, &FitOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn sweep_csv_header() {
        let csv = sweep_to_csv(&[]);
        assert_eq!(csv, "power_uW,gamma,std_error,n_std\n");
    }
}
