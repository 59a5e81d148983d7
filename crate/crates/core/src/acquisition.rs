//! Monte Carlo model of gated pulse-area acquisition.
//!
//! Each gate draws an incident photon number from the source, thins every
//! photon independently with probability `η`, adds Poisson dark counts, and
//! produces one pulse-area sample whose mean grows linearly with the
//! detected count.
//!
//! Gates are simulated in fixed blocks of [`BLOCK_GATES`]. Block `b` draws its
//! photon counts from ChaCha stream `2b` and its pulse areas from stream
//! `2b + 1` of the run seed, so any partition of blocks over worker shards
//! gives bit-identical results, and [`acquire`] matches
//! [`synthesize_histogram`] applied to [`simulate_gate_counts`].

use crate::channel::ChannelOrder;
use crate::distribution::{PairStatistics, PhotonDistribution, SourceSpec, MIN_CUTOFF};
use crate::error::{Error, Result};
use crate::math::{poisson_pmf, LogFactorials};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Gates per independently seeded block.
pub const BLOCK_GATES: usize = 1 << 16;

/// Pairs per gate per µW that give `P_1 ≈ 0.0818` at 1 µW with `η = 0.67`.
pub const DEFAULT_PAIRS_PER_UW: f64 = 0.2253;

pub const HISTOGRAM_SCHEMA_VERSION: u32 = 1;

/// Detector efficiency, dark counts and pulse-area response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub eta: f64,
    pub dark_mean: f64,
    /// Pulse area per detected photon.
    pub gain: f64,
    /// Center of the zero-photon pedestal.
    pub offset: f64,
    /// Pedestal width.
    pub sigma0: f64,
    /// Peak `k` has width `sqrt(sigma0² + k·sigma_per_photon²)`.
    pub sigma_per_photon: f64,
    /// Areas above this saturate the digitizer and are tallied as overflow.
    pub adc_max: f64,
    #[serde(default)]
    pub order: ChannelOrder,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            eta: 0.67,
            dark_mean: 4e-4,
            gain: 100.0,
            offset: 50.0,
            sigma0: 6.0,
            sigma_per_photon: 6.0,
            adc_max: 1100.0,
            order: ChannelOrder::DarkAfterLoss,
        }
    }
}

impl DetectorModel {
    pub fn peak_width(&self, k: usize) -> f64 {
        (self.sigma0 * self.sigma0 + k as f64 * self.sigma_per_photon * self.sigma_per_photon).sqrt()
    }

    pub fn peak_center(&self, k: usize) -> f64 {
        self.offset + k as f64 * self.gain
    }

    /// Lower edge of the digitized range, five pedestal widths below the pedestal.
    pub fn range_lo(&self) -> f64 {
        self.offset - 5.0 * self.sigma0
    }

    /// Checks parameter ranges and that peaks up to `cutoff` are resolvable
    /// (`gain > 4 × width`).
    pub fn validate(&self, cutoff: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.dark_mean.is_finite() && self.dark_mean >= 0.0) {
            return Err(Error::invalid("dark_mean", "must be finite and >= 0"));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid("gain", "must be > 0"));
        }
        if !(self.sigma0 > 0.0 && self.sigma_per_photon >= 0.0) {
            return Err(Error::invalid("sigma0", "peak widths must be > 0"));
        }
        if !self.offset.is_finite() || !(self.adc_max > self.range_lo()) {
            return Err(Error::invalid("adc_max", "must lie above the pedestal range"));
        }
        let widest = self.peak_width(cutoff);
        if self.gain <= 4.0 * widest {
            return Err(Error::invalid(
                "gain",
                format!(
                    "gain {} does not resolve peak {cutoff} of width {widest:.3} (need gain > 4 x width)",
                    self.gain
                ),
            ));
        }
        Ok(())
    }
}

/// Pump powers and the pair-rate calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpModel {
    /// Pump powers in µW.
    pub powers: Vec<f64>,
    /// Mean pairs per gate per µW.
    #[serde(rename = "pairs_per_uW", default = "default_pairs_per_uw")]
    pub pairs_per_uw: f64,
    #[serde(default)]
    pub pair_statistics: PairStatistics,
}

fn default_pairs_per_uw() -> f64 {
    DEFAULT_PAIRS_PER_UW
}

impl PumpModel {
    pub fn validate(&self) -> Result<()> {
        if self.powers.is_empty() {
            return Err(Error::invalid("powers", "pump power list is empty"));
        }
        if self.powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("powers", "pump powers must be > 0"));
        }
        if !(self.pairs_per_uw.is_finite() && self.pairs_per_uw > 0.0) {
            return Err(Error::invalid("pairs_per_uW", "must be > 0"));
        }
        Ok(())
    }

    pub fn mean_pairs(&self, power_uw: f64) -> f64 {
        self.pairs_per_uw * power_uw
    }
}

/// Inverse-CDF sampler over a finite table.
#[derive(Debug, Clone)]
struct TableSampler {
    cdf: Vec<f64>,
}

impl TableSampler {
    fn new(pmf: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        TableSampler { cdf }
    }

    #[inline]
    fn sample(&self, u: f64) -> usize {
        let scaled = u * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|c| *c <= scaled).min(self.cdf.len() - 1)
    }
}

fn dark_table(dark_mean: f64) -> Option<TableSampler> {
    if dark_mean == 0.0 {
        return None;
    }
    let max = 64;
    let lf = LogFactorials::new(max);
    let mut pmf = Vec::new();
    let mut acc = 0.0;
    for k in 0..=max {
        let p = poisson_pmf(dark_mean, k, &lf);
        pmf.push(p);
        acc += p;
        if 1.0 - acc < 1e-17 {
            break;
        }
    }
    Some(TableSampler::new(&pmf))
}

/// Per-gate detection process.
#[derive(Debug, Clone)]
struct GateModel {
    source: TableSampler,
    dark: Option<TableSampler>,
    eta: f64,
    order: ChannelOrder,
}

impl GateModel {
    fn new(source: &PhotonDistribution, det: &DetectorModel) -> Self {
        GateModel {
            source: TableSampler::new(source.probs()),
            dark: dark_table(det.dark_mean),
            eta: det.eta,
            order: det.order,
        }
    }

    #[inline]
    fn thin<R: Rng>(&self, n: usize, rng: &mut R) -> usize {
        (0..n).filter(|_| rng.random::<f64>() < self.eta).count()
    }

    #[inline]
    fn dark<R: Rng>(&self, rng: &mut R) -> usize {
        self.dark.as_ref().map_or(0, |d| d.sample(rng.random()))
    }

    #[inline]
    fn detect<R: Rng>(&self, rng: &mut R) -> usize {
        let incident = self.source.sample(rng.random());
        match self.order {
            ChannelOrder::DarkAfterLoss => self.thin(incident, rng) + self.dark(rng),
            ChannelOrder::DarkBeforeLoss => {
                let with_dark = incident + self.dark(rng);
                self.thin(with_dark, rng)
            }
        }
    }
}

fn block_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn block_ranges(n_gates: usize) -> Vec<(usize, std::ops::Range<usize>)> {
    (0..n_gates.div_ceil(BLOCK_GATES))
        .map(|b| (b, b * BLOCK_GATES..((b + 1) * BLOCK_GATES).min(n_gates)))
        .collect()
}

/// Splits blocks into `shards` contiguous groups, runs each group in
/// parallel, and returns the group results in block order.
fn run_sharded<T, F>(n_gates: usize, shards: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[(usize, std::ops::Range<usize>)]) -> T + Sync + Send,
{
    let blocks = block_ranges(n_gates);
    let per_shard = blocks.len().div_ceil(shards.max(1)).max(1);
    blocks.par_chunks(per_shard).map(&work).collect()
}

/// Simulates `n_gates` gates and returns the detected count of each.
pub fn simulate_gate_counts(
    source: &SourceSpec,
    det: &DetectorModel,
    n_gates: usize,
    seed: u64,
    shards: usize,
) -> Result<Vec<u32>> {
    if n_gates == 0 {
        return Err(Error::invalid("n_gates", "must be >= 1"));
    }
    det.validate(MIN_CUTOFF)?;
    let model = GateModel::new(&source.make_distribution()?, det);
    let parts = run_sharded(n_gates, shards, |blocks| {
        let mut out = Vec::new();
        for (b, range) in blocks {
            let mut rng = block_rng(seed, 2 * *b as u64);
            out.extend(range.clone().map(|_| model.detect(&mut rng) as u32));
        }
        out
    });
    Ok(parts.concat())
}

/// Binned pulse areas.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaHistogram {
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
    overflow: u64,
    n_gates: u64,
}

impl AreaHistogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>, overflow: u64, n_gates: u64) -> Result<Self> {
        if bin_edges.len() < 2 || bin_edges.len() != counts.len() + 1 {
            return Err(Error::invalid(
                "bin_edges",
                format!("{} edges for {} bins", bin_edges.len(), counts.len()),
            ));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) || bin_edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("bin_edges", "edges must be finite and strictly increasing"));
        }
        let binned: u64 = counts.iter().sum();
        if binned + overflow > n_gates {
            return Err(Error::invalid(
                "n_gates",
                format!("{binned} binned + {overflow} overflow exceeds {n_gates} gates"),
            ));
        }
        Ok(AreaHistogram {
            bin_edges,
            counts,
            overflow,
            n_gates,
        })
    }

    /// `bins` equal-width bins over `[lo, hi]`.
    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let width = (hi - lo) / bins as f64;
        (0..=bins).map(|i| lo + i as f64 * width).collect()
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn n_gates(&self) -> u64 {
        self.n_gates
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Bin holding `x`; values below the range land in the first bin.
    fn bin_index(&self, x: f64) -> usize {
        self.bin_edges[1..]
            .partition_point(|e| *e <= x)
            .min(self.counts.len() - 1)
    }

    /// CSV with header `bin_center,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,count\n");
        for (c, n) in self.bin_centers().iter().zip(&self.counts) {
            writeln!(out, "{c},{n}").unwrap();
        }
        out
    }

    /// Parses `bin_center,count` CSV. Edges are placed midway between
    /// centers; with a sidecar, its exact edges, overflow and gate count are
    /// used instead.
    pub fn from_csv(text: &str, sidecar: Option<&HistogramSidecar>) -> Result<Self> {
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("bin_center")) {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                line: idx + 1,
                reason,
            };
            let (c, n) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `bin_center,count`".into()))?;
            centers.push(c.trim().parse::<f64>().map_err(|e| parse_err(e.to_string()))?);
            let n = n.trim();
            let count = n
                .parse::<u64>()
                .or_else(|_| {
                    // instrument exports sometimes write integral counts as floats
                    n.parse::<f64>().map_err(|e| e.to_string()).and_then(|v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as u64)
                        } else {
                            Err(format!("count `{n}` is not a non-negative integer"))
                        }
                    })
                })
                .map_err(parse_err)?;
            counts.push(count);
        }
        if counts.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        let binned: u64 = counts.iter().sum();
        match sidecar {
            Some(meta) => {
                if meta.bin_edges.len() != counts.len() + 1 {
                    return Err(Error::invalid("bin_edges", "sidecar edges do not match the CSV bins"));
                }
                Self::new(meta.bin_edges.clone(), counts, meta.overflow, meta.n_gates)
            }
            None => {
                if centers.len() < 2 {
                    return Err(Error::invalid("bin_center", "need at least two bins to infer edges"));
                }
                let mut edges = Vec::with_capacity(centers.len() + 1);
                edges.push(centers[0] - 0.5 * (centers[1] - centers[0]));
                edges.extend(centers.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                let k = centers.len();
                edges.push(centers[k - 1] + 0.5 * (centers[k - 1] - centers[k - 2]));
                Self::new(edges, counts, 0, binned)
            }
        }
    }

    pub fn sidecar(&self, model: Option<DetectorModel>) -> HistogramSidecar {
        HistogramSidecar {
            schema_version: HISTOGRAM_SCHEMA_VERSION,
            n_gates: self.n_gates,
            overflow: self.overflow,
            bin_edges: self.bin_edges.clone(),
            model,
        }
    }

    fn merge(&mut self, other: &AreaHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
        self.n_gates += other.n_gates;
    }

    fn empty_like(edges: &[f64]) -> Self {
        AreaHistogram {
            bin_edges: edges.to_vec(),
            counts: vec![0; edges.len() - 1],
            overflow: 0,
            n_gates: 0,
        }
    }
}

/// JSON companion of the histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub schema_version: u32,
    pub n_gates: u64,
    pub overflow: u64,
    pub bin_edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<DetectorModel>,
}

/// Pulse-area sampler for a detector.
struct AreaModel<'a> {
    det: &'a DetectorModel,
}

impl AreaModel<'_> {
    #[inline]
    fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.det.peak_center(k) + self.det.peak_width(k) * z
    }

    #[inline]
    fn record<R: Rng>(&self, hist: &mut AreaHistogram, k: usize, rng: &mut R) {
        let area = self.sample(k, rng);
        hist.n_gates += 1;
        if area > self.det.adc_max {
            hist.overflow += 1;
        } else {
            let idx = hist.bin_index(area);
            hist.counts[idx] += 1;
        }
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 10 {
        return Err(Error::invalid("bins", format!("need at least 10 bins, got {bins}")));
    }
    Ok(())
}

/// One pulse-area sample per gate, binned over `[offset - 5·sigma0, adc_max]`.
/// Areas above `adc_max` go to overflow; areas below the range are clamped
/// into the first bin.
pub fn synthesize_histogram(
    counts: &[u32],
    det: &DetectorModel,
    bins: usize,
    seed: u64,
    shards: usize,
) -> Result<AreaHistogram> {
    check_bins(bins)?;
    det.validate(MIN_CUTOFF)?;
    let edges = AreaHistogram::uniform_edges(det.range_lo(), det.adc_max, bins);
    let areas = AreaModel { det };
    let parts = run_sharded(counts.len(), shards, |blocks| {
        let mut hist = AreaHistogram::empty_like(&edges);
        for (b, range) in blocks {
            let mut rng = block_rng(seed, 2 * *b as u64 + 1);
            for &k in &counts[range.clone()] {
                areas.record(&mut hist, k as usize, &mut rng);
            }
        }
        hist
    });
    Ok(merge_histograms(&edges, parts))
}

fn merge_histograms(edges: &[f64], parts: Vec<AreaHistogram>) -> AreaHistogram {
    let mut total = AreaHistogram::empty_like(edges);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Histogram together with the per-gate detected-count frequencies it was
/// built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub histogram: AreaHistogram,
    /// `tally[k]` gates detected `k` photons.
    pub tally: Vec<u64>,
}

impl Acquisition {
    pub fn n_gates(&self) -> u64 {
        self.tally.iter().sum()
    }

    /// Empirical detected-count distribution on `0..=cutoff`; gates above the
    /// cutoff are dropped without renormalizing.
    pub fn empirical_distribution(&self, cutoff: usize) -> Result<PhotonDistribution> {
        let n = self.n_gates() as f64;
        let probs = (0..=cutoff)
            .map(|k| self.tally.get(k).copied().unwrap_or(0) as f64 / n)
            .collect();
        PhotonDistribution::physical(probs)
    }
}

/// Streaming equivalent of `synthesize_histogram(simulate_gate_counts(..))`
/// that never stores per-gate counts.
pub fn acquire(
    source: &SourceSpec,
    det: &DetectorModel,
    n_gates: usize,
    bins: usize,
    seed: u64,
    shards: usize,
) -> Result<Acquisition> {
    if n_gates == 0 {
        return Err(Error::invalid("n_gates", "must be >= 1"));
    }
    check_bins(bins)?;
    det.validate(MIN_CUTOFF)?;
    let model = GateModel::new(&source.make_distribution()?, det);
    let edges = AreaHistogram::uniform_edges(det.range_lo(), det.adc_max, bins);
    let areas = AreaModel { det };
    let parts = run_sharded(n_gates, shards, |blocks| {
        let mut hist = AreaHistogram::empty_like(&edges);
        let mut tally: Vec<u64> = Vec::new();
        let mut counts = Vec::with_capacity(BLOCK_GATES);
        for (b, range) in blocks {
            let mut count_rng = block_rng(seed, 2 * *b as u64);
            counts.clear();
            counts.extend(range.clone().map(|_| model.detect(&mut count_rng)));
            let mut area_rng = block_rng(seed, 2 * *b as u64 + 1);
            for &k in &counts {
                if k >= tally.len() {
                    tally.resize(k + 1, 0);
                }
                tally[k] += 1;
                areas.record(&mut hist, k, &mut area_rng);
            }
        }
        (hist, tally)
    });
    let mut tally: Vec<u64> = Vec::new();
    let mut hists = Vec::with_capacity(parts.len());
    for (h, t) in parts {
        if t.len() > tally.len() {
            tally.resize(t.len(), 0);
        }
        for (a, b) in tally.iter_mut().zip(t) {
            *a += b;
        }
        hists.push(h);
    }
    Ok(Acquisition {
        histogram: merge_histograms(&edges, hists),
        tally,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::SourceKind;

    fn det(eta: f64, dark_mean: f64) -> DetectorModel {
        DetectorModel {
            eta,
            dark_mean,
            ..DetectorModel::default()
        }
    }

    #[test]
    fn blind_detector_reports_nothing() {
        let src = SourceSpec::pdc_pairs(0.5, PairStatistics::Poissonian, 30).unwrap();
        let counts = simulate_gate_counts(&src, &det(0.0, 0.0), 10_000, 3, 4).unwrap();
        assert!(counts.iter().all(|c| *c == 0));
    }

    #[test]
    fn thinning_single_photons() {
        let src = SourceSpec::fock(1, 10).unwrap();
        let n = 1_000_000;
        let counts = simulate_gate_counts(&src, &det(0.5, 0.0), n, 11, 8).unwrap();
        let ones = counts.iter().filter(|c| **c == 1).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - 0.5 * n as f64).abs() < 3.0 * sigma);
        assert!(counts.iter().all(|c| *c <= 1));
    }

    #[test]
    fn shard_count_does_not_change_results() {
        let src = SourceSpec::poisson(1.2, 20).unwrap();
        let d = det(0.67, 4e-4);
        let n = 3 * BLOCK_GATES + 17;
        let a = simulate_gate_counts(&src, &d, n, 5, 1).unwrap();
        let b = simulate_gate_counts(&src, &d, n, 5, 7).unwrap();
        assert_eq!(a, b);
        let ha = acquire(&src, &d, n, 300, 5, 1).unwrap();
        let hb = acquire(&src, &d, n, 300, 5, 3).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn streaming_matches_two_stage() {
        let src = SourceSpec::pdc_pairs(0.3, PairStatistics::Thermal, 40).unwrap();
        let d = det(0.67, 4e-4);
        let n = 2 * BLOCK_GATES + 5;
        let counts = simulate_gate_counts(&src, &d, n, 77, 2).unwrap();
        let hist = synthesize_histogram(&counts, &d, 400, 77, 5).unwrap();
        let acq = acquire(&src, &d, n, 400, 77, 4).unwrap();
        assert_eq!(acq.histogram, hist);
        for (k, t) in acq.tally.iter().enumerate() {
            assert_eq!(*t, counts.iter().filter(|c| **c as usize == k).count() as u64);
        }
    }

    #[test]
    fn histogram_accounts_for_every_gate() {
        let src = SourceSpec::pdc_pairs(2.0, PairStatistics::Poissonian, 40).unwrap();
        let acq = acquire(&src, &det(0.9, 0.01), 200_000, 250, 1, 4).unwrap();
        let h = &acq.histogram;
        assert!(h.overflow() > 0);
        assert_eq!(h.total() + h.overflow(), 200_000);
        assert_eq!(h.n_gates(), 200_000);
    }

    #[test]
    fn vacuum_histogram_is_one_pedestal() {
        let d = det(0.67, 0.0);
        let counts = vec![0u32; 50_000];
        let h = synthesize_histogram(&counts, &d, 500, 2, 2).unwrap();
        let centers = h.bin_centers();
        let mean: f64 = centers
            .iter()
            .zip(h.counts())
            .map(|(c, n)| c * *n as f64)
            .sum::<f64>()
            / h.total() as f64;
        assert!((mean - d.offset).abs() < 0.2);
        assert!(centers
            .iter()
            .zip(h.counts())
            .all(|(c, n)| *n == 0 || (c - d.offset).abs() < 8.0 * d.sigma0));
    }

    #[test]
    fn detector_validation() {
        assert!(det(1.5, 0.0).validate(10).is_err());
        assert!(DetectorModel::default().validate(10).is_ok());
        let blurry = DetectorModel {
            sigma_per_photon: 20.0,
            ..DetectorModel::default()
        };
        assert!(blurry.validate(10).is_err());
        let pump = PumpModel {
            powers: vec![],
            pairs_per_uw: 0.2,
            pair_statistics: PairStatistics::Poissonian,
        };
        assert!(pump.validate().is_err());
    }

    #[test]
    fn too_few_bins() {
        assert!(synthesize_histogram(&[0, 1], &DetectorModel::default(), 9, 0, 1).is_err());
    }

    #[test]
    fn histogram_csv_round_trip() {
        let src = SourceSpec::new(SourceKind::Poisson { mean: 2.0 }, 30).unwrap();
        let acq = acquire(&src, &det(0.8, 0.0), 20_000, 333, 8, 2).unwrap();
        let h = acq.histogram;
        let sidecar = h.sidecar(Some(det(0.8, 0.0)));
        let json = serde_json::to_string(&sidecar).unwrap();
        let sidecar: HistogramSidecar = serde_json::from_str(&json).unwrap();
        let back = AreaHistogram::from_csv(&h.to_csv(), Some(&sidecar)).unwrap();
        assert_eq!(back, h);
        let inferred = AreaHistogram::from_csv(&h.to_csv(), None).unwrap();
        assert_eq!(inferred.counts(), h.counts());
        for (a, b) in inferred.bin_edges().iter().zip(h.bin_edges()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
