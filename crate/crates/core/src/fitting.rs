//! Sum-of-Gaussians fits to pulse-area histograms.
//!
//! Each photon number contributes one Gaussian peak. The model integrates
//! every Gaussian over the bin edges, so the fitted amplitude of a peak is
//! directly its area in events (the number of gates with that photon
//! number), and the fit is exact on noiseless data regardless of bin width.
//! Photon numbers are assigned by ordinal position of the fitted centers,
//! starting from the pedestal at `k = 0`.

use crate::acquisition::AreaHistogram;
use crate::distribution::{PhotonDistribution, MIN_CUTOFF};
use crate::error::{Error, Result};
use crate::math::{normal_cdf, normal_pdf};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Starting point for one peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakGuess {
    pub center: f64,
    pub width: f64,
    /// Smoothed counts per bin at the center.
    pub height: f64,
    /// Events within two widths of the center, scaled to the full Gaussian.
    pub area: f64,
}

fn smooth3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Interpolated position where `s` first drops below `level`, walking from
/// `start` in direction `step`.
fn half_crossing(s: &[f64], x: &[f64], start: usize, level: f64, step: isize) -> Option<f64> {
    let mut i = start as isize;
    loop {
        let next = i + step;
        if next < 0 || next as usize >= s.len() {
            return None;
        }
        let (a, b) = (s[i as usize], s[next as usize]);
        if b < level {
            let t = (a - level) / (a - b);
            return Some(x[i as usize] + t * (x[next as usize] - x[i as usize]));
        }
        i = next;
    }
}

/// Finds peaks by a local-maximum scan of the histogram after a 3-bin moving
/// average. Maxima must rise significantly (three Poisson standard errors of
/// the smoothed count) above the valleys that separate them from higher
/// maxima, and a weaker maximum within 2.5 widths of a stronger one is
/// discarded. Any histogram with a nonzero bin yields at least one guess.
pub fn detect_peaks(h: &AreaHistogram) -> Result<Vec<PeakGuess>> {
    let raw: Vec<f64> = h.counts().iter().map(|c| *c as f64).collect();
    detect_peaks_in(h.bin_edges(), &raw)
}

pub fn detect_peaks_in(edges: &[f64], counts: &[f64]) -> Result<Vec<PeakGuess>> {
    if counts.is_empty() || counts.iter().all(|c| *c <= 0.0) {
        return Err(Error::EmptyHistogram);
    }
    let s = smooth3(counts);
    let x: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let n = s.len();
    let bin_width = (edges[n] - edges[0]) / n as f64;

    let mut candidates = Vec::new();
    for i in 0..n {
        let left_lower = i == 0 || s[i] > s[i - 1];
        let right_ok = i + 1 == n || s[i] >= s[i + 1];
        if s[i] > 0.0 && left_lower && right_ok {
            candidates.push(i);
        }
    }

    let significant = |i: usize| {
        let mut left_min = s[i];
        for j in (0..i).rev() {
            if s[j] > s[i] {
                break;
            }
            left_min = left_min.min(s[j]);
        }
        let mut right_min = s[i];
        for &v in &s[i + 1..] {
            if v > s[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        let base = left_min.max(right_min);
        let noise = (s[i].max(1.0) / 3.0).sqrt();
        s[i] - base > 3.0 * noise
    };

    let width_at = |i: usize| {
        let level = 0.5 * s[i];
        let left = half_crossing(&s, &x, i, level, -1);
        let right = half_crossing(&s, &x, i, level, 1);
        let hwhm = match (left, right) {
            (Some(l), Some(r)) => 0.5 * (r - l),
            (Some(l), None) => x[i] - l,
            (None, Some(r)) => r - x[i],
            (None, None) => bin_width,
        };
        // undo the broadening of the 3-bin average, roughly
        let sigma = hwhm / (2.0 * 2f64.ln()).sqrt();
        (sigma * sigma - bin_width * bin_width * 2.0 / 3.0).max(0.0).sqrt().max(0.5 * bin_width)
    };

    let mut kept: Vec<(usize, f64)> = Vec::new();
    let mut by_height: Vec<usize> = candidates.into_iter().filter(|i| significant(*i)).collect();
    by_height.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
    for i in by_height {
        let w = width_at(i);
        if kept.iter().all(|(j, wj)| (x[i] - x[*j]).abs() > 2.5 * wj.max(w)) {
            kept.push((i, w));
        }
    }
    if kept.is_empty() {
        let i = (0..n).max_by(|a, b| s[*a].total_cmp(&s[*b]).then(b.cmp(a))).unwrap();
        kept.push((i, width_at(i)));
    }
    kept.sort_by_key(|(i, _)| *i);

    Ok(kept
        .into_iter()
        .map(|(i, w)| {
            let area = x
                .iter()
                .zip(counts)
                .filter(|(xb, _)| (**xb - x[i]).abs() <= 2.0 * w)
                .map(|(_, c)| c)
                .sum::<f64>()
                / 0.9545;
            PeakGuess {
                center: x[i],
                width: w,
                height: s[i],
                area: area.max(1.0),
            }
        })
        .collect())
}

/// Whether peaks are fitted jointly or one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// All peaks in one model, so overlapping tails are shared correctly.
    #[default]
    Simultaneous,
    /// Each peak fitted alone within the bins closer to it than to its
    /// neighbours.
    PeakByPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub mode: FitMode,
    pub max_iterations: usize,
    /// Relative parameter change below which the fit has converged.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: FitMode::Simultaneous,
            max_iterations: 200,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPeak {
    pub photon_number: usize,
    pub center: f64,
    pub width: f64,
    /// Events in the peak.
    pub area: f64,
    /// Curvature-based uncertainty, never below `sqrt(area)`.
    pub area_std_error: f64,
    /// Peak counts per bin, `area · bin_width / (width · √(2π))`.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakFitResult {
    pub peaks: Vec<FittedPeak>,
    /// `sqrt(Σ (y - m)² / max(y, 1))`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Weighted bin data for a sum of bin-integrated Gaussians.
struct BinnedGaussians<'a> {
    lo: &'a [f64],
    hi: &'a [f64],
    y: &'a [f64],
    inv_sigma: Vec<f64>,
}

impl<'a> BinnedGaussians<'a> {
    fn new(lo: &'a [f64], hi: &'a [f64], y: &'a [f64]) -> Self {
        let inv_sigma = y.iter().map(|v| 1.0 / v.max(1.0).sqrt()).collect();
        BinnedGaussians { lo, hi, y, inv_sigma }
    }

    fn n_peaks(theta: &DVector<f64>) -> usize {
        theta.len() / 3
    }

    fn valid(theta: &DVector<f64>) -> bool {
        (0..Self::n_peaks(theta)).all(|k| theta[3 * k] >= 0.0 && theta[3 * k + 2] > 0.0)
            && theta.iter().all(|v| v.is_finite())
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.y.len());
        for b in 0..self.y.len() {
            let mut m = 0.0;
            for k in 0..Self::n_peaks(theta) {
                let (area, c, w) = (theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
                m += area * (normal_cdf((self.hi[b] - c) / w) - normal_cdf((self.lo[b] - c) / w));
            }
            r[b] = (self.y[b] - m) * self.inv_sigma[b];
        }
        r
    }

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.y.len(), theta.len());
        for b in 0..self.y.len() {
            let s = self.inv_sigma[b];
            for k in 0..Self::n_peaks(theta) {
                let (area, c, w) = (theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
                let zh = (self.hi[b] - c) / w;
                let zl = (self.lo[b] - c) / w;
                let (ph, pl) = (normal_pdf(zh), normal_pdf(zl));
                // residual is (y - m) / σ, hence the minus signs
                j[(b, 3 * k)] = -(normal_cdf(zh) - normal_cdf(zl)) * s;
                j[(b, 3 * k + 1)] = area / w * (ph - pl) * s;
                j[(b, 3 * k + 2)] = area / w * (zh * ph - zl * pl) * s;
            }
        }
        j
    }
}

struct LmOutcome {
    theta: DVector<f64>,
    chi2: f64,
    converged: bool,
    iterations: usize,
    covariance: Option<DMatrix<f64>>,
}

/// Marquardt-scaled Levenberg-Marquardt. The step test is scale-free: areas
/// and widths relative to themselves, centers relative to the width.
fn levenberg_marquardt(model: &BinnedGaussians, mut theta: DVector<f64>, opts: &FitOptions) -> LmOutcome {
    let mut r = model.residuals(&theta);
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let p = theta.len();

    while iterations < opts.max_iterations {
        iterations += 1;
        let j = model.jacobian(&theta);
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        let mut accepted = None;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match a.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial = &theta + &step;
            if !BinnedGaussians::valid(&trial) {
                lambda *= 10.0;
                continue;
            }
            let r_trial = model.residuals(&trial);
            let chi2_trial = r_trial.norm_squared();
            if chi2_trial <= chi2 * (1.0 + 1e-12) { // allow for rounding in χ² at the minimum
                accepted = Some((trial, r_trial, chi2_trial, step));
                lambda = (lambda * 0.1).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((trial, r_trial, chi2_trial, step)) = accepted else {
            // no downhill step exists at any damping: a numerical minimum
            converged = true;
            break;
        };
        theta = trial;
        r = r_trial;
        chi2 = chi2_trial;
        let small = (0..p / 3).all(|k| {
            let (a, w) = (theta[3 * k], theta[3 * k + 2]);
            step[3 * k].abs() <= opts.tolerance * (a.abs() + opts.tolerance)
                && step[3 * k + 1].abs() <= opts.tolerance * w
                && step[3 * k + 2].abs() <= opts.tolerance * w
        });
        if small {
            converged = true;
            break;
        }
    }

    let j = model.jacobian(&theta);
    let covariance = (j.transpose() * j).try_inverse();
    LmOutcome {
        theta,
        chi2,
        converged,
        iterations,
        covariance,
    }
}

fn initial_theta(guesses: &[PeakGuess]) -> DVector<f64> {
    DVector::from_iterator(
        3 * guesses.len(),
        guesses.iter().flat_map(|g| [g.area, g.center, g.width]),
    )
}

/// Fits a sum of Gaussians to a histogram, starting from `guesses`.
pub fn fit_peaks(h: &AreaHistogram, guesses: &[PeakGuess], opts: &FitOptions) -> Result<PeakFitResult> {
    let y: Vec<f64> = h.counts().iter().map(|c| *c as f64).collect();
    fit_counts(h.bin_edges(), &y, guesses, opts)
}

/// [`fit_peaks`] on raw, possibly non-integer, bin contents.
pub fn fit_counts(edges: &[f64], y: &[f64], guesses: &[PeakGuess], opts: &FitOptions) -> Result<PeakFitResult> {
    if guesses.is_empty() {
        return Err(Error::invalid("guesses", "need at least one peak guess"));
    }
    if edges.len() != y.len() + 1 {
        return Err(Error::invalid("bin_edges", "edge count must be one more than bin count"));
    }
    let lo = &edges[..y.len()];
    let hi = &edges[1..];
    let mut guesses = guesses.to_vec();
    guesses.sort_by(|a, b| a.center.total_cmp(&b.center));

    let mut params: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(guesses.len());
    let mut chi2 = 0.0;
    let mut converged = true;
    let mut iterations = 0;
    match opts.mode {
        FitMode::Simultaneous => {
            let model = BinnedGaussians::new(lo, hi, y);
            let out = levenberg_marquardt(&model, initial_theta(&guesses), opts);
            for k in 0..guesses.len() {
                let var = out
                    .covariance
                    .as_ref()
                    .map_or(f64::NAN, |c| c[(3 * k, 3 * k)]);
                params.push((out.theta[3 * k], out.theta[3 * k + 1], out.theta[3 * k + 2], var));
            }
            chi2 = out.chi2;
            converged = out.converged;
            iterations = out.iterations;
        }
        FitMode::PeakByPeak => {
            for (k, g) in guesses.iter().enumerate() {
                let left = if k == 0 {
                    g.center - 6.0 * g.width
                } else {
                    0.5 * (guesses[k - 1].center + g.center)
                };
                let right = if k + 1 == guesses.len() {
                    g.center + 6.0 * g.width
                } else {
                    0.5 * (g.center + guesses[k + 1].center)
                };
                let sel: Vec<usize> = (0..y.len()).filter(|b| hi[*b] > left && lo[*b] < right).collect();
                let (wlo, whi, wy): (Vec<f64>, Vec<f64>, Vec<f64>) = (
                    sel.iter().map(|b| lo[*b]).collect(),
                    sel.iter().map(|b| hi[*b]).collect(),
                    sel.iter().map(|b| y[*b]).collect(),
                );
                let model = BinnedGaussians::new(&wlo, &whi, &wy);
                let out = levenberg_marquardt(&model, initial_theta(std::slice::from_ref(g)), opts);
                let var = out.covariance.as_ref().map_or(f64::NAN, |c| c[(0, 0)]);
                params.push((out.theta[0], out.theta[1], out.theta[2], var));
                chi2 += out.chi2;
                converged &= out.converged;
                iterations = iterations.max(out.iterations);
            }
        }
    }

    params.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut warnings = Vec::new();
    for (k, pair) in params.windows(2).enumerate() {
        let gap = pair[1].1 - pair[0].1;
        if gap < 0.5 * pair[0].2.max(pair[1].2) {
            warnings.push(format!(
                "peaks {k} and {} overlap (centers {:.4} and {:.4} closer than half a width); consider merging",
                k + 1,
                pair[0].1,
                pair[1].1
            ));
        }
    }
    if !converged {
        warnings.push(format!("fit did not converge within {} iterations", opts.max_iterations));
    }

    let bin_width = (edges[edges.len() - 1] - edges[0]) / y.len() as f64;
    let peaks = params
        .into_iter()
        .enumerate()
        .map(|(k, (area, center, width, var))| {
            let floor = area.max(0.0).sqrt();
            let curvature = if var.is_finite() && var > 0.0 { var.sqrt() } else { floor };
            FittedPeak {
                photon_number: k,
                center,
                width,
                area: area.max(0.0),
                area_std_error: curvature.max(floor),
                height: area * bin_width / (width * (2.0 * std::f64::consts::PI).sqrt()),
            }
        })
        .collect();

    Ok(PeakFitResult {
        peaks,
        residual_norm: chi2.sqrt(),
        converged,
        iterations,
        warnings,
    })
}

/// Photon-number probabilities recovered from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredProbabilities {
    /// `areas / Σ areas`, padded with zeros to at least `P_3`.
    pub probabilities: Vec<f64>,
    /// Propagated standard error of each probability.
    pub std_errors: Vec<f64>,
    /// Peak areas rounded to whole events.
    pub counts: Vec<u64>,
    pub total_area: f64,
}

impl MeasuredProbabilities {
    pub fn distribution(&self) -> Result<PhotonDistribution> {
        PhotonDistribution::physical(self.probabilities.clone())
    }

    pub fn count(&self, k: usize) -> u64 {
        self.counts.get(k).copied().unwrap_or(0)
    }
}

/// Normalizes fitted areas by the total area of all peaks, pedestal included.
pub fn areas_to_probabilities(fit: &PeakFitResult) -> Result<MeasuredProbabilities> {
    let total: f64 = fit.peaks.iter().map(|p| p.area).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroDenominator("fitted peaks have zero total area"));
    }
    let len = fit.peaks.len().max(MIN_CUTOFF + 1);
    let mut probabilities = vec![0.0; len];
    let mut std_errors = vec![0.0; len];
    let mut counts = vec![0u64; len];
    let var_sum: f64 = fit.peaks.iter().map(|p| p.area_std_error.powi(2)).sum();
    for p in &fit.peaks {
        let k = p.photon_number;
        let prob = p.area / total;
        probabilities[k] = prob;
        let own = p.area_std_error.powi(2);
        let others = var_sum - own;
        std_errors[k] = ((1.0 - prob).powi(2) * own + prob * prob * others).sqrt() / total;
        counts[k] = p.area.round() as u64;
    }
    Ok(MeasuredProbabilities {
        probabilities,
        std_errors,
        counts,
        total_area: total,
    })
}
