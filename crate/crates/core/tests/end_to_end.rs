use photocount::acquisition::{acquire, DetectorModel, PumpModel};
use photocount::channel::DEFAULT_CONDITION_THRESHOLD;
use photocount::distribution::{PairStatistics, SourceSpec};
use photocount::fitting::FitOptions;
use photocount::pipeline::{
    analyze_histogram, channel_probabilities, default_bins, pump_sweep, reconstruct, simulate, RunConfig,
};
use photocount::stats::{classical_gamma_bound, gamma_under_loss};

fn detector(eta: f64, dark_mean: f64) -> DetectorModel {
    DetectorModel {
        eta,
        dark_mean,
        ..DetectorModel::default()
    }
}

fn run(source: SourceSpec, det: DetectorModel, n_gates: usize, seed: u64) -> RunConfig {
    RunConfig {
        source: Some(source),
        detector: det,
        pump: None,
        n_gates,
        cutoff: 10,
        seed,
        bins: None,
        shards: 0,
        output_dir: None,
        fit: FitOptions::default(),
        condition_threshold: DEFAULT_CONDITION_THRESHOLD,
    }
}

#[test]
fn analysis_recovers_channel_probabilities() {
    let cfg = run(
        SourceSpec::pdc_pairs(0.4, PairStatistics::Poissonian, 40).unwrap(),
        detector(0.67, 4e-4),
        1_000_000,
        31,
    );
    let expected = channel_probabilities(cfg.source.as_ref().unwrap(), &cfg.detector, 10).unwrap();
    let a = analyze_histogram(&simulate(&cfg).unwrap().histogram, &cfg.fit).unwrap();
    assert!(a.converged);
    for k in 0..=4 {
        let z = (a.probabilities[k] - expected.get(k)) / a.prob_std_errors[k];
        assert!(z.abs() < 4.0, "P_{k}: {} vs {} (z = {z})", a.probabilities[k], expected.get(k));
    }
}

#[test]
fn fit_agrees_with_per_gate_tally() {
    let det = detector(0.67, 4e-4);
    let src = SourceSpec::poisson(1.5, 40).unwrap();
    let acq = acquire(&src, &det, 300_000, default_bins(&det), 8, 3).unwrap();
    let emp = acq.empirical_distribution(10).unwrap();
    let a = analyze_histogram(&acq.histogram, &FitOptions::default()).unwrap();
    for k in 0..a.probabilities.len() {
        assert!((a.probabilities[k] - emp.get(k)).abs() < 3.0 * a.prob_std_errors[k], "P_{k}");
    }
}

#[test]
fn empirical_counts_converge_to_channel_output() {
    let det = detector(0.5, 0.01);
    let src = SourceSpec::poisson(1.0, 30).unwrap();
    let expected = channel_probabilities(&src, &det, 10).unwrap();
    let mut prev = f64::INFINITY;
    for n in [10_000usize, 1_000_000] {
        let acq = acquire(&src, &det, n, 20, 3, 1).unwrap();
        let emp = acq.empirical_distribution(10).unwrap();
        let tv: f64 = 0.5 * (0..=10).map(|k| (emp.get(k) - expected.get(k)).abs()).sum::<f64>();
        assert!(tv < 3.0 / (n as f64).sqrt(), "tv {tv} at {n}");
        assert!(tv < prev);
        prev = tv;
    }
}

#[test]
fn coherent_light_is_classical() {
    let cfg = run(SourceSpec::poisson(2.0, 40).unwrap(), detector(0.67, 4e-4), 500_000, 2);
    let a = analyze_histogram(&simulate(&cfg).unwrap().histogram, &cfg.fit).unwrap();
    assert!(!a.gamma.violated);
    assert!(!a.parity.nonclassical);
}

#[test]
fn anchored_operating_point() {
    let cfg = run(
        SourceSpec::pdc_pairs(0.204, PairStatistics::Poissonian, 40).unwrap(),
        detector(0.617, 4e-4),
        1_000_000,
        20050301,
    );
    let a = analyze_histogram(&simulate(&cfg).unwrap().histogram, &cfg.fit).unwrap();
    assert!(a.gamma.violated);
    assert!((a.gamma.gamma - 0.442).abs() < 3.0 * a.gamma.std_error, "{:?}", a.gamma);
    let basis = a.gamma.counts_basis.unwrap();
    assert_eq!(basis.n_total, Some(a.counts.iter().sum()));
    for (k, target) in [(1, 0.0818), (2, 0.0696), (3, 0.0061)] {
        assert!((a.probabilities[k] - target).abs() < 0.002, "P_{k} = {}", a.probabilities[k]);
    }
}

#[test]
fn weak_pump_sweep_sits_at_loss_limit() {
    let det = detector(0.67, 0.0);
    let pump = PumpModel {
        powers: vec![0.02],
        pairs_per_uw: 0.2253,
        pair_statistics: PairStatistics::Poissonian,
    };
    let pts = pump_sweep(&pump, &det, 2_000_000, 4, default_bins(&det), 1, &FitOptions::default()).unwrap();
    assert_eq!(pts.len(), 1);
    let g = &pts[0].gamma;
    assert!((g.gamma - gamma_under_loss(0.67).unwrap()).abs() < 4.0 * g.std_error, "{g:?}");
}

#[test]
fn strong_dark_counts_pull_gamma_down() {
    let det_clean = detector(0.67, 0.0);
    let det_dark = detector(0.67, 2e-3);
    let pump = PumpModel {
        powers: vec![0.01],
        pairs_per_uw: 0.2253,
        pair_statistics: PairStatistics::Poissonian,
    };
    let fit = FitOptions::default();
    let clean = pump_sweep(&pump, &det_clean, 1_000_000, 6, 216, 1, &fit).unwrap();
    let dark = pump_sweep(&pump, &det_dark, 1_000_000, 6, 216, 1, &fit).unwrap();
    assert!(dark[0].gamma.gamma + 3.0 * dark[0].gamma.std_error < clean[0].gamma.gamma);
    assert!(dark[0].gamma.gamma < classical_gamma_bound());
}

#[test]
fn strong_pump_lowers_gamma() {
    let det = detector(0.67, 0.0);
    let pump = PumpModel {
        powers: vec![0.5, 4.0, 10.0],
        pairs_per_uw: 0.2253,
        pair_statistics: PairStatistics::Poissonian,
    };
    let pts = pump_sweep(&pump, &det, 400_000, 8, 216, 1, &FitOptions::default()).unwrap();
    assert!(pts[0].gamma.gamma > pts[1].gamma.gamma && pts[1].gamma.gamma > pts[2].gamma.gamma);
}

#[test]
fn reconstruction_of_simulated_pairs_shows_even_odd_pattern() {
    let cfg = run(
        SourceSpec::pdc_pairs(0.5, PairStatistics::Poissonian, 40).unwrap(),
        detector(0.67, 4e-4),
        2_000_000,
        12,
    );
    let a = analyze_histogram(&simulate(&cfg).unwrap().histogram, &cfg.fit).unwrap();
    let rec = reconstruct(&a.distribution().unwrap(), &cfg.detector, 10, cfg.condition_threshold).unwrap();
    let d = &rec.distribution;
    for n in [1, 3, 5, 7, 9] {
        assert!(d.get(n).abs() < 0.01, "P_{n} = {}", d.get(n));
    }
    assert!(d.get(2) > 0.05 && d.get(4) > 0.05);
    assert!(!rec.report.ill_conditioned);
}
