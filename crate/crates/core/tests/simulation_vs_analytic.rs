//! Event-level simulation against the analytic model and the analysis estimators.

use ffsim::coincidence::{
    conditioned_suppression, gate_conditioned_peaks, herald_conditioned_rates, heralded_g2, DEFAULT_PEAK_HALFWIDTH,
};
use ffsim::detector_model::detection_matrix;
use ffsim::event_sim::{self, ExperimentConfig};
use ffsim::feedforward::{acceptance_probability, HeraldSelection};
use ffsim::photon_stats::SourceFamily;
use ffsim::timetag::Channel;

#[test]
fn herald_acceptance_matches_analytic() {
    for (mu, k, family) in [(0.05, 1, SourceFamily::Poissonian), (0.3, 2, SourceFamily::Thermal)] {
        let config = ExperimentConfig {
            mean_pairs_per_pulse: mu,
            source_family: family,
            herald_selection: HeraldSelection::exactly(k),
            n_pulses: 10_000_000,
            seed: 21,
            ..Default::default()
        };
        let sim = event_sim::run(&config).unwrap();
        let n_max = family.required_n_max(mu, 1e-14).unwrap();
        let src = family.distribution(mu, n_max).unwrap();
        let det = detection_matrix(0.7, 4, 0.025, n_max).unwrap();
        let p = acceptance_probability(&src, &det, &config.herald_selection).unwrap();
        let n = config.n_pulses as f64;
        let observed = sim.stream.count(Channel::HeraldTrigger) as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((observed - n * p).abs() <= 3.0 * sigma, "{family} mu={mu}: {observed} vs {}", n * p);
    }
}

#[test]
fn always_open_hbt_rate() {
    // Zero extinction transmits everything, whatever the gate does.
    let config = ExperimentConfig {
        mean_pairs_per_pulse: 0.01,
        extinction_db: 0.0,
        dark_rate: 2_000.0,
        n_pulses: 20_000_000,
        seed: 4,
        ..Default::default()
    };
    let sim = event_sim::run(&config).unwrap();
    let seconds = config.duration().unwrap() as f64 * 1e-12;
    let expected = config.mean_pairs_per_pulse
        * config.signal_transmission
        * config.hbt_efficiency
        * config.rep_rate_hz()
        + 2.0 * config.dark_rate;
    let counts = (sim.stream.count(Channel::HbtA) + sim.stream.count(Channel::HbtB)) as f64;
    let sigma = (expected * seconds).sqrt();
    assert!((counts - expected * seconds).abs() <= 3.0 * sigma, "{counts} vs {}", expected * seconds);
}

#[test]
fn dark_counts_ignore_the_gate() {
    let config = ExperimentConfig {
        mean_pairs_per_pulse: 0.05,
        signal_transmission: 0.0,
        dark_rate: 200_000.0,
        n_pulses: 40_000_000,
        seed: 8,
        ..Default::default()
    };
    let sim = event_sim::run(&config).unwrap();
    let r = herald_conditioned_rates(&sim.stream, &config).unwrap();
    let seconds = |slots: u64| slots as f64 * config.rep_period as f64 * 1e-12;
    let sigma = ((r.open_counts as f64).sqrt() / seconds(r.open_slots)).hypot(
        (r.closed_counts as f64).sqrt() / seconds(r.closed_slots),
    );
    assert!(r.open_counts > 1_000 && r.closed_counts > 1_000);
    assert!((r.open_rate - r.closed_rate).abs() <= 3.0 * sigma, "{r:?}");
}

#[test]
fn peak_and_slot_estimators_agree() {
    let config = ExperimentConfig {
        signal_transmission: 1.0,
        hbt_efficiency: 0.9,
        n_pulses: 200_000_000,
        seed: 9,
        ..Default::default()
    };
    let sim = event_sim::run(&config).unwrap();
    let peaks = gate_conditioned_peaks(&sim.stream, &config, 250, 100_000, DEFAULT_PEAK_HALFWIDTH).unwrap();
    let s = conditioned_suppression(&peaks, &config).unwrap();
    let r = herald_conditioned_rates(&sim.stream, &config).unwrap();
    let sigma = s.sigma_db.hypot(r.sigma_db());
    assert!((s.ratio_db - r.ratio_db()).abs() <= 3.0 * sigma, "{} vs {}", s.ratio_db, r.ratio_db());
    assert!(s.correlated > s.open_mean && s.open_mean > s.closed_mean);
}

#[test]
fn single_click_heralding_shows_antibunching_dip() {
    let config = ExperimentConfig {
        mean_pairs_per_pulse: 0.05,
        signal_transmission: 1.0,
        hbt_efficiency: 0.9,
        n_pulses: 50_000_000,
        seed: 12,
        ..Default::default()
    };
    let sim = event_sim::run(&config).unwrap();
    let zero = heralded_g2(&sim.stream, 0, config.rep_period, DEFAULT_PEAK_HALFWIDTH).unwrap();
    assert!(zero.g2 < 0.1, "{zero:?}");
    // Pulses inside the gate carry uncorrelated Poissonian light.
    for k in 1..=6 {
        let g = heralded_g2(&sim.stream, k, config.rep_period, DEFAULT_PEAK_HALFWIDTH).unwrap();
        assert!((g.g2 - 1.0).abs() <= 3.0 * g.sigma, "offset {k}: {g:?}");
    }
}
