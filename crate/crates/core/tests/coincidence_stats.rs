//! Statistical checks of the coincidence estimators on synthetic streams.

use ffsim::coincidence::{correlate, g2_tau, integrate_peaks, DEFAULT_PEAK_HALFWIDTH};
use ffsim::timetag::{decode_binary, decode_csv, Channel, Picos, TagStream, TimeTagRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform (continuous-time Poisson) tags on one channel.
fn poisson_tags(rng: &mut ChaCha8Rng, channel: Channel, n: usize, duration: Picos) -> Vec<TimeTagRecord> {
    (0..n).map(|_| TimeTagRecord::new(channel, rng.random_range(0..duration))).collect()
}

#[test]
fn accidental_coincidences_are_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let duration: Picos = 1_000_000_000_000; // 1 s
    let (na, nb) = (400_000, 400_000);
    let mut tags = poisson_tags(&mut rng, Channel::HbtA, na, duration);
    tags.extend(poisson_tags(&mut rng, Channel::HbtB, nb, duration));
    let stream = TagStream::new(tags);
    let hist = correlate(&stream, (Channel::HbtA, Channel::HbtB), 250, 100_000).unwrap();

    // r_a r_b w T per bin.
    let expected = na as f64 * nb as f64 * 250.0 / duration as f64;
    let bins = hist.n_bins() as f64;
    let mean = hist.total() as f64 / bins;
    assert!((mean - expected).abs() <= 3.0 * (expected / bins).sqrt(), "{mean} vs {expected}");
    let chi2: f64 = hist.counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dof = bins;
    assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2} for {dof} bins");

    let peaks = integrate_peaks(&hist, 12_500, DEFAULT_PEAK_HALFWIDTH).unwrap();
    let per_peak = expected * 9.0;
    for p in &peaks {
        assert!((p.counts as f64 - per_peak).abs() <= 4.0 * per_peak.sqrt(), "{p:?}");
    }
}

#[test]
fn pulsed_uncorrelated_streams_have_unit_g2() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rep: Picos = 12_500;
    let pulses = 2_000_000u64;
    let mut tags = Vec::new();
    for p in 0..pulses {
        for ch in [Channel::HbtA, Channel::HbtB] {
            if rng.random_bool(0.2) {
                tags.push(TimeTagRecord::new(ch, p * rep));
            }
        }
    }
    let stream = TagStream::new(tags);
    let hist = correlate(&stream, (Channel::HbtA, Channel::HbtB), 250, 50_000)
        .unwrap()
        .with_duration(pulses * rep);
    for g in g2_tau(&hist, rep, 80e6, DEFAULT_PEAK_HALFWIDTH).unwrap() {
        let sigma = 1.0 / (g.counts as f64).sqrt();
        assert!((g.g2 - 1.0).abs() <= 3.0 * sigma + 2.0 / pulses as f64, "{g:?}");
    }
}

#[test]
fn histogram_survives_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tags = poisson_tags(&mut rng, Channel::HeraldTrigger, 2_000, 50_000_000);
    tags.extend(poisson_tags(&mut rng, Channel::HbtA, 2_000, 50_000_000));
    let stream = TagStream::new(tags);
    let from_bin = decode_binary(&stream.to_binary()).unwrap();
    let mut csv = Vec::new();
    stream.encode_csv(&mut csv).unwrap();
    let from_csv = decode_csv(csv.as_slice()).unwrap();
    let pair = (Channel::HeraldTrigger, Channel::HbtA);
    let reference = correlate(&stream, pair, 250, 25_000).unwrap();
    assert_eq!(correlate(&from_bin, pair, 250, 25_000).unwrap(), reference);
    assert_eq!(correlate(&from_csv, pair, 250, 25_000).unwrap(), reference);
    let mirrored = correlate(&stream, (Channel::HbtA, Channel::HeraldTrigger), 250, 25_000).unwrap();
    assert_eq!(mirrored, reference.mirrored());
}
