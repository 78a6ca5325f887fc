//! Seeded Monte Carlo of the heralded feedforward chain at time-tag level.
//!
//! Pulse `p` fires at `t_p = p * rep_period` and carries `n` photon pairs.
//! The idler photons are thinned by the herald-arm transmission, land on
//! uniformly random pixels and may gain one crosstalk click; an accepted
//! click count emits a herald at `t_p` and opens the modulator gate. Each
//! signal photon survives the signal-arm transmission, passes the modulator
//! with the gate's transmission at `t_p + signal_delay`, is routed to one of
//! the two HBT detectors and detected with the detector efficiency. HBT tags
//! carry the pulse time `t_p`; dark counts arrive as independent Poisson
//! processes.
//!
//! # Determinism
//!
//! Pulses are split into fixed batches of [`BATCH_PULSES`]. Every batch owns
//! three ChaCha streams derived from `(seed, batch)`: one for the pair source
//! and herald detector, one for the signal arm and one for dark counts. The
//! run proceeds in three passes: heralds are collected in parallel, the gate
//! schedule is stitched sequentially across batch boundaries, and the signal
//! arm is then replayed in parallel against the complete schedule. Output
//! depends only on the config, never on the thread count.

pub mod config;
pub mod gate;
pub mod modulator;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ConfigFile, ExperimentConfig, Retrigger};
pub use gate::{gate_state, GateSchedule, GateState};
pub use modulator::{
    leakage_from_extinction_db, modulator_transmission, visibility_from_extinction_db, EXTINCTION_DB,
    V_PI_VOLTS,
};

use crate::error::{Error, Result};
use crate::photon_stats::SourceFamily;
use crate::timetag::{Channel, Picos, TagStream, TimeTagRecord};

/// Pulses per RNG batch. Fixed so that output is independent of threading.
pub const BATCH_PULSES: u64 = 1 << 20;

const STREAM_SOURCE: u64 = 0;
const STREAM_SIGNAL: u64 = 1;
const STREAM_DARK: u64 = 2;
const STREAMS_PER_BATCH: u64 = 4;

fn batch_rng(seed: u64, batch: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch * STREAMS_PER_BATCH + stream);
    rng
}

/// Draws the pair number of successive pulses by skipping over empty ones.
#[derive(Debug, Clone)]
pub struct PulseSampler {
    p_nonzero: f64,
    ln_empty: f64,
    /// Cumulative `P(n | n >= 1)` for `n = 1, 2, ...`.
    cdf: Vec<f64>,
}

impl PulseSampler {
    pub fn new(family: SourceFamily, mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::param("mean pair number must be finite and non-negative"));
        }
        if mean == 0.0 {
            return Ok(Self {
                p_nonzero: 0.0,
                ln_empty: 0.0,
                cdf: vec![1.0],
            });
        }
        let p_nonzero = match family {
            SourceFamily::Poissonian => -(-mean).exp_m1(),
            SourceFamily::Thermal => mean / (1.0 + mean),
        };
        let n_max = family.required_n_max(mean, 1e-17 * p_nonzero)?.max(1);
        let dist = family.distribution(mean, n_max.max(family.required_n_max(mean, 1e-9)?))?;
        let mut cdf = Vec::with_capacity(n_max);
        let mut acc = 0.0;
        for n in 1..=n_max {
            acc += dist.get(n);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        *cdf.last_mut().expect("n_max >= 1") = 1.0;
        Ok(Self {
            p_nonzero,
            ln_empty: (-p_nonzero).ln_1p(),
            cdf,
        })
    }

    pub fn p_nonzero(&self) -> f64 {
        self.p_nonzero
    }

    /// Number of empty pulses before the next occupied one.
    fn gap<R: Rng>(&self, rng: &mut R) -> u64 {
        if self.p_nonzero >= 1.0 {
            return 0;
        }
        let u = 1.0 - rng.random::<f64>();
        (u.ln() / self.ln_empty).floor() as u64
    }

    /// Pair number of an occupied pulse.
    fn occupied<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>();
        1 + self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// Click count of the herald detector for `n` idler photons.
fn idler_clicks<R: Rng>(rng: &mut R, n: usize, config: &ExperimentConfig) -> usize {
    let mut fired = 0u64;
    for _ in 0..n {
        if rng.random::<f64>() < config.idler_transmission {
            fired |= 1 << rng.random_range(0..config.n_pixels);
        }
    }
    let mut clicks = fired.count_ones() as usize;
    if clicks >= 1 && clicks < config.n_pixels && rng.random::<f64>() < config.crosstalk {
        clicks += 1;
    }
    clicks
}

fn batch_count(config: &ExperimentConfig) -> u64 {
    config.n_pulses.div_ceil(BATCH_PULSES)
}

fn batch_range(config: &ExperimentConfig, batch: u64) -> (u64, u64) {
    let start = batch * BATCH_PULSES;
    (start, (start + BATCH_PULSES).min(config.n_pulses))
}

/// Replays the source and herald detector of one batch, calling `visit`
/// with `(pulse, pairs, clicks)` for every occupied pulse and, when
/// `visit_empty` is set, for every empty pulse as well.
fn walk_batch<F: FnMut(u64, usize, usize)>(
    config: &ExperimentConfig,
    sampler: &PulseSampler,
    batch: u64,
    visit_empty: bool,
    mut visit: F,
) {
    let (start, end) = batch_range(config, batch);
    if sampler.p_nonzero == 0.0 {
        if visit_empty {
            (start..end).for_each(|p| visit(p, 0, 0));
        }
        return;
    }
    let mut rng = batch_rng(config.seed, batch, STREAM_SOURCE);
    let mut pulse = start;
    loop {
        let next = pulse.saturating_add(sampler.gap(&mut rng));
        if visit_empty {
            (pulse..next.min(end)).for_each(|p| visit(p, 0, 0));
        }
        if next >= end {
            break;
        }
        let n = sampler.occupied(&mut rng);
        let clicks = idler_clicks(&mut rng, n, config);
        visit(next, n, clicks);
        pulse = next + 1;
    }
}

#[derive(Debug, Default)]
struct HeraldPass {
    heralds: Vec<u64>,
    clicks: Vec<u64>,
    occupied: u64,
}

fn herald_pass(config: &ExperimentConfig, sampler: &PulseSampler, batch: u64) -> HeraldPass {
    let accepts = config.herald_selection.mask(config.n_pixels);
    let mut out = HeraldPass {
        clicks: vec![0; config.n_pixels + 1],
        ..Default::default()
    };
    walk_batch(config, sampler, batch, accepts[0], |pulse, n, clicks| {
        if n > 0 {
            out.occupied += 1;
            out.clicks[clicks] += 1;
        }
        if accepts[clicks] {
            out.heralds.push(pulse);
        }
    });
    out
}

#[derive(Debug, Default)]
struct SignalPass {
    records: Vec<TimeTagRecord>,
    dark: [u64; 2],
}

fn signal_pass(
    config: &ExperimentConfig,
    sampler: &PulseSampler,
    schedule: &GateSchedule,
    batch: u64,
) -> SignalPass {
    let accepts = config.herald_selection.mask(config.n_pixels);
    let leakage = config.leakage();
    let mut rng = batch_rng(config.seed, batch, STREAM_SIGNAL);
    let mut out = SignalPass::default();
    walk_batch(config, sampler, batch, accepts[0], |pulse, n, clicks| {
        let t = pulse * config.rep_period;
        if accepts[clicks] {
            out.records.push(TimeTagRecord::new(Channel::HeraldTrigger, t));
        }
        if n == 0 {
            return;
        }
        let transmission = schedule.transmission(t + config.signal_delay, config.edge_ramp, leakage);
        let (mut a, mut b) = (false, false);
        for _ in 0..n {
            let survives = rng.random::<f64>() < config.signal_transmission;
            let passes = rng.random::<f64>() < transmission;
            let to_a = rng.random::<f64>() < config.hbt_splitting;
            let detected = rng.random::<f64>() < config.hbt_efficiency;
            if survives && passes && detected {
                if to_a {
                    a = true;
                } else {
                    b = true;
                }
            }
        }
        if a {
            out.records.push(TimeTagRecord::new(Channel::HbtA, t));
        }
        if b {
            out.records.push(TimeTagRecord::new(Channel::HbtB, t));
        }
    });

    if config.dark_rate > 0.0 {
        let mut rng = batch_rng(config.seed, batch, STREAM_DARK);
        let (first, last) = batch_range(config, batch);
        let (t0, t1) = (first * config.rep_period, last * config.rep_period);
        let expected = config.dark_rate * (t1 - t0) as f64 * 1e-12;
        let poisson = Poisson::new(expected).expect("positive finite dark expectation");
        for (i, channel) in [Channel::HbtA, Channel::HbtB].into_iter().enumerate() {
            let count = poisson.sample(&mut rng) as u64;
            out.dark[i] += count;
            for _ in 0..count {
                out.records.push(TimeTagRecord::new(channel, rng.random_range(t0..t1)));
            }
        }
    }
    out.records.sort_unstable();
    out
}

/// Tag counts of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub herald: u64,
    pub hbt_a: u64,
    pub hbt_b: u64,
    pub dark_hbt_a: u64,
    pub dark_hbt_b: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_pulses: u64,
    pub duration_ps: Picos,
    pub seed: u64,
    /// Pulses with at least one pair.
    pub occupied_pulses: u64,
    /// Heralds that started or extended the gate.
    pub gate_triggers: u64,
    /// Fraction of pulses that were heralded.
    pub acceptance: f64,
    pub counts: ChannelCounts,
    /// Number of pulses per herald-detector click outcome, indexed by clicks.
    pub click_outcomes: Vec<u64>,
}

/// Summary plus the config that produced it, as written next to a tag file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub summary: RunSummary,
    pub config: ConfigFile,
}

impl RunSummary {
    pub fn to_toml(&self, config: &ExperimentConfig) -> String {
        let doc = SummaryDocument {
            summary: self.clone(),
            config: config.to_file(),
        };
        toml::to_string(&doc).expect("summary serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub stream: TagStream,
    pub summary: RunSummary,
    pub schedule: GateSchedule,
}

/// Runs on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<Simulation> {
    config.validate()?;
    let sampler = PulseSampler::new(config.source_family, config.mean_pairs_per_pulse)?;
    let batches = batch_count(config);

    let passes: Vec<HeraldPass> = (0..batches)
        .into_par_iter()
        .map(|b| herald_pass(config, &sampler, b))
        .collect();

    let mut click_outcomes = vec![0u64; config.n_pixels + 1];
    let mut occupied = 0;
    let mut herald_times = Vec::with_capacity(passes.iter().map(|p| p.heralds.len()).sum());
    for pass in passes {
        occupied += pass.occupied;
        for (total, c) in click_outcomes.iter_mut().zip(&pass.clicks) {
            *total += c;
        }
        herald_times.extend(pass.heralds.iter().map(|p| p * config.rep_period));
    }
    click_outcomes[0] += config.n_pulses - occupied;
    let schedule = GateSchedule::from_config(&herald_times, config);

    let signal: Vec<SignalPass> = (0..batches)
        .into_par_iter()
        .map(|b| signal_pass(config, &sampler, &schedule, b))
        .collect();
    let mut records = Vec::with_capacity(signal.iter().map(|s| s.records.len()).sum());
    let mut dark = [0u64; 2];
    for pass in signal {
        dark[0] += pass.dark[0];
        dark[1] += pass.dark[1];
        records.extend(pass.records);
    }
    let stream = TagStream::from_sorted(records);

    let counts = ChannelCounts {
        herald: stream.count(Channel::HeraldTrigger) as u64,
        hbt_a: stream.count(Channel::HbtA) as u64,
        hbt_b: stream.count(Channel::HbtB) as u64,
        dark_hbt_a: dark[0],
        dark_hbt_b: dark[1],
    };
    let summary = RunSummary {
        n_pulses: config.n_pulses,
        duration_ps: config.duration()?,
        seed: config.seed,
        occupied_pulses: occupied,
        gate_triggers: schedule.triggers() as u64,
        acceptance: if config.n_pulses == 0 {
            0.0
        } else {
            herald_times.len() as f64 / config.n_pulses as f64
        },
        counts,
        click_outcomes,
    };
    Ok(Simulation {
        stream,
        summary,
        schedule,
    })
}

/// Runs on a dedicated pool of `threads` workers (`None`: machine default).
pub fn run_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<Simulation> {
    match threads {
        None => run(config),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(|| run(config)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector_model::detection_matrix;
    use crate::feedforward::HeraldSelection;

    fn small(n_pulses: u64) -> ExperimentConfig {
        ExperimentConfig {
            n_pulses,
            ..Default::default()
        }
    }

    #[test]
    fn empty_source_and_no_dark_counts_gives_empty_stream() {
        let mut c = small(3_000_000);
        c.mean_pairs_per_pulse = 0.0;
        c.dark_rate = 0.0;
        let sim = run(&c).unwrap();
        assert!(sim.stream.is_empty());
        assert_eq!(sim.summary.click_outcomes[0], 3_000_000);
    }

    #[test]
    fn zero_click_selection_heralds_empty_pulses() {
        let mut c = small(1000);
        c.mean_pairs_per_pulse = 0.0;
        c.herald_selection = HeraldSelection::exactly(0);
        c.dark_rate = 0.0;
        let sim = run(&c).unwrap();
        assert_eq!(sim.summary.counts.herald, 1000);
    }

    #[test]
    fn perfect_gate_only_passes_gated_photons() {
        let mut c = small(2_000_000);
        c.mean_pairs_per_pulse = 0.01;
        c.extinction_db = f64::INFINITY;
        c.signal_transmission = 1.0;
        c.dark_rate = 0.0;
        let sim = run(&c).unwrap();
        let hbt: Vec<_> = sim
            .stream
            .records()
            .iter()
            .filter(|r| r.channel != Channel::HeraldTrigger)
            .collect();
        assert!(!hbt.is_empty());
        for r in hbt {
            assert!(sim.schedule.is_open(r.timestamp + c.signal_delay));
        }
    }

    #[test]
    fn timeline_overflow_rejected() {
        let mut c = small(u64::MAX / 1000);
        c.rep_period = 12_500;
        assert!(run(&c).is_err());
    }

    #[test]
    fn sampler_matches_source_statistics() {
        let s = PulseSampler::new(SourceFamily::Poissonian, 0.5).unwrap();
        let mut rng = batch_rng(7, 0, 0);
        let trials = 200_000;
        let mut hist = [0u64; 4];
        for _ in 0..trials {
            let n = s.occupied(&mut rng);
            hist[n.min(3)] += 1;
        }
        let p1 = 0.5 * (-0.5f64).exp() / s.p_nonzero();
        let f1 = hist[1] as f64 / trials as f64;
        assert!((f1 - p1).abs() < 4.0 * (p1 * (1.0 - p1) / trials as f64).sqrt());
    }

    #[test]
    fn click_frequencies_match_detection_matrix() {
        let mut c = small(20_000_000);
        c.mean_pairs_per_pulse = 0.3;
        c.dark_rate = 0.0;
        let sim = run(&c).unwrap();
        let det = detection_matrix(c.idler_transmission, 4, c.crosstalk, 20).unwrap();
        let src = crate::photon_stats::poissonian(0.3, 20).unwrap();
        let expected = det.click_distribution(src.probs()).unwrap();
        let total = c.n_pulses as f64;
        for (k, p) in expected.iter().enumerate() {
            let observed = sim.summary.click_outcomes[k] as f64;
            let sigma = (total * p * (1.0 - p)).sqrt().max(1.0);
            assert!((observed - total * p).abs() < 4.0 * sigma, "k={k}: {observed} vs {}", total * p);
        }
    }
}
