//! Offline coincidence analysis of time-tag streams.
//!
//! Histogram bins are centred on multiples of the bin width: bin `k` collects
//! delays `τ = t_b - t_a` that round (half away from zero) to `k * bin_width`,
//! for `k = -K..=K` with `K = range / bin_width`. The binning is exactly
//! antisymmetric, so swapping the channel pair mirrors the histogram, and
//! pulse peaks at multiples of the repetition period fall on bin centres.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::event_sim::{ExperimentConfig, GateSchedule};
use crate::timetag::{Channel, Picos, TagStream};

pub const DEFAULT_BIN_WIDTH: Picos = 250;
pub const DEFAULT_RANGE: Picos = 100_000;
pub const DEFAULT_PEAK_HALFWIDTH: Picos = 1_000;

/// Tags of the first channel processed per parallel shard.
const SHARD: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub bin_width: Picos,
    /// Half-span: bins cover `-range..=range` in steps of `bin_width`.
    pub range: Picos,
    pub counts: Vec<u64>,
    pub channel_pair: (Channel, Channel),
    pub total_singles: (u64, u64),
    pub duration: Picos,
}

impl CoincidenceHistogram {
    fn half_bins(&self) -> i64 {
        (self.range / self.bin_width) as i64
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Delay at the centre of bin `index`, in ps.
    pub fn bin_center(&self, index: usize) -> i64 {
        (index as i64 - self.half_bins()) * self.bin_width as i64
    }

    /// Count in the bin centred on `delay` (a multiple of the bin width).
    pub fn count_at(&self, delay: i64) -> Option<u64> {
        let w = self.bin_width as i64;
        if delay % w != 0 {
            return None;
        }
        let k = delay / w + self.half_bins();
        usize::try_from(k).ok().and_then(|i| self.counts.get(i).copied())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// The histogram of the swapped channel pair.
    pub fn mirrored(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        Self {
            counts,
            channel_pair: (self.channel_pair.1, self.channel_pair.0),
            total_singles: (self.total_singles.1, self.total_singles.0),
            ..self.clone()
        }
    }

    /// Bin-wise sum of two histograms with identical geometry.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.bin_width != other.bin_width || self.range != other.range {
            return Err(Error::param("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_singles.0 += other.total_singles.0;
        self.total_singles.1 += other.total_singles.1;
        Ok(())
    }

    pub fn with_duration(mut self, duration: Picos) -> Self {
        self.duration = duration;
        self
    }

    /// CSV with columns `bin_center_ps,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["bin_center_ps", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            writer.write_record([self.bin_center(i).to_string(), c.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Largest `|τ|` that still lands in a bin.
fn max_delay(bin_width: Picos, range: Picos) -> Picos {
    range + (bin_width - 1) / 2
}

/// Signed bin offset `k` of delay `b - a`, rounding half away from zero.
fn bin_offset(a: Picos, b: Picos, bin_width: Picos) -> i64 {
    let half = bin_width / 2;
    if b >= a {
        ((b - a + half) / bin_width) as i64
    } else {
        -(((a - b + half) / bin_width) as i64)
    }
}

fn check_binning(bin_width: Picos, range: Picos) -> Result<()> {
    if bin_width == 0 {
        return Err(Error::param("bin width must be positive"));
    }
    if !range.is_multiple_of(bin_width) {
        return Err(Error::param(format!(
            "bin width {bin_width} ps does not divide the range {range} ps"
        )));
    }
    Ok(())
}

/// Histogram of `b - a` over all pairs within range, for sorted inputs.
pub fn correlate_times(a: &[Picos], b: &[Picos], bin_width: Picos, range: Picos) -> Result<Vec<u64>> {
    check_binning(bin_width, range)?;
    let half_bins = (range / bin_width) as i64;
    let n_bins = (2 * half_bins + 1) as usize;
    let reach = max_delay(bin_width, range);
    let shard = |chunk: &[Picos]| {
        let mut counts = vec![0u64; n_bins];
        let Some(&first) = chunk.first() else {
            return counts;
        };
        // Two-pointer sweep: `lo` is the first b-tag that can pair with the current a-tag.
        let mut lo = b.partition_point(|&t| t < first.saturating_sub(reach));
        for &ta in chunk {
            let earliest = ta.saturating_sub(reach);
            while lo < b.len() && b[lo] < earliest {
                lo += 1;
            }
            let latest = ta.saturating_add(reach);
            for &tb in b[lo..].iter().take_while(|&&tb| tb <= latest) {
                counts[(bin_offset(ta, tb, bin_width) + half_bins) as usize] += 1;
            }
        }
        counts
    };
    Ok(a.par_chunks(SHARD).map(shard).reduce(
        || vec![0u64; n_bins],
        |mut x, y| {
            x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
            x
        },
    ))
}

/// Cross-correlates two channels of a stream.
///
/// The duration defaults to one past the last timestamp; use
/// [`CoincidenceHistogram::with_duration`] to set the true acquisition time.
pub fn correlate(
    stream: &TagStream,
    pair: (Channel, Channel),
    bin_width: Picos,
    range: Picos,
) -> Result<CoincidenceHistogram> {
    let a = stream.times(pair.0);
    let b = stream.times(pair.1);
    let counts = correlate_times(&a, &b, bin_width, range)?;
    Ok(CoincidenceHistogram {
        bin_width,
        range,
        counts,
        channel_pair: pair,
        total_singles: (a.len() as u64, b.len() as u64),
        duration: stream.last_timestamp().map_or(0, |t| t.saturating_add(1)),
    })
}

/// Counts integrated around the peak `offset` repetition periods from zero delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PeakCount {
    pub offset: i64,
    pub counts: u64,
}

/// Sums the bins within `peak_halfwidth` of every peak centre `offset * rep_period`
/// whose window lies fully inside the histogram.
pub fn integrate_peaks(
    hist: &CoincidenceHistogram,
    rep_period: Picos,
    peak_halfwidth: Picos,
) -> Result<Vec<PeakCount>> {
    if rep_period == 0 || !rep_period.is_multiple_of(hist.bin_width) {
        return Err(Error::param(format!(
            "repetition period {rep_period} ps must be a positive multiple of the bin width {} ps",
            hist.bin_width
        )));
    }
    let per_period = (rep_period / hist.bin_width) as i64;
    let half_window = (peak_halfwidth / hist.bin_width) as i64;
    if 2 * half_window + 1 > per_period {
        return Err(Error::param(format!(
            "peak windows of ±{peak_halfwidth} ps overlap at a {rep_period} ps period"
        )));
    }
    let half_bins = hist.half_bins();
    let max_offset = (half_bins - half_window) / per_period;
    Ok((-max_offset..=max_offset)
        .map(|offset| {
            let centre = offset * per_period + half_bins;
            let counts = ((centre - half_window)..=(centre + half_window))
                .map(|i| hist.counts[i as usize])
                .sum();
            PeakCount { offset, counts }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakG2 {
    pub offset: i64,
    pub counts: u64,
    pub g2: f64,
}

/// `g2(τ) ≈ C_ab(τ) f_rep / (C_a C_b)` per integrated peak, with count rates
/// taken over the whole acquisition.
pub fn g2_tau(
    hist: &CoincidenceHistogram,
    rep_period: Picos,
    rep_rate: f64,
    peak_halfwidth: Picos,
) -> Result<Vec<PeakG2>> {
    let (ca, cb) = hist.total_singles;
    if ca == 0 || cb == 0 {
        return Err(Error::UndefinedStatistic("g2 needs counts on both channels".into()));
    }
    if hist.duration == 0 {
        return Err(Error::UndefinedStatistic("g2 needs a non-zero acquisition time".into()));
    }
    let seconds = hist.duration as f64 * 1e-12;
    let (rate_a, rate_b) = (ca as f64 / seconds, cb as f64 / seconds);
    Ok(integrate_peaks(hist, rep_period, peak_halfwidth)?
        .into_iter()
        .map(|p| PeakG2 {
            offset: p.offset,
            counts: p.counts,
            g2: (p.counts as f64 / seconds) * rep_rate / (rate_a * rate_b),
        })
        .collect())
}

/// CSV with columns `peak_offset,counts,g2`.
pub fn write_peaks_csv<W: Write>(out: W, peaks: &[PeakG2]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["peak_offset", "counts", "g2"])?;
    for p in peaks {
        writer.write_record([p.offset.to_string(), p.counts.to_string(), format!("{:e}", p.g2)])?;
    }
    writer.flush()?;
    Ok(())
}

/// Herald-conditioned HBT statistics at one pulse offset from the herald.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldedG2 {
    pub heralds: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
    pub g2: f64,
    /// Counting error from Poisson statistics of the three counts.
    pub sigma: f64,
}

/// Three-fold estimator `g2 = N_h N_ab / (N_a N_b)`, counting HBT tags within
/// `halfwidth` of `herald + offset * rep_period`.
pub fn heralded_g2(
    stream: &TagStream,
    offset: i64,
    rep_period: Picos,
    halfwidth: Picos,
) -> Result<HeraldedG2> {
    let heralds = stream.times(Channel::HeraldTrigger);
    if heralds.is_empty() {
        return Err(Error::EmptyEnsemble("stream has no herald tags".into()));
    }
    let a = stream.times(Channel::HbtA);
    let b = stream.times(Channel::HbtB);
    let shift = offset.unsigned_abs() * rep_period;
    let hit = |times: &[Picos], centre: Option<Picos>| {
        centre.is_some_and(|c| {
            let i = times.partition_point(|&t| t < c.saturating_sub(halfwidth));
            times.get(i).is_some_and(|&t| t <= c.saturating_add(halfwidth))
        })
    };
    let (mut na, mut nb, mut nab) = (0u64, 0u64, 0u64);
    for &h in &heralds {
        let centre = if offset >= 0 { h.checked_add(shift) } else { h.checked_sub(shift) };
        let (ha, hb) = (hit(&a, centre), hit(&b, centre));
        na += ha as u64;
        nb += hb as u64;
        nab += (ha && hb) as u64;
    }
    if na == 0 || nb == 0 {
        return Err(Error::UndefinedStatistic("no heralded HBT singles on one detector".into()));
    }
    let nh = heralds.len() as u64;
    let g2 = nh as f64 * nab as f64 / (na as f64 * nb as f64);
    let rel = (1.0 / (nab.max(1) as f64) + 1.0 / na as f64 + 1.0 / nb as f64).sqrt();
    let scale = nh as f64 * nab.max(1) as f64 / (na as f64 * nb as f64);
    Ok(HeraldedG2 {
        heralds: nh,
        singles_a: na,
        singles_b: nb,
        coincidences: nab,
        g2,
        sigma: scale * rel,
    })
}

/// Where a peak sits relative to the modulator gate opened by its herald.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeakClass {
    Correlated,
    Open,
    Closed,
}

/// Classifies the pulse `offset` periods after a herald.
pub fn classify_offset(offset: i64, config: &ExperimentConfig) -> PeakClass {
    if offset == 0 {
        return PeakClass::Correlated;
    }
    // Modulator time relative to the herald, against the gate [latency, latency + gate).
    let arrival = offset as i128 * config.rep_period as i128 + config.signal_delay as i128;
    let start = config.latency as i128;
    if arrival >= start && arrival < start + config.gate_length as i128 {
        PeakClass::Open
    } else {
        PeakClass::Closed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Suppression {
    pub correlated: f64,
    pub open_mean: f64,
    pub closed_mean: f64,
    /// `closed_mean / open_mean`.
    pub ratio: f64,
    pub ratio_db: f64,
    pub sigma_db: f64,
    pub open_peaks: usize,
    pub closed_peaks: usize,
}

/// Mean closed-peak over mean open-peak counts for herald-to-HBT peaks.
pub fn suppression_ratio(peaks: &[PeakCount], config: &ExperimentConfig) -> Result<Suppression> {
    summarize_peaks(peaks.iter().map(|p| (p.offset, p.counts, 1.0)), config)
}

/// Suppression from gate-conditioned peaks, each normalized by its exposure.
pub fn conditioned_suppression(peaks: &[ConditionedPeak], config: &ExperimentConfig) -> Result<Suppression> {
    let heralds = peaks.iter().map(|p| p.exposure).max().unwrap_or(0);
    if heralds == 0 {
        return Err(Error::UndefinedStatistic("no herald has an eligible peak".into()));
    }
    summarize_peaks(
        peaks.iter().map(|p| (p.offset, p.counts, p.exposure as f64 / heralds as f64)),
        config,
    )
}

/// `(offset, counts, weight)`: a peak's mean is `Σ counts / Σ weight` per class.
fn summarize_peaks(
    peaks: impl Iterator<Item = (i64, u64, f64)>,
    config: &ExperimentConfig,
) -> Result<Suppression> {
    let mut correlated = 0.0;
    let (mut open, mut closed) = ((0u64, 0.0, 0usize), (0u64, 0.0, 0usize));
    for (offset, counts, weight) in peaks {
        let class = match classify_offset(offset, config) {
            PeakClass::Correlated => {
                correlated = counts as f64;
                continue;
            }
            PeakClass::Open => &mut open,
            PeakClass::Closed => &mut closed,
        };
        class.0 += counts;
        class.1 += weight;
        class.2 += 1;
    }
    if open.0 == 0 || closed.0 == 0 || open.1 <= 0.0 || closed.1 <= 0.0 {
        return Err(Error::UndefinedStatistic(
            "suppression needs counts in both open and closed peaks".into(),
        ));
    }
    let open_mean = open.0 as f64 / open.1;
    let closed_mean = closed.0 as f64 / closed.1;
    let ratio = closed_mean / open_mean;
    let rel = (1.0 / open.0 as f64 + 1.0 / closed.0 as f64).sqrt();
    Ok(Suppression {
        correlated,
        open_mean,
        closed_mean,
        ratio,
        ratio_db: 10.0 * ratio.log10(),
        sigma_db: 10.0 / std::f64::consts::LN_10 * rel,
        open_peaks: open.2,
        closed_peaks: closed.2,
    })
}

/// HBT tag rates split by modulator state, from gate reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionRates {
    /// Hz, over open pulse slots that carry no herald.
    pub open_rate: f64,
    /// Hz, over closed pulse slots that carry no herald.
    pub closed_rate: f64,
    /// Hz, over heralded pulse slots.
    pub correlated_rate: f64,
    pub open_counts: u64,
    pub closed_counts: u64,
    pub correlated_counts: u64,
    pub open_slots: u64,
    pub closed_slots: u64,
    pub correlated_slots: u64,
}

impl RegionRates {
    pub fn ratio_db(&self) -> f64 {
        10.0 * (self.closed_rate / self.open_rate).log10()
    }

    /// One-sigma counting error of [`RegionRates::ratio_db`].
    pub fn sigma_db(&self) -> f64 {
        10.0 / std::f64::consts::LN_10
            * (1.0 / self.open_counts.max(1) as f64 + 1.0 / self.closed_counts.max(1) as f64).sqrt()
    }
}

/// Labels pulse slots as correlated (heralded), open or closed.
///
/// Slot `s` spans `[s * rep, (s + 1) * rep)` in tag time; its modulator state
/// is the gate rebuilt from the herald tags at `s * rep + signal_delay`.
struct SlotClassifier {
    rep: Picos,
    delay: Picos,
    herald_slots: Vec<u64>,
    schedule: GateSchedule,
}

impl SlotClassifier {
    fn new(stream: &TagStream, config: &ExperimentConfig) -> Result<Self> {
        let heralds = stream.times(Channel::HeraldTrigger);
        if heralds.is_empty() {
            return Err(Error::EmptyEnsemble("stream has no herald tags".into()));
        }
        let rep = config.rep_period;
        let mut herald_slots: Vec<u64> = heralds.iter().map(|h| h / rep).collect();
        herald_slots.dedup();
        Ok(Self {
            rep,
            delay: config.signal_delay,
            schedule: GateSchedule::from_config(&heralds, config),
            herald_slots,
        })
    }

    fn is_herald(&self, slot: u64) -> bool {
        self.herald_slots.binary_search(&slot).is_ok()
    }

    fn is_open(&self, slot: u64) -> bool {
        self.schedule.is_open(slot * self.rep + self.delay)
    }

    /// Heralds whose slot `offset` pulses later lies in `0..n_slots` and has
    /// class `class` (any class for the correlated peak).
    fn exposure(&self, heralds: &[Picos], offset: i64, class: PeakClass, n_slots: u64) -> u64 {
        let intervals = self.schedule.intervals();
        let (mut hp, mut ip, mut eligible) = (0, 0, 0);
        // Query slots increase with the herald, so both lookups advance monotonically.
        for slot in heralds.iter().filter_map(|&h| (h / self.rep).checked_add_signed(offset)) {
            if slot >= n_slots {
                break;
            }
            let found = match class {
                PeakClass::Correlated => PeakClass::Correlated,
                _ => {
                    while hp < self.herald_slots.len() && self.herald_slots[hp] < slot {
                        hp += 1;
                    }
                    let t = slot * self.rep + self.delay;
                    while ip < intervals.len() && intervals[ip].1 <= t {
                        ip += 1;
                    }
                    if self.herald_slots.get(hp) == Some(&slot) {
                        PeakClass::Correlated
                    } else if intervals.get(ip).is_some_and(|iv| iv.0 <= t) {
                        PeakClass::Open
                    } else {
                        PeakClass::Closed
                    }
                }
            };
            eligible += (found == class) as u64;
        }
        eligible
    }

    fn classify(&self, t: Picos) -> PeakClass {
        let slot = t / self.rep;
        if self.is_herald(slot) {
            PeakClass::Correlated
        } else if self.is_open(slot) {
            PeakClass::Open
        } else {
            PeakClass::Closed
        }
    }
}

/// A herald-to-HBT peak with the number of heralds whose slot at this offset
/// was eligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConditionedPeak {
    pub offset: i64,
    pub counts: u64,
    pub exposure: u64,
}

/// Herald-to-HBT peaks restricted to uncorrelated photons in the expected gate state.
///
/// The zero-offset peak counts every HBT tag. A peak at offset `k != 0` only
/// counts HBT tags from unheralded pulses whose reconstructed gate state
/// matches the class of `k` (see [`classify_offset`]); this removes
/// coincidences with photons of other heralds and with gates other heralds
/// opened. Both HBT channels are summed. `exposure` counts the heralds whose
/// slot at that offset lies inside the run and is eligible.
pub fn gate_conditioned_peaks(
    stream: &TagStream,
    config: &ExperimentConfig,
    bin_width: Picos,
    range: Picos,
    peak_halfwidth: Picos,
) -> Result<Vec<ConditionedPeak>> {
    let slots = SlotClassifier::new(stream, config)?;
    let heralds = stream.times(Channel::HeraldTrigger);
    let mut all = Vec::new();
    let mut by_class: [Vec<Picos>; 2] = [Vec::new(), Vec::new()];
    for r in stream.records() {
        if r.channel == Channel::HeraldTrigger {
            continue;
        }
        all.push(r.timestamp);
        match slots.classify(r.timestamp) {
            PeakClass::Open => by_class[0].push(r.timestamp),
            PeakClass::Closed => by_class[1].push(r.timestamp),
            PeakClass::Correlated => {}
        }
    }
    let histogram = |times: &[Picos]| -> Result<CoincidenceHistogram> {
        Ok(CoincidenceHistogram {
            bin_width,
            range,
            counts: correlate_times(&heralds, times, bin_width, range)?,
            channel_pair: (Channel::HeraldTrigger, Channel::HbtA),
            total_singles: (heralds.len() as u64, times.len() as u64),
            duration: 0,
        })
    };
    let full = integrate_peaks(&histogram(&all)?, config.rep_period, peak_halfwidth)?;
    let open = integrate_peaks(&histogram(&by_class[0])?, config.rep_period, peak_halfwidth)?;
    let closed = integrate_peaks(&histogram(&by_class[1])?, config.rep_period, peak_halfwidth)?;
    let n_slots = config.duration()? / config.rep_period;
    Ok(full
        .iter()
        .zip(open.iter().zip(&closed))
        .map(|(f, (o, c))| {
            let class = classify_offset(f.offset, config);
            let counts = match class {
                PeakClass::Correlated => f.counts,
                PeakClass::Open => o.counts,
                PeakClass::Closed => c.counts,
            };
            let exposure = slots.exposure(&heralds, f.offset, class, n_slots);
            ConditionedPeak {
                offset: f.offset,
                counts,
                exposure,
            }
        })
        .collect())
}

/// Partitions HBT tags into correlated, open and closed pulse slots.
///
/// Slot `s` spans `[s * rep, (s + 1) * rep)` in tag time. Heralded slots are
/// correlated; the others are open or closed according to the gate rebuilt
/// from the herald tags, evaluated at the slot's modulator arrival time.
pub fn herald_conditioned_rates(stream: &TagStream, config: &ExperimentConfig) -> Result<RegionRates> {
    let slots = SlotClassifier::new(stream, config)?;
    let rep = config.rep_period;
    let delay = config.signal_delay;
    let n_slots = config.duration()? / rep;

    // Open slots: s with s * rep + delay inside an interval.
    let mut open_slots_total = 0u64;
    for &(start, end) in slots.schedule.intervals() {
        let first = start.saturating_sub(delay).div_ceil(rep);
        let last = if end <= delay { 0 } else { (end - delay).div_ceil(rep) };
        let (first, last) = (first.min(n_slots), last.min(n_slots));
        open_slots_total += last.saturating_sub(first);
    }
    let in_run = || slots.herald_slots.iter().filter(|&&s| s < n_slots);
    let herald_open = in_run().filter(|&&s| slots.is_open(s)).count() as u64;
    let correlated_slots = in_run().count() as u64;
    let open_slots = open_slots_total - herald_open;
    let closed_slots = n_slots - open_slots_total - (correlated_slots - herald_open);

    let (mut open_counts, mut closed_counts, mut correlated_counts) = (0u64, 0u64, 0u64);
    for r in stream.records() {
        if r.channel == Channel::HeraldTrigger {
            continue;
        }
        match slots.classify(r.timestamp) {
            PeakClass::Correlated => correlated_counts += 1,
            PeakClass::Open => open_counts += 1,
            PeakClass::Closed => closed_counts += 1,
        }
    }
    let rate = |counts: u64, slots: u64| {
        if slots == 0 {
            0.0
        } else {
            counts as f64 / (slots as f64 * rep as f64 * 1e-12)
        }
    };
    Ok(RegionRates {
        open_rate: rate(open_counts, open_slots),
        closed_rate: rate(closed_counts, closed_slots),
        correlated_rate: rate(correlated_counts, correlated_slots),
        open_counts,
        closed_counts,
        correlated_counts,
        open_slots,
        closed_slots,
        correlated_slots,
    })
}
