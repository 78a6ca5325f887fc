//! Modulator gate reconstruction from herald times.

use super::config::{ExperimentConfig, Retrigger};
use crate::timetag::Picos;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateState {
    Open,
    Closed,
}

/// Merged open intervals `[start, end)` in modulator time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GateSchedule {
    intervals: Vec<(Picos, Picos)>,
    /// Heralds that actually (re)started the gate.
    triggers: usize,
}

impl GateSchedule {
    /// Builds the schedule for sorted `herald_times`.
    pub fn build(herald_times: &[Picos], latency: Picos, gate_length: Picos, retrigger: Retrigger) -> Self {
        debug_assert!(herald_times.windows(2).all(|w| w[0] <= w[1]));
        let mut intervals: Vec<(Picos, Picos)> = Vec::new();
        let mut triggers = 0;
        if gate_length == 0 {
            return Self { intervals, triggers };
        }
        for &h in herald_times {
            let start = h.saturating_add(latency);
            let end = start.saturating_add(gate_length);
            match intervals.last_mut() {
                Some(last) if start < last.1 => {
                    if retrigger == Retrigger::Extend {
                        last.1 = last.1.max(end);
                        triggers += 1;
                    }
                }
                Some(last) if start == last.1 => {
                    last.1 = end;
                    triggers += 1;
                }
                _ => {
                    intervals.push((start, end));
                    triggers += 1;
                }
            }
        }
        Self { intervals, triggers }
    }

    pub fn from_config(herald_times: &[Picos], config: &ExperimentConfig) -> Self {
        Self::build(herald_times, config.latency, config.gate_length, config.retrigger)
    }

    pub fn intervals(&self) -> &[(Picos, Picos)] {
        &self.intervals
    }

    pub fn triggers(&self) -> usize {
        self.triggers
    }

    /// Index of the last interval starting at or before `t`.
    fn preceding(&self, t: Picos) -> Option<usize> {
        self.intervals.partition_point(|iv| iv.0 <= t).checked_sub(1)
    }

    pub fn state(&self, t: Picos) -> GateState {
        match self.preceding(t) {
            Some(i) if t < self.intervals[i].1 => GateState::Open,
            _ => GateState::Closed,
        }
    }

    pub fn is_open(&self, t: Picos) -> bool {
        self.state(t) == GateState::Open
    }

    /// Fraction of the open-state transmission reached at `t` when gate edges
    /// ramp linearly over `ramp` ps (a hard gate for `ramp == 0`).
    pub fn openness(&self, t: Picos, ramp: Picos) -> f64 {
        let Some(i) = self.preceding(t) else {
            return 0.0;
        };
        let (start, end) = self.intervals[i];
        if ramp == 0 {
            return if t < end { 1.0 } else { 0.0 };
        }
        if t < end {
            ((t - start) as f64 / ramp as f64).min(1.0)
        } else {
            // The rising edge may not have completed before the gate closed.
            let peak = ((end - start) as f64 / ramp as f64).min(1.0);
            (peak - (t - end) as f64 / ramp as f64).max(0.0)
        }
    }

    /// Power transmission at `t` between `leakage` (closed) and 1 (open).
    pub fn transmission(&self, t: Picos, ramp: Picos, leakage: f64) -> f64 {
        leakage + (1.0 - leakage) * self.openness(t, ramp)
    }

    /// Total open time.
    pub fn open_time(&self) -> Picos {
        self.intervals.iter().map(|(s, e)| e - s).sum()
    }
}

/// Whether the modulator is open at `t` given the heralds so far.
pub fn gate_state(t: Picos, herald_times: &[Picos], config: &ExperimentConfig) -> GateState {
    GateSchedule::from_config(herald_times, config).state(t)
}
