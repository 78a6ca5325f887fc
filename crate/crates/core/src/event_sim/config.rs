use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedforward::HeraldSelection;
use crate::photon_stats::SourceFamily;
use crate::timetag::Picos;
use crate::units::Duration;

/// What a herald does when it arrives while the gate is already open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retrigger {
    /// The gate stays open until `gate_length` after the latest herald.
    #[default]
    Extend,
    /// Heralds whose gate would start inside an open gate are dropped.
    Ignore,
}

/// Physical and run parameters of one simulated experiment.
///
/// Times are integer picoseconds. The signal photon of pulse `p` reaches the
/// modulator at `p * rep_period + signal_delay`; a herald at `h` opens the
/// gate over `[h + latency, h + latency + gate_length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rep_period: Picos,
    pub mean_pairs_per_pulse: f64,
    pub source_family: SourceFamily,
    pub idler_transmission: f64,
    pub n_pixels: usize,
    pub crosstalk: f64,
    pub herald_selection: HeraldSelection,
    pub latency: Picos,
    pub gate_length: Picos,
    pub signal_delay: Picos,
    pub extinction_db: f64,
    /// Linear rise/fall time of the gate edges; 0 for a hard gate.
    pub edge_ramp: Picos,
    pub retrigger: Retrigger,
    pub signal_transmission: f64,
    pub hbt_splitting: f64,
    pub hbt_efficiency: f64,
    /// Dark counts per second on each HBT detector.
    pub dark_rate: f64,
    pub n_pulses: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rep_period: 12_500,
            mean_pairs_per_pulse: 0.0075,
            source_family: SourceFamily::Poissonian,
            idler_transmission: 0.7,
            n_pixels: 4,
            crosstalk: 0.025,
            herald_selection: HeraldSelection::exactly(1),
            latency: 23_000,
            gate_length: 80_000,
            signal_delay: 23_000,
            extinction_db: 10.2,
            edge_ramp: 0,
            retrigger: Retrigger::Extend,
            signal_transmission: 0.08,
            hbt_splitting: 0.5,
            hbt_efficiency: 0.8,
            dark_rate: 100.0,
            n_pulses: 10_000_000,
            seed: 1,
        }
    }
}

/// Largest pixel count the event loop can track in its pixel bitmask.
pub const MAX_PIXELS: usize = 64;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let probabilities = [
            ("idler_transmission", self.idler_transmission),
            ("signal_transmission", self.signal_transmission),
            ("hbt_splitting", self.hbt_splitting),
            ("hbt_efficiency", self.hbt_efficiency),
        ];
        for (name, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(0.0..1.0).contains(&self.crosstalk) {
            return Err(Error::param(format!("crosstalk must lie in [0, 1), got {}", self.crosstalk)));
        }
        if !(self.mean_pairs_per_pulse.is_finite() && self.mean_pairs_per_pulse >= 0.0) {
            return Err(Error::param("mean_pairs_per_pulse must be finite and non-negative"));
        }
        if self.rep_period == 0 {
            return Err(Error::param("rep_period must be positive"));
        }
        if !(1..=MAX_PIXELS).contains(&self.n_pixels) {
            return Err(Error::param(format!("n_pixels must lie in 1..={MAX_PIXELS}")));
        }
        self.herald_selection.validate(self.n_pixels)?;
        if self.extinction_db.is_nan() || self.extinction_db < 0.0 {
            return Err(Error::param("extinction_db must be non-negative (inf for a perfect gate)"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::param("dark_rate must be finite and non-negative"));
        }
        self.end_of_run()?;
        Ok(())
    }

    /// Run duration `n_pulses * rep_period` in ps.
    pub fn duration(&self) -> Result<Picos> {
        self.n_pulses
            .checked_mul(self.rep_period)
            .ok_or_else(|| Error::param("n_pulses * rep_period overflows the 64-bit picosecond range"))
    }

    /// Latest instant the run can reference, checked against overflow.
    fn end_of_run(&self) -> Result<Picos> {
        self.duration()?
            .checked_add(self.latency)
            .and_then(|t| t.checked_add(self.gate_length))
            .and_then(|t| t.checked_add(self.signal_delay))
            .and_then(|t| t.checked_add(self.edge_ramp))
            .ok_or_else(|| Error::param("run timeline overflows the 64-bit picosecond range"))
    }

    pub fn rep_rate_hz(&self) -> f64 {
        1e12 / self.rep_period as f64
    }

    /// Modulator power transmission in the closed state, `10^(-ER/10)`.
    pub fn leakage(&self) -> f64 {
        super::modulator::leakage_from_extinction_db(self.extinction_db)
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            source: SourceSection {
                mean_pairs_per_pulse: Some(self.mean_pairs_per_pulse),
                family: Some(self.source_family),
            },
            herald: HeraldSection {
                transmission: Some(self.idler_transmission),
                pixels: Some(self.n_pixels),
                crosstalk: Some(self.crosstalk),
                selection: Some(self.herald_selection.label().to_string()),
            },
            timing: TimingSection {
                rep_period: Some(Duration(self.rep_period)),
                latency: Some(Duration(self.latency)),
                gate_length: Some(Duration(self.gate_length)),
                signal_delay: Some(Duration(self.signal_delay)),
            },
            modulator: ModulatorSection {
                extinction_db: Some(self.extinction_db),
                edge_ramp: Some(Duration(self.edge_ramp)),
                retrigger: Some(self.retrigger),
            },
            signal: SignalSection {
                transmission: Some(self.signal_transmission),
                hbt_splitting: Some(self.hbt_splitting),
                hbt_efficiency: Some(self.hbt_efficiency),
                dark_rate: Some(self.dark_rate),
            },
            run: RunSection {
                pulses: Some(self.n_pulses),
                seed: Some(self.seed),
            },
        }
    }

    /// Parses a TOML config; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        ConfigFile::parse(text)?.resolve()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}

/// On-disk form of [`ExperimentConfig`]: sectioned key-value TOML with every
/// key optional.
///
/// ```toml
/// [source]
/// mean_pairs_per_pulse = 0.0075
/// family = "poissonian"
///
/// [herald]
/// transmission = 0.7
/// pixels = 4
/// crosstalk = 0.025
/// selection = "1"
///
/// [timing]
/// rep_period = "12.5ns"
/// latency = "23ns"
/// gate_length = "80ns"
/// signal_delay = "23ns"
///
/// [modulator]
/// extinction_db = 10.2
/// edge_ramp = "0ps"
/// retrigger = "extend"
///
/// [signal]
/// transmission = 0.08
/// hbt_splitting = 0.5
/// hbt_efficiency = 0.8
/// dark_rate = 100.0
///
/// [run]
/// pulses = 10000000
/// seed = 1
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub herald: HeraldSection,
    #[serde(default)]
    pub timing: TimingSection,
    #[serde(default)]
    pub modulator: ModulatorSection,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub mean_pairs_per_pulse: Option<f64>,
    pub family: Option<SourceFamily>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeraldSection {
    pub transmission: Option<f64>,
    pub pixels: Option<usize>,
    pub crosstalk: Option<f64>,
    pub selection: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub rep_period: Option<Duration>,
    pub latency: Option<Duration>,
    pub gate_length: Option<Duration>,
    pub signal_delay: Option<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatorSection {
    pub extinction_db: Option<f64>,
    pub edge_ramp: Option<Duration>,
    pub retrigger: Option<Retrigger>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub transmission: Option<f64>,
    pub hbt_splitting: Option<f64>,
    pub hbt_efficiency: Option<f64>,
    pub dark_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub pulses: Option<u64>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param(format!("config: {}", e.message())))
    }

    /// Applies the present keys on top of the defaults and validates the result.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.apply(ExperimentConfig::default())
    }

    /// Applies the present keys on top of `base` and validates the result.
    pub fn apply(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = base;
        let s = &self.source;
        set(&mut c.mean_pairs_per_pulse, s.mean_pairs_per_pulse);
        set(&mut c.source_family, s.family);
        let h = &self.herald;
        set(&mut c.idler_transmission, h.transmission);
        set(&mut c.n_pixels, h.pixels);
        set(&mut c.crosstalk, h.crosstalk);
        if let Some(sel) = &h.selection {
            c.herald_selection = HeraldSelection::parse(sel, c.n_pixels)?;
        }
        let t = &self.timing;
        set(&mut c.rep_period, t.rep_period.map(|d| d.0));
        set(&mut c.latency, t.latency.map(|d| d.0));
        set(&mut c.gate_length, t.gate_length.map(|d| d.0));
        set(&mut c.signal_delay, t.signal_delay.map(|d| d.0));
        let m = &self.modulator;
        set(&mut c.extinction_db, m.extinction_db);
        set(&mut c.edge_ramp, m.edge_ramp.map(|d| d.0));
        set(&mut c.retrigger, m.retrigger);
        let g = &self.signal;
        set(&mut c.signal_transmission, g.transmission);
        set(&mut c.hbt_splitting, g.hbt_splitting);
        set(&mut c.hbt_efficiency, g.hbt_efficiency);
        set(&mut c.dark_rate, g.dark_rate);
        set(&mut c.n_pulses, self.run.pulses);
        set(&mut c.seed, self.run.seed);
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
