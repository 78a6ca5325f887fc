//! Pulse-height window discrimination of a series multipixel detector.
//!
//! The read-out amplitude is linear in the number of fired pixels with
//! additive Gaussian noise. Two comparators bound a window `[low, high)`;
//! sweeping both thresholds over a pulsed source produces count-rate plateaus,
//! one per occupied click level.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::detector_model::DetectionMatrix;
use crate::error::{Error, Result};
use crate::photon_stats::PhotonNumberDistribution;

/// Default noise as a fraction of the single-pixel amplitude.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeModel {
    /// Volts per fired pixel.
    pub unit_amplitude: f64,
    /// Gaussian noise standard deviation in volts.
    pub noise_sigma: f64,
    pub baseline: f64,
}

impl AmplitudeModel {
    pub fn new(unit_amplitude: f64, noise_sigma: f64, baseline: f64) -> Result<Self> {
        if !(unit_amplitude > 0.0 && unit_amplitude.is_finite()) {
            return Err(Error::param(format!("unit amplitude must be positive, got {unit_amplitude}")));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::param(format!("noise sigma must be non-negative, got {noise_sigma}")));
        }
        if !baseline.is_finite() {
            return Err(Error::param("baseline must be finite"));
        }
        Ok(Self {
            unit_amplitude,
            noise_sigma,
            baseline,
        })
    }

    /// Noise fixed at [`DEFAULT_NOISE_FRACTION`] of the unit amplitude.
    pub fn with_default_noise(unit_amplitude: f64) -> Result<Self> {
        Self::new(unit_amplitude, DEFAULT_NOISE_FRACTION * unit_amplitude, 0.0)
    }

    /// Noise-free pulse height for `clicks` fired pixels.
    pub fn amplitude(&self, clicks: usize) -> f64 {
        self.baseline + clicks as f64 * self.unit_amplitude
    }
}

/// Accepts amplitudes in `[low, high)`; `high` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerWindow {
    low: f64,
    high: f64,
}

impl TriggerWindow {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if low.is_nan() || high.is_nan() || low >= high {
            return Err(Error::param(format!("trigger window needs low < high, got [{low}, {high})")));
        }
        Ok(Self { low, high })
    }

    /// Window for "at least `low`".
    pub fn at_least(low: f64) -> Result<Self> {
        Self::new(low, f64::INFINITY)
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

/// Upper Gaussian tail `1 - Φ(x)`.
fn upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }
}

/// Probability that a `clicks`-pixel pulse lands inside `window`.
pub fn trigger_probability(clicks: usize, window: &TriggerWindow, model: &AmplitudeModel) -> f64 {
    let mean = model.amplitude(clicks);
    if model.noise_sigma == 0.0 {
        return if window.low <= mean && mean < window.high { 1.0 } else { 0.0 };
    }
    let a = (window.low - mean) / model.noise_sigma;
    let b = (window.high - mean) / model.noise_sigma;
    // Difference of upper tails keeps precision far out in either tail.
    if a > 0.0 {
        (upper_tail(a) - upper_tail(b)).max(0.0)
    } else {
        (upper_tail(-b) - upper_tail(-a)).max(0.0)
    }
}

/// Count rate in Hz over a grid of (low, high) thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Row-major: `rates[l * high.len() + h]`.
    pub rates: Vec<f64>,
}

impl RateSurface {
    pub fn rate(&self, low_index: usize, high_index: usize) -> f64 {
        self.rates[low_index * self.high.len() + high_index]
    }

    /// Rates along the low-threshold axis at a fixed high threshold.
    pub fn low_sweep(&self, high_index: usize) -> Vec<f64> {
        (0..self.low.len()).map(|l| self.rate(l, high_index)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["low", "high", "rate_hz"])?;
        for (l, low) in self.low.iter().enumerate() {
            for (h, high) in self.high.iter().enumerate() {
                writer.write_record([
                    format!("{low:e}"),
                    format!("{high:e}"),
                    format!("{:e}", self.rate(l, h)),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

fn check_monotone(name: &str, grid: &[f64]) -> Result<()> {
    if grid.iter().any(|v| v.is_nan()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

/// `rate[l][h] = f_rep Σ_k P(click = k) · trigger_probability(k, [l, h))`.
///
/// Grid points with `low >= high` describe an empty window and have rate 0.
pub fn threshold_sweep(
    source: &PhotonNumberDistribution,
    det: &DetectionMatrix,
    model: &AmplitudeModel,
    rep_rate: f64,
    low_grid: &[f64],
    high_grid: &[f64],
) -> Result<RateSurface> {
    check_monotone("low threshold", low_grid)?;
    check_monotone("high threshold", high_grid)?;
    if !(rep_rate > 0.0 && rep_rate.is_finite()) {
        return Err(Error::param(format!("repetition rate must be positive, got {rep_rate}")));
    }
    let clicks = det.click_distribution(source.probs())?;
    let mut rates = Vec::with_capacity(low_grid.len() * high_grid.len());
    for &low in low_grid {
        for &high in high_grid {
            let rate = match TriggerWindow::new(low, high) {
                Ok(window) => {
                    rep_rate
                        * clicks
                            .iter()
                            .enumerate()
                            .map(|(k, p)| p * trigger_probability(k, &window, model))
                            .sum::<f64>()
                }
                Err(_) => 0.0,
            };
            rates.push(rate);
        }
    }
    Ok(RateSurface {
        low: low_grid.to_vec(),
        high: high_grid.to_vec(),
        rates,
    })
}

/// A run of grid points with (relatively) constant rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub level: f64,
}

/// Finds plateaus along a 1-D sweep.
///
/// Neighbouring points belong to the same plateau when they differ by at
/// most `rel_tol` relative to the larger one. Only runs of at least
/// `min_len` points whose level exceeds `floor` are reported.
pub fn find_plateaus(rates: &[f64], rel_tol: f64, min_len: usize, floor: f64) -> Vec<Plateau> {
    let mut plateaus = Vec::new();
    let mut start = 0;
    for i in 1..=rates.len() {
        let continues = i < rates.len() && {
            let (a, b) = (rates[i - 1], rates[i]);
            (a - b).abs() <= rel_tol * a.abs().max(b.abs())
        };
        if !continues {
            let len = i - start;
            if len >= min_len {
                let level = rates[start..i].iter().sum::<f64>() / len as f64;
                if level > floor {
                    plateaus.push(Plateau {
                        start,
                        end: i - 1,
                        level,
                    });
                }
            }
            start = i;
        }
    }
    plateaus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector_model::detection_matrix;
    use crate::photon_stats::poissonian;

    #[test]
    fn noiseless_window() {
        let model = AmplitudeModel::new(0.1, 0.0, 0.0).unwrap();
        let w = TriggerWindow::new(0.15, 0.25).unwrap();
        assert_eq!(trigger_probability(2, &w, &model), 1.0);
        assert_eq!(trigger_probability(1, &w, &model), 0.0);
        assert_eq!(trigger_probability(3, &w, &model), 0.0);
    }

    #[test]
    fn five_sigma_tail() {
        let model = AmplitudeModel::new(1.0, 0.1, 0.0).unwrap();
        let w = TriggerWindow::new(2.5, 3.5).unwrap();
        // 1 - Φ(5)
        let tail = 2.866_515_718_791_939e-7;
        let p = trigger_probability(2, &w, &model);
        assert!((p - tail).abs() < 1e-13, "{p}");
        let p3 = trigger_probability(3, &w, &model);
        assert!((p3 - (1.0 - 2.0 * tail)).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        assert!(TriggerWindow::new(1.0, 1.0).is_err());
        assert!(TriggerWindow::new(f64::NAN, 1.0).is_err());
        assert!(AmplitudeModel::new(0.0, 0.1, 0.0).is_err());
        assert!(AmplitudeModel::new(1.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn open_window_counts_every_click() {
        let det = detection_matrix(0.7, 4, 0.025, 30).unwrap();
        let src = poissonian(1.0, 30).unwrap();
        let model = AmplitudeModel::with_default_noise(0.1).unwrap();
        let s = threshold_sweep(&src, &det, &model, 80e6, &[0.1 - 5.5 * 0.005, 0.45], &[f64::INFINITY]).unwrap();
        let clicks = det.click_distribution(src.probs()).unwrap();
        let expected = 80e6 * (1.0 - clicks[0]);
        assert!((s.rate(0, 0) - expected).abs() < 1e-6 * expected);
        assert!(s.rate(1, 0) < 1e-6);
    }

    #[test]
    fn plateau_finder() {
        let r = [5.0, 5.0, 5.0, 3.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let p = find_plateaus(&r, 1e-9, 3, 1e-12);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].start, p[0].end, p[0].level), (0, 2, 5.0));
        assert_eq!((p[1].start, p[1].end), (4, 7));
    }

    #[test]
    fn surface_csv() {
        let det = detection_matrix(0.7, 4, 0.025, 30).unwrap();
        let src = poissonian(1.0, 30).unwrap();
        let model = AmplitudeModel::with_default_noise(1.0).unwrap();
        let s = threshold_sweep(&src, &det, &model, 1.0, &[0.5, 1.5], &[2.5, f64::INFINITY]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("low,high,rate_hz"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("inf"));
        assert!(threshold_sweep(&src, &det, &model, 1.0, &[1.0, 0.5], &[2.0]).is_err());
    }
}
