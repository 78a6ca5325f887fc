//! Photon-number distributions over a truncated Fock basis.
//!
//! Everything here is diagonal in the number basis: a distribution is a
//! probability vector `P(n)` for `n = 0..=n_max`. Constructors for the two
//! source families (Poissonian and single-mode thermal) check that the
//! truncation window keeps all but [`DEFAULT_TAIL_LIMIT`] of the mass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Largest probability mass a constructor may drop beyond `n_max`.
pub const DEFAULT_TAIL_LIMIT: f64 = 1e-9;

/// Normalization tolerance for a constructed distribution.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// A truncated photon-number distribution `P(n)`, `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
}

impl PhotonNumberDistribution {
    /// Wraps an already normalized probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_entries(&probs)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::param(format!(
                "probabilities sum to {total}, expected 1 within {NORM_TOLERANCE:e}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        renormalize(weights)
    }

    /// The number state `|n⟩` on a window of `n_max + 1` entries.
    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::param(format!("Fock index {n} exceeds n_max {n_max}")));
        }
        let mut probs = vec![0.0; n_max + 1];
        probs[n] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Mean photon number `Σ n P(n)`.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - mean).powi(2) * p)
            .sum()
    }

    /// Second factorial moment `Σ n(n-1) P(n)`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64) * (n as f64 - 1.0) * p)
            .sum()
    }

    /// Zero-delay second-order correlation `Σ n(n-1)P(n) / (Σ n P(n))²`.
    pub fn g2_zero(&self) -> Result<f64> {
        g2_zero(self)
    }
}

fn validate_entries(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::param("distribution needs at least one entry"));
    }
    for (n, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("P({n}) = {p} is outside [0, 1]")));
        }
    }
    Ok(())
}

/// Source photon statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFamily {
    Poissonian,
    Thermal,
}

impl SourceFamily {
    pub fn distribution(self, mean: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
        match self {
            SourceFamily::Poissonian => poissonian(mean, n_max),
            SourceFamily::Thermal => thermal(mean, n_max),
        }
    }

    /// Smallest `n_max` whose tail mass is below `limit`.
    pub fn required_n_max(self, mean: f64, limit: f64) -> Result<usize> {
        check_mean(mean)?;
        let mut n_max = 0;
        while self.tail_mass(mean, n_max) >= limit {
            n_max += 1;
        }
        Ok(n_max)
    }

    /// Probability mass strictly above `n_max`.
    fn tail_mass(self, mean: f64, n_max: usize) -> f64 {
        match self {
            SourceFamily::Poissonian => poisson_tail(mean, n_max),
            SourceFamily::Thermal => (mean / (1.0 + mean)).powi(n_max as i32 + 1),
        }
    }

    /// Unnormalized probability of `n` photons.
    fn pmf(self, mean: f64, n: usize) -> f64 {
        match self {
            SourceFamily::Poissonian => poisson_pmf(mean, n),
            SourceFamily::Thermal => {
                (n as f64 * mean.ln() - (n as f64 + 1.0) * mean.ln_1p()).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceFamily::Poissonian => "poissonian",
            SourceFamily::Thermal => "thermal",
        }
    }
}

impl fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poissonian" | "poisson" => Ok(SourceFamily::Poissonian),
            "thermal" => Ok(SourceFamily::Thermal),
            other => Err(Error::param(format!("unknown source family '{other}'"))),
        }
    }
}

fn check_mean(mean: f64) -> Result<()> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::param(format!(
            "mean photon number must be finite and non-negative, got {mean}"
        )));
    }
    Ok(())
}

fn poisson_pmf(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-mean + n as f64 * mean.ln() - ln_factorial(n as u64)).exp()
}

fn poisson_tail(mean: f64, n_max: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    // Sum the tail forward; past the mode the terms shrink geometrically.
    let mut n = n_max + 1;
    let mut term = poisson_pmf(mean, n);
    let mut tail = 0.0;
    loop {
        tail += term;
        n += 1;
        term *= mean / n as f64;
        if (n as f64 > mean && term < tail * 1e-17) || term == 0.0 {
            break;
        }
    }
    tail
}

fn truncated(family: SourceFamily, mean: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
    check_mean(mean)?;
    if mean == 0.0 {
        return PhotonNumberDistribution::fock(0, n_max);
    }
    let tail = family.tail_mass(mean, n_max);
    if tail >= DEFAULT_TAIL_LIMIT {
        return Err(Error::Truncation {
            tail_mass: tail,
            limit: DEFAULT_TAIL_LIMIT,
            required_n_max: family.required_n_max(mean, DEFAULT_TAIL_LIMIT)?,
        });
    }
    let weights: Vec<f64> = (0..=n_max).map(|n| family.pmf(mean, n)).collect();
    renormalize(&weights)
}

/// Poissonian `P(n) = e^{-μ} μ^n / n!`, renormalized over `0..=n_max`.
pub fn poissonian(mean: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
    truncated(SourceFamily::Poissonian, mean, n_max)
}

/// Single-mode thermal `P(n) = μ^n / (1+μ)^{n+1}`, renormalized over `0..=n_max`.
pub fn thermal(mean: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
    truncated(SourceFamily::Thermal, mean, n_max)
}

pub fn mean_photon_number(dist: &PhotonNumberDistribution) -> f64 {
    dist.mean()
}

/// Divides non-negative weights by their total mass.
pub fn renormalize(weights: &[f64]) -> Result<PhotonNumberDistribution> {
    if weights.is_empty() {
        return Err(Error::param("distribution needs at least one entry"));
    }
    if let Some((n, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::param(format!("weight {n} = {w} is not a finite non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyEnsemble("distribution has zero total mass".into()));
    }
    let probs = weights.iter().map(|w| (w / total).min(1.0)).collect();
    Ok(PhotonNumberDistribution { probs })
}

pub fn g2_zero(dist: &PhotonNumberDistribution) -> Result<f64> {
    let mean = dist.mean();
    if mean <= 0.0 {
        return Err(Error::UndefinedStatistic(
            "g2(0) needs a non-zero mean photon number".into(),
        ));
    }
    Ok(dist.second_factorial_moment() / (mean * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vacuum_for_zero_mean() {
        for family in [SourceFamily::Poissonian, SourceFamily::Thermal] {
            let d = family.distribution(0.0, 5).unwrap();
            assert_eq!(d.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn poissonian_vacuum_term() {
        let d = poissonian(1.0, 20).unwrap();
        assert!((d.get(0) - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn poissonian_one_two_ratio() {
        let d = poissonian(0.0075, 10).unwrap();
        let ratio = d.get(1) / d.get(2);
        assert!((ratio - 2.0 / 0.0075).abs() < 1e-9 * ratio);
    }

    #[test]
    fn poissonian_mean_matches_parameter() {
        let d = poissonian(2.0, 40).unwrap();
        assert!((d.mean() - 2.0).abs() < 1e-9);
        assert!((mean_photon_number(&d) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn thermal_vacuum_and_g2() {
        let d = thermal(1.0, 60).unwrap();
        assert!((d.get(0) - 0.5).abs() < 1e-9);
        for mean in [0.01, 0.3, 1.0, 2.5] {
            let n_max = SourceFamily::Thermal.required_n_max(mean, 1e-15).unwrap();
            let d = thermal(mean, n_max).unwrap();
            assert!((d.g2_zero().unwrap() - 2.0).abs() < 1e-6, "mean {mean}");
        }
    }

    #[test]
    fn g2_of_number_states() {
        assert_eq!(g2_zero(&PhotonNumberDistribution::new(vec![0.0, 1.0]).unwrap()).unwrap(), 0.0);
        let two = PhotonNumberDistribution::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((g2_zero(&two).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn g2_of_vacuum_is_an_error() {
        let vac = PhotonNumberDistribution::fock(0, 3).unwrap();
        assert!(matches!(g2_zero(&vac), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn renormalize_and_mean() {
        let d = renormalize(&[0.2, 0.2]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        assert_eq!(d.mean(), 0.5);
        assert!(matches!(renormalize(&[0.0, 0.0]), Err(Error::EmptyEnsemble(_))));
    }

    #[test]
    fn negative_mean_rejected() {
        assert!(matches!(poissonian(-0.1, 10), Err(Error::Parameter(_))));
        assert!(matches!(thermal(f64::NAN, 10), Err(Error::Parameter(_))));
    }

    #[test]
    fn truncation_error_names_required_cutoff() {
        match poissonian(2.0, 5) {
            Err(Error::Truncation { required_n_max, .. }) => {
                assert!(poissonian(2.0, required_n_max).is_ok());
                assert!(poissonian(2.0, required_n_max - 1).is_err());
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn unnormalized_input_rejected() {
        assert!(PhotonNumberDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(PhotonNumberDistribution::new(vec![1.5, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn poissonian_g2_is_one(mean in 1e-4f64..3.0) {
            let n_max = SourceFamily::Poissonian.required_n_max(mean, 1e-12 * mean * mean).unwrap();
            let d = poissonian(mean, n_max).unwrap();
            prop_assert!((d.g2_zero().unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((d.mean() - mean).abs() < 1e-9);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < NORM_TOLERANCE);
        }

        #[test]
        fn thermal_variance(mean in 1e-3f64..2.0) {
            let n_max = SourceFamily::Thermal.required_n_max(mean, 1e-15).unwrap();
            let d = thermal(mean, n_max).unwrap();
            prop_assert!((d.variance() - (mean * mean + mean)).abs() < 1e-6 * (1.0 + mean * mean));
        }

        #[test]
        fn g2_invariant_under_rescaling(
            weights in proptest::collection::vec(0.0f64..1.0, 2..12),
            scale in 1e-3f64..1e3,
        ) {
            prop_assume!(weights.iter().skip(1).any(|w| *w > 1e-6));
            let a = renormalize(&weights).unwrap();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let b = renormalize(&scaled).unwrap();
            let (ga, gb) = (a.g2_zero().unwrap(), b.g2_zero().unwrap());
            prop_assert!(ga >= 0.0);
            prop_assert!((ga - gb).abs() < 1e-9 * (1.0 + ga));
        }

        #[test]
        fn g2_vanishes_on_zero_one_support(p1 in 1e-6f64..1.0) {
            let d = renormalize(&[1.0 - p1, p1]).unwrap();
            prop_assert_eq!(d.g2_zero().unwrap(), 0.0);
        }
    }
}
