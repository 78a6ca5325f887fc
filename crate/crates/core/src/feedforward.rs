//! Herald-conditioned signal statistics.
//!
//! Signal and idler carry the same photon number. Conditioning on an accepted
//! click outcome of the idler detector reweights the source distribution,
//! `P'(n) ∝ P(n) Σ_{n' ∈ sel} p(n, n')`, which is then renormalized.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::detector_model::DetectionMatrix;
use crate::error::{Error, Result};
use crate::photon_stats::{renormalize, PhotonNumberDistribution, SourceFamily};

/// Set of click outcomes that fire the modulator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeraldSelection {
    clicks: BTreeSet<usize>,
    label: String,
}

impl HeraldSelection {
    pub fn new(clicks: impl IntoIterator<Item = usize>, label: impl Into<String>) -> Result<Self> {
        let clicks: BTreeSet<usize> = clicks.into_iter().collect();
        if clicks.is_empty() {
            return Err(Error::param("herald selection must accept at least one click outcome"));
        }
        Ok(Self {
            clicks,
            label: label.into(),
        })
    }

    /// Exactly `k` clicks.
    pub fn exactly(k: usize) -> Self {
        Self {
            clicks: BTreeSet::from([k]),
            label: k.to_string(),
        }
    }

    /// Every outcome `0..=max_clicks`.
    pub fn all(max_clicks: usize) -> Self {
        Self {
            clicks: (0..=max_clicks).collect(),
            label: "all".into(),
        }
    }

    /// Parses a selection such as `1`, `2`, `1,2`, `2+`, `1-3`, `1+,!2` or `all`.
    ///
    /// Terms are comma separated. `k+` means `k..=max_clicks`, `a-b` is an
    /// inclusive range and a leading `!` removes the term from the union of the
    /// positive terms.
    pub fn parse(text: &str, max_clicks: usize) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::param("empty herald selection"));
        }
        let mut include = BTreeSet::new();
        let mut exclude = BTreeSet::new();
        for term in text.split(',').map(str::trim) {
            let (target, body) = match term.strip_prefix('!') {
                Some(rest) => (&mut exclude, rest.trim()),
                None => (&mut include, term),
            };
            target.extend(parse_term(body, max_clicks)?);
        }
        let clicks: BTreeSet<usize> = include.difference(&exclude).copied().collect();
        if clicks.is_empty() {
            return Err(Error::param(format!("herald selection '{text}' accepts no outcome")));
        }
        Ok(Self {
            clicks,
            label: text.to_string(),
        })
    }

    pub fn accepts(&self, clicks: usize) -> bool {
        self.clicks.contains(&clicks)
    }

    pub fn clicks(&self) -> impl Iterator<Item = usize> + '_ {
        self.clicks.iter().copied()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn max_click(&self) -> usize {
        *self.clicks.iter().next_back().expect("selection is non-empty")
    }

    /// Checks that every accepted outcome exists for a detector with `max_clicks`.
    pub fn validate(&self, max_clicks: usize) -> Result<()> {
        if self.max_click() > max_clicks {
            return Err(Error::param(format!(
                "herald selection '{}' accepts {} clicks but the detector registers at most {max_clicks}",
                self.label,
                self.max_click()
            )));
        }
        Ok(())
    }

    /// Lookup table `accepts(k)` for `k = 0..=max_clicks`.
    pub fn mask(&self, max_clicks: usize) -> Vec<bool> {
        (0..=max_clicks).map(|k| self.accepts(k)).collect()
    }
}

impl fmt::Display for HeraldSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn parse_count(text: &str) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| Error::param(format!("'{text}' is not a click count")))
}

fn parse_term(term: &str, max_clicks: usize) -> Result<Vec<usize>> {
    if term.eq_ignore_ascii_case("all") {
        return Ok((0..=max_clicks).collect());
    }
    let (lo, hi) = if let Some(lo) = term.strip_suffix('+') {
        (parse_count(lo)?, max_clicks)
    } else if let Some(lo) = term.strip_prefix(">=") {
        (parse_count(lo)?, max_clicks)
    } else if let Some((lo, hi)) = term.split_once('-') {
        (parse_count(lo)?, parse_count(hi)?)
    } else {
        let k = parse_count(term)?;
        (k, k)
    };
    if lo > hi {
        return Err(Error::param(format!("empty click range '{term}'")));
    }
    if hi > max_clicks {
        return Err(Error::param(format!(
            "click count {hi} in '{term}' exceeds detector maximum {max_clicks}"
        )));
    }
    Ok((lo..=hi).collect())
}

/// Conditioned signal distribution and the probability that a pulse is heralded.
#[derive(Debug, Clone, PartialEq)]
pub struct Heralded {
    pub distribution: PhotonNumberDistribution,
    pub acceptance: f64,
}

/// Per-pulse herald probability `Σ_n P(n) Σ_{n' ∈ sel} p(n, n')`.
pub fn acceptance_probability(
    source: &PhotonNumberDistribution,
    det: &DetectionMatrix,
    sel: &HeraldSelection,
) -> Result<f64> {
    Ok(herald_weights(source, det, sel)?.iter().sum())
}

fn herald_weights(
    source: &PhotonNumberDistribution,
    det: &DetectionMatrix,
    sel: &HeraldSelection,
) -> Result<Vec<f64>> {
    if source.n_max() != det.n_max() {
        return Err(Error::param(format!(
            "source truncated at n_max = {} but detection matrix covers n_max = {}",
            source.n_max(),
            det.n_max()
        )));
    }
    sel.validate(det.max_clicks())?;
    Ok(source
        .probs()
        .iter()
        .enumerate()
        .map(|(n, p)| p * sel.clicks().map(|k| det.get(n, k)).sum::<f64>())
        .collect())
}

pub fn heralded_distribution(
    source: &PhotonNumberDistribution,
    det: &DetectionMatrix,
    sel: &HeraldSelection,
) -> Result<Heralded> {
    let weights = herald_weights(source, det, sel)?;
    let acceptance: f64 = weights.iter().sum();
    if acceptance <= 0.0 {
        return Err(Error::EmptyEnsemble(format!(
            "selection '{}' is never heralded for this source",
            sel.label()
        )));
    }
    Ok(Heralded {
        distribution: renormalize(&weights)?,
        acceptance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub mean: f64,
    pub g2: f64,
    pub acceptance: f64,
}

/// Heralded `g2(0)` for each source brightness in `means`.
///
/// Sources are truncated at the detection matrix's `n_max`; a mean that
/// needs a larger window yields a truncation error.
pub fn g2_sweep(
    det: &DetectionMatrix,
    sel: &HeraldSelection,
    means: &[f64],
    family: SourceFamily,
) -> Result<Vec<SweepPoint>> {
    if means.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::param("sweep means must be positive"));
    }
    if means.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("sweep means must be sorted"));
    }
    means
        .par_iter()
        .map(|&mean| {
            let source = family.distribution(mean, det.n_max())?;
            let heralded = heralded_distribution(&source, det, sel)?;
            Ok(SweepPoint {
                mean,
                g2: heralded.distribution.g2_zero()?,
                acceptance: heralded.acceptance,
            })
        })
        .collect()
}

/// `points` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && min.is_finite() && max.is_finite()) {
        return Err(Error::param(format!("invalid log grid [{min}, {max}]")));
    }
    match points {
        0 => Err(Error::param("a grid needs at least one point")),
        1 => Ok(vec![min]),
        _ => {
            let (lo, hi) = (min.ln(), max.ln());
            let step = (hi - lo) / (points - 1) as f64;
            let mut grid: Vec<f64> = (0..points).map(|i| (lo + step * i as f64).exp()).collect();
            grid[0] = min;
            grid[points - 1] = max;
            Ok(grid)
        }
    }
}

/// Default brightness grid: 30 log-spaced points over `[1e-4, 1]`.
pub fn default_mean_grid() -> Vec<f64> {
    log_grid(1e-4, 1.0, 30).expect("static grid is valid")
}

/// Writes sweep results as `mean,g2,acceptance,selection_label,family`.
pub fn write_sweep_csv<W: std::io::Write>(
    out: W,
    points: &[SweepPoint],
    sel: &HeraldSelection,
    family: SourceFamily,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["mean", "g2", "acceptance", "selection_label", "family"])?;
    for p in points {
        writer.write_record([
            format!("{:e}", p.mean),
            format!("{:e}", p.g2),
            format!("{:e}", p.acceptance),
            sel.label().to_string(),
            family.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Fraction of observed two-click heralds that stem from two photons.
///
/// Crosstalk promotes a fraction `ε` of true single-click events, so the
/// observed single rate is `(1-ε)` of the true one and the spurious double
/// rate is `single · ε / (1-ε)`.
pub fn genuine_two_click_fraction(single_rate: f64, double_rate: f64, eps: f64) -> Result<f64> {
    if !(single_rate > 0.0 && double_rate > 0.0) {
        return Err(Error::param("count rates must be positive"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::param(format!("crosstalk probability must lie in [0, 1), got {eps}")));
    }
    let spurious = single_rate * eps / (1.0 - eps);
    if spurious > double_rate * (1.0 + 1e-12) {
        return Err(Error::Inconsistent(format!(
            "crosstalk alone predicts {spurious:.1} two-click events/s but only {double_rate:.1} were observed"
        )));
    }
    Ok((1.0 - spurious / double_rate).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector_model::detection_matrix;
    use crate::photon_stats::{poissonian, thermal};

    #[test]
    fn selection_parsing() {
        let s = HeraldSelection::parse("2+", 4).unwrap();
        assert_eq!(s.clicks().collect::<Vec<_>>(), vec![2, 3, 4]);
        let s = HeraldSelection::parse("1+, !2", 4).unwrap();
        assert_eq!(s.clicks().collect::<Vec<_>>(), vec![1, 3, 4]);
        let s = HeraldSelection::parse("1-3", 4).unwrap();
        assert_eq!(s.clicks().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(HeraldSelection::parse("all", 2).unwrap().clicks().count(), 3);
        assert!(HeraldSelection::parse("", 4).is_err());
        assert!(HeraldSelection::parse("5", 4).is_err());
        assert!(HeraldSelection::parse("2,!2", 4).is_err());
        assert!(HeraldSelection::parse("x", 4).is_err());
        assert!(HeraldSelection::new([], "none").is_err());
    }

    #[test]
    fn perfect_heralding() {
        let det = DetectionMatrix::ideal(12);
        let src = poissonian(0.3, 12).unwrap();
        let one = heralded_distribution(&src, &det, &HeraldSelection::exactly(1)).unwrap();
        assert_eq!(one.distribution.g2_zero().unwrap(), 0.0);
        assert!((one.acceptance - src.get(1)).abs() < 1e-15);
        let two = heralded_distribution(&src, &det, &HeraldSelection::exactly(2)).unwrap();
        assert!((two.distribution.g2_zero().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_selection_returns_source() {
        let det = detection_matrix(0.7, 4, 0.025, 15).unwrap();
        let src = poissonian(0.8, 15).unwrap();
        let h = heralded_distribution(&src, &det, &HeraldSelection::all(4)).unwrap();
        assert!((h.acceptance - 1.0).abs() < 1e-12);
        for (a, b) in h.distribution.probs().iter().zip(src.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_acceptances_sum_to_one() {
        let det = detection_matrix(0.6, 4, 0.03, 20).unwrap();
        let src = thermal(0.4, 20).unwrap();
        let total: f64 = (0..=4)
            .map(|k| acceptance_probability(&src, &det, &HeraldSelection::exactly(k)).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_truncation_rejected() {
        let det = detection_matrix(0.7, 4, 0.025, 10).unwrap();
        let src = poissonian(0.1, 12).unwrap();
        assert!(heralded_distribution(&src, &det, &HeraldSelection::exactly(1)).is_err());
    }

    #[test]
    fn vacuum_source_is_empty_ensemble() {
        let det = detection_matrix(0.7, 4, 0.025, 5).unwrap();
        let src = PhotonNumberDistribution::fock(0, 5).unwrap();
        assert!(matches!(
            heralded_distribution(&src, &det, &HeraldSelection::exactly(1)),
            Err(Error::EmptyEnsemble(_))
        ));
    }

    #[test]
    fn genuine_fraction_cases() {
        let f = genuine_two_click_fraction(825_000.0, 56_000.0, 0.025).unwrap();
        assert!((f - (1.0 - 825_000.0 * 0.025 / 0.975 / 56_000.0)).abs() < 1e-15);
        assert!((0.62..=0.63).contains(&f), "{f}");
        assert_eq!(genuine_two_click_fraction(825_000.0, 56_000.0, 0.0).unwrap(), 1.0);
        let boundary = 1000.0 * 0.1 / 0.9;
        assert_eq!(genuine_two_click_fraction(1000.0, boundary, 0.1).unwrap(), 0.0);
        assert!(matches!(
            genuine_two_click_fraction(1000.0, 10.0, 0.1),
            Err(Error::Inconsistent(_))
        ));
        assert!(genuine_two_click_fraction(0.0, 10.0, 0.1).is_err());
        assert!(genuine_two_click_fraction(10.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = default_mean_grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[29], 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn sweep_rejects_unsorted_means() {
        let det = detection_matrix(0.7, 4, 0.025, 20).unwrap();
        let sel = HeraldSelection::exactly(1);
        assert!(g2_sweep(&det, &sel, &[0.2, 0.1], SourceFamily::Poissonian).is_err());
        assert!(g2_sweep(&det, &sel, &[0.0, 0.1], SourceFamily::Poissonian).is_err());
    }

    #[test]
    fn sweep_csv_columns() {
        let det = detection_matrix(0.7, 4, 0.025, 20).unwrap();
        let sel = HeraldSelection::exactly(1);
        let pts = g2_sweep(&det, &sel, &[0.01, 0.1], SourceFamily::Poissonian).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &pts, &sel, SourceFamily::Poissonian).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mean,g2,acceptance,selection_label,family\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",1,poissonian"));
    }
}
