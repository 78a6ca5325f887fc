//! Detection matrix of a multipixel click detector.
//!
//! The end-to-end response `p(n, n')` maps `n` photons created at the source
//! to `n'` registered clicks. It is the product of a binomial loss matrix
//! (transmission `T` to the array) with the click POVM of an `N`-pixel array
//! whose photons land on uniformly random pixels, after a click-level
//! crosstalk perturbation: with probability `ε` an outcome of `k < N` clicks
//! is promoted to `k + 1`.

use std::io::Write;

use crate::error::{Error, Result};

/// Row-sum tolerance for loss matrices and POVMs.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Row-sum tolerance for composed detection matrices.
pub const DETECTION_ROW_TOLERANCE: f64 = 1e-10;

/// Dense row-major matrix with one row per incident photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        (0..self.rows)
            .map(|r| (self.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `self · other`, requiring `self.cols == other.rows`.
    fn compose(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.cols {
                    out.data[i * other.cols + k] += a * other.get(j, k);
                }
            }
        }
        out
    }

    /// CSV with a header `incident,0,1,...` and one row per incident number.
    pub fn write_csv<W: Write>(&self, out: W, precision: Option<usize>) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["incident".to_string()];
        header.extend((0..self.cols).map(|c| c.to_string()));
        writer.write_record(&header)?;
        for r in 0..self.rows {
            let mut record = vec![r.to_string()];
            record.extend(self.row(r).iter().map(|v| match precision {
                Some(p) => format!("{v:.p$}"),
                None => format!("{v:e}"),
            }));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Binomial loss `L[i][j] = C(i,j) T^j (1-T)^(i-j)`: `i` incident, `j` transmitted.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    entries: Matrix,
    transmission: f64,
}

impl LossMatrix {
    pub fn transmission(&self) -> f64 {
        self.transmission
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

/// Click statistics of an `n_pixels` array: rows are photons on the array,
/// columns are click counts `0..=n_pixels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickPovm {
    entries: Matrix,
    n_pixels: usize,
    crosstalk_prob: f64,
}

impl ClickPovm {
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn crosstalk_prob(&self) -> f64 {
        self.crosstalk_prob
    }
}

/// End-to-end `p(n, n')`: created photons `n` to registered clicks `n'`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMatrix {
    entries: Matrix,
}

impl DetectionMatrix {
    /// Perfect number resolution: `p(n, n') = δ(n, n')` with clicks `0..=n_max`.
    pub fn ideal(n_max: usize) -> Self {
        let mut entries = Matrix::zeros(n_max + 1, n_max + 1);
        for n in 0..=n_max {
            entries.set(n, n, 1.0);
        }
        Self { entries }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Largest incident photon number represented.
    pub fn n_max(&self) -> usize {
        self.entries.rows - 1
    }

    /// Largest click count represented.
    pub fn max_clicks(&self) -> usize {
        self.entries.cols - 1
    }

    pub fn get(&self, n: usize, clicks: usize) -> f64 {
        self.entries.get(n, clicks)
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.entries.row(n)
    }

    /// Probability of each click outcome for a source distribution over `0..=n_max`.
    pub fn click_distribution(&self, source: &[f64]) -> Result<Vec<f64>> {
        if source.len() != self.entries.rows {
            return Err(Error::param(format!(
                "source has {} entries, detection matrix has {} rows",
                source.len(),
                self.entries.rows
            )));
        }
        let mut out = vec![0.0; self.entries.cols];
        for (n, p) in source.iter().enumerate() {
            for (k, q) in self.row(n).iter().enumerate() {
                out[k] += p * q;
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, out: W, precision: Option<usize>) -> Result<()> {
        self.entries.write_csv(out, precision)
    }
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::param(format!("{name} must lie in [0, 1], got {value}")));
    }
    Ok(())
}

fn check_crosstalk(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::param(format!("crosstalk probability must lie in [0, 1), got {eps}")));
    }
    Ok(())
}

pub fn loss_matrix(transmission: f64, n_max: usize) -> Result<LossMatrix> {
    check_probability("transmission", transmission)?;
    let mut entries = Matrix::zeros(n_max + 1, n_max + 1);
    let loss = 1.0 - transmission;
    for i in 0..=n_max {
        let row = entries.row_mut(i);
        // Pascal-style update keeps every entry a sum of non-negative terms.
        row[0] = 1.0;
        for step in 1..=i {
            for j in (0..=step).rev() {
                let kept = if j > 0 { row[j - 1] * transmission } else { 0.0 };
                row[j] = row[j] * loss + kept;
            }
        }
    }
    Ok(LossMatrix {
        entries,
        transmission,
    })
}

/// Ideal click POVM: each photon hits one of `n_pixels` pixels uniformly at random.
pub fn click_povm(n_pixels: usize, n_max: usize) -> Result<ClickPovm> {
    if n_pixels == 0 {
        return Err(Error::param("a detector array needs at least one pixel"));
    }
    let mut entries = Matrix::zeros(n_max + 1, n_pixels + 1);
    entries.set(0, 0, 1.0);
    let pixels = n_pixels as f64;
    // Occupancy recursion: photon n lands on a fired pixel or a fresh one.
    for n in 1..=n_max {
        for k in 1..=n_pixels.min(n) {
            let same = entries.get(n - 1, k) * k as f64 / pixels;
            let fresh = entries.get(n - 1, k - 1) * (pixels - (k - 1) as f64) / pixels;
            entries.set(n, k, same + fresh);
        }
    }
    Ok(ClickPovm {
        entries,
        n_pixels,
        crosstalk_prob: 0.0,
    })
}

/// Moves a fraction `eps` of every `k`-click outcome (`1 <= k < N`) to `k + 1`.
pub fn apply_crosstalk(povm: &ClickPovm, eps: f64) -> Result<ClickPovm> {
    check_crosstalk(eps)?;
    if povm.crosstalk_prob > 0.0 && eps > 0.0 {
        return Err(Error::param("crosstalk has already been applied to this POVM"));
    }
    let mut entries = povm.entries.clone();
    let n_pixels = povm.n_pixels;
    for n in 0..entries.rows {
        let old = povm.entries.row(n);
        let row = entries.row_mut(n);
        for k in 1..n_pixels {
            let moved = old[k] * eps;
            row[k] -= moved;
            row[k + 1] += moved;
        }
    }
    Ok(ClickPovm {
        entries,
        n_pixels,
        crosstalk_prob: eps,
    })
}

/// `p(n, n') = Σ_j L[n][j] Π[j][n']` for the crosstalk-perturbed POVM.
pub fn detection_matrix(
    transmission: f64,
    n_pixels: usize,
    crosstalk: f64,
    n_max: usize,
) -> Result<DetectionMatrix> {
    let loss = loss_matrix(transmission, n_max)?;
    let povm = apply_crosstalk(&click_povm(n_pixels, n_max)?, crosstalk)?;
    Ok(compose(&loss, &povm))
}

pub fn compose(loss: &LossMatrix, povm: &ClickPovm) -> DetectionMatrix {
    DetectionMatrix {
        entries: loss.entries.compose(&povm.entries),
    }
}
