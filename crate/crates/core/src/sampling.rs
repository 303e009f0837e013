//! Sampling sets, observation extraction, and noise injection.
//!
//! Indices are 0-based: entry `(i, j)` of an `N×L` matrix has vectorization
//! index `j·N + i`.

use std::collections::HashSet;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Column-major vectorization index of `(i, j)` in a matrix with `n_rows` rows.
pub fn vec_index(i: usize, j: usize, n_rows: usize) -> Result<usize> {
    if i >= n_rows {
        return Err(Error::invalid(format!(
            "row index {i} out of range for {n_rows} rows"
        )));
    }
    Ok(j * n_rows + i)
}

/// Ordered set of distinct observed positions. The order fixes the rows of
/// the selector `S` and of every `S`-indexed quantity derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSet {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize)>,
}

impl SamplingSet {
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<(usize, usize)>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::invalid("sampling grid must be nonempty"));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for &(i, j) in &entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::invalid(format!(
                    "sampled entry ({i}, {j}) outside {n_rows}x{n_cols}"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::invalid(format!("entry ({i}, {j}) sampled twice")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            entries,
        })
    }

    /// Every entry, in vectorization order.
    pub fn full(n_rows: usize, n_cols: usize) -> Result<Self> {
        let entries = (0..n_cols)
            .flat_map(|j| (0..n_rows).map(move |i| (i, j)))
            .collect();
        Self::new(n_rows, n_cols, entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn vec_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|&(i, j)| j * self.n_rows + i)
            .collect()
    }

    /// Explicit `S×NL` binary selector. Only for small-scale checks.
    pub fn selector_matrix(&self) -> Mat<f64> {
        let idx = self.vec_indices();
        Mat::from_fn(self.len(), self.n_rows * self.n_cols, |r, c| {
            if idx[r] == c {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Observation counts per row and per column.
    pub fn counts(&self) -> (Vec<usize>, Vec<usize>) {
        let mut rows = vec![0; self.n_rows];
        let mut cols = vec![0; self.n_cols];
        for &(i, j) in &self.entries {
            rows[i] += 1;
            cols[j] += 1;
        }
        (rows, cols)
    }

    /// Percentage of observed entries, `100·S/(NL)`.
    pub fn percentage(&self) -> f64 {
        100.0 * self.len() as f64 / (self.n_rows * self.n_cols) as f64
    }
}

/// `count` distinct positions drawn uniformly without replacement; the draw
/// order is kept.
pub fn uniform_sample(n_rows: usize, n_cols: usize, count: usize, seed: u64) -> Result<SamplingSet> {
    let total = n_rows * n_cols;
    if count > total {
        return Err(Error::invalid(format!(
            "cannot sample {count} entries from a {n_rows}x{n_cols} matrix"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count);
    let entries = picks.iter().map(|a| (a % n_rows, a / n_rows)).collect();
    SamplingSet::new(n_rows, n_cols, entries)
}

/// Observed values `m̄ = S·vec(M)`, aligned with the sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    sampling: SamplingSet,
    values: Vec<f64>,
}

impl ObservationSet {
    pub fn new(sampling: SamplingSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != sampling.len() {
            return Err(Error::invalid(format!(
                "{} values for {} sampled entries",
                values.len(),
                sampling.len()
            )));
        }
        Ok(Self { sampling, values })
    }

    pub fn sampling(&self) -> &SamplingSet {
        &self.sampling
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.sampling.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.sampling.n_cols
    }

    /// `(i, j, value)` triplets in sampling order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.sampling
            .entries
            .iter()
            .zip(&self.values)
            .map(|(&(i, j), &v)| (i, j, v))
    }

    /// `P_Ω(M)`: the observed values in place, zeros elsewhere.
    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n_rows(), self.n_cols());
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::invalid(format!(
                "observation {k} at {:?} is not finite",
                self.sampling.entries[k]
            ))),
            None => Ok(()),
        }
    }

    /// Randomly holds out `ceil(fraction·S)` observations. Returns
    /// `(training, validation)`, each keeping the original relative order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(ObservationSet, ObservationSet)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation fraction {fraction} must lie strictly between 0 and 1"
            )));
        }
        let s = self.len();
        let held = ((fraction * s as f64).ceil() as usize).min(s);
        if held == 0 || held == s {
            return Err(Error::invalid(format!(
                "validation split of {s} observations at fraction {fraction} leaves an empty side"
            )));
        }
        let mut order: Vec<usize> = (0..s).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut is_held = vec![false; s];
        for &k in &order[..held] {
            is_held[k] = true;
        }
        let pick = |want: bool| -> Result<ObservationSet> {
            let keep: Vec<usize> = (0..s).filter(|&k| is_held[k] == want).collect();
            let sampling = SamplingSet {
                n_rows: self.n_rows(),
                n_cols: self.n_cols(),
                entries: keep.iter().map(|&k| self.sampling.entries[k]).collect(),
            };
            ObservationSet::new(sampling, keep.iter().map(|&k| self.values[k]).collect())
        };
        Ok((pick(false)?, pick(true)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    None,
    /// iid Gaussian entries with this variance.
    Variance(f64),
    /// Gaussian matrix rescaled so that `‖F‖²_F / ‖E‖²_F` equals this value.
    TargetSnr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            mode: NoiseMode::None,
            seed: 0,
        }
    }

    pub fn variance(nu_sq: f64, seed: u64) -> Self {
        Self {
            mode: NoiseMode::Variance(nu_sq),
            seed,
        }
    }

    pub fn snr(snr: f64, seed: u64) -> Self {
        Self {
            mode: NoiseMode::TargetSnr(snr),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.mode {
            NoiseMode::None => Ok(()),
            NoiseMode::Variance(v) if v >= 0.0 && v.is_finite() => Ok(()),
            NoiseMode::TargetSnr(s) if s > 0.0 && s.is_finite() => Ok(()),
            NoiseMode::Variance(v) => Err(Error::invalid(format!("noise variance {v} must be nonnegative"))),
            NoiseMode::TargetSnr(s) => Err(Error::invalid(format!("target snr {s} must be positive"))),
        }
    }

    /// Full `N×L` noise matrix for a signal `f`, or `None` when noiseless.
    pub fn noise_matrix(&self, f: MatRef<'_, f64>) -> Result<Option<Mat<f64>>> {
        self.validate()?;
        let (n, l) = (f.nrows(), f.ncols());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = || -> Mat<f64> {
            Mat::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng))
        };
        match self.mode {
            NoiseMode::None => Ok(None),
            NoiseMode::Variance(v) if v == 0.0 => Ok(None),
            NoiseMode::Variance(v) => {
                let sd = v.sqrt();
                let mut e = draw();
                for j in 0..l {
                    for i in 0..n {
                        e[(i, j)] *= sd;
                    }
                }
                Ok(Some(e))
            }
            NoiseMode::TargetSnr(snr) => {
                let signal = linalg::frob_sq(f);
                if signal == 0.0 {
                    return Err(Error::invalid("target snr is undefined for a zero signal"));
                }
                let mut e = draw();
                let scale = (signal / (snr * linalg::frob_sq(e.as_ref()))).sqrt();
                for j in 0..l {
                    for i in 0..n {
                        e[(i, j)] *= scale;
                    }
                }
                Ok(Some(e))
            }
        }
    }
}

/// Samples `F + E` at `Ω`. The noise matrix is drawn over the whole grid and
/// then restricted, so `snr` refers to the full `E`.
pub fn observe(f: MatRef<'_, f64>, s: &SamplingSet, noise: &NoiseSpec) -> Result<ObservationSet> {
    if f.nrows() != s.n_rows || f.ncols() != s.n_cols {
        return Err(Error::invalid(format!(
            "matrix is {}x{} but sampling set is {}x{}",
            f.nrows(),
            f.ncols(),
            s.n_rows,
            s.n_cols
        )));
    }
    let e = noise.noise_matrix(f)?;
    let values = s
        .entries
        .iter()
        .map(|&(i, j)| f[(i, j)] + e.as_ref().map_or(0.0, |e| e[(i, j)]))
        .collect();
    ObservationSet::new(s.clone(), values)
}
