//! Datasets, synthetic generators, preprocessing and file formats.

mod io;
mod preprocess;

pub use io::{
    decode_dataset, encode_dataset, export_csv, import_csv, load_dataset, save_dataset, FORMAT_VERSION, MAGIC,
};
pub use preprocess::{apply_transforms, inverse_preprocess, invert_transforms, preprocess, Step, Transform};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DpaError, Result};
use crate::linalg;
use crate::matrix::Matrix;
use crate::rng::{self, domain};

/// An `n x p` sample with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub labels: Option<Vec<i64>>,
    /// Applied transforms, oldest first.
    pub preprocessing: Vec<Transform>,
    /// Generative factors, one row per sample, when the generator knows them.
    pub factors: Option<Matrix>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, labels: Option<Vec<i64>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(DpaError::param(format!("{} labels for {} rows", l.len(), x.rows())));
            }
        }
        Ok(Self {
            name: name.into(),
            x,
            labels,
            preprocessing: Vec::new(),
            factors: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx` in the given order, carrying labels, factors and
    /// preprocessing along.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            preprocessing: self.preprocessing.clone(),
            factors: self.factors.as_ref().map(|f| f.select_rows(idx)),
        }
    }
}

/// Deterministic shuffled train/test split.
///
/// The test part holds `round(n * test_fraction)` rows, clamped so that
/// neither part is empty.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DpaError::param(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.n();
    if n < 2 {
        return Err(DpaError::param(format!("cannot split {n} rows")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let order = rng::permutation(n, &mut rng::substream(seed, &[domain::SPLIT]));
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok((dataset.subset(train_idx), dataset.subset(test_idx)))
}

/// Placement of disk centers relative to the frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginRule {
    /// Centers drawn from `[r, size - r]`: every disk lies fully inside.
    #[default]
    Inside,
    /// Centers drawn from `[0, size]`: disks may be cut by the border.
    Clipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskConfig {
    pub size: usize,
    /// Radius drawn uniformly from `[lo, hi]`.
    pub radius_range: (f64, f64),
    pub margin_rule: MarginRule,
}

impl Default for DiskConfig {
    fn default() -> Self {
        Self {
            size: 32,
            radius_range: (2.0, 6.0),
            margin_rule: MarginRule::Inside,
        }
    }
}

/// Column names of the disk factor table.
pub const DISK_FACTORS: [&str; 6] = ["x1", "y1", "r1", "x2", "y2", "r2"];

/// Binary images of two (possibly overlapping) disks, flattened row-major.
///
/// Pixel `(row, col)` is lit when its center `(col + 0.5, row + 0.5)` lies
/// within distance `r` of a disk center.
pub fn gen_disk(
    n: usize,
    size: usize,
    seed: u64,
    radius_range: (f64, f64),
    margin_rule: MarginRule,
) -> Result<Dataset> {
    let (lo, hi) = radius_range;
    if size < 8 {
        return Err(DpaError::param(format!("disk images need size >= 8, got {size}")));
    }
    if !(lo > 0.0 && lo <= hi && hi < size as f64 / 2.0) {
        return Err(DpaError::param(format!(
            "radius range [{lo}, {hi}] must satisfy 0 < lo <= hi < {}",
            size as f64 / 2.0
        )));
    }
    let s = size as f64;
    let mut rng = rng::substream(seed, &[domain::DATA]);
    let mut x = Matrix::zeros(n, size * size);
    let mut factors = Matrix::zeros(n, 6);
    for i in 0..n {
        for d in 0..2 {
            let r = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let (a, b) = match margin_rule {
                MarginRule::Inside => (r, s - r),
                MarginRule::Clipped => (0.0, s),
            };
            let cx = if a == b { a } else { rng.random_range(a..=b) };
            let cy = if a == b { a } else { rng.random_range(a..=b) };
            factors.row_mut(i)[3 * d..3 * d + 3].copy_from_slice(&[cx, cy, r]);
            let img = x.row_mut(i);
            for row in 0..size {
                let dy = row as f64 + 0.5 - cy;
                for col in 0..size {
                    let dx = col as f64 + 0.5 - cx;
                    if dx * dx + dy * dy <= r * r {
                        img[row * size + col] = 1.0;
                    }
                }
            }
        }
    }
    let mut ds = Dataset::new(format!("disk{size}"), x, None)?;
    ds.factors = Some(factors);
    Ok(ds)
}

/// `n` draws from `N(mean, covariance)`; semi-definite covariances are
/// supported.
pub fn gen_gaussian(n: usize, mean: &[f64], covariance: &Matrix, seed: u64) -> Result<Dataset> {
    let p = mean.len();
    if covariance.shape() != (p, p) {
        return Err(DpaError::dim("gen_gaussian", covariance.shape(), (p, p)));
    }
    let l = linalg::cholesky_psd(covariance)?;
    let eps = rng::normal_matrix(n, p, &mut rng::substream(seed, &[domain::DATA]));
    let x = eps.matmul(&l.transpose())?.add_row(&Matrix::row_vector(mean))?;
    Dataset::new("gaussian", x, None)
}
