use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{DpaError, Result};
use crate::matrix::Matrix;

/// Negative values above this are clamped to zero by the square root.
const SQRT_CLAMP: f64 = -1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Center,
    Standardize,
    Sqrt,
}

/// A fitted transform: `y = (x - mean) / scale` for the affine steps and
/// `y = sqrt(x)` for [`Step::Sqrt`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub step: Step,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Tiny negatives set to zero before the square root; these entries do
    /// not survive the inverse.
    #[serde(default)]
    pub clamped: usize,
}

impl Transform {
    fn fit(step: Step, x: &Matrix) -> Result<Self> {
        let p = x.cols();
        let (mean, scale) = match step {
            Step::Center => (x.col_means(), vec![1.0; p]),
            Step::Standardize => {
                if x.rows() < 2 {
                    return Err(DpaError::param("standardize needs at least 2 rows"));
                }
                let mean = x.col_means();
                let scale = (0..p)
                    .map(|j| {
                        let var =
                            (0..x.rows()).map(|i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / (x.rows() - 1) as f64;
                        if var > 0.0 {
                            var.sqrt()
                        } else {
                            1.0
                        }
                    })
                    .collect();
                (mean, scale)
            }
            Step::Sqrt => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            step,
            mean,
            scale,
            clamped: 0,
        })
    }

    fn check_width(&self, p: usize) -> Result<()> {
        if self.step != Step::Sqrt && (self.mean.len() != p || self.scale.len() != p) {
            return Err(DpaError::param(format!(
                "{:?} transform has statistics for {} columns, data has {p}",
                self.step,
                self.mean.len()
            )));
        }
        Ok(())
    }

    /// Applies the transform; returns the number of clamped entries.
    fn apply(&self, x: &mut Matrix) -> Result<usize> {
        self.check_width(x.cols())?;
        let p = x.cols();
        let mut clamped = 0;
        match self.step {
            Step::Center | Step::Standardize => {
                for (idx, v) in x.data_mut().iter_mut().enumerate() {
                    let j = idx % p;
                    *v = (*v - self.mean[j]) / self.scale[j];
                }
            }
            Step::Sqrt => {
                for (idx, v) in x.data_mut().iter_mut().enumerate() {
                    if *v < SQRT_CLAMP {
                        return Err(DpaError::param(format!(
                            "sqrt of negative value {} at row {}, column {}",
                            *v,
                            idx / p,
                            idx % p
                        )));
                    }
                    if *v < 0.0 {
                        *v = 0.0;
                        clamped += 1;
                    }
                    *v = v.sqrt();
                }
            }
        }
        Ok(clamped)
    }

    fn invert(&self, x: &mut Matrix) -> Result<()> {
        self.check_width(x.cols())?;
        let p = x.cols();
        match self.step {
            Step::Center | Step::Standardize => {
                for (idx, v) in x.data_mut().iter_mut().enumerate() {
                    let j = idx % p;
                    *v = *v * self.scale[j] + self.mean[j];
                }
            }
            Step::Sqrt => x.data_mut().iter_mut().for_each(|v| *v *= *v),
        }
        Ok(())
    }
}

/// Fits each step on the output of the previous one and appends the fitted
/// transforms to the dataset's record.
pub fn preprocess(dataset: &Dataset, steps: &[Step]) -> Result<Dataset> {
    let mut out = dataset.clone();
    for &step in steps {
        let mut t = Transform::fit(step, &out.x)?;
        t.clamped = t.apply(&mut out.x)?;
        out.preprocessing.push(t);
    }
    Ok(out)
}

/// Applies stored transforms without refitting.
pub fn apply_transforms(transforms: &[Transform], x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for t in transforms {
        t.apply(&mut out)?;
    }
    Ok(out)
}

/// Undoes stored transforms, newest first.
pub fn invert_transforms(transforms: &[Transform], x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for t in transforms.iter().rev() {
        t.invert(&mut out)?;
    }
    Ok(out)
}

/// Maps `xhat` from the dataset's preprocessed space back to raw units.
pub fn inverse_preprocess(dataset: &Dataset, xhat: &Matrix) -> Result<Matrix> {
    invert_transforms(&dataset.preprocessing, xhat)
}
