//! PCA, the zero-masked ordered autoencoder, and closed forms for the
//! linear-Gaussian case.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DpaError, Result};
use crate::linalg::{self, cholesky_psd, solve_pd, symmetric_eigen};
use crate::matrix::Matrix;
use crate::model::{read_tensors, write_checkpoint, DpaModel, ModelKind, Reconstructor, MODEL_BIN, MODEL_JSON};
use crate::nn::Architecture;
use crate::objective::LatentSchedule;
use crate::optim::{train_model, EpochRecord, TrainConfig, TrainHistory};
use crate::rng::{self, Rng};

pub use crate::linalg::random_frame;

const FRAME_TOL: f64 = 1e-8;

/// Principal components of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `p x p`, orthonormal columns in order of `eigenvalues`.
    pub components: Matrix,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
}

pub fn pca_fit(x: &Matrix) -> Result<PcaModel> {
    if x.rows() < 2 {
        return Err(DpaError::param(format!("PCA needs at least 2 rows, got {}", x.rows())));
    }
    let eig = symmetric_eigen(&x.covariance()?)?;
    Ok(PcaModel {
        mean: x.col_means(),
        components: eig.vectors,
        eigenvalues: eig.values,
    })
}

impl PcaModel {
    pub fn p(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Matrix, k: usize) -> Result<()> {
        if x.cols() != self.p() {
            return Err(DpaError::dim("pca", x.shape(), (x.rows(), self.p())));
        }
        if k > self.p() {
            return Err(DpaError::param(format!("k={k} exceeds dimension {}", self.p())));
        }
        Ok(())
    }

    fn centered(&self, x: &Matrix) -> Result<Matrix> {
        x.sub_row(&Matrix::row_vector(&self.mean))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = PcaMeta {
            version: 1,
            kind: "pca".into(),
            p: self.p(),
            eigenvalues: self.eigenvalues.clone(),
        };
        let mean = Matrix::row_vector(&self.mean);
        write_checkpoint(dir.as_ref(), &meta, &[&mean, &self.components])
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: PcaMeta = serde_json::from_slice(&std::fs::read(dir.join(MODEL_JSON))?)?;
        if meta.kind != "pca" || meta.eigenvalues.len() != meta.p {
            return Err(DpaError::Format("not a PCA checkpoint".into()));
        }
        let p = meta.p;
        let mut t = read_tensors(&dir.join(MODEL_BIN), &[(1, p), (p, p)])?;
        let components = t.pop().expect("two tensors");
        let mean = t.pop().expect("two tensors").into_data();
        Ok(Self {
            mean,
            components,
            eigenvalues: meta.eigenvalues,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaMeta {
    version: u32,
    kind: String,
    p: usize,
    eigenvalues: Vec<f64>,
}

/// `Z = (X - mean) Q[:, :k]`.
pub fn pca_transform(model: &PcaModel, x: &Matrix, k: usize) -> Result<Matrix> {
    model.check(x, k)?;
    model.centered(x)?.matmul(&model.components.slice_cols(0, k)?)
}

/// `mean + Z Q[:, :k]^T`.
pub fn pca_reconstruct(model: &PcaModel, x: &Matrix, k: usize) -> Result<Matrix> {
    let z = pca_transform(model, x, k)?;
    let q = model.components.slice_cols(0, k)?;
    z.matmul(&q.transpose())?.add_row(&Matrix::row_vector(&model.mean))
}

impl Reconstructor for PcaModel {
    fn max_k(&self) -> usize {
        self.p()
    }

    fn reconstruct(&self, x: &Matrix, k: usize, _rng: &mut Rng) -> Result<Matrix> {
        pca_reconstruct(self, x, k)
    }
}

/// Trains the zero-masked squared-error autoencoder. The decoder is made
/// deterministic by setting `noise_per_layer` to zero.
pub fn ordered_ae_train(dataset: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(DpaModel, TrainHistory)> {
    ordered_ae_train_with(dataset, arch, cfg, |_| {})
}

pub fn ordered_ae_train_with(
    dataset: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(DpaModel, TrainHistory)> {
    let arch = Architecture {
        noise_per_layer: 0,
        ..arch.clone()
    };
    train_model(dataset, &arch, cfg, ModelKind::OrderedAe, on_epoch)
}

fn check_frame(m: &Matrix, p: usize) -> Result<()> {
    if m.rows() != p {
        return Err(DpaError::dim("frame", m.shape(), (p, m.cols())));
    }
    let gram = m.transpose().matmul(m)?;
    let dev = gram.max_abs_diff(&Matrix::identity(m.cols()))?;
    if dev > FRAME_TOL {
        return Err(DpaError::param(format!(
            "frame columns are not orthonormal (max deviation {dev:e})"
        )));
    }
    Ok(())
}

/// `Sigma M (M^T Sigma M)^{-1}`, the regression of `X` on `M^T X`.
fn regression_map(m: &Matrix, sigma: &Matrix) -> Result<Matrix> {
    let sm = sigma.matmul(m)?;
    let a = m.transpose().matmul(&sm)?;
    Ok(solve_pd(&a, &sm.transpose())?.transpose())
}

/// Conditional covariance `G = Sigma - Sigma M (M^T Sigma M)^{-1} M^T Sigma`,
/// symmetrized.
fn conditional_covariance(m: &Matrix, sigma: &Matrix) -> Result<Matrix> {
    if m.cols() == 0 {
        return Ok(sigma.clone());
    }
    let b = regression_map(m, sigma)?;
    let g = sigma.sub(&b.matmul(&m.transpose())?.matmul(sigma)?)?;
    Ok(g.add(&g.transpose())?.scale(0.5))
}

/// `tr(G)` for a `p x k` orthonormal frame `m`.
pub fn objective_trace_g(m: &Matrix, sigma: &Matrix) -> Result<f64> {
    linalg::check_symmetric(sigma, "objective_trace_g")?;
    check_frame(m, sigma.rows())?;
    linalg::cholesky_pd(sigma)?;
    let g = conditional_covariance(m, sigma)?;
    Ok((0..g.rows()).map(|i| g.get(i, i)).sum())
}

/// `sum_k w_k tr(G(M[:, :k]))` over the nested prefixes of `m`.
pub fn nested_trace_objective(m: &Matrix, sigma: &Matrix, schedule: &LatentSchedule) -> Result<f64> {
    schedule.validate_for(m.cols())?;
    schedule
        .iter()
        .map(|(k, w)| Ok(w * objective_trace_g(&m.slice_cols(0, k)?, sigma)?))
        .sum()
}

/// Exact sampler of `X | M^T X` for `X ~ N(mu, Sigma)`.
#[derive(Clone, Debug)]
pub struct ConditionalGaussian {
    pub mean: Vec<f64>,
    pub frame: Matrix,
    /// `p x p` map with `nu(x) - mu = (x - mu) P` for row vectors.
    projector: Matrix,
    pub covariance: Matrix,
    chol: Matrix,
}

impl ConditionalGaussian {
    pub fn new(mean: &[f64], sigma: &Matrix, frame: &Matrix) -> Result<Self> {
        let p = mean.len();
        linalg::check_symmetric(sigma, "conditional_gaussian")?;
        if sigma.rows() != p {
            return Err(DpaError::dim("conditional_gaussian", sigma.shape(), (p, p)));
        }
        check_frame(frame, p)?;
        let projector = if frame.cols() == 0 {
            Matrix::zeros(p, p)
        } else {
            frame.matmul(&regression_map(frame, sigma)?.transpose())?
        };
        let covariance = conditional_covariance(frame, sigma)?;
        let chol = cholesky_psd(&covariance)?;
        Ok(Self {
            mean: mean.to_vec(),
            frame: frame.clone(),
            projector,
            covariance,
            chol,
        })
    }

    /// `nu(x)` row by row.
    pub fn conditional_mean(&self, x: &Matrix) -> Result<Matrix> {
        let mu = Matrix::row_vector(&self.mean);
        x.sub_row(&mu)?.matmul(&self.projector)?.add_row(&mu)
    }

    pub fn sample(&self, x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let eps = rng::normal_matrix(x.rows(), self.mean.len(), rng);
        self.conditional_mean(x)?.add(&eps.matmul(&self.chol.transpose())?)
    }
}

impl Reconstructor for ConditionalGaussian {
    fn max_k(&self) -> usize {
        self.frame.cols()
    }

    /// Only `k` equal to the frame width is meaningful.
    fn reconstruct(&self, x: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix> {
        if k != self.frame.cols() {
            return Err(DpaError::param(format!(
                "conditional sampler is fixed at k={}, got {k}",
                self.frame.cols()
            )));
        }
        self.sample(x, rng)
    }
}
