//! Small dense linear algebra for symmetric matrices: cyclic Jacobi
//! eigendecomposition, (semi-)definite Cholesky and Gram-Schmidt QR.

use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop, relative to the
/// matrix norm.
pub const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Pivots below this (relative to the largest diagonal entry) are treated as
/// exact zeros by [`cholesky_psd`].
pub const PSD_JITTER: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Non-increasing.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

pub fn check_square(a: &Matrix, op: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(DpaError::dim(op, a.shape(), (a.rows(), a.rows())));
    }
    Ok(())
}

pub fn check_symmetric(a: &Matrix, op: &'static str) -> Result<()> {
    check_square(a, op)?;
    let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.rows() {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * scale {
                return Err(DpaError::param(format!(
                    "{op}: matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a.get(i, j),
                    a.get(j, i)
                )));
            }
        }
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are sorted in non-increasing order; equal values keep their
/// original diagonal order. Each eigenvector is signed so that its
/// largest-magnitude entry is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(a, "symmetric_eigen")?;
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let norm = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.col(src);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            vectors.set(i, dst, sign * x);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower-triangular `L` with `L L^T = a` for a positive semi-definite `a`.
/// Columns whose pivot falls below [`PSD_JITTER`] are set to zero, so rank
/// deficient inputs are handled exactly.
pub fn cholesky_psd(a: &Matrix) -> Result<Matrix> {
    check_symmetric(a, "cholesky")?;
    let n = a.rows();
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(1.0f64, f64::max);
    let floor = PSD_JITTER * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a.get(j, j) - (0..j).map(|k| l.get(j, k).powi(2)).sum::<f64>();
        if d < -1e-8 * scale {
            return Err(DpaError::param(format!(
                "matrix is not positive semi-definite (pivot {d} at {j})"
            )));
        }
        if d <= floor {
            for i in j + 1..n {
                let r = a.get(i, j) - (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>();
                if r.abs() > 1e-6 * scale {
                    return Err(DpaError::param(format!(
                        "matrix is not positive semi-definite (zero pivot at {j} with coupling {r})"
                    )));
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let r = a.get(i, j) - (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>();
            l.set(i, j, r / ljj);
        }
    }
    Ok(l)
}

/// Strict Cholesky factor of a positive definite matrix.
pub fn cholesky_pd(a: &Matrix) -> Result<Matrix> {
    check_symmetric(a, "cholesky")?;
    let n = a.rows();
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0f64, f64::max);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a.get(j, j) - (0..j).map(|k| l.get(j, k).powi(2)).sum::<f64>();
        if !(d > PSD_JITTER * scale) {
            return Err(DpaError::Numeric(format!(
                "matrix is singular or indefinite (pivot {d} at {j})"
            )));
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let r = a.get(i, j) - (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>();
            l.set(i, j, r / ljj);
        }
    }
    Ok(l)
}

/// Solves `a X = b` for positive definite `a`.
pub fn solve_pd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(DpaError::dim("solve_pd", a.shape(), b.shape()));
    }
    let l = cholesky_pd(a)?;
    let n = a.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let s = x.get(i, c) - (0..i).map(|k| l.get(i, k) * x.get(k, c)).sum::<f64>();
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let s = x.get(i, c) - (i + 1..n).map(|k| l.get(k, i) * x.get(k, c)).sum::<f64>();
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// Orthonormal basis of the column space of `a` (full column rank) by
/// twice-iterated modified Gram-Schmidt, with `R` diagonal made positive.
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    let (n, k) = a.shape();
    if k > n {
        return Err(DpaError::dim("orthonormalize", a.shape(), (n, n)));
    }
    let mut q = a.clone();
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = (0..n).map(|r| q.get(r, i) * q.get(r, j)).sum();
                for r in 0..n {
                    let v = q.get(r, j) - dot * q.get(r, i);
                    q.set(r, j, v);
                }
            }
        }
        let norm: f64 = (0..n).map(|r| q.get(r, j).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(DpaError::Numeric("columns are linearly dependent".into()));
        }
        for r in 0..n {
            let v = q.get(r, j) / norm;
            q.set(r, j, v);
        }
    }
    Ok(q)
}

/// Uniformly distributed `p x k` frame with orthonormal columns.
pub fn random_frame(p: usize, k: usize, rng: &mut Rng) -> Result<Matrix> {
    orthonormalize(&rng::normal_matrix(p, k, rng))
}
