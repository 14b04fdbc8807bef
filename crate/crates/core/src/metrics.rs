//! Distributional reconstruction metrics, k-NN accuracy and Q-Q tables.
//!
//! All norms here are plain Euclidean norms (exponent 1), whatever exponent
//! the model was trained with.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::model::Reconstructor;
use crate::objective::norm_pow;
use crate::rng::{self, Rng};

/// Default cap on evaluated pairs per energy-distance term.
pub const MAX_PAIRS: usize = 2_000_000;

/// A Monte-Carlo estimate and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm_pow(a, b, 1.0)
}

/// Sample mean with its standard error.
pub fn mean_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

fn check_nonempty(x: &Matrix, what: &str) -> Result<()> {
    if x.rows() == 0 {
        return Err(DpaError::param(format!("{what} is empty")));
    }
    Ok(())
}

/// `E[ |X - Y| - |Y - Y'| / 2 ]` with two reconstructions `Y, Y'` per row.
/// Each row contributes `(|X - Y| + |X - Y'| - |Y - Y'|) / 2`.
pub fn conditional_energy_loss<R: Reconstructor + ?Sized>(
    model: &R,
    x: &Matrix,
    k: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    model.check_k(k)?;
    check_nonempty(x, "evaluation data")?;
    let draws = model.reconstruct_draws(x, k, 2, rng)?;
    Ok(conditional_energy_from_draws(x, &draws[0], &draws[1]))
}

pub fn conditional_energy_from_draws(x: &Matrix, y: &Matrix, y2: &Matrix) -> Estimate {
    mean_se(&conditional_energy_rows(x, y, y2))
}

/// Per-row contributions to [`conditional_energy_from_draws`].
pub fn conditional_energy_rows(x: &Matrix, y: &Matrix, y2: &Matrix) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let (xi, a, b) = (x.row(i), y.row(i), y2.row(i));
            0.5 * (dist(xi, a) + dist(xi, b) - dist(a, b))
        })
        .collect()
}

/// Squared reconstruction errors `E|X - Y|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseReport {
    /// Averaged over every individual draw.
    pub single_draw: f64,
    /// Error of the average of the draws.
    pub mean_of_draws: f64,
}

pub fn conditional_mse<R: Reconstructor + ?Sized>(
    model: &R,
    x: &Matrix,
    k: usize,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<MseReport> {
    if n_draws == 0 {
        return Err(DpaError::param("n_draws must be at least 1"));
    }
    model.check_k(k)?;
    check_nonempty(x, "evaluation data")?;
    let draws = model.reconstruct_draws(x, k, n_draws, rng)?;
    mse_from_draws(x, &draws)
}

pub fn mse_from_draws(x: &Matrix, draws: &[Matrix]) -> Result<MseReport> {
    for d in draws {
        if d.shape() != x.shape() {
            return Err(DpaError::dim("conditional_mse", x.shape(), d.shape()));
        }
    }
    let n = x.rows() as f64;
    let m = draws.len() as f64;
    let mut single = 0.0;
    let mut averaged = 0.0;
    let mut mean_row = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        mean_row.iter_mut().for_each(|v| *v = 0.0);
        for d in draws {
            single += norm_pow(x.row(i), d.row(i), 2.0);
            for (acc, v) in mean_row.iter_mut().zip(d.row(i)) {
                *acc += v / m;
            }
        }
        averaged += norm_pow(x.row(i), &mean_row, 2.0);
    }
    Ok(MseReport {
        single_draw: single / (n * m),
        mean_of_draws: averaged / n,
    })
}

/// One term of the energy distance: mean distance over index pairs.
struct PairTerm {
    mean: f64,
    /// Variance of the pair mean from subsampling (zero when enumerated).
    sampling_var: f64,
    /// Per-row means of the kernel, indexed by row.
    row_means_a: Vec<f64>,
    row_means_b: Vec<f64>,
}

/// Per-row kernel means; rows never visited are NaN.
fn finish_rows(sums: Vec<f64>, counts: Vec<usize>) -> Vec<f64> {
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

/// Mean of `|a_i - b_j|` over `i != j` (index-wise). With `same`, `b` is `a`
/// and only unordered pairs `i < j` are used.
fn pair_term(a: &Matrix, b: &Matrix, same: bool, max_pairs: usize, rng: &mut Rng) -> PairTerm {
    let (na, nb) = (a.rows(), b.rows());
    let total = if same { na * (na - 1) / 2 } else { na * nb - na.min(nb) };
    let mut sum_a = vec![0.0; na];
    let mut cnt_a = vec![0usize; na];
    let mut sum_b = vec![0.0; nb];
    let mut cnt_b = vec![0usize; nb];
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    let mut visit = |i: usize, j: usize| {
        let d = dist(a.row(i), b.row(j));
        acc += d;
        acc2 += d * d;
        sum_a[i] += d;
        cnt_a[i] += 1;
        sum_b[j] += d;
        cnt_b[j] += 1;
    };
    let count;
    let subsampled = total > max_pairs;
    if !subsampled {
        for i in 0..na {
            let start = if same { i + 1 } else { 0 };
            for j in start..nb {
                if i != j {
                    visit(i, j);
                }
            }
        }
        count = total;
    } else {
        for _ in 0..max_pairs {
            loop {
                let i = rng.random_range(0..na);
                let j = rng.random_range(0..nb);
                if i != j {
                    visit(i, j);
                    break;
                }
            }
        }
        count = max_pairs;
    }
    let c = count as f64;
    let mean = acc / c;
    let sampling_var = if subsampled {
        (acc2 / c - mean * mean).max(0.0) / c
    } else {
        0.0
    };
    let (row_means_a, row_means_b) = if same {
        // each row of a symmetric term appears on both sides
        let sums: Vec<f64> = sum_a.iter().zip(&sum_b).map(|(x, y)| x + y).collect();
        let counts: Vec<usize> = cnt_a.iter().zip(&cnt_b).map(|(x, y)| x + y).collect();
        (finish_rows(sums, counts), Vec::new())
    } else {
        (finish_rows(sum_a, cnt_a), finish_rows(sum_b, cnt_b))
    };
    PairTerm {
        mean,
        sampling_var,
        row_means_a,
        row_means_b,
    }
}

/// Variance of the mean of `cross - within` over rows where both are defined.
fn influence_var(cross: &[f64], within: &[f64]) -> f64 {
    let v: Vec<f64> = cross
        .iter()
        .zip(within)
        .map(|(c, w)| c - w)
        .filter(|d| d.is_finite())
        .collect();
    if v.len() < 2 {
        return 0.0;
    }
    let e = mean_se(&v);
    e.se * e.se
}

/// Orders two samples canonically so the statistic is exactly symmetric.
fn canonical<'a>(a: &'a Matrix, b: &'a Matrix) -> (&'a Matrix, &'a Matrix) {
    let key = |m: &Matrix| (m.rows(), m.data().to_vec());
    let ka = key(a);
    let kb = key(b);
    let ord = ka.0.cmp(&kb.0).then_with(|| {
        ka.1.iter()
            .zip(&kb.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if ord.is_gt() {
        (b, a)
    } else {
        (a, b)
    }
}

/// Energy distance `E|X - Y| - E|X - X'|/2 - E|Y - Y'|/2` between the rows
/// of `a` and `b`, each expectation taken over index pairs with `i != j`.
/// Terms with more than `max_pairs` pairs are estimated from that many pairs
/// drawn uniformly with replacement.
///
/// The standard error combines pair subsampling noise with the first-order
/// row influence `E|x_i - Y| - E|x_i - X'|` of each sample.
pub fn unconditional_energy_distance(a: &Matrix, b: &Matrix, max_pairs: usize, rng: &mut Rng) -> Result<Estimate> {
    if a.cols() != b.cols() {
        return Err(DpaError::dim("energy_distance", a.shape(), b.shape()));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(DpaError::param(format!(
            "energy distance needs at least 2 rows per sample, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if max_pairs == 0 {
        return Err(DpaError::param("max_pairs must be positive"));
    }
    let (a, b) = canonical(a, b);
    let cross = pair_term(a, b, false, max_pairs, rng);
    let aa = pair_term(a, a, true, max_pairs, rng);
    let bb = pair_term(b, b, true, max_pairs, rng);
    let value = cross.mean - 0.5 * aa.mean - 0.5 * bb.mean;
    let sampling = cross.sampling_var + 0.25 * aa.sampling_var + 0.25 * bb.sampling_var;
    let rows = influence_var(&cross.row_means_a, &aa.row_means_a) + influence_var(&cross.row_means_b, &bb.row_means_a);
    Ok(Estimate {
        value,
        se: (sampling + rows).sqrt(),
    })
}

/// Column-averaged 1-D Wasserstein-1 distance. When row counts differ, the
/// larger sample is subsampled without replacement to the smaller size.
pub fn marginal_wasserstein1(a: &Matrix, b: &Matrix, rng: &mut Rng) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(DpaError::dim("marginal_wasserstein1", a.shape(), b.shape()));
    }
    if a.rows() == 0 || b.rows() == 0 || a.cols() == 0 {
        return Err(DpaError::param("marginal_wasserstein1 needs non-empty samples"));
    }
    let n = a.rows().min(b.rows());
    let shrink = |m: &Matrix, rng: &mut Rng| -> Matrix {
        if m.rows() == n {
            m.clone()
        } else {
            let mut idx = rng::permutation(m.rows(), rng);
            idx.truncate(n);
            m.select_rows(&idx)
        }
    };
    let a = shrink(a, rng);
    let b = shrink(b, rng);
    let mut total = 0.0;
    for j in 0..a.cols() {
        let mut ca = a.col(j);
        let mut cb = b.col(j);
        ca.sort_by(f64::total_cmp);
        cb.sort_by(f64::total_cmp);
        total += ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    Ok(total / a.cols() as f64)
}

/// Majority vote of the `neighbors` nearest training rows (Euclidean).
/// Equal distances keep training order; tied votes go to the smallest label.
pub fn knn_accuracy(
    z_train: &Matrix,
    y_train: &[i64],
    z_test: &Matrix,
    y_test: &[i64],
    neighbors: usize,
) -> Result<f64> {
    if z_train.rows() == 0 {
        return Err(DpaError::param("k-NN needs a non-empty training set"));
    }
    if neighbors == 0 {
        return Err(DpaError::param("neighbors must be at least 1"));
    }
    if z_train.cols() != z_test.cols() {
        return Err(DpaError::dim("knn_accuracy", z_train.shape(), z_test.shape()));
    }
    if y_train.len() != z_train.rows() || y_test.len() != z_test.rows() {
        return Err(DpaError::param("label count does not match row count"));
    }
    if z_test.rows() == 0 {
        return Err(DpaError::param("k-NN needs a non-empty test set"));
    }
    let kk = neighbors.min(z_train.rows());
    let mut correct = 0usize;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(z_train.rows());
    for t in 0..z_test.rows() {
        order.clear();
        order.extend((0..z_train.rows()).map(|i| (norm_pow(z_test.row(t), z_train.row(i), 2.0), i)));
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut votes: Vec<(i64, usize)> = Vec::new();
        for &(_, i) in &order[..kk] {
            match votes.iter_mut().find(|(l, _)| *l == y_train[i]) {
                Some(v) => v.1 += 1,
                None => votes.push((y_train[i], 1)),
            }
        }
        let winner = votes
            .iter()
            .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
            .expect("at least one vote")
            .0;
        correct += usize::from(winner == y_test[t]);
    }
    Ok(correct as f64 / z_test.rows() as f64)
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QqRow {
    pub q: f64,
    pub quantile_true: f64,
    pub quantile_fit: f64,
}

/// Quantiles of both samples at levels `i / (n_quantiles + 1)`.
pub fn qq_table(samples_true: &[f64], samples_fit: &[f64], n_quantiles: usize) -> Result<Vec<QqRow>> {
    if n_quantiles < 2 {
        return Err(DpaError::param("n_quantiles must be at least 2"));
    }
    if samples_true.is_empty() || samples_fit.is_empty() {
        return Err(DpaError::param("qq_table needs non-empty samples"));
    }
    let sort = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (st, sf) = (sort(samples_true), sort(samples_fit));
    Ok((1..=n_quantiles)
        .map(|i| {
            let q = i as f64 / (n_quantiles + 1) as f64;
            QqRow {
                q,
                quantile_true: quantile_sorted(&st, q),
                quantile_fit: quantile_sorted(&sf, q),
            }
        })
        .collect())
}

pub fn qq_to_csv(rows: &[QqRow]) -> String {
    let mut out = String::from("q,quantile_true,quantile_fit\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.q, r.quantile_true, r.quantile_fit);
    }
    out
}

/// One row of the evaluation table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub cond_energy: f64,
    pub cond_mse: f64,
    pub uncond_energy_distance: f64,
    pub marginal_w1: f64,
    pub n_eval: usize,
    pub n_draws: usize,
}

pub const REPORT_HEADER: &str = "k,cond_energy,cond_mse,uncond_ed,marg_w1,n_eval,n_draws";

/// All four reconstruction metrics at one `k`. The unconditional metrics
/// compare `x` with the first reconstruction of every row.
pub fn evaluate_k<R: Reconstructor + ?Sized>(
    model: &R,
    x: &Matrix,
    k: usize,
    n_draws: usize,
    max_pairs: usize,
    rng: &mut Rng,
) -> Result<MetricReport> {
    model.check_k(k)?;
    check_nonempty(x, "evaluation data")?;
    let draws = model.reconstruct_draws(x, k, n_draws.max(2), rng)?;
    let energy = conditional_energy_from_draws(x, &draws[0], &draws[1]);
    let mse = mse_from_draws(x, &draws[..n_draws.max(1)])?;
    let ed = unconditional_energy_distance(x, &draws[0], max_pairs, rng)?;
    let w1 = marginal_wasserstein1(x, &draws[0], rng)?;
    Ok(MetricReport {
        k,
        cond_energy: energy.value,
        cond_mse: mse.single_draw,
        uncond_energy_distance: ed.value,
        marginal_w1: w1,
        n_eval: x.rows(),
        n_draws,
    })
}

pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k, r.cond_energy, r.cond_mse, r.uncond_energy_distance, r.marginal_w1, r.n_eval, r.n_draws
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl Reconstructor for Identity {
        fn max_k(&self) -> usize {
            3
        }

        fn reconstruct(&self, x: &Matrix, _k: usize, _rng: &mut Rng) -> Result<Matrix> {
            Ok(x.clone())
        }
    }

    #[test]
    fn perfect_reconstruction_scores_zero() {
        let x = rng::normal_matrix(20, 3, &mut rng::seeded(1));
        let mut r = rng::seeded(2);
        assert_eq!(conditional_energy_loss(&Identity, &x, 1, &mut r).unwrap().value, 0.0);
        let mse = conditional_mse(&Identity, &x, 2, 4, &mut r).unwrap();
        assert_eq!((mse.single_draw, mse.mean_of_draws), (0.0, 0.0));
        let err = conditional_mse(&Identity, &x, 4, 4, &mut r).unwrap_err();
        assert!(err.to_string().contains("max k is 3"));
    }

    #[test]
    fn point_masses_have_unit_distance() {
        let a = Matrix::column(&[0.0, 0.0]);
        let b = Matrix::column(&[1.0, 1.0]);
        let e = unconditional_energy_distance(&a, &b, MAX_PAIRS, &mut rng::seeded(0)).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(unconditional_energy_distance(&Matrix::column(&[0.0]), &b, 10, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn energy_distance_is_symmetric() {
        let a = rng::normal_matrix(40, 2, &mut rng::seeded(3));
        let b = rng::normal_matrix(30, 2, &mut rng::seeded(4));
        for cap in [MAX_PAIRS, 100] {
            let ab = unconditional_energy_distance(&a, &b, cap, &mut rng::seeded(5)).unwrap();
            let ba = unconditional_energy_distance(&b, &a, cap, &mut rng::seeded(5)).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn w1_hand_cases() {
        let a = Matrix::column(&[0.0, 1.0]);
        let b = Matrix::column(&[1.5, 0.5]);
        let mut r = rng::seeded(0);
        assert!((marginal_wasserstein1(&a, &b, &mut r).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(marginal_wasserstein1(&a, &a, &mut r).unwrap(), 0.0);
        let x = rng::normal_matrix(50, 3, &mut rng::seeded(1));
        let shifted = x.map(|v| v + 0.3);
        assert!((marginal_wasserstein1(&x, &shifted, &mut r).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn knn_ties_and_duplicates() {
        let train = Matrix::column(&[-1.0, 1.0]);
        // equidistant neighbours with one vote each: smallest label wins
        let acc = knn_accuracy(&train, &[7, 3], &Matrix::column(&[0.0]), &[3], 2).unwrap();
        assert_eq!(acc, 1.0);
        let acc = knn_accuracy(&train, &[7, 3], &Matrix::column(&[1.0]), &[3], 1).unwrap();
        assert_eq!(acc, 1.0);
        assert!(knn_accuracy(&Matrix::zeros(0, 1), &[], &train, &[0, 0], 5).is_err());
    }

    #[test]
    fn qq_levels_and_shift() {
        let t: Vec<f64> = (0..11).map(f64::from).collect();
        let f: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        let rows = qq_table(&t, &f, 4).unwrap();
        assert_eq!(rows.len(), 4);
        assert!((rows[0].q - 0.2).abs() < 1e-15);
        assert!((rows[0].quantile_true - 2.0).abs() < 1e-12);
        for r in &rows {
            assert!((r.quantile_fit - r.quantile_true - 1.0).abs() < 1e-12);
        }
        assert!(qq_table(&t, &f, 1).is_err());
        assert!(qq_table(&[], &f, 3).is_err());
    }

    #[test]
    fn report_csv_header() {
        let csv = reports_to_csv(&[MetricReport {
            k: 2,
            cond_energy: 0.5,
            cond_mse: 1.0,
            uncond_energy_distance: 0.0,
            marginal_w1: 0.25,
            n_eval: 10,
            n_draws: 16,
        }]);
        assert_eq!(
            csv,
            "k,cond_energy,cond_mse,uncond_ed,marg_w1,n_eval,n_draws\n2,0.5,1,0,0.25,10,16\n"
        );
    }
}
