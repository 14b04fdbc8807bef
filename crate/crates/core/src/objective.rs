//! Training objectives: latent masking, the per-k energy loss and the
//! weighted multi-k objective, plus the zero-filled squared-error objective
//! of the ordered autoencoder baseline.
//!
//! For a batch `X` with embedding `Z = e(X)`, each `k` in the schedule keeps
//! the first `k` latent columns, fills the rest (Gaussian noise for DPA,
//! zeros for the ordered AE), decodes `m` independent reconstructions and
//! scores them with
//!
//! ```text
//! L_k = mean_i [ 1/m sum_j ||X_i - Xhat_ij||^b
//!              - 1/(2m(m-1)) sum_{j != j'} ||Xhat_ij - Xhat_ij'||^b ]
//! ```
//!
//! The total is `sum_k w_k L_k`, accumulated in ascending `k`.

use serde::{Deserialize, Serialize};

use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::nn::{Autoencoder, BoundParams};
use crate::rng::{self, Rng};
use crate::tape::{NodeId, Tape};

/// Retained-dimension set and its mixture weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSchedule {
    ks: Vec<usize>,
    weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl LatentSchedule {
    /// Uniform weights `1/|K|`.
    pub fn uniform(ks: &[usize]) -> Result<Self> {
        let w = 1.0 / ks.len().max(1) as f64;
        Self::new(ks, &vec![w; ks.len()])
    }

    /// Pairs are sorted by `k`; duplicate `k` values are rejected.
    pub fn new(ks: &[usize], weights: &[f64]) -> Result<Self> {
        if ks.is_empty() {
            return Err(DpaError::param("latent schedule needs at least one k"));
        }
        if ks.len() != weights.len() {
            return Err(DpaError::param(format!(
                "{} k values but {} weights",
                ks.len(),
                weights.len()
            )));
        }
        let mut pairs: Vec<(usize, f64)> = ks.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(DpaError::param("duplicate k in latent schedule"));
        }
        if let Some((k, w)) = pairs.iter().find(|(_, w)| !(0.0..=1.0).contains(w)) {
            return Err(DpaError::param(format!("weight {w} for k={k} is outside [0, 1]")));
        }
        let sum: f64 = pairs.iter().map(|p| p.1).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DpaError::param(format!("schedule weights sum to {sum}, expected 1")));
        }
        Ok(Self {
            ks: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Single `k` with weight one.
    pub fn fixed(k: usize) -> Self {
        Self {
            ks: vec![k],
            weights: vec![1.0],
        }
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_k(&self) -> usize {
        *self.ks.last().expect("schedule is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.ks.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn validate_for(&self, latent_dim: usize) -> Result<()> {
        if self.max_k() > latent_dim {
            return Err(DpaError::param(format!(
                "schedule k={} exceeds latent_dim {latent_dim}",
                self.max_k()
            )));
        }
        Ok(())
    }
}

/// Per-k losses and their weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub per_k: Vec<(usize, f64)>,
    pub total: f64,
}

/// What replaces the dropped latent columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    Noise,
    Zeros,
}

/// Energy-score loss settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyLoss {
    beta: f64,
    m: usize,
}

impl EnergyLoss {
    /// Training form: `beta` in `(0, 2)`, `m >= 2`.
    pub fn new(beta: f64, m: usize) -> Result<Self> {
        if !(beta > 0.0 && beta < 2.0) {
            return Err(DpaError::param(format!(
                "energy loss beta must lie in (0, 2), got {beta}"
            )));
        }
        Self::diagnostic(beta, m)
    }

    /// Diagnostic form accepting `beta = 2`.
    pub fn diagnostic(beta: f64, m: usize) -> Result<Self> {
        crate::matrix::NormExponent::new(beta)?;
        if m < 2 {
            return Err(DpaError::param(format!(
                "energy loss needs m >= 2 decoder draws, got {m}"
            )));
        }
        Ok(Self { beta, m })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn draws(&self) -> usize {
        self.m
    }
}

/// The loss a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Noise-filled masking scored with the energy loss.
    Dpa(EnergyLoss),
    /// Zero-filled masking scored with the squared error of one draw.
    OrderedAe,
}

impl Objective {
    pub fn fill(&self) -> MaskFill {
        match self {
            Objective::Dpa(_) => MaskFill::Noise,
            Objective::OrderedAe => MaskFill::Zeros,
        }
    }
}

/// Key of the noise streams used by one loss evaluation. Each sample's
/// noise for a given `k` comes from `substream(seed, path ++ [k, row])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: Vec<u64>,
}

impl NoiseKey {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Self {
            seed,
            path: path.to_vec(),
        }
    }

    fn sample_stream(&self, k: usize, row: usize) -> Rng {
        let mut path = self.path.clone();
        path.push(k as u64);
        path.push(row as u64);
        rng::substream(self.seed, &path)
    }
}

/// Keeps the first `k` columns of `z` and fills the rest with fresh standard
/// Gaussian draws, row by row.
pub fn mask_latent(z: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix> {
    let latent = z.cols();
    if k > latent {
        return Err(DpaError::param(format!("k={k} exceeds latent dimension {latent}")));
    }
    let mut out = z.clone();
    for i in 0..z.rows() {
        for v in &mut out.row_mut(i)[k..] {
            *v = rng::standard_normal(rng);
        }
    }
    Ok(out)
}

/// Zero-filled counterpart of [`mask_latent`].
pub fn mask_latent_zeros(z: &Matrix, k: usize) -> Result<Matrix> {
    let latent = z.cols();
    if k > latent {
        return Err(DpaError::param(format!("k={k} exceeds latent dimension {latent}")));
    }
    let mut out = z.clone();
    for i in 0..z.rows() {
        out.row_mut(i)[k..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}

/// Noise for `draws` stacked copies of an `n`-row batch at one `k`.
struct StackedNoise {
    latent_fill: Matrix,
    layers: Vec<Matrix>,
}

fn stacked_noise(
    model: &Autoencoder,
    k: usize,
    draws: usize,
    fill: MaskFill,
    row_ids: &[usize],
    key: &NoiseKey,
) -> StackedNoise {
    let arch = &model.arch;
    let n = row_ids.len();
    let fill_w = arch.latent_dim - k;
    let eta = arch.noise_per_layer;
    let mut latent_fill = Matrix::zeros(draws * n, fill_w);
    let mut layers: Vec<Matrix> = (0..arch.depth).map(|_| Matrix::zeros(draws * n, eta)).collect();
    let need_latent = fill == MaskFill::Noise && fill_w > 0;
    if need_latent || eta > 0 {
        for (i, &row) in row_ids.iter().enumerate() {
            let mut rng = key.sample_stream(k, row);
            for j in 0..draws {
                let r = j * n + i;
                if need_latent {
                    for v in latent_fill.row_mut(r) {
                        *v = rng::standard_normal(&mut rng);
                    }
                }
                for layer in &mut layers {
                    for v in layer.row_mut(r) {
                        *v = rng::standard_normal(&mut rng);
                    }
                }
            }
        }
    }
    StackedNoise { latent_fill, layers }
}

/// Reconstruction and spread terms of one `k` on a tape. The spread term is
/// `None` for a single draw.
pub struct KTerms {
    pub reconstruction: NodeId,
    pub spread: Option<NodeId>,
    pub loss: NodeId,
}

/// Records `L_k` for embedding `z` of batch `x`.
#[allow(clippy::too_many_arguments)]
fn k_terms_on(
    tape: &mut Tape,
    model: &Autoencoder,
    bound: &BoundParams,
    x: NodeId,
    z: NodeId,
    k: usize,
    objective: &Objective,
    row_ids: &[usize],
    key: &NoiseKey,
) -> Result<KTerms> {
    let latent = model.arch.latent_dim;
    if k > latent {
        return Err(DpaError::param(format!("k={k} exceeds latent dimension {latent}")));
    }
    let n = tape.value(x).rows();
    if row_ids.len() != n {
        return Err(DpaError::Contract(format!(
            "{} row ids for a batch of {n} rows",
            row_ids.len()
        )));
    }
    let (draws, beta) = match objective {
        Objective::Dpa(e) => (e.m, e.beta),
        Objective::OrderedAe => (1, 2.0),
    };
    let noise = stacked_noise(model, k, draws, objective.fill(), row_ids, key);

    let z_rep = if draws == 1 {
        z
    } else {
        tape.concat_rows(&vec![z; draws])?
    };
    let z_tilde = if k == latent {
        z_rep
    } else {
        let kept = tape.slice_cols(z_rep, 0, k)?;
        let fill = tape.constant(noise.latent_fill);
        tape.concat_cols(&[kept, fill])?
    };
    let layer_noise: Vec<NodeId> = noise.layers.into_iter().map(|m| tape.constant(m)).collect();
    let xhat = model.decode_on(tape, bound, z_tilde, &layer_noise)?;

    let x_rep = if draws == 1 {
        x
    } else {
        tape.concat_rows(&vec![x; draws])?
    };
    let resid = tape.sub(x_rep, xhat)?;
    let resid_norms = tape.row_norm_pow(resid, beta)?;
    let reconstruction = tape.mean(resid_norms);
    if draws == 1 {
        return Ok(KTerms {
            reconstruction,
            spread: None,
            loss: reconstruction,
        });
    }

    let blocks: Vec<NodeId> = (0..draws)
        .map(|j| tape.slice_rows(xhat, j * n, (j + 1) * n))
        .collect::<Result<_>>()?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for j in 0..draws {
        for jj in j + 1..draws {
            left.push(blocks[j]);
            right.push(blocks[jj]);
        }
    }
    let (l, r) = if left.len() == 1 {
        (left[0], right[0])
    } else {
        (tape.concat_rows(&left)?, tape.concat_rows(&right)?)
    };
    let pair_diff = tape.sub(l, r)?;
    let pair_norms = tape.row_norm_pow(pair_diff, beta)?;
    // mean over unordered pairs equals 1/(m(m-1)) sum over ordered pairs
    let spread = tape.mean(pair_norms);
    let half_spread = tape.scale(spread, -0.5);
    let loss = tape.add(reconstruction, half_spread)?;
    Ok(KTerms {
        reconstruction,
        spread: Some(spread),
        loss,
    })
}

/// Nodes of the full weighted objective.
pub struct ObjectiveNodes {
    pub total: NodeId,
    pub per_k: Vec<(usize, NodeId)>,
}

/// Records the weighted objective for batch `x` on a tape. The encoder runs
/// once; each `k` decodes with its own noise streams.
#[allow(clippy::too_many_arguments)]
pub fn objective_on(
    tape: &mut Tape,
    model: &Autoencoder,
    bound: &BoundParams,
    x: NodeId,
    schedule: &LatentSchedule,
    objective: &Objective,
    row_ids: &[usize],
    key: &NoiseKey,
) -> Result<ObjectiveNodes> {
    schedule.validate_for(model.arch.latent_dim)?;
    let z = model.encode_on(tape, bound, x)?;
    let mut per_k = Vec::with_capacity(schedule.ks().len());
    let mut total: Option<NodeId> = None;
    for (k, w) in schedule.iter() {
        let terms = k_terms_on(tape, model, bound, x, z, k, objective, row_ids, key)?;
        per_k.push((k, terms.loss));
        let weighted = tape.scale(terms.loss, w);
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    Ok(ObjectiveNodes {
        total: total.expect("schedule is never empty"),
        per_k,
    })
}

fn default_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Evaluates the objective without gradients.
pub fn evaluate_objective(
    model: &Autoencoder,
    x: &Matrix,
    schedule: &LatentSchedule,
    objective: &Objective,
    key: &NoiseKey,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let bound = model.bind_constant(&mut tape);
    let xi = tape.constant(x.clone());
    let rows = default_rows(x.rows());
    let nodes = objective_on(&mut tape, model, &bound, xi, schedule, objective, &rows, key)?;
    Ok(LossReport {
        per_k: nodes
            .per_k
            .iter()
            .map(|&(k, id)| tape.value(id).item().map(|v| (k, v)))
            .collect::<Result<_>>()?,
        total: tape.value(nodes.total).item()?,
    })
}

/// `L_k` of the energy loss for a single `k`.
pub fn energy_loss_k(model: &Autoencoder, x: &Matrix, k: usize, loss: EnergyLoss, key: &NoiseKey) -> Result<f64> {
    Ok(energy_terms_k(model, x, k, loss, key)?.loss)
}

/// Both terms of `L_k`: `reconstruction - spread / 2 = loss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTerms {
    pub reconstruction: f64,
    pub spread: f64,
    pub loss: f64,
}

pub fn energy_terms_k(
    model: &Autoencoder,
    x: &Matrix,
    k: usize,
    loss: EnergyLoss,
    key: &NoiseKey,
) -> Result<EnergyTerms> {
    let mut tape = Tape::new();
    let bound = model.bind_constant(&mut tape);
    let xi = tape.constant(x.clone());
    let z = model.encode_on(&mut tape, &bound, xi)?;
    let rows = default_rows(x.rows());
    let terms = k_terms_on(&mut tape, model, &bound, xi, z, k, &Objective::Dpa(loss), &rows, key)?;
    Ok(EnergyTerms {
        reconstruction: tape.value(terms.reconstruction).item()?,
        spread: tape.value(terms.spread.expect("m >= 2")).item()?,
        loss: tape.value(terms.loss).item()?,
    })
}

/// Weighted DPA objective.
pub fn dpa_loss(
    model: &Autoencoder,
    x: &Matrix,
    schedule: &LatentSchedule,
    loss: EnergyLoss,
    key: &NoiseKey,
) -> Result<LossReport> {
    evaluate_objective(model, x, schedule, &Objective::Dpa(loss), key)
}

/// Weighted ordered-AE objective.
pub fn ordered_ae_loss(model: &Autoencoder, x: &Matrix, schedule: &LatentSchedule) -> Result<LossReport> {
    evaluate_objective(model, x, schedule, &Objective::OrderedAe, &NoiseKey::new(0, &[]))
}

/// Plug-in energy loss for given reconstructions: `draws[j]` holds the
/// `j`-th reconstruction of every row of `x`.
pub fn energy_loss_from_draws(x: &Matrix, draws: &[Matrix], beta: f64) -> Result<f64> {
    let m = draws.len();
    if m < 2 {
        return Err(DpaError::param(format!("need at least 2 draws, got {m}")));
    }
    let beta = crate::matrix::NormExponent::new(beta)?.get();
    let n = x.rows();
    let mut acc = 0.0;
    for i in 0..n {
        let xi = x.row(i);
        let recon: f64 = draws.iter().map(|d| norm_pow(xi, d.row(i), beta)).sum::<f64>() / m as f64;
        let mut spread = 0.0;
        for j in 0..m {
            for jj in 0..m {
                if j != jj {
                    spread += norm_pow(draws[j].row(i), draws[jj].row(i), beta);
                }
            }
        }
        acc += recon - spread / (2.0 * (m * (m - 1)) as f64);
    }
    Ok(acc / n as f64)
}

pub(crate) fn norm_pow(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    crate::matrix::pow_half(sq, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};

    fn arch(eta: usize) -> Architecture {
        Architecture {
            input_dim: 4,
            latent_dim: 3,
            depth: 2,
            width: 5,
            noise_per_layer: eta,
            skip_every: 2,
            activation: Activation::LeakyRelu,
        }
    }

    fn data(n: usize) -> Matrix {
        rng::normal_matrix(n, 4, &mut rng::seeded(21))
    }

    #[test]
    fn schedule_validation() {
        assert!(LatentSchedule::uniform(&[0, 1, 2]).is_ok());
        assert!(LatentSchedule::new(&[0, 1], &[0.5, 0.6]).is_err());
        assert!(LatentSchedule::new(&[0, 1], &[1.5, -0.5]).is_err());
        assert!(LatentSchedule::new(&[1, 1], &[0.5, 0.5]).is_err());
        assert!(LatentSchedule::new(&[], &[]).is_err());
        let s = LatentSchedule::new(&[4, 0], &[0.25, 0.75]).unwrap();
        assert_eq!(s.ks(), &[0, 4]);
        assert_eq!(s.weights(), &[0.75, 0.25]);
        assert!(s.validate_for(3).is_err());
    }

    #[test]
    fn mask_full_k_is_identity() {
        let z = data(5);
        let out = mask_latent(&z, 4, &mut rng::seeded(1)).unwrap();
        assert_eq!(out, z);
        assert!(mask_latent(&z, 5, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn masked_columns_are_standard_normal_and_independent() {
        let n = 10_000;
        let z = rng::normal_matrix(n, 3, &mut rng::seeded(2));
        let out = mask_latent(&z, 1, &mut rng::seeded(3)).unwrap();
        assert_eq!(out.col(0), z.col(0));
        for j in 1..3 {
            let c = out.col(j);
            let mean = c.iter().sum::<f64>() / n as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!(var > 0.9 && var < 1.1, "var {var}");
        }
        let zero = mask_latent(&z, 0, &mut rng::seeded(4)).unwrap();
        for j in 0..3 {
            for jj in 0..3 {
                let r = correlation(&zero.col(j), &z.col(jj));
                assert!(r.abs() < 0.05, "corr {r}");
            }
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn hand_evaluated_point() {
        let x = Matrix::column(&[0.0]);
        let d1 = Matrix::column(&[1.0]);
        let d2 = Matrix::column(&[-1.0]);
        assert_eq!(energy_loss_from_draws(&x, &[d1, d2], 1.0).unwrap(), 0.0);
        let d = Matrix::column(&[0.0]);
        assert_eq!(energy_loss_from_draws(&x, &[d.clone(), d], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn energy_loss_rejects_bad_settings() {
        assert!(EnergyLoss::new(2.0, 2).is_err());
        assert!(EnergyLoss::new(0.0, 2).is_err());
        assert!(EnergyLoss::new(1.0, 1).is_err());
        assert!(EnergyLoss::diagnostic(2.0, 2).is_ok());
    }

    #[test]
    fn tape_loss_matches_plug_in_formula() {
        let model = Autoencoder::init(arch(3), 7).unwrap();
        let x = data(6);
        let key = NoiseKey::new(5, &[1, 2]);
        for m in [2, 3, 4] {
            for k in [0, 1, 3] {
                let loss = EnergyLoss::new(1.0, m).unwrap();
                let got = energy_loss_k(&model, &x, k, loss, &key).unwrap();
                // reproduce the same noise outside the tape
                let noise = stacked_noise(&model, k, m, MaskFill::Noise, &default_rows(6), &key);
                let z = model.encode(&x).unwrap();
                let n = x.rows();
                let draws: Vec<Matrix> = (0..m)
                    .map(|j| {
                        let fill = noise.latent_fill.slice_rows(j * n, (j + 1) * n).unwrap();
                        let zt = Matrix::concat_cols(&[&z.slice_cols(0, k).unwrap(), &fill]).unwrap();
                        let layers = noise
                            .layers
                            .iter()
                            .map(|l| l.slice_rows(j * n, (j + 1) * n).unwrap())
                            .collect();
                        model
                            .decode_with_noise(&zt, &crate::nn::DecoderNoise { per_layer: layers })
                            .unwrap()
                    })
                    .collect();
                let expect = energy_loss_from_draws(&x, &draws, 1.0).unwrap();
                assert!((got - expect).abs() < 1e-12, "m={m} k={k}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn deterministic_decoder_reduces_to_reconstruction_error() {
        let model = Autoencoder::init(arch(0), 7).unwrap();
        let x = data(6);
        let key = NoiseKey::new(5, &[]);
        let terms = energy_terms_k(&model, &x, 3, EnergyLoss::new(1.0, 2).unwrap(), &key).unwrap();
        assert_eq!(terms.spread, 0.0);
        let z = model.encode(&x).unwrap();
        let xhat = model.decode(&z, &mut rng::seeded(0)).unwrap();
        let mean_norm = (0..6).map(|i| norm_pow(x.row(i), xhat.row(i), 1.0)).sum::<f64>() / 6.0;
        assert!((terms.loss - mean_norm).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_uniform_totals() {
        let model = Autoencoder::init(arch(2), 8).unwrap();
        let x = data(5);
        let key = NoiseKey::new(9, &[0]);
        let loss = EnergyLoss::new(1.0, 2).unwrap();
        let single = dpa_loss(&model, &x, &LatentSchedule::fixed(2), loss, &key).unwrap();
        assert_eq!(single.total, single.per_k[0].1);
        let uni = dpa_loss(&model, &x, &LatentSchedule::uniform(&[0, 1, 2]).unwrap(), loss, &key).unwrap();
        let mean = uni.per_k.iter().map(|p| p.1).sum::<f64>() / 3.0;
        assert!((uni.total - mean).abs() < 1e-12);
        // each L_k equals the single-k evaluation: noise is keyed by k
        for &(k, lk) in &uni.per_k {
            assert_eq!(lk, energy_loss_k(&model, &x, k, loss, &key).unwrap());
        }
    }

    #[test]
    fn per_k_losses_do_not_depend_on_evaluation_order() {
        let model = Autoencoder::init(arch(2), 8).unwrap();
        let x = data(5);
        let key = NoiseKey::new(9, &[3]);
        let loss = EnergyLoss::new(1.0, 2).unwrap();
        let forward: Vec<f64> = [0, 1, 2]
            .iter()
            .map(|&k| energy_loss_k(&model, &x, k, loss, &key).unwrap())
            .collect();
        let backward: Vec<f64> = [2, 1, 0]
            .iter()
            .map(|&k| energy_loss_k(&model, &x, k, loss, &key).unwrap())
            .collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn zero_loss_requires_exact_reconstruction() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap();
        assert_eq!(energy_loss_from_draws(&x, &[x.clone(), x.clone()], 1.0).unwrap(), 0.0);
        // a decoder shifted away from X scores strictly positive
        let shifted = x.map(|v| v + 0.1);
        assert!(energy_loss_from_draws(&x, &[shifted.clone(), shifted], 1.0).unwrap() > 0.0);
        let mut rng = rng::seeded(5);
        let jitter = |rng: &mut Rng| x.add(&rng::normal_matrix(2, 2, rng).scale(0.1)).unwrap();
        let draws: Vec<Matrix> = (0..8).map(|_| jitter(&mut rng)).collect();
        assert!(energy_loss_from_draws(&x, &draws, 1.0).unwrap() > 0.0);
    }

    proptest::proptest! {
        // triangle inequality: every two-draw term is non-negative for beta = 1
        #[test]
        fn two_draw_loss_is_non_negative(v in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let x = Matrix::new(1, 3, v[0..3].to_vec()).unwrap();
            let a = Matrix::new(1, 3, v[3..6].to_vec()).unwrap();
            let b = Matrix::new(1, 3, v[6..9].to_vec()).unwrap();
            proptest::prop_assert!(energy_loss_from_draws(&x, &[a, b], 1.0).unwrap() >= -1e-12);
        }
    }
}
