//! Adam and the minibatch training loop.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::model::{DpaModel, ModelKind};
use crate::nn::{Architecture, Autoencoder};
use crate::objective::{objective_on, EnergyLoss, LatentSchedule, NoiseKey, Objective};
use crate::rng::{self, domain};
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self { step: 0, m, v }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DpaError::Contract(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(DpaError::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub schedule: LatentSchedule,
    /// Energy-loss exponent; ignored by the ordered AE.
    pub beta: f64,
    /// Decoder draws per sample; ignored by the ordered AE.
    pub m: usize,
}

impl TrainConfig {
    pub fn new(schedule: LatentSchedule) -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            adam: AdamConfig::default(),
            seed: 0,
            schedule,
            beta: 1.0,
            m: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DpaError::param("batch_size must be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(DpaError::param(format!(
                "learning_rate must be positive, got {}",
                self.adam.learning_rate
            )));
        }
        Ok(())
    }

    pub fn objective(&self, kind: ModelKind) -> Result<Objective> {
        Ok(match kind {
            ModelKind::Dpa => Objective::Dpa(EnergyLoss::new(self.beta, self.m)?),
            ModelKind::OrderedAe => Objective::OrderedAe,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub per_k: Vec<(usize, f64)>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    /// `epoch,total,k<k>...` with one row per epoch.
    pub fn to_csv(&self, ks: &[usize]) -> String {
        let mut out = String::from("epoch,total");
        for k in ks {
            let _ = write!(out, ",k{k}");
        }
        out.push('\n');
        for e in &self.epochs {
            let _ = write!(out, "{},{}", e.epoch, e.total);
            for (_, v) in &e.per_k {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 5;

/// Trains a DPA model.
pub fn train(dataset: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(DpaModel, TrainHistory)> {
    train_model(dataset, arch, cfg, ModelKind::Dpa, |_| {})
}

/// Trains either model kind, reporting each finished epoch to `on_epoch`.
pub fn train_model(
    dataset: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    kind: ModelKind,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(DpaModel, TrainHistory)> {
    arch.validate()?;
    cfg.validate()?;
    cfg.schedule.validate_for(arch.latent_dim)?;
    let objective = cfg.objective(kind)?;
    if kind == ModelKind::OrderedAe && arch.noise_per_layer != 0 {
        return Err(DpaError::param(
            "the ordered autoencoder needs a deterministic decoder (noise_per_layer = 0)",
        ));
    }
    let x = &dataset.x;
    if x.rows() == 0 {
        return Err(DpaError::param("cannot train on an empty dataset"));
    }
    if x.cols() != arch.input_dim {
        return Err(DpaError::dim("train", x.shape(), (x.rows(), arch.input_dim)));
    }

    let mut net = Autoencoder::init(arch.clone(), cfg.seed)?;
    let mut state = AdamState::new(net.params().iter().map(|p| p.shape()));
    let mut history = TrainHistory::default();
    let n = x.rows();
    let mut initial: Option<f64> = None;
    let mut diverging = 0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = rng::permutation(n, &mut rng::substream(cfg.seed, &[domain::SHUFFLE, epoch as u64]));
        let mut total_acc = 0.0;
        let mut per_k_acc = vec![0.0; cfg.schedule.ks().len()];
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select_rows(rows);
            let key = NoiseKey::new(cfg.seed, &[domain::TRAIN_NOISE, epoch as u64, batch as u64]);
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let xi = tape.constant(xb);
            let nodes = objective_on(&mut tape, &net, &bound, xi, &cfg.schedule, &objective, rows, &key)?;
            let loss = tape.value(nodes.total).item()?;
            if !loss.is_finite() {
                return Err(DpaError::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch}"
                )));
            }
            let w = rows.len() as f64 / n as f64;
            total_acc += w * loss;
            for (acc, &(_, id)) in per_k_acc.iter_mut().zip(&nodes.per_k) {
                *acc += w * tape.value(id).item()?;
            }
            let mut grads = tape.backward(nodes.total)?;
            let grads = bound.gradients(&mut grads);
            drop(tape);
            adam_step(&mut net.params_mut(), &grads, &mut state, &cfg.adam)?;
        }
        let record = EpochRecord {
            epoch,
            total: total_acc,
            per_k: cfg.schedule.ks().iter().copied().zip(per_k_acc).collect(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        let first = *initial.get_or_insert(record.total);
        if record.total > DIVERGENCE_FACTOR * first.abs() {
            diverging += 1;
            if diverging >= DIVERGENCE_PATIENCE {
                return Err(DpaError::Numeric(format!(
                    "loss diverged: {} exceeds {DIVERGENCE_FACTOR}x the initial {first} for {DIVERGENCE_PATIENCE} epochs (epoch {epoch})",
                    record.total
                )));
            }
        } else {
            diverging = 0;
        }
        on_epoch(&record);
        history.epochs.push(record);
    }

    let model = DpaModel {
        kind,
        net,
        schedule: cfg.schedule.clone(),
        beta: cfg.beta,
        seed: cfg.seed,
        preprocessing: dataset.preprocessing.clone(),
    };
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Matrix {
        Matrix::scalar(v)
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = scalar_param(0.7);
        let mut fresh = AdamState::new([(1, 1)]);
        adam_step(&mut [&mut p], &[scalar_param(0.0)], &mut fresh, &cfg).unwrap();
        assert_eq!(p.item().unwrap(), 0.7);

        let mut state = AdamState::new([(1, 1)]);
        state.m[0] = scalar_param(0.5);
        state.v[0] = scalar_param(0.25);
        let mut q = scalar_param(0.7);
        adam_step(&mut [&mut q], &[scalar_param(0.0)], &mut state, &cfg).unwrap();
        assert!((state.m[0].item().unwrap() - 0.45).abs() < 1e-15);
        assert!((state.v[0].item().unwrap() - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new([(1, 1)]);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut [&mut p], &[scalar_param(1.0)], &mut state, &cfg).unwrap();
        // mhat = vhat = 1 at t = 1
        assert!((p.item().unwrap() + 0.1).abs() < 1e-6);
    }

    /// Plain scalar Adam recurrence on f(x) = x^2.
    fn reference_adam(mut theta: f64, steps: usize, lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut path = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mhat / (vhat.sqrt() + eps);
            path.push(theta);
        }
        path
    }

    #[test]
    fn quadratic_descends_like_reference_recurrence() {
        let mut p = scalar_param(1.0);
        let mut state = AdamState::new([(1, 1)]);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let reference = reference_adam(1.0, 100, 0.05);
        let mut path = Vec::new();
        for _ in 0..100 {
            let g = scalar_param(2.0 * p.item().unwrap());
            adam_step(&mut [&mut p], &[g], &mut state, &cfg).unwrap();
            path.push(p.item().unwrap());
        }
        assert_eq!(path, reference);
        assert!(path.last().unwrap().abs() < 0.5);
        assert!(path[..20].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let mut state = AdamState::new([(2, 2)]);
        let err = adam_step(
            &mut [&mut p],
            &[Matrix::zeros(1, 2)],
            &mut state,
            &AdamConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn history_csv_has_one_column_per_k() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                total: 1.5,
                per_k: vec![(0, 2.0), (2, 1.0)],
                wall_seconds: 0.1,
            }],
        };
        assert_eq!(h.to_csv(&[0, 2]), "epoch,total,k0,k2\n0,1.5,2,1\n");
    }
}
