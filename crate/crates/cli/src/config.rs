//! Training configuration file.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dpa_core::data::Step;
use dpa_core::model::ModelKind;
use dpa_core::nn::{Activation, Architecture};
use dpa_core::objective::{EnergyLoss, LatentSchedule};
use dpa_core::optim::{AdamConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    /// Energy-loss exponent.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Decoder draws per sample.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub preprocessing: Vec<Step>,
    pub architecture: ArchConfig,
    pub schedule: ScheduleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Defaults to the data width; must match it when given.
    pub input_dim: Option<usize>,
    pub latent_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_noise")]
    pub noise_per_layer: usize,
    #[serde(default = "default_skip")]
    pub skip_every: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub ks: Vec<usize>,
    /// Uniform when omitted.
    pub weights: Option<Vec<f64>>,
}

fn default_model() -> ModelKind {
    ModelKind::Dpa
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    512
}
fn default_lr() -> f64 {
    AdamConfig::default().learning_rate
}
fn default_beta1() -> f64 {
    AdamConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamConfig::default().beta2
}
fn default_eps() -> f64 {
    AdamConfig::default().eps
}
fn default_beta() -> f64 {
    1.0
}
fn default_m() -> usize {
    2
}
fn default_depth() -> usize {
    4
}
fn default_width() -> usize {
    128
}
fn default_noise() -> usize {
    16
}
fn default_skip() -> usize {
    2
}

/// Everything needed to start training, fully validated.
pub struct Resolved {
    pub kind: ModelKind,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub preprocessing: Vec<Step>,
    /// The input config with every default and derived value filled in.
    pub effective: RunConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    /// Validates against data of width `p`.
    pub fn resolve(&self, p: usize) -> Result<Resolved> {
        let a = &self.architecture;
        if let Some(d) = a.input_dim {
            if d != p {
                bail!("config input_dim {d} does not match data width {p}");
            }
        }
        let noise = match self.model {
            ModelKind::Dpa => a.noise_per_layer,
            ModelKind::OrderedAe => 0,
        };
        let arch = Architecture {
            input_dim: p,
            latent_dim: a.latent_dim,
            depth: a.depth,
            width: a.width,
            noise_per_layer: noise,
            skip_every: a.skip_every,
            activation: a.activation,
        };
        arch.validate()?;
        let schedule = match &self.schedule.weights {
            Some(w) => LatentSchedule::new(&self.schedule.ks, w)?,
            None => LatentSchedule::uniform(&self.schedule.ks)?,
        };
        schedule.validate_for(arch.latent_dim)?;
        let train = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            seed: self.seed,
            schedule: schedule.clone(),
            beta: self.beta,
            m: self.m,
        };
        train.validate()?;
        if self.model == ModelKind::Dpa {
            EnergyLoss::new(self.beta, self.m)?;
        }
        let mut effective = self.clone();
        effective.architecture.input_dim = Some(p);
        effective.architecture.noise_per_layer = noise;
        effective.schedule = ScheduleConfig {
            ks: schedule.ks().to_vec(),
            weights: Some(schedule.weights().to_vec()),
        };
        Ok(Resolved {
            kind: self.model,
            arch,
            train,
            preprocessing: self.preprocessing.clone(),
            effective,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[architecture]
latent_dim = 4

[schedule]
ks = [0, 2, 4]
";

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let r = cfg.resolve(10).unwrap();
        assert_eq!(r.kind, ModelKind::Dpa);
        assert_eq!(r.arch.input_dim, 10);
        assert_eq!(r.train.batch_size, 512);
        assert_eq!(r.train.adam.learning_rate, 1e-4);
        assert_eq!(r.train.schedule.weights().len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(&format!("bogus = 1\n{MINIMAL}")).is_err());
        let nested = MINIMAL.replace("latent_dim = 4", "latent_dim = 4\nlayers = 3");
        assert!(RunConfig::parse(&nested).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let r = RunConfig::parse(MINIMAL).unwrap().resolve(10).unwrap();
        let text = r.effective.to_toml().unwrap();
        let again = RunConfig::parse(&text).unwrap();
        assert_eq!(again, r.effective);
    }

    #[test]
    fn validation_errors() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let mut bad = cfg.clone();
        bad.schedule.weights = Some(vec![0.5, 0.5, 0.5]);
        assert!(bad.resolve(10).is_err());
        let mut bad = cfg.clone();
        bad.architecture.input_dim = Some(3);
        assert!(bad.resolve(10).is_err());
        let mut bad = cfg;
        bad.beta = 2.0;
        assert!(bad.resolve(10).is_err());
    }

    #[test]
    fn ordered_ae_drops_decoder_noise() {
        let text = format!("model = \"ordered-ae\"\n{MINIMAL}");
        let r = RunConfig::parse(&text).unwrap().resolve(6).unwrap();
        assert_eq!(r.arch.noise_per_layer, 0);
        assert_eq!(r.effective.architecture.noise_per_layer, 0);
    }
}
