//! Trained models and their on-disk checkpoints.
//!
//! A checkpoint is a directory holding `model.json` (metadata and the list of
//! tensors with their shapes) and `model.bin` (the tensors concatenated in
//! that order, row-major, little-endian f64). For autoencoders the order is
//! encoder layers then decoder layers, weight then bias within a layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{apply_transforms, invert_transforms, Transform};
use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::nn::{Architecture, Autoencoder, DecoderNoise};
use crate::objective::{mask_latent, mask_latent_zeros, LatentSchedule};
use crate::rng::Rng;

pub const MODEL_JSON: &str = "model.json";
pub const MODEL_BIN: &str = "model.bin";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dpa,
    OrderedAe,
}

/// Anything that maps data to reconstructions given `k` retained latents.
/// Inputs and outputs live in the raw data space.
pub trait Reconstructor {
    /// Largest admissible `k`.
    fn max_k(&self) -> usize;

    /// One reconstruction per row of `x`.
    fn reconstruct(&self, x: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix>;

    /// `draws` independent reconstructions of every row.
    fn reconstruct_draws(&self, x: &Matrix, k: usize, draws: usize, rng: &mut Rng) -> Result<Vec<Matrix>> {
        (0..draws).map(|_| self.reconstruct(x, k, rng)).collect()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.max_k() {
            return Err(DpaError::param(format!(
                "k={k} out of range: max k is {}",
                self.max_k()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpaModel {
    pub kind: ModelKind,
    pub net: Autoencoder,
    pub schedule: LatentSchedule,
    pub beta: f64,
    pub seed: u64,
    /// Applied to raw inputs before encoding and undone after decoding.
    pub preprocessing: Vec<Transform>,
}

impl DpaModel {
    pub fn arch(&self) -> &Architecture {
        &self.net.arch
    }

    /// First `k` latent coordinates of raw inputs `x`.
    pub fn embed(&self, x: &Matrix, k: usize) -> Result<Matrix> {
        self.check_k(k)?;
        let z = self.net.encode(&apply_transforms(&self.preprocessing, x)?)?;
        z.slice_cols(0, k)
    }

    /// Decodes latents already masked to width `latent_dim`, returning raw
    /// space reconstructions.
    pub fn decode_raw(&self, z_tilde: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let xhat = match self.kind {
            ModelKind::Dpa => self.net.decode(z_tilde, rng)?,
            ModelKind::OrderedAe => self
                .net
                .decode_with_noise(z_tilde, &DecoderNoise::none(&self.net.arch, z_tilde.rows()))?,
        };
        invert_transforms(&self.preprocessing, &xhat)
    }

    /// `draws` reconstructions of every row sharing one encoder pass.
    pub fn reconstruct_many(&self, x: &Matrix, k: usize, draws: usize, rng: &mut Rng) -> Result<Vec<Matrix>> {
        self.check_k(k)?;
        let z = self.net.encode(&apply_transforms(&self.preprocessing, x)?)?;
        (0..draws)
            .map(|_| {
                let zt = match self.kind {
                    ModelKind::Dpa => mask_latent(&z, k, rng)?,
                    ModelKind::OrderedAe => mask_latent_zeros(&z, k)?,
                };
                self.decode_raw(&zt, rng)
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            architecture: self.net.arch.clone(),
            schedule: self.schedule.clone(),
            beta: self.beta,
            seed: self.seed,
            preprocessing: self.preprocessing.clone(),
            tensors: tensor_specs(&self.net),
        };
        write_checkpoint(dir.as_ref(), &meta, &self.net.params())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(dir.join(MODEL_JSON))?)?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(DpaError::Format(format!(
                "unsupported checkpoint version {}",
                meta.version
            )));
        }
        // round-trip through the validating constructor
        let schedule = LatentSchedule::new(meta.schedule.ks(), meta.schedule.weights())?;
        schedule.validate_for(meta.architecture.latent_dim)?;
        let mut net = Autoencoder::init(meta.architecture, 0)?;
        let expected = tensor_specs(&net);
        if expected != meta.tensors {
            return Err(DpaError::Format("tensor list does not match the architecture".into()));
        }
        let shapes: Vec<_> = expected.iter().map(|t| (t.rows, t.cols)).collect();
        let tensors = read_tensors(&dir.join(MODEL_BIN), &shapes)?;
        for (dst, src) in net.params_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        Ok(Self {
            kind: meta.kind,
            net,
            schedule,
            beta: meta.beta,
            seed: meta.seed,
            preprocessing: meta.preprocessing,
        })
    }
}

impl Reconstructor for DpaModel {
    fn max_k(&self) -> usize {
        self.schedule.max_k()
    }

    fn reconstruct(&self, x: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix> {
        Ok(self.reconstruct_many(x, k, 1, rng)?.remove(0))
    }

    fn reconstruct_draws(&self, x: &Matrix, k: usize, draws: usize, rng: &mut Rng) -> Result<Vec<Matrix>> {
        self.reconstruct_many(x, k, draws, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    version: u32,
    kind: ModelKind,
    architecture: Architecture,
    schedule: LatentSchedule,
    beta: f64,
    seed: u64,
    preprocessing: Vec<Transform>,
    tensors: Vec<TensorSpec>,
}

/// Name and shape of one tensor in `model.bin`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

fn tensor_specs(net: &Autoencoder) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    for (part, layers) in [("encoder", &net.encoder.0), ("decoder", &net.decoder.0)] {
        for (i, l) in layers.iter().enumerate() {
            for (what, m) in [("weight", &l.weight), ("bias", &l.bias)] {
                out.push(TensorSpec {
                    name: format!("{part}.{i}.{what}"),
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
        }
    }
    out
}

/// Writes `meta` as pretty JSON plus the concatenated tensors.
pub fn write_checkpoint<T: Serialize>(dir: &Path, meta: &T, tensors: &[&Matrix]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    std::fs::write(dir.join(MODEL_JSON), json)?;
    std::fs::write(dir.join(MODEL_BIN), encode_tensors(tensors))?;
    Ok(())
}

pub fn encode_tensors(tensors: &[&Matrix]) -> Vec<u8> {
    let total: usize = tensors.iter().map(|m| m.len()).sum();
    let mut out = Vec::with_capacity(8 * total);
    for m in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads tensors of the given shapes; the file length must match exactly.
pub fn read_tensors(path: &Path, shapes: &[(usize, usize)]) -> Result<Vec<Matrix>> {
    let bytes = std::fs::read(path)?;
    decode_tensors(&bytes, shapes)
}

pub fn decode_tensors(bytes: &[u8], shapes: &[(usize, usize)]) -> Result<Vec<Matrix>> {
    let expected: usize = shapes.iter().map(|(r, c)| 8 * r * c).sum();
    if bytes.len() != expected {
        return Err(DpaError::Format(format!(
            "tensor payload has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    shapes
        .iter()
        .map(|&(r, c)| Matrix::new(r, c, values.by_ref().take(r * c).collect()))
        .collect()
}
