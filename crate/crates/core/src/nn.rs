//! MLP encoder and noise-injecting decoder.
//!
//! Both networks are stacks of `depth` affine layers. Hidden layers use the
//! configured activation; the last layer of each network is linear. With
//! `skip_every = s`, the output of hidden layer `j` (for `j = 1, 1+s, 1+2s, ..`)
//! is added to the pre-activation of layer `j + s` whenever the widths agree.
//!
//! The decoder concatenates `noise_per_layer` fresh standard Gaussian columns
//! to the input of every layer, so `decode` is stochastic unless
//! `noise_per_layer == 0`.
//!
//! Weights are stored `fan_in x fan_out` and applied as `x W + b`. In decoder
//! layers the noise columns occupy the last `noise_per_layer` rows of `W`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DpaError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, domain, Rng};
use crate::tape::{Gradients, NodeId, Tape};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Relu => tape.relu(x),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub noise_per_layer: usize,
    #[serde(default = "default_skip")]
    pub skip_every: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_skip() -> usize {
    2
}

impl Architecture {
    /// Desk-scale defaults: depth 4, width 128, 16 noise columns per layer.
    pub fn new(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            latent_dim,
            depth: 4,
            width: 128,
            noise_per_layer: 16,
            skip_every: 2,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(DpaError::param("input_dim must be positive"));
        }
        if self.latent_dim > self.input_dim {
            return Err(DpaError::param(format!(
                "latent_dim {} exceeds input_dim {}",
                self.latent_dim, self.input_dim
            )));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(DpaError::param("depth and width must be at least 1"));
        }
        Ok(())
    }

    /// Layer output widths of the encoder, starting with the input width.
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.width, self.depth - 1));
        dims.push(self.latent_dim);
        dims
    }

    /// Layer output widths of the decoder (noise columns excluded).
    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(std::iter::repeat_n(self.width, self.depth - 1));
        dims.push(self.input_dim);
        dims
    }

    /// Whether layer `layer` (1-based) receives a skip connection, and from
    /// which earlier layer.
    fn skip_source(&self, layer: usize, dims: &[usize]) -> Option<usize> {
        let s = self.skip_every;
        if s == 0 || layer <= s {
            return None;
        }
        let src = layer - s;
        ((src - 1).is_multiple_of(s) && dims[src] == dims[layer]).then_some(src)
    }
}

/// One affine layer: `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a)),
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams(pub Vec<Layer>);

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams(pub Vec<Layer>);

/// He-style uniform initialization, deterministic in `seed`.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<(EncoderParams, DecoderParams)> {
    arch.validate()?;
    let mut rng = rng::substream(seed, &[domain::INIT]);
    let enc = arch
        .encoder_dims()
        .windows(2)
        .map(|w| Layer::init(w[0], w[1], &mut rng))
        .collect();
    let dec = arch
        .decoder_dims()
        .windows(2)
        .map(|w| Layer::init(w[0] + arch.noise_per_layer, w[1], &mut rng))
        .collect();
    Ok((EncoderParams(enc), DecoderParams(dec)))
}

/// Noise columns appended to each decoder layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNoise {
    pub per_layer: Vec<Matrix>,
}

impl DecoderNoise {
    pub fn sample(arch: &Architecture, rows: usize, rng: &mut Rng) -> Self {
        Self {
            per_layer: (0..arch.depth)
                .map(|_| rng::normal_matrix(rows, arch.noise_per_layer, rng))
                .collect(),
        }
    }

    pub fn none(arch: &Architecture, rows: usize) -> Self {
        Self {
            per_layer: (0..arch.depth).map(|_| Matrix::zeros(rows, 0)).collect(),
        }
    }
}

/// Encoder and decoder with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub arch: Architecture,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

/// Parameter leaves recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    encoder: Vec<(NodeId, NodeId)>,
    decoder: Vec<(NodeId, NodeId)>,
}

impl BoundParams {
    /// Gradients in checkpoint order: encoder then decoder, weight then bias.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|&(w, b)| [grads.take(w), grads.take(b)])
            .collect()
    }
}

impl Autoencoder {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let (encoder, decoder) = init_params(&arch, seed)?;
        Ok(Self { arch, encoder, decoder })
    }

    /// All parameter matrices in checkpoint order.
    pub fn params(&self) -> Vec<&Matrix> {
        self.encoder
            .0
            .iter()
            .chain(&self.decoder.0)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .0
            .iter_mut()
            .chain(self.decoder.0.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, Tape::leaf)
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, Tape::constant)
    }

    fn bind_with(&self, tape: &mut Tape, f: fn(&mut Tape, Matrix) -> NodeId) -> BoundParams {
        let mut bind = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| (f(tape, l.weight.clone()), f(tape, l.bias.clone())))
                .collect::<Vec<_>>()
        };
        let encoder = bind(&self.encoder.0);
        let decoder = bind(&self.decoder.0);
        BoundParams { encoder, decoder }
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        layers: &[(NodeId, NodeId)],
        dims: &[usize],
        input: NodeId,
        noise: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        let depth = layers.len();
        let mut outputs = Vec::with_capacity(depth + 1);
        outputs.push(input);
        for (idx, &(w, b)) in layers.iter().enumerate() {
            let layer = idx + 1;
            let prev = outputs[idx];
            let x = match noise {
                Some(noise) if self.arch.noise_per_layer > 0 => tape.concat_cols(&[prev, noise[idx]])?,
                _ => prev,
            };
            let xw = tape.matmul(x, w)?;
            let mut pre = tape.add_row(xw, b)?;
            if let Some(src) = self.arch.skip_source(layer, dims) {
                pre = tape.add(pre, outputs[src])?;
            }
            let out = if layer < depth {
                self.arch.activation.apply(tape, pre)
            } else {
                pre
            };
            outputs.push(out);
        }
        Ok(outputs[depth])
    }

    /// Encoder forward pass on a tape.
    pub fn encode_on(&self, tape: &mut Tape, bound: &BoundParams, x: NodeId) -> Result<NodeId> {
        let (r, c) = tape.value(x).shape();
        if c != self.arch.input_dim {
            return Err(DpaError::dim("encode", (r, c), (r, self.arch.input_dim)));
        }
        self.mlp(tape, &bound.encoder, &self.arch.encoder_dims(), x, None)
    }

    /// Decoder forward pass on a tape with explicit noise nodes, one per
    /// layer, each `rows x noise_per_layer`.
    pub fn decode_on(&self, tape: &mut Tape, bound: &BoundParams, z: NodeId, noise: &[NodeId]) -> Result<NodeId> {
        let (r, c) = tape.value(z).shape();
        if c != self.arch.latent_dim {
            return Err(DpaError::dim("decode", (r, c), (r, self.arch.latent_dim)));
        }
        if noise.len() != self.arch.depth {
            return Err(DpaError::Contract(format!(
                "decoder needs {} noise blocks, got {}",
                self.arch.depth,
                noise.len()
            )));
        }
        for &n in noise {
            let shape = tape.value(n).shape();
            if self.arch.noise_per_layer > 0 && shape != (r, self.arch.noise_per_layer) {
                return Err(DpaError::dim("decode noise", shape, (r, self.arch.noise_per_layer)));
            }
        }
        self.mlp(tape, &bound.decoder, &self.arch.decoder_dims(), z, Some(noise))
    }

    /// Deterministic embedding `Z = e(X)`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let xi = tape.constant(x.clone());
        let z = self.encode_on(&mut tape, &bound, xi)?;
        Ok(tape.value(z).clone())
    }

    pub fn decode_with_noise(&self, z: &Matrix, noise: &DecoderNoise) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let zi = tape.constant(z.clone());
        let ni: Vec<NodeId> = noise.per_layer.iter().map(|m| tape.constant(m.clone())).collect();
        let out = self.decode_on(&mut tape, &bound, zi, &ni)?;
        Ok(tape.value(out).clone())
    }

    /// One stochastic reconstruction per row of `z`, with fresh noise drawn
    /// from `rng`.
    pub fn decode(&self, z: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let noise = DecoderNoise::sample(&self.arch, z.rows(), rng);
        self.decode_with_noise(z, &noise)
    }
}
