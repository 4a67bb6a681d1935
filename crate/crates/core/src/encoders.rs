//! Toy differentiable encoders producing `d`-dimensional global features.
//!
//! The image encoder is a one-hidden-layer tanh MLP over raw feature inputs.
//! The text encoder mean-pools token embeddings (padding excluded) and feeds
//! the pooled vector through the same kind of MLP.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureVector;
use crate::rng::RngStream;
use crate::textpipe::{TokenSeq, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Raw image input dimension.
    pub input_dim: usize,
    /// Token embedding dimension.
    pub embed_dim: usize,
    pub hidden: usize,
    /// Shared output dimension of both encoders.
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 48,
            embed_dim: 32,
            hidden: 64,
            output_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("output_dim", self.output_dim),
        ] {
            if v == 0 {
                problems.push(format!("encoder.{name} must be >= 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

fn uniform_init(len: usize, fan_in: usize, rng: &mut RngStream) -> Vec<f64> {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    (0..len).map(|_| rng.uniform_range(-bound, bound)).collect()
}

/// `y = W2 tanh(W1 x + b1) + b2`, weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    input: Vec<f64>,
    activation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            w1: uniform_init(hidden * in_dim, in_dim, rng),
            b1: uniform_init(hidden, in_dim, rng),
            w2: uniform_init(out_dim * hidden, hidden, rng),
            b2: uniform_init(out_dim, hidden, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim {
            return Err(Error::dim("mlp input", self.in_dim, x.len()));
        }
        let activation: Vec<f64> = self
            .w1
            .chunks_exact(self.in_dim)
            .zip(&self.b1)
            .map(|(row, b)| libm::tanh(crate::numerics::dot(row, x) + b))
            .collect();
        let y = self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(row, b)| crate::numerics::dot(row, &activation) + b)
            .collect();
        Ok((
            y,
            MlpCache {
                input: x.to_vec(),
                activation,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        if cache.input.len() != self.in_dim || cache.activation.len() != self.hidden {
            return Err(Error::Cache(format!(
                "mlp cache shaped {}->{} but parameters are {}->{}",
                cache.input.len(),
                cache.activation.len(),
                self.in_dim,
                self.hidden
            )));
        }
        if grad_out.len() != self.out_dim {
            return Err(Error::dim("mlp upstream gradient", self.out_dim, grad_out.len()));
        }
        let mut grad_pre = vec![0.0; self.hidden];
        for (o, &g) in grad_out.iter().enumerate() {
            grads.b2[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            let grow = &mut grads.w2[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                grow[h] += g * cache.activation[h];
                grad_pre[h] += g * row[h];
            }
        }
        let mut grad_in = vec![0.0; self.in_dim];
        for (h, (&a, &gpre)) in cache.activation.iter().zip(&grad_pre).enumerate() {
            let gp = gpre * (1.0 - a * a);
            grads.b1[h] += gp;
            if gp == 0.0 {
                continue;
            }
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let grow = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += gp * cache.input[i];
                grad_in[i] += gp * row[i];
            }
        }
        Ok(grad_in)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl MlpGrads {
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoderParams {
    pub mlp: Mlp,
}

impl ImageEncoderParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut RngStream) -> Self {
        Self {
            mlp: Mlp::init(cfg.input_dim, cfg.hidden, cfg.output_dim, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// `vocab_size x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    pub mlp: Mlp,
}

impl TextEncoderParams {
    pub fn init(cfg: &EncoderConfig, vocab_size: usize, rng: &mut RngStream) -> Self {
        Self {
            vocab_size,
            embed_dim: cfg.embed_dim,
            // Rows are pooled rather than summed, so they use unit fan-in.
            embedding: uniform_init(vocab_size * cfg.embed_dim, 1, rng),
            mlp: Mlp::init(cfg.embed_dim, cfg.hidden, cfg.output_dim, rng),
        }
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let id = id as usize;
        &self.embedding[id * self.embed_dim..(id + 1) * self.embed_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCache {
    mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextCache {
    ids: Vec<u32>,
    mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoderGrads {
    pub mlp: MlpGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderGrads {
    pub embedding: Vec<f64>,
    pub mlp: MlpGrads,
}

impl ImageEncoderGrads {
    pub fn zeros(p: &ImageEncoderParams) -> Self {
        Self { mlp: p.mlp.zero_grads() }
    }
}

impl TextEncoderGrads {
    pub fn zeros(p: &TextEncoderParams) -> Self {
        Self {
            embedding: vec![0.0; p.embedding.len()],
            mlp: p.mlp.zero_grads(),
        }
    }
}

pub fn encode_image_cached(x: &[f64], p: &ImageEncoderParams) -> Result<(Vec<f64>, ImageCache)> {
    let (y, mlp) = p.mlp.forward(x)?;
    Ok((y, ImageCache { mlp }))
}

pub fn encode_image(x: &[f64], p: &ImageEncoderParams) -> Result<FeatureVector> {
    let (y, _) = encode_image_cached(x, p)?;
    FeatureVector::new(y)
}

/// Mean of the non-padding embedding rows.
fn pool(tokens: &TokenSeq, p: &TextEncoderParams) -> Result<(Vec<f64>, Vec<u32>)> {
    let ids: Vec<u32> = tokens.non_pad().collect();
    if ids.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut pooled = vec![0.0; p.embed_dim];
    for &id in &ids {
        if id as usize >= p.vocab_size {
            return Err(Error::invalid(format!(
                "token id {id} outside vocabulary of size {}",
                p.vocab_size
            )));
        }
        for (acc, v) in pooled.iter_mut().zip(p.row(id)) {
            *acc += v;
        }
    }
    let n = ids.len() as f64;
    pooled.iter_mut().for_each(|v| *v /= n);
    Ok((pooled, ids))
}

pub fn encode_text_cached(tokens: &TokenSeq, p: &TextEncoderParams) -> Result<(Vec<f64>, TextCache)> {
    let (pooled, ids) = pool(tokens, p)?;
    let (y, mlp) = p.mlp.forward(&pooled)?;
    Ok((y, TextCache { ids, mlp }))
}

pub fn encode_text(tokens: &TokenSeq, p: &TextEncoderParams) -> Result<FeatureVector> {
    let (y, _) = encode_text_cached(tokens, p)?;
    FeatureVector::new(y)
}

/// Accumulates parameter gradients and returns the gradient w.r.t. the raw input.
pub fn image_backward(
    grad_out: &[f64],
    cache: &ImageCache,
    p: &ImageEncoderParams,
    grads: &mut ImageEncoderGrads,
) -> Result<Vec<f64>> {
    p.mlp.backward(&cache.mlp, grad_out, &mut grads.mlp)
}

/// Accumulates parameter gradients (including the embedding rows of the
/// pooled tokens) and returns the gradient w.r.t. the pooled embedding.
pub fn text_backward(
    grad_out: &[f64],
    cache: &TextCache,
    p: &TextEncoderParams,
    grads: &mut TextEncoderGrads,
) -> Result<Vec<f64>> {
    if grads.embedding.len() != p.embedding.len() {
        return Err(Error::dim("text embedding gradient", p.embedding.len(), grads.embedding.len()));
    }
    if cache.ids.iter().any(|&id| id as usize >= p.vocab_size) {
        return Err(Error::Cache("text cache references ids outside the vocabulary".into()));
    }
    let grad_pooled = p.mlp.backward(&cache.mlp, grad_out, &mut grads.mlp)?;
    let scale = 1.0 / cache.ids.len() as f64;
    let e = p.embed_dim;
    for &id in &cache.ids {
        debug_assert_ne!(id, Vocab::PAD_ID);
        let row = &mut grads.embedding[id as usize * e..(id as usize + 1) * e];
        for (g, gp) in row.iter_mut().zip(&grad_pooled) {
            *g += gp * scale;
        }
    }
    Ok(grad_pooled)
}
