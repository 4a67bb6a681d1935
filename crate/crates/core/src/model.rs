//! All trainable state bundled together, with a fixed tensor order shared by
//! the optimizer, the gradients and the checkpoint payload.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cmki::KnowledgeBank;
use crate::encoders::{
    encode_image, encode_text, EncoderConfig, ImageEncoderGrads, ImageEncoderParams, TextEncoderGrads,
    TextEncoderParams,
};
use crate::error::{Error, Result};
use crate::numerics::FeatureVector;
use crate::objectives::Temperature;
use crate::rng::RngStream;
use crate::textpipe::{tokenize, Vocab};

pub(crate) const IMAGE_INIT_STREAM: u64 = 10;
pub(crate) const TEXT_INIT_STREAM: u64 = 11;
pub(crate) const BANK_INIT_STREAM: u64 = 12;

/// Names of the parameter tensors, in payload order.
pub const TENSOR_NAMES: [&str; 10] = [
    "image.w1",
    "image.b1",
    "image.w2",
    "image.b2",
    "text.embedding",
    "text.w1",
    "text.b1",
    "text.w2",
    "text.b2",
    "bank",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub max_len: usize,
    pub image: ImageEncoderParams,
    pub text: TextEncoderParams,
    pub bank: KnowledgeBank,
    pub temperature: Temperature,
}

impl Model {
    pub fn init(
        encoder: EncoderConfig,
        vocab: Vocab,
        max_len: usize,
        bank_size: usize,
        temperature: Temperature,
        seed: u64,
    ) -> Self {
        let image = ImageEncoderParams::init(&encoder, &mut RngStream::new(seed, IMAGE_INIT_STREAM));
        let text = TextEncoderParams::init(&encoder, vocab.size(), &mut RngStream::new(seed, TEXT_INIT_STREAM));
        let bank = KnowledgeBank::init(encoder.output_dim, bank_size, &mut RngStream::new(seed, BANK_INIT_STREAM));
        Self {
            encoder,
            vocab,
            max_len,
            image,
            text,
            bank,
            temperature,
        }
    }

    /// Parameter tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(10);
        out.extend(self.image.mlp.tensors());
        out.push(&self.text.embedding);
        out.extend(self.text.mlp.tensors());
        out.push(self.bank.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(10);
        out.extend(self.image.mlp.tensors_mut());
        out.push(&mut self.text.embedding);
        out.extend(self.text.mlp.tensors_mut());
        out.push(self.bank.as_mut_vec());
        out
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) && self.temperature.log_tau.is_finite()
    }

    pub fn embed_image(&self, raw: &[f64]) -> Result<FeatureVector> {
        encode_image(raw, &self.image)
    }

    pub fn embed_text(&self, text: &str) -> Result<FeatureVector> {
        encode_text(&tokenize(text, &self.vocab, self.max_len), &self.text)
    }

    pub fn vocab_words(&self) -> Vec<String> {
        self.vocab.words().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub image: ImageEncoderGrads,
    pub text: TextEncoderGrads,
    pub bank: Vec<f64>,
    pub log_tau: f64,
}

impl ModelGrads {
    pub fn zeros(model: &Model) -> Self {
        Self {
            image: ImageEncoderGrads::zeros(&model.image),
            text: TextEncoderGrads::zeros(&model.text),
            bank: vec![0.0; model.bank.as_slice().len()],
            log_tau: 0.0,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(10);
        out.extend(self.image.mlp.tensors());
        out.push(&self.text.embedding);
        out.extend(self.text.mlp.tensors());
        out.push(&self.bank);
        out
    }
}

pub(crate) fn check_lens(model: &Model, lens: &[usize]) -> Result<()> {
    let expected = model.tensor_lens();
    if expected.len() != lens.len() {
        return Err(Error::dim("tensor count", expected.len(), lens.len()));
    }
    for (e, g) in expected.iter().zip(lens) {
        if e != g {
            return Err(Error::dim("tensor length", *e, *g));
        }
    }
    Ok(())
}
