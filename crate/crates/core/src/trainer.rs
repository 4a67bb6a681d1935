//! Mini-batch training of encoders, knowledge bank and (optionally) the
//! temperature with a single Adam optimizer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cmki::{cmki_backward, cmki_forward, CmkiCache};
use crate::encoders::{
    encode_image_cached, encode_text_cached, image_backward, text_backward, EncoderConfig, ImageCache, TextCache,
};
use crate::error::{Error, Result};
use crate::model::{check_lens, Model, ModelGrads, TENSOR_NAMES};
use crate::numerics::{adam_step, AdamConfig, AdamState, FeatureMatrix};
use crate::objectives::{
    objectives_backward, objectives_forward, InfoNceMode, LossBreakdown, LossWeights, ObjectiveInputs, Temperature,
};
use crate::rng::{RngState, RngStream};
use crate::synthdata::{Corpus, SamplePair};
use crate::textpipe::{augment_report, render_prompt, split_sentences, tokenize, Polarity, TextInputMode, TokenSeq, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

const SHUFFLE_STREAM: u64 = 20;
const TEXT_STREAM: u64 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub tau: f64,
    pub learnable_tau: bool,
    /// Number of knowledge-bank basis vectors.
    pub bank_size: usize,
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub text_mode: TextInputMode,
    pub infonce_mode: InfoNceMode,
    pub use_cmki: bool,
    pub use_summaries: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 5e-5,
            seed: 0,
            loss_weights: LossWeights::default(),
            tau: 0.07,
            learnable_tau: false,
            bank_size: 128,
            encoder: EncoderConfig::default(),
            max_len: 64,
            text_mode: TextInputMode::RandomChoice,
            infonce_mode: InfoNceMode::Symmetric,
            use_cmki: true,
            use_summaries: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("train.epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".to_string());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            problems.push("train.lr must be finite and >= 0".to_string());
        }
        if self.bank_size == 0 {
            problems.push("train.bank_size must be >= 1".to_string());
        }
        if self.max_len == 0 {
            problems.push("train.max_len must be >= 1".to_string());
        }
        if let Err(e) = Temperature::new(self.tau, self.learnable_tau) {
            problems.push(format!("train.tau: {e}"));
        }
        if let Err(Error::Validation(v)) = self.encoder.validate() {
            problems.extend(v);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Complete training state; enough to resume or to run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub model: Model,
    /// One moment pair per parameter tensor, then one for `log tau`.
    pub optimizer: Vec<AdamState>,
    pub step: u64,
    pub epochs_done: usize,
    pub shuffle_rng: RngState,
    pub text_rng: RngState,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        let mut lens = self.model.tensor_lens();
        lens.push(1);
        if self.optimizer.len() != lens.len() {
            return Err(Error::dim("optimizer tensors", lens.len(), self.optimizer.len()));
        }
        for (st, &n) in self.optimizer.iter().zip(&lens) {
            if st.m.len() != n || st.v.len() != n {
                return Err(Error::dim("optimizer moments", n, st.m.len()));
            }
        }
        check_lens(&self.model, &self.model.tensor_lens())
    }

    pub fn tensor_names() -> &'static [&'static str] {
        &TENSOR_NAMES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<LossBreakdown>,
    pub wall_time_secs: Option<f64>,
    pub checkpoint_path: Option<String>,
}

/// Vocabulary over every report, summary and zero-shot prompt of the corpus.
pub fn build_vocab(corpus: &Corpus) -> Result<Vocab> {
    let mut prompts = Vec::new();
    for name in corpus.label_names() {
        prompts.push(render_prompt(name, Polarity::Positive)?);
        prompts.push(render_prompt(name, Polarity::Negative)?);
    }
    let texts = corpus
        .samples
        .iter()
        .flat_map(|s| [s.report.as_str(), s.summary.as_str()])
        .chain(prompts.iter().map(String::as_str));
    Ok(Vocab::from_texts(texts))
}

struct BatchForward {
    image: FeatureMatrix,
    text: FeatureMatrix,
    image_caches: Vec<ImageCache>,
    text_caches: Vec<TextCache>,
    recon: Option<(FeatureMatrix, FeatureMatrix, Vec<CmkiCache>, Vec<CmkiCache>)>,
}

fn matrix_or_diverge(rows: usize, cols: usize, data: Vec<f64>, epoch: usize, batch: usize) -> Result<FeatureMatrix> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { epoch, batch });
    }
    FeatureMatrix::new(rows, cols, data)
}

fn forward_batch(
    model: &Model,
    use_cmki: bool,
    images: &[&[f64]],
    tokens: &[TokenSeq],
    epoch: usize,
    batch: usize,
) -> Result<BatchForward> {
    let n = images.len();
    let d = model.encoder.output_dim;
    let mut v = Vec::with_capacity(n * d);
    let mut t = Vec::with_capacity(n * d);
    let mut image_caches = Vec::with_capacity(n);
    let mut text_caches = Vec::with_capacity(n);
    for (raw, tok) in images.iter().zip(tokens) {
        let (y, c) = encode_image_cached(raw, &model.image)?;
        v.extend(y);
        image_caches.push(c);
        let (y, c) = encode_text_cached(tok, &model.text)?;
        t.extend(y);
        text_caches.push(c);
    }
    let image = matrix_or_diverge(n, d, v, epoch, batch)?;
    let text = matrix_or_diverge(n, d, t, epoch, batch)?;
    let recon = if use_cmki {
        let mut vr = Vec::with_capacity(n * d);
        let mut tr = Vec::with_capacity(n * d);
        let mut vc = Vec::with_capacity(n);
        let mut tc = Vec::with_capacity(n);
        for i in 0..n {
            let (r, c) = cmki_forward(&model.bank, image.row(i))?;
            vr.extend(r);
            vc.push(c);
            let (r, c) = cmki_forward(&model.bank, text.row(i))?;
            tr.extend(r);
            tc.push(c);
        }
        Some((
            matrix_or_diverge(n, d, vr, epoch, batch)?,
            matrix_or_diverge(n, d, tr, epoch, batch)?,
            vc,
            tc,
        ))
    } else {
        None
    };
    Ok(BatchForward {
        image,
        text,
        image_caches,
        text_caches,
        recon,
    })
}

fn objective_inputs(fwd: &BatchForward) -> ObjectiveInputs<'_> {
    ObjectiveInputs {
        image: &fwd.image,
        text: &fwd.text,
        recon: fwd.recon.as_ref().map(|(vr, tr, _, _)| (vr, tr)),
    }
}

/// Mean batch losses and their gradients w.r.t. every trainable parameter,
/// exactly as one training step computes them. Only `use_cmki`,
/// `loss_weights` and `infonce_mode` are read from `cfg`.
pub fn loss_and_grads(
    model: &Model,
    cfg: &TrainConfig,
    images: &[&[f64]],
    tokens: &[TokenSeq],
) -> Result<(LossBreakdown, ModelGrads)> {
    gradients_at(model, cfg, images, tokens, 0, 0)
}

fn gradients_at(
    model: &Model,
    cfg: &TrainConfig,
    images: &[&[f64]],
    tokens: &[TokenSeq],
    epoch: usize,
    batch: usize,
) -> Result<(LossBreakdown, ModelGrads)> {
    if images.len() != tokens.len() {
        return Err(Error::dim("token sequences per image", images.len(), tokens.len()));
    }
    let fwd = forward_batch(model, cfg.use_cmki, images, tokens, epoch, batch)?;
    let (loss, og) = objectives_backward(objective_inputs(&fwd), &cfg.loss_weights, &model.temperature, cfg.infonce_mode)?;
    if !loss.total.is_finite() {
        return Err(Error::Divergence { epoch, batch });
    }

    let mut grads = ModelGrads::zeros(model);
    let mut grad_image = og.image;
    let mut grad_text = og.text;
    if let (Some((_, _, vc, tc)), Some(gvr), Some(gtr)) = (&fwd.recon, &og.image_recon, &og.text_recon) {
        for i in 0..images.len() {
            let g = cmki_backward(&model.bank, &vc[i], gvr.row(i), &mut grads.bank)?;
            grad_image.row_mut(i).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            let g = cmki_backward(&model.bank, &tc[i], gtr.row(i), &mut grads.bank)?;
            grad_text.row_mut(i).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    for i in 0..images.len() {
        image_backward(grad_image.row(i), &fwd.image_caches[i], &model.image, &mut grads.image)?;
        text_backward(grad_text.row(i), &fwd.text_caches[i], &model.text, &mut grads.text)?;
    }
    grads.log_tau = og.log_tau;
    Ok((loss, grads))
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    corpus: &'a Corpus,
    model: Model,
    optimizer: Vec<AdamState>,
    step: u64,
    epochs_done: usize,
    shuffle_rng: RngStream,
    text_rng: RngStream,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, corpus: &'a Corpus) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        if cfg.encoder.input_dim != corpus.spec.input_dim {
            return Err(Error::dim("encoder input_dim vs corpus", corpus.spec.input_dim, cfg.encoder.input_dim));
        }
        let vocab = build_vocab(corpus)?;
        let temperature = Temperature::new(cfg.tau, cfg.learnable_tau)?;
        let model = Model::init(cfg.encoder, vocab, cfg.max_len, cfg.bank_size, temperature, cfg.seed);
        let mut optimizer: Vec<AdamState> = model.tensor_lens().into_iter().map(AdamState::new).collect();
        optimizer.push(AdamState::new(1));
        Ok(Self {
            shuffle_rng: RngStream::new(cfg.seed, SHUFFLE_STREAM),
            text_rng: RngStream::new(cfg.seed, TEXT_STREAM),
            cfg,
            corpus,
            model,
            optimizer,
            step: 0,
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn training_text(&mut self, sample: &SamplePair) -> Result<TokenSeq> {
        let source = if self.cfg.use_summaries {
            match self.cfg.text_mode {
                TextInputMode::RandomChoice => {
                    if self.text_rng.below(2) == 0 {
                        sample.report.clone()
                    } else {
                        sample.summary.clone()
                    }
                }
                TextInputMode::Concat => format!("{} {}", sample.report, sample.summary),
            }
        } else {
            sample.report.clone()
        };
        let sentences = split_sentences(&source);
        let augmented = augment_report(&sentences, &mut self.text_rng)?;
        Ok(tokenize(augmented.text(), &self.model.vocab, self.cfg.max_len))
    }

    fn batch_step(&mut self, indices: &[usize], epoch: usize, batch: usize) -> Result<LossBreakdown> {
        let corpus = self.corpus;
        let mut tokens = Vec::with_capacity(indices.len());
        for &i in indices {
            tokens.push(self.training_text(&corpus.samples[i])?);
        }
        let images: Vec<&[f64]> = indices.iter().map(|&i| corpus.samples[i].raw_image.as_slice()).collect();
        let (loss, grads) = gradients_at(&self.model, &self.cfg, &images, &tokens, epoch, batch)?;

        self.step += 1;
        let lr = self.cfg.lr;
        let bank_index = TENSOR_NAMES.len() - 1;
        let grad_tensors = grads.tensors();
        for (k, (param, st)) in self.model.tensors_mut().into_iter().zip(&mut self.optimizer).enumerate() {
            if k == bank_index && !self.cfg.use_cmki {
                continue;
            }
            adam_step(param, grad_tensors[k], st, self.step, lr, &self.cfg.adam)?;
        }
        if self.model.temperature.learnable {
            let mut lt = [self.model.temperature.log_tau];
            let st = self.optimizer.last_mut().expect("log tau moments");
            adam_step(&mut lt, &[grads.log_tau], st, self.step, lr, &self.cfg.adam)?;
            self.model.temperature.log_tau = lt[0];
        }
        Ok(loss)
    }

    /// Runs one epoch and returns its sample-weighted mean losses.
    pub fn run_epoch(&mut self) -> Result<LossBreakdown> {
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        let mut acc = LossBreakdown::default();
        let mut batches = 0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let l = self.batch_step(chunk, epoch, b)?;
            let w = chunk.len() as f64;
            acc.mse += w * l.mse;
            acc.info += w * l.info;
            acc.info_r += w * l.info_r;
            batches = b;
        }
        if !self.model.is_finite() {
            return Err(Error::Divergence { epoch, batch: batches });
        }
        self.epochs_done = epoch;
        let n = self.corpus.len() as f64;
        let weights = &self.cfg.loss_weights;
        crate::objectives::total_loss(acc.mse / n, acc.info / n, acc.info_r / n, weights)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            step: self.step,
            epochs_done: self.epochs_done,
            shuffle_rng: self.shuffle_rng.state(),
            text_rng: self.text_rng.state(),
        }
    }
}

/// Trains for `cfg.epochs` epochs.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<(Checkpoint, TrainReport)> {
    let mut trainer = Trainer::new(cfg.clone(), corpus)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        epochs.push(trainer.run_epoch()?);
    }
    Ok((
        trainer.checkpoint(),
        TrainReport {
            epochs,
            wall_time_secs: None,
            checkpoint_path: None,
        },
    ))
}

/// Forward-only mean losses over `split` in fixed order, using full report
/// text. Neither the model nor any random stream is touched.
pub fn evaluate_epoch(ckpt: &Checkpoint, split: &Corpus) -> Result<LossBreakdown> {
    if split.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let model = &ckpt.model;
    let cfg = &ckpt.config;
    let mut acc = LossBreakdown::default();
    let idx: Vec<usize> = (0..split.len()).collect();
    for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
        let images: Vec<&[f64]> = chunk.iter().map(|&i| split.samples[i].raw_image.as_slice()).collect();
        let tokens: Vec<TokenSeq> = chunk
            .iter()
            .map(|&i| tokenize(&split.samples[i].report, &model.vocab, model.max_len))
            .collect();
        let fwd = forward_batch(model, cfg.use_cmki, &images, &tokens, ckpt.epochs_done, b)?;
        let l = objectives_forward(objective_inputs(&fwd), &cfg.loss_weights, &model.temperature, cfg.infonce_mode)?;
        let w = chunk.len() as f64;
        acc.mse += w * l.mse;
        acc.info += w * l.info;
        acc.info_r += w * l.info_r;
    }
    let n = split.len() as f64;
    crate::objectives::total_loss(acc.mse / n, acc.info / n, acc.info_r / n, &cfg.loss_weights)
}
