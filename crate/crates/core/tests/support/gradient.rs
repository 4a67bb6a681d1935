//! End-to-end gradient check: the analytic gradient of one training step's
//! total loss, w.r.t. every encoder weight, the bank and log τ, against
//! central finite differences over random small configurations.
//!
//! Shared by the core test suite and the acceptance run.

use std::time::{Duration, Instant};

use xmalign_core::encoders::EncoderConfig;
use xmalign_core::model::{Model, TENSOR_NAMES};
use xmalign_core::numerics::{finite_diff_grad, FD_STEP};
use xmalign_core::objectives::{InfoNceMode, LossWeights, Temperature};
use xmalign_core::rng::RngStream;
use xmalign_core::textpipe::{tokenize, TokenSeq, Vocab};
use xmalign_core::trainer::{loss_and_grads, TrainConfig};

const WORDS: [&str; 6] = ["there", "is", "nodule", "effusion", "no", "normal"];

struct Case {
    model: Model,
    cfg: TrainConfig,
    images: Vec<Vec<f64>>,
    tokens: Vec<TokenSeq>,
}

fn between(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn random_case(seed: u64) -> Case {
    let mut rng = RngStream::new(seed, 0);
    let encoder = EncoderConfig {
        input_dim: between(&mut rng, 2, 6),
        embed_dim: between(&mut rng, 2, 5),
        hidden: between(&mut rng, 2, 6),
        output_dim: between(&mut rng, 2, 8),
    };
    let bank_size = between(&mut rng, 1, 4);
    let n = between(&mut rng, 1, 4);
    let max_len = between(&mut rng, 2, 6);
    let learnable = rng.bernoulli(0.5);
    let temperature = Temperature::new(rng.uniform_range(0.1, 1.0), learnable).unwrap();
    let vocab = Vocab::from_texts(WORDS);
    let model = Model::init(encoder, vocab, max_len, bank_size, temperature, seed);

    let cfg = TrainConfig {
        encoder,
        bank_size,
        use_cmki: rng.bernoulli(0.75),
        infonce_mode: if rng.bernoulli(0.5) {
            InfoNceMode::Symmetric
        } else {
            InfoNceMode::ImageToText
        },
        loss_weights: LossWeights::new(
            rng.uniform_range(0.1, 1.0),
            rng.uniform_range(0.1, 1.0),
            rng.uniform_range(0.1, 1.0),
        )
        .unwrap(),
        ..TrainConfig::default()
    };
    let images = (0..n)
        .map(|_| (0..encoder.input_dim).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
        .collect();
    let tokens = (0..n)
        .map(|_| {
            let len = between(&mut rng, 1, 5);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.below(WORDS.len())]).collect();
            tokenize(&text.join(" "), &model.vocab, max_len)
        })
        .collect();
    Case {
        model,
        cfg,
        images,
        tokens,
    }
}

fn flatten(model: &Model) -> Vec<f64> {
    let mut x: Vec<f64> = model.tensors().concat();
    x.push(model.temperature.log_tau);
    x
}

fn unflatten(model: &mut Model, x: &[f64]) {
    let mut it = x.iter().copied();
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v = it.next().unwrap());
    }
    model.temperature.log_tau = it.next().unwrap();
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

pub struct Worst {
    /// Largest per-tensor relative error, `|a - n| / max(|a|, |n|)` in the
    /// Euclidean norm.
    pub rel_err: f64,
    pub seed: u64,
    pub tensor: &'static str,
    pub configs: usize,
    pub elapsed: Duration,
}

/// Checks `configs` random configurations (d <= 8, K <= 4, N <= 4).
pub fn check(configs: usize) -> Worst {
    let start = Instant::now();
    let mut worst = (0.0, 0, "");
    for seed in 0..configs as u64 {
        let case = random_case(seed);
        let images: Vec<&[f64]> = case.images.iter().map(Vec::as_slice).collect();
        let (_, grads) = loss_and_grads(&case.model, &case.cfg, &images, &case.tokens).unwrap();

        let x0 = flatten(&case.model);
        let mut probe = case.model.clone();
        let numeric = finite_diff_grad(
            |x| {
                unflatten(&mut probe, x);
                loss_and_grads(&probe, &case.cfg, &images, &case.tokens).unwrap().0.total
            },
            &x0,
            FD_STEP,
        )
        .unwrap();

        let mut offset = 0;
        for (name, analytic) in TENSOR_NAMES.iter().zip(grads.tensors()) {
            let e = rel_err(analytic, &numeric[offset..offset + analytic.len()]);
            if e > worst.0 {
                worst = (e, seed, *name);
            }
            offset += analytic.len();
        }
        if case.model.temperature.learnable {
            let e = rel_err(&[grads.log_tau], &numeric[offset..]);
            if e > worst.0 {
                worst = (e, seed, "log_tau");
            }
        }
        assert!(case.cfg.use_cmki || grads.bank.iter().all(|&g| g == 0.0));
    }
    Worst {
        rel_err: worst.0,
        seed: worst.1,
        tensor: worst.2,
        configs,
        elapsed: start.elapsed(),
    }
}
