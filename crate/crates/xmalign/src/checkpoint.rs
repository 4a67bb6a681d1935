//! Binary checkpoint format.
//!
//! ```text
//! "XMALIGN1" | header length (u64 LE) | JSON header | payload
//! ```
//!
//! The payload is little-endian `f64`: every parameter tensor in
//! [`TENSOR_NAMES`] order, then `log tau`, then the Adam first and second
//! moments for each tensor and for `log tau`. Floats never pass through JSON,
//! so a save/load round trip is bit-exact. The header records the SHA-256 of
//! the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xmalign_core::encoders::EncoderConfig;
use xmalign_core::model::{Model, TENSOR_NAMES};
use xmalign_core::numerics::AdamState;
use xmalign_core::objectives::Temperature;
use xmalign_core::rng::RngState;
use xmalign_core::textpipe::Vocab;
use xmalign_core::trainer::{Checkpoint, TrainConfig, CHECKPOINT_VERSION};

use crate::error::{AppError, Result};

const MAGIC: &[u8; 8] = b"XMALIGN1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    encoder: EncoderConfig,
    max_len: usize,
    bank_size: usize,
    learnable_tau: bool,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    step: u64,
    epochs_done: usize,
    shuffle_rng: RngState,
    text_rng: RngState,
    payload_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    len: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let model = &ckpt.model;
    let mut payload = Vec::new();
    let mut put = |values: &[f64]| {
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in model.tensors() {
        put(t);
    }
    put(&[model.temperature.log_tau]);
    for st in &ckpt.optimizer {
        put(&st.m);
        put(&st.v);
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        encoder: model.encoder,
        max_len: model.max_len,
        bank_size: model.bank.size(),
        learnable_tau: model.temperature.learnable,
        vocab: model.vocab_words(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(model.tensor_lens())
            .map(|(n, len)| TensorEntry {
                name: (*n).into(),
                len,
            })
            .collect(),
        step: ckpt.step,
        epochs_done: ckpt.epochs_done,
        shuffle_rng: ckpt.shuffle_rng,
        text_rng: ckpt.text_rng,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: &str| AppError::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let payload = &body[hlen..];
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(bad("payload checksum mismatch"));
    }
    if !payload.len().is_multiple_of(8) {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let vocab = Vocab::from_tokens(header.vocab)?;
    let temperature = Temperature {
        log_tau: 0.0,
        learnable: header.learnable_tau,
    };
    let mut model = Model::init(header.encoder, vocab, header.max_len, header.bank_size, temperature, 0);
    let lens = model.tensor_lens();
    let declared: Vec<usize> = header.tensors.iter().map(|t| t.len).collect();
    let names_ok = header.tensors.iter().map(|t| t.name.as_str()).eq(TENSOR_NAMES.iter().copied());
    if declared != lens || !names_ok {
        return Err(bad("tensor table does not match the declared shapes"));
    }
    let expected = 2 * (lens.iter().sum::<usize>() + 1) + lens.iter().sum::<usize>() + 1;
    if payload.len() / 8 != expected {
        return Err(bad(&format!("payload holds {} values, expected {expected}", payload.len() / 8)));
    }
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    model.temperature.log_tau = values.next().expect("length checked");
    let mut optimizer = Vec::with_capacity(lens.len() + 1);
    for &n in lens.iter().chain(std::iter::once(&1)) {
        let mut st = AdamState::new(n);
        st.m.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        st.v.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        optimizer.push(st);
    }
    let ckpt = Checkpoint {
        version: header.format_version,
        config: header.config,
        model,
        optimizer,
        step: header.step,
        epochs_done: header.epochs_done,
        shuffle_rng: header.shuffle_rng,
        text_rng: header.text_rng,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    from_bytes(&bytes, path)
}
