//! Frozen-model consumers: corpus embedding, prompt-based zero-shot scoring
//! and cosine retrieval.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{cosine_similarity, FeatureVector};
use crate::synthdata::Corpus;
use crate::textpipe::{render_prompt, Polarity};
use crate::Modality;

/// Suffix that keeps text record ids distinct from image record ids.
pub const TEXT_ID_SUFFIX: &str = ":text";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub modality: Modality,
    pub vector: FeatureVector,
}

pub fn text_record_id(sample_id: &str) -> String {
    format!("{sample_id}{TEXT_ID_SUFFIX}")
}

/// Sample id a record belongs to, whatever its modality.
pub fn sample_id_of(record_id: &str) -> &str {
    record_id.strip_suffix(TEXT_ID_SUFFIX).unwrap_or(record_id)
}

/// Fails on the first repeated id.
pub fn check_unique_ids(records: &[EmbeddingRecord]) -> Result<()> {
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(Error::DuplicateId(w[0].into())),
        None => Ok(()),
    }
}

/// All image records in corpus order, followed by all text records.
pub fn embed_corpus(model: &Model, corpus: &Corpus) -> Result<Vec<EmbeddingRecord>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot embed an empty corpus"));
    }
    let mut out = Vec::with_capacity(2 * corpus.len());
    for s in &corpus.samples {
        out.push(EmbeddingRecord {
            id: s.id.clone(),
            modality: Modality::Image,
            vector: model.embed_image(&s.raw_image)?,
        });
    }
    for s in &corpus.samples {
        out.push(EmbeddingRecord {
            id: text_record_id(&s.id),
            modality: Modality::Text,
            vector: model.embed_text(&s.report)?,
        });
    }
    check_unique_ids(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPair {
    pub abnormality: String,
    pub positive_text: String,
    pub negative_text: String,
    pub positive_emb: FeatureVector,
    pub negative_emb: FeatureVector,
}

pub fn build_prompts<S: AsRef<str>>(model: &Model, names: &[S]) -> Result<Vec<PromptPair>> {
    names
        .iter()
        .map(|n| {
            let name = n.as_ref();
            let positive_text = render_prompt(name, Polarity::Positive)?;
            let negative_text = render_prompt(name, Polarity::Negative)?;
            Ok(PromptPair {
                abnormality: name.into(),
                positive_emb: model.embed_text(&positive_text)?,
                negative_emb: model.embed_text(&negative_text)?,
                positive_text,
                negative_text,
            })
        })
        .collect()
}

/// Per-label scores of one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores {
    /// Two-way softmax probability of the positive prompt.
    pub probabilities: Vec<f64>,
    /// Raw cosine to the positive prompt.
    pub positive_cosines: Vec<f64>,
    /// Cosine to the positive prompt minus cosine to the negative one.
    pub margins: Vec<f64>,
}

pub fn zero_shot_scores(volume: &[f64], prompts: &[PromptPair], tau: f64) -> Result<LabelScores> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut out = LabelScores {
        probabilities: Vec::with_capacity(prompts.len()),
        positive_cosines: Vec::with_capacity(prompts.len()),
        margins: Vec::with_capacity(prompts.len()),
    };
    for p in prompts {
        let pos = cosine_similarity(volume, &p.positive_emb)?;
        let neg = cosine_similarity(volume, &p.negative_emb)?;
        // p = e^{pos/τ} / (e^{pos/τ} + e^{neg/τ}) written as a logistic.
        let prob = 1.0 / (1.0 + libm::exp((neg - pos) / tau));
        out.probabilities.push(prob);
        out.positive_cosines.push(pos);
        out.margins.push(pos - neg);
    }
    Ok(out)
}

/// Indices of `candidates` by descending cosine to `query`, ties by
/// ascending id.
pub fn rank_candidates(query: &[f64], candidates: &[EmbeddingRecord]) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    let sims = candidates
        .iter()
        .map(|c| cosine_similarity(query, &c.vector))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| candidates[a].id.cmp(&candidates[b].id))
    });
    Ok(order)
}

pub fn retrieve_by_report(query: &[f64], volumes: &[EmbeddingRecord]) -> Result<Vec<String>> {
    Ok(rank_candidates(query, volumes)?
        .into_iter()
        .map(|i| volumes[i].id.clone())
        .collect())
}

/// Like [`retrieve_by_report`] but drops the reference whose id equals
/// `query_id`.
pub fn retrieve_by_volume(query_id: &str, query: &[f64], references: &[EmbeddingRecord]) -> Result<Vec<String>> {
    let others: Vec<EmbeddingRecord> = references.iter().filter(|r| r.id != query_id).cloned().collect();
    if others.is_empty() {
        return Err(Error::invalid("no reference volumes besides the query"));
    }
    retrieve_by_report(query, &others)
}
