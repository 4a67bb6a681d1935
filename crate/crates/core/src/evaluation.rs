//! End-to-end evaluation of a frozen model on a labelled split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{build_prompts, embed_corpus, rank_candidates, sample_id_of, zero_shot_scores, EmbeddingRecord};
use crate::metrics::{
    average_precision_at_q, gap_report, macro_auc, map_at_q, mean_recall_at_p, relevance, threshold_metrics, FasVariant,
    GapReport, RelevanceMode, ThresholdMetrics,
};
use crate::model::Model;
use crate::numerics::FeatureMatrix;
use crate::synthdata::Corpus;
use crate::Modality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub recall_at: Vec<usize>,
    pub map_at: Vec<usize>,
    /// Decision threshold on the zero-shot probability.
    pub threshold: f64,
    pub fas_variant: FasVariant,
    pub relevance: RelevanceMode,
    /// Overrides the checkpoint's temperature for zero-shot scoring.
    pub tau: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            recall_at: vec![5, 10, 50, 100],
            map_at: vec![5, 10, 50],
            threshold: 0.5,
            fas_variant: FasVariant::Clamped,
            relevance: RelevanceMode::AnyOverlap,
            tau: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.recall_at.is_empty() || self.recall_at.contains(&0) {
            problems.push("eval.recall_at must be a non-empty list of positive integers".into());
        }
        if self.map_at.is_empty() || self.map_at.contains(&0) {
            problems.push("eval.map_at must be a non-empty list of positive integers".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            problems.push(format!("eval.threshold must lie in (0, 1), got {}", self.threshold));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) || !t.is_finite() {
                problems.push(format!("eval.tau must be positive, got {t}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub name: String,
    pub positives: usize,
    /// AUC of the raw cosine to the positive prompt; absent for single-class
    /// labels.
    pub auc: Option<f64>,
    /// AUC of the two-way softmax probability.
    pub auc_prob: Option<f64>,
    pub metrics: ThresholdMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub tau: f64,
    pub labels: Vec<LabelReport>,
    pub macro_auc: Option<f64>,
    pub macro_auc_prob: Option<f64>,
    pub macro_metrics: ThresholdMetrics,
}

pub fn eval_zeroshot(model: &Model, split: &Corpus, opts: &EvalOptions) -> Result<ZeroShotReport> {
    opts.validate()?;
    if split.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let tau = opts.tau.unwrap_or_else(|| model.temperature.value());
    let prompts = build_prompts(model, split.label_names())?;
    let n = split.len();
    let l = prompts.len();
    let mut prob = Vec::with_capacity(n * l);
    let mut cos = Vec::with_capacity(n * l);
    for s in &split.samples {
        let v = model.embed_image(&s.raw_image)?;
        let sc = zero_shot_scores(&v, &prompts, tau)?;
        prob.extend(sc.probabilities);
        cos.extend(sc.positive_cosines);
    }
    let prob = FeatureMatrix::new(n, l, prob)?;
    let cos = FeatureMatrix::new(n, l, cos)?;
    let labels: Vec<Vec<u8>> = split.samples.iter().map(|s| s.labels.clone()).collect();
    let (auc_prob, macro_auc_prob) = macro_auc(&prob, &labels)?;
    let (auc_cos, macro_auc_cos) = macro_auc(&cos, &labels)?;

    let mut reports = Vec::with_capacity(l);
    let mut sums = ThresholdMetrics {
        accuracy: 0.0,
        f1: 0.0,
        precision: 0.0,
    };
    for (k, name) in split.label_names().iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| prob.get(i, k)).collect();
        let lab: Vec<u8> = labels.iter().map(|r| r[k]).collect();
        let m = threshold_metrics(&col, &lab, opts.threshold)?;
        sums.accuracy += m.accuracy;
        sums.f1 += m.f1;
        sums.precision += m.precision;
        reports.push(LabelReport {
            name: name.clone(),
            positives: lab.iter().filter(|&&b| b == 1).count(),
            auc: auc_cos[k],
            auc_prob: auc_prob[k],
            metrics: m,
        });
    }
    let lf = l.max(1) as f64;
    Ok(ZeroShotReport {
        tau,
        labels: reports,
        macro_auc: macro_auc_cos,
        macro_auc_prob,
        macro_metrics: ThresholdMetrics {
            accuracy: sums.accuracy / lf,
            f1: sums.f1 / lf,
            precision: sums.precision / lf,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Report-to-volume: fraction of reports whose own volume is in the top P.
    pub recall: Vec<(usize, f64)>,
    /// Volume-to-volume MAP@Q under label-overlap relevance.
    pub map: Vec<(usize, f64)>,
    pub relevance: RelevanceMode,
}

fn split_records(records: &[EmbeddingRecord]) -> (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
    records.iter().cloned().partition(|r| r.modality == Modality::Image)
}

pub fn eval_retrieval(model: &Model, split: &Corpus, opts: &EvalOptions) -> Result<RetrievalReport> {
    opts.validate()?;
    let records = embed_corpus(model, split)?;
    let (images, texts) = split_records(&records);
    let index: BTreeMap<&str, usize> = images.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();

    let mut ranks = Vec::with_capacity(texts.len());
    for t in &texts {
        let order = rank_candidates(&t.vector, &images)?;
        let want = index[sample_id_of(&t.id)];
        let pos = order.iter().position(|&i| i == want).expect("paired volume is a candidate");
        ranks.push(pos + 1);
    }

    let mut rels = Vec::with_capacity(images.len());
    if images.len() > 1 {
        for (qi, q) in images.iter().enumerate() {
            let others: Vec<EmbeddingRecord> =
                images.iter().enumerate().filter(|&(i, _)| i != qi).map(|(_, r)| r.clone()).collect();
            let order = rank_candidates(&q.vector, &others)?;
            let qlab = &split.samples[qi].labels;
            rels.push(
                order
                    .iter()
                    .map(|&o| relevance(qlab, &split.samples[index[others[o].id.as_str()]].labels, opts.relevance))
                    .collect::<Vec<u8>>(),
            );
        }
    }

    let recall = opts
        .recall_at
        .iter()
        .map(|&p| Ok((p, mean_recall_at_p(&ranks, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let map = opts
        .map_at
        .iter()
        .map(|&q| {
            if rels.is_empty() {
                // a single volume has nothing to retrieve
                average_precision_at_q(&[], q)?;
                return Ok((q, 0.0));
            }
            Ok((q, map_at_q(&rels, q)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalReport {
        recall,
        map,
        relevance: opts.relevance,
    })
}

/// Pairs image and text records by sample id, in image-record order.
pub fn paired_matrices(records: &[EmbeddingRecord]) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (images, texts) = split_records(records);
    let by_id: BTreeMap<&str, &EmbeddingRecord> = texts.iter().map(|r| (sample_id_of(&r.id), r)).collect();
    if images.len() != texts.len() {
        return Err(Error::dim("text records per image record", images.len(), texts.len()));
    }
    let mut img_rows = Vec::with_capacity(images.len());
    let mut txt_rows = Vec::with_capacity(images.len());
    for r in &images {
        let t = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::invalid(format!("image record {:?} has no paired text record", r.id)))?;
        img_rows.push(r.vector.as_slice());
        txt_rows.push(t.vector.as_slice());
    }
    Ok((FeatureMatrix::from_rows(&img_rows)?, FeatureMatrix::from_rows(&txt_rows)?))
}

pub fn gap_from_records(records: &[EmbeddingRecord], variant: FasVariant) -> Result<GapReport> {
    let (images, texts) = paired_matrices(records)?;
    gap_report(&images, &texts, variant)
}

pub fn eval_gap(model: &Model, split: &Corpus, variant: FasVariant) -> Result<GapReport> {
    gap_from_records(&embed_corpus(model, split)?, variant)
}
