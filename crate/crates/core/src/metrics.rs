//! Classification, retrieval and modality-gap metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, dot, norm, FeatureMatrix};
use crate::Modality;

fn check_binary(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim("scores vs labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_binary(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Mid-ranks are half-integers, so the rank sum is exact in f64.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-label AUC over a samples × labels score matrix, plus the mean over
/// the labels where it is defined.
pub fn macro_auc(scores: &FeatureMatrix, labels: &[Vec<u8>]) -> Result<(Vec<Option<f64>>, Option<f64>)> {
    if labels.len() != scores.rows() {
        return Err(Error::dim("label rows", scores.rows(), labels.len()));
    }
    let mut per_label = Vec::with_capacity(scores.cols());
    for l in 0..scores.cols() {
        let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, l)).collect();
        let lab = labels
            .iter()
            .map(|row| row.get(l).copied().ok_or(Error::dim("label columns", scores.cols(), row.len())))
            .collect::<Result<Vec<u8>>>()?;
        per_label.push(match roc_auc(&col, &lab) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        });
    }
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok((per_label, mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
}

/// Predicts positive when `score >= thr`. Precision and F1 with a zero
/// denominator are 0.
pub fn threshold_metrics(scores: &[f64], labels: &[u8], thr: f64) -> Result<ThresholdMetrics> {
    check_binary(scores, labels)?;
    if !(thr > 0.0 && thr < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {thr}")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= thr, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(ThresholdMetrics {
        accuracy,
        f1,
        precision,
    })
}

/// 1 when the true match sits at 1-based `rank` within the top `p`.
pub fn recall_at_p(rank: usize, p: usize) -> Result<u8> {
    if rank == 0 || p == 0 {
        return Err(Error::invalid("rank and P are 1-based"));
    }
    Ok(u8::from(rank <= p))
}

pub fn mean_recall_at_p(ranks: &[usize], p: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    let mut hits = 0usize;
    for &r in ranks {
        hits += recall_at_p(r, p)? as usize;
    }
    Ok(hits as f64 / ranks.len() as f64)
}

/// Truncated average precision, normalised by `min(R, Q)` where `R` counts
/// the relevant items in the whole list. Zero when nothing is relevant.
pub fn average_precision_at_q(rel: &[u8], q: usize) -> Result<f64> {
    if q == 0 {
        return Err(Error::invalid("Q must be >= 1"));
    }
    if rel.iter().any(|&r| r > 1) {
        return Err(Error::invalid("relevance must be 0 or 1"));
    }
    let total = rel.iter().filter(|&&r| r == 1).count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in rel.iter().take(q).enumerate() {
        if r == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total.min(q) as f64)
}

pub fn map_at_q(rels: &[Vec<u8>], q: usize) -> Result<f64> {
    if rels.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    let mut sum = 0.0;
    for r in rels {
        sum += average_precision_at_q(r, q)?;
    }
    Ok(sum / rels.len() as f64)
}

/// When two label vectors count as relevant to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceMode {
    /// At least one shared positive label.
    #[default]
    AnyOverlap,
    /// Identical label sets (two all-negative samples match).
    ExactMatch,
}

pub fn relevance(query: &[u8], candidate: &[u8], mode: RelevanceMode) -> u8 {
    let hit = match mode {
        RelevanceMode::AnyOverlap => query.iter().zip(candidate).any(|(&a, &b)| a == 1 && b == 1),
        RelevanceMode::ExactMatch => query == candidate,
    };
    u8::from(hit)
}

/// Mean silhouette with cosine distance, the two modalities being the
/// clusters.
pub fn silhouette_cosine(x: &FeatureMatrix, modality: &[Modality]) -> Result<f64> {
    if modality.len() != x.rows() {
        return Err(Error::dim("modality labels", x.rows(), modality.len()));
    }
    let n_img = modality.iter().filter(|&&m| m == Modality::Image).count();
    if n_img < 2 || x.rows() - n_img < 2 {
        return Err(Error::UndefinedMetric("silhouette needs two points per modality".into()));
    }
    let mut unit = x.clone();
    for i in 0..unit.rows() {
        let n = norm(unit.row(i));
        if !(n > 0.0) {
            return Err(Error::DegenerateVector(format!("row {i} has zero norm")));
        }
        unit.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    let n = x.rows();
    let mut total = 0.0;
    for i in 0..n {
        let mut same = (0.0, 0usize);
        let mut other = (0.0, 0usize);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = 1.0 - dot(unit.row(i), unit.row(j)).clamp(-1.0, 1.0);
            let slot = if modality[i] == modality[j] { &mut same } else { &mut other };
            slot.0 += d;
            slot.1 += 1;
        }
        let a = same.0 / same.1 as f64;
        let b = other.0 / other.1 as f64;
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// How a silhouette value maps onto the alignment score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FasVariant {
    /// `1 - s`, clamped into `[0, 1]`.
    #[default]
    Clamped,
    /// `(1 - s) / 2`.
    HalfRange,
}

impl FasVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FasVariant::Clamped => "clamped",
            FasVariant::HalfRange => "half-range",
        }
    }
}

pub fn fas(silhouette: f64, variant: FasVariant) -> Result<f64> {
    if !(-1.0..=1.0).contains(&silhouette) {
        return Err(Error::invalid(format!("silhouette {silhouette} outside [-1, 1]")));
    }
    Ok(match variant {
        FasVariant::Clamped => (1.0 - silhouette).clamp(0.0, 1.0),
        FasVariant::HalfRange => (1.0 - silhouette) / 2.0,
    })
}

/// `M[i][j]` = cosine between image `i` and text `j`.
pub fn similarity_matrix(images: &FeatureMatrix, texts: &FeatureMatrix) -> Result<FeatureMatrix> {
    if images.cols() != texts.cols() {
        return Err(Error::dim("embedding width", images.cols(), texts.cols()));
    }
    let mut data = Vec::with_capacity(images.rows() * texts.rows());
    for i in 0..images.rows() {
        for j in 0..texts.rows() {
            data.push(cosine_similarity(images.row(i), texts.row(j))?);
        }
    }
    FeatureMatrix::new(images.rows(), texts.rows(), data)
}

/// Cumulative mean margin of paired over unpaired similarity for every
/// prefix size `2..=upto`.
pub fn mean_difference(m: &FeatureMatrix, upto: usize) -> Result<Vec<(usize, f64)>> {
    if m.rows() != m.cols() {
        return Err(Error::dim("square similarity matrix", m.rows(), m.cols()));
    }
    if upto < 2 {
        return Err(Error::invalid("mean difference needs at least two pairs"));
    }
    if upto > m.rows() {
        return Err(Error::invalid(format!("upto {upto} exceeds {} pairs", m.rows())));
    }
    let mut curve = Vec::with_capacity(upto - 1);
    let mut sum = 0.0;
    for k in 1..upto {
        // Terms gained when prefix grows from k to k + 1 items.
        for j in 0..k {
            sum += m.get(k, k) - m.get(k, j);
            sum += m.get(j, j) - m.get(j, k);
        }
        let n = (k + 1) as f64;
        curve.push((k + 1, sum / (n * (n - 1.0))));
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub silhouette: f64,
    pub fas: f64,
    pub variant: FasVariant,
    pub curve: Vec<(usize, f64)>,
}

/// Gap diagnostics for row-paired image and text embeddings.
pub fn gap_report(images: &FeatureMatrix, texts: &FeatureMatrix, variant: FasVariant) -> Result<GapReport> {
    images.same_shape(texts, "paired embeddings")?;
    let mut stacked = Vec::with_capacity(2 * images.as_slice().len());
    stacked.extend_from_slice(images.as_slice());
    stacked.extend_from_slice(texts.as_slice());
    let x = FeatureMatrix::new(2 * images.rows(), images.cols(), stacked)?;
    let mut modality = vec![Modality::Image; images.rows()];
    modality.extend(core::iter::repeat_n(Modality::Text, texts.rows()));
    let silhouette = silhouette_cosine(&x, &modality)?;
    let m = similarity_matrix(images, texts)?;
    Ok(GapReport {
        silhouette,
        fas: fas(silhouette, variant)?,
        variant,
        curve: mean_difference(&m, images.rows())?,
    })
}
