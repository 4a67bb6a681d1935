//! Seeded generator of a paired image/report corpus with long-tail labels.
//!
//! Each sample draws a label set by independent Bernoulli trials. A latent
//! vector `z = z0 + sum_{l in S} c_l + eps` is mapped to the raw image input by
//! a fixed random matrix plus an image-only modality offset. The report lists
//! one `"There is {name}."` sentence per positive label, interleaved with
//! neutral filler sentences, and the summary comes from the rule-based
//! summarizer over the same names.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::textpipe::{summarize_rule_based, KeywordTable};

const STRUCTURE_STREAM: u64 = 0x5eed_0001;
const SAMPLE_STREAM: u64 = 0x5eed_0002;

pub const DEFAULT_LABELS: [&str; 8] = [
    "pleural effusion",
    "emphysema",
    "atelectasis",
    "lung nodule",
    "consolidation",
    "cardiomegaly",
    "pneumothorax",
    "hiatal hernia",
];

pub const DEFAULT_FILLERS: [&str; 16] = [
    "The trachea is midline.",
    "Heart size is within normal limits.",
    "The thoracic aorta has a normal caliber.",
    "Mediastinal structures are unremarkable.",
    "Examination was performed without contrast.",
    "Bones show mild degenerative change.",
    "The upper abdomen appears unremarkable.",
    "Images are of diagnostic quality.",
    "Central airways are patent.",
    "Thyroid gland appears symmetric.",
    "Comparison was made with the previous study.",
    "The esophagus has a normal course.",
    "Soft tissues of the chest wall are normal.",
    "Pulmonary arteries have a normal diameter.",
    "Scan covers the lung apices to the adrenal glands.",
    "Breathing artifacts are minimal.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub label_names: Vec<String>,
    /// Per-label Bernoulli frequency.
    pub frequencies: Vec<f64>,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    pub modality_offset_scale: f64,
    pub fillers: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// 8 labels, the last two long-tail at 0.02; 2000 train / 400 val.
    fn default() -> Self {
        make_longtail_spec(&DEFAULT_LABELS, 0.3, 0.02, 2, 16, 48, 0).expect("default spec is valid")
    }
}

impl SynthSpec {
    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.label_names.is_empty() {
            problems.push("label_names must not be empty".to_string());
        }
        for (i, n) in self.label_names.iter().enumerate() {
            if n.trim().is_empty() {
                problems.push(format!("label_names[{i}] is empty"));
            }
            if self.label_names[..i].contains(n) {
                problems.push(format!("label_names[{i}] duplicates {n:?}"));
            }
        }
        if self.frequencies.len() != self.label_names.len() {
            problems.push(format!(
                "p has {} entries but there are {} labels",
                self.frequencies.len(),
                self.label_names.len()
            ));
        }
        for (i, p) in self.frequencies.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                problems.push(format!("p[{i}] = {p} is outside [0, 1]"));
            }
        }
        if self.latent_dim == 0 {
            problems.push("latent_dim must be >= 1".to_string());
        }
        if self.input_dim == 0 {
            problems.push("input_dim must be >= 1".to_string());
        }
        if !(self.noise_sigma >= 0.0) {
            problems.push("noise_sigma must be >= 0".to_string());
        }
        if !(self.modality_offset_scale >= 0.0) {
            problems.push("modality_offset_scale must be >= 0".to_string());
        }
        if self.fillers.len() < 4 {
            problems.push("fillers needs at least 4 sentences".to_string());
        }
        let lowered: Vec<String> = self.label_names.iter().map(|n| n.to_lowercase()).collect();
        for f in &self.fillers {
            let lf = f.to_lowercase();
            if let Some(n) = lowered.iter().find(|n| crate::textpipe::contains_phrase(&lf, n)) {
                problems.push(format!("filler {f:?} mentions label {n:?}"));
            }
        }
        if self.n_train == 0 {
            problems.push("n_train must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn keyword_table(&self) -> Result<KeywordTable> {
        KeywordTable::from_names(&self.label_names)
    }
}

/// First `L - tail_count` labels get `head_p`, the rest `tail_p`.
pub fn make_longtail_spec<S: AsRef<str>>(
    names: &[S],
    head_p: f64,
    tail_p: f64,
    tail_count: usize,
    latent_dim: usize,
    input_dim: usize,
    seed: u64,
) -> Result<SynthSpec> {
    let l = names.len();
    let mut problems = Vec::new();
    if tail_count > l {
        problems.push(format!("tail_count {tail_count} exceeds label count {l}"));
    }
    if !(tail_p > 0.0 && tail_p < head_p && head_p <= 1.0) {
        problems.push(format!("need 0 < tail_p < head_p <= 1, got tail {tail_p}, head {head_p}"));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let spec = SynthSpec {
        label_names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        frequencies: (0..l).map(|i| if i < l - tail_count { head_p } else { tail_p }).collect(),
        latent_dim,
        input_dim,
        noise_sigma: 0.1,
        modality_offset_scale: 1.0,
        fillers: DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
        n_train: 2000,
        n_val: 400,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePair {
    pub id: String,
    pub raw_image: Vec<f64>,
    pub report: String,
    pub summary: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<SamplePair>,
    pub spec: SynthSpec,
    pub split: Split,
}

impl Corpus {
    pub fn new(samples: Vec<SamplePair>, spec: SynthSpec, split: Split) -> Result<Self> {
        let mut problems = Vec::new();
        let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            problems.push(format!("duplicate sample id {:?}", w[0]));
        }
        let l = spec.num_labels();
        for s in &samples {
            if s.labels.len() != l || s.labels.iter().any(|&b| b > 1) {
                problems.push(format!("sample {:?} has an invalid label vector", s.id));
            }
            if s.raw_image.len() != spec.input_dim {
                problems.push(format!(
                    "sample {:?} raw_image has {} values, expected {}",
                    s.id,
                    s.raw_image.len(),
                    spec.input_dim
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self { samples, spec, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_names(&self) -> &[String] {
        &self.spec.label_names
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            samples: self.samples.iter().take(n).cloned().collect(),
            spec: self.spec.clone(),
            split: self.split,
        }
    }
}

struct Structure {
    base: Vec<f64>,
    concepts: Vec<Vec<f64>>,
    mixing: Vec<f64>,
    offset: Vec<f64>,
}

fn draw_structure(spec: &SynthSpec) -> Structure {
    let mut rng = RngStream::new(spec.seed, STRUCTURE_STREAM);
    let g = spec.latent_dim;
    let m = spec.input_dim;
    let base = (0..g).map(|_| rng.normal()).collect();
    let concepts = (0..spec.num_labels())
        .map(|_| (0..g).map(|_| rng.normal()).collect())
        .collect();
    let scale = 1.0 / libm::sqrt(g as f64);
    let mixing = (0..m * g).map(|_| rng.normal() * scale).collect();
    let mut offset: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let n = crate::numerics::norm(&offset).max(f64::MIN_POSITIVE);
    let k = spec.modality_offset_scale * libm::sqrt(m as f64) / n;
    offset.iter_mut().for_each(|v| *v *= k);
    Structure {
        base,
        concepts,
        mixing,
        offset,
    }
}

fn draw_sample(spec: &SynthSpec, st: &Structure, table: &KeywordTable, id: String, rng: &mut RngStream) -> SamplePair {
    let g = spec.latent_dim;
    let labels: Vec<u8> = spec.frequencies.iter().map(|&p| u8::from(rng.bernoulli(p))).collect();
    let mut z = st.base.clone();
    for (l, _) in labels.iter().enumerate().filter(|(_, &b)| b == 1) {
        for (zi, ci) in z.iter_mut().zip(&st.concepts[l]) {
            *zi += ci;
        }
    }
    for zi in z.iter_mut() {
        *zi += spec.noise_sigma * rng.normal();
    }
    let raw_image: Vec<f64> = st
        .mixing
        .chunks_exact(g)
        .zip(&st.offset)
        .map(|(row, o)| crate::numerics::dot(row, &z) + o + spec.noise_sigma * rng.normal())
        .collect();

    let findings: Vec<String> = labels
        .iter()
        .zip(&spec.label_names)
        .filter(|(&b, _)| b == 1)
        .map(|(_, n)| format!("There is {n}."))
        .collect();
    let n_fill = 2 + rng.below(3);
    let fillers: Vec<&str> = rng
        .sample_sorted(spec.fillers.len(), n_fill)
        .into_iter()
        .map(|i| spec.fillers[i].as_str())
        .collect();
    // Interleave: choose which output slots hold findings, keep both orders.
    let total = findings.len() + fillers.len();
    let finding_slots = rng.sample_sorted(total, findings.len());
    let mut sentences = Vec::with_capacity(total);
    let (mut fi, mut ri) = (0, 0);
    for slot in 0..total {
        if finding_slots.binary_search(&slot).is_ok() {
            sentences.push(findings[fi].as_str());
            fi += 1;
        } else {
            sentences.push(fillers[ri]);
            ri += 1;
        }
    }
    let report = sentences.join(" ");
    let summary = summarize_rule_based(&report, table).text().to_string();
    SamplePair {
        id,
        raw_image,
        report,
        summary,
        labels,
    }
}

/// Generates the train and validation splits for `spec`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Corpus, Corpus)> {
    spec.validate()?;
    let table = spec.keyword_table()?;
    let st = draw_structure(spec);
    let mut rng = RngStream::new(spec.seed, SAMPLE_STREAM);
    let train = (0..spec.n_train)
        .map(|i| draw_sample(spec, &st, &table, format!("train-{i:05}"), &mut rng))
        .collect();
    let val = (0..spec.n_val)
        .map(|i| draw_sample(spec, &st, &table, format!("val-{i:05}"), &mut rng))
        .collect();
    Ok((
        Corpus::new(train, spec.clone(), Split::Train)?,
        Corpus::new(val, spec.clone(), Split::Val)?,
    ))
}

/// Positive count per label, in label order.
pub fn label_frequency_table(corpus: &Corpus) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; corpus.spec.num_labels()];
    for s in &corpus.samples {
        for (c, &b) in counts.iter_mut().zip(&s.labels) {
            *c += usize::from(b);
        }
    }
    corpus.spec.label_names.iter().cloned().zip(counts).collect()
}
