//! NDJSON corpora and embeddings, JSON specs, and the CSV outputs.
//!
//! CSV headers:
//!
//! | file                           | columns                                                |
//! |--------------------------------|--------------------------------------------------------|
//! | `label_frequencies.csv`        | `label,count`                                          |
//! | `losses.csv`                   | `epoch,mse,info,info_r,total`                          |
//! | `zeroshot.csv`                 | `metric,label,value`                                   |
//! | `retrieval.csv`                | `relevance,recall@P...,map@Q...`                       |
//! | `gap.csv`                      | `silhouette,fas,fas_variant`                           |
//! | `mean_difference.csv`          | `n,delta_mean`                                         |
//! | `pca.csv`                      | `id,modality,pc1,pc2`                                  |
//! | `ablation.csv`                 | `seed,cell,use_summaries,use_cmki,status,<metrics...>` |
//! | `ablation_mean_difference.csv` | `cell,seed,n,delta_mean`                               |
//! | `sweep_k.csv`                  | `k,status,auc,auc_prob`                                |

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use xmalign_core::evaluation::{RetrievalReport, ZeroShotReport};
use xmalign_core::inference::{check_unique_ids, EmbeddingRecord};
use xmalign_core::metrics::GapReport;
use xmalign_core::numerics::{pca_project_2d, FeatureMatrix};
use xmalign_core::objectives::LossBreakdown;
use xmalign_core::synthdata::{Corpus, SamplePair, Split, SynthSpec};

use crate::error::{AppError, Result};

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AppError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))
}

fn write_ndjson<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| AppError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| AppError::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_ndjson(path, &corpus.samples)
}

pub fn read_corpus(path: &Path, spec: &SynthSpec, split: Split) -> Result<Corpus> {
    let samples: Vec<SamplePair> = read_ndjson(path)?;
    Corpus::new(samples, spec.clone(), split).map_err(|e| AppError::format(path, e.to_string()))
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    write_ndjson(path, records)
}

/// Rejects duplicate ids and vectors of differing widths.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let records: Vec<EmbeddingRecord> = read_ndjson(path)?;
    if let Some(first) = records.first() {
        let d = first.vector.dim();
        if let Some(r) = records.iter().find(|r| r.vector.dim() != d) {
            return Err(AppError::format(
                path,
                format!("record {:?} has dimension {}, expected {d}", r.id, r.vector.dim()),
            ));
        }
    }
    check_unique_ids(&records).map_err(|e| AppError::format(path, e.to_string()))?;
    Ok(records)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::io(path, e.into())
}

/// Writes `header` then `rows`, all as strings.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_label_frequencies(path: &Path, table: &[(String, usize)]) -> Result<()> {
    let rows: Vec<Vec<String>> = table.iter().map(|(l, c)| vec![l.clone(), c.to_string()]).collect();
    write_rows(path, &strings(["label", "count"]), &rows)
}

pub fn write_losses(path: &Path, epochs: &[LossBreakdown]) -> Result<()> {
    let rows: Vec<Vec<String>> = epochs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            vec![
                (i + 1).to_string(),
                l.mse.to_string(),
                l.info.to_string(),
                l.info_r.to_string(),
                l.total.to_string(),
            ]
        })
        .collect();
    write_rows(path, &strings(["epoch", "mse", "info", "info_r", "total"]), &rows)
}

/// Long format; an AUC that is undefined for a label leaves `value` empty.
pub fn zeroshot_rows(r: &ZeroShotReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, label: &str, value: String| rows.push(vec![metric.into(), label.into(), value]);
    for l in &r.labels {
        push("auc", &l.name, fmt_opt(l.auc));
        push("auc_prob", &l.name, fmt_opt(l.auc_prob));
        push("accuracy", &l.name, l.metrics.accuracy.to_string());
        push("f1", &l.name, l.metrics.f1.to_string());
        push("precision", &l.name, l.metrics.precision.to_string());
        push("positives", &l.name, l.positives.to_string());
    }
    push("auc", "macro", fmt_opt(r.macro_auc));
    push("auc_prob", "macro", fmt_opt(r.macro_auc_prob));
    push("accuracy", "macro", r.macro_metrics.accuracy.to_string());
    push("f1", "macro", r.macro_metrics.f1.to_string());
    push("precision", "macro", r.macro_metrics.precision.to_string());
    push("tau", "all", r.tau.to_string());
    rows
}

pub fn write_zeroshot(path: &Path, r: &ZeroShotReport) -> Result<()> {
    write_rows(path, &strings(["metric", "label", "value"]), &zeroshot_rows(r))
}

pub fn retrieval_header(r: &RetrievalReport) -> Vec<String> {
    let mut h = vec!["relevance".to_string()];
    h.extend(r.recall.iter().map(|(p, _)| format!("recall@{p}")));
    h.extend(r.map.iter().map(|(q, _)| format!("map@{q}")));
    h
}

pub fn write_retrieval(path: &Path, r: &RetrievalReport) -> Result<()> {
    let mut row = vec![serde_json::to_value(r.relevance)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()];
    row.extend(r.recall.iter().map(|(_, v)| v.to_string()));
    row.extend(r.map.iter().map(|(_, v)| v.to_string()));
    write_rows(path, &retrieval_header(r), &[row])
}

pub fn write_gap(path: &Path, g: &GapReport) -> Result<()> {
    let row = vec![g.silhouette.to_string(), g.fas.to_string(), g.variant.as_str().to_string()];
    write_rows(path, &strings(["silhouette", "fas", "fas_variant"]), &[row])
}

pub fn write_mean_difference(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = curve.iter().map(|(n, d)| vec![n.to_string(), d.to_string()]).collect();
    write_rows(path, &strings(["n", "delta_mean"]), &rows)
}

/// Joint 2-D PCA of all records, in file order.
pub fn write_pca(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let rows: Vec<&[f64]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let proj = pca_project_2d(&FeatureMatrix::from_rows(&rows)?)?;
    let out: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.id.clone(),
                r.modality.as_str().to_string(),
                proj.get(i, 0).to_string(),
                proj.get(i, 1).to_string(),
            ]
        })
        .collect();
    write_rows(path, &strings(["id", "modality", "pc1", "pc2"]), &out)
}
