//! The experiment lifecycle behind each subcommand. Ablation and sweep cells
//! go through [`train_corpus`] and [`evaluate_model`], the same code paths as
//! the standalone `train` and `eval-*` commands.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use xmalign_core::evaluation::{eval_gap, eval_retrieval, eval_zeroshot, gap_from_records, EvalOptions};
use xmalign_core::inference::embed_corpus;
use xmalign_core::metrics::GapReport;
use xmalign_core::model::Model;
use xmalign_core::objectives::LossBreakdown;
use xmalign_core::synthdata::{generate_corpus, label_frequency_table, Corpus, Split, SynthSpec};
use xmalign_core::trainer::{Checkpoint, TrainConfig, TrainReport, Trainer};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::{self, fmt_opt};
use crate::summarizer::Summarizer;

pub const TRAIN_FILE: &str = "train.ndjson";
pub const VAL_FILE: &str = "val.ndjson";
pub const SPEC_FILE: &str = "spec.json";

/// K values above this are accepted but slow at desk scale.
const LARGE_K: usize = 1024;

fn snapshot(cfg: &RunConfig, command: &str) -> Result<()> {
    formats::write_json(&cfg.paths.out(&format!("{command}.config.json")), cfg)
}

pub fn gen_data(cfg: &RunConfig) -> Result<(Corpus, Corpus)> {
    let (mut train, mut val) = generate_corpus(&cfg.data)?;
    if cfg.summarizer.backend != crate::summarizer::Backend::Rule {
        let s = Summarizer::from_config(&cfg.summarizer, cfg.data.keyword_table()?)?;
        for sample in train.samples.iter_mut().chain(val.samples.iter_mut()) {
            sample.summary = s.summarize(&sample.report)?.text().to_string();
        }
    }
    let dir = cfg.paths.data_dir();
    formats::create_dir(&dir)?;
    formats::write_corpus(&dir.join(TRAIN_FILE), &train)?;
    formats::write_corpus(&dir.join(VAL_FILE), &val)?;
    formats::write_json(&dir.join(SPEC_FILE), &cfg.data)?;
    formats::write_label_frequencies(&dir.join("label_frequencies.csv"), &label_frequency_table(&train))?;
    snapshot(cfg, "gen-data")?;
    Ok((train, val))
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Corpus> {
    let dir = cfg.paths.data_dir();
    let spec: SynthSpec = formats::read_json(&dir.join(SPEC_FILE))?;
    let file = match split {
        Split::Train => TRAIN_FILE,
        Split::Val => VAL_FILE,
    };
    formats::read_corpus(&dir.join(file), &spec, split)
}

fn data_path(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.paths.data_dir().join(match split {
        Split::Train => TRAIN_FILE,
        Split::Val => VAL_FILE,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Trains in memory; wall time excludes data loading.
pub fn train_corpus(train_cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(train_cfg.clone(), corpus)?;
    let mut epochs: Vec<LossBreakdown> = Vec::with_capacity(train_cfg.epochs);
    for _ in 0..train_cfg.epochs {
        epochs.push(trainer.run_epoch()?);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        report: TrainReport {
            epochs,
            wall_time_secs: Some(start.elapsed().as_secs_f64()),
            checkpoint_path: None,
        },
    })
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let corpus = load_split(cfg, Split::Train)?;
    let mut out = train_corpus(&cfg.train, &corpus)?;
    let path = cfg.paths.checkpoint();
    formats::create_dir(&cfg.paths.out_dir)?;
    checkpoint::save(&path, &out.checkpoint)?;
    formats::write_losses(&cfg.paths.out("losses.csv"), &out.report.epochs)?;
    snapshot(cfg, "train")?;
    out.report.checkpoint_path = Some(path.display().to_string());
    Ok(out)
}

/// Loads the checkpoint and checks it can read `corpus`.
fn load_model(cfg: &RunConfig, corpus: &Corpus, corpus_path: &Path) -> Result<Model> {
    let ckpt_path = cfg.paths.checkpoint();
    let ckpt = checkpoint::load(&ckpt_path)?;
    let (want, got) = (ckpt.model.encoder.input_dim, corpus.spec.input_dim);
    if want != got {
        return Err(AppError::Config(format!(
            "dimension mismatch: {} expects {want}-dimensional images but {} holds {got}",
            ckpt_path.display(),
            corpus_path.display()
        )));
    }
    Ok(ckpt.model)
}

pub fn embed(cfg: &RunConfig, split: Split) -> Result<PathBuf> {
    let corpus = load_split(cfg, split)?;
    let model = load_model(cfg, &corpus, &data_path(cfg, split))?;
    let records = embed_corpus(&model, &corpus)?;
    let path = cfg.paths.embeddings();
    formats::write_embeddings(&path, &records)?;
    snapshot(cfg, "embed")?;
    Ok(path)
}

pub fn eval_zeroshot_cmd(cfg: &RunConfig) -> Result<xmalign_core::evaluation::ZeroShotReport> {
    let val = load_split(cfg, Split::Val)?;
    let model = load_model(cfg, &val, &data_path(cfg, Split::Val))?;
    let report = eval_zeroshot(&model, &val, &cfg.eval)?;
    formats::write_zeroshot(&cfg.paths.out("zeroshot.csv"), &report)?;
    snapshot(cfg, "eval-zeroshot")?;
    Ok(report)
}

pub fn eval_retrieval_cmd(cfg: &RunConfig) -> Result<xmalign_core::evaluation::RetrievalReport> {
    let val = load_split(cfg, Split::Val)?;
    let model = load_model(cfg, &val, &data_path(cfg, Split::Val))?;
    let report = eval_retrieval(&model, &val, &cfg.eval)?;
    formats::write_retrieval(&cfg.paths.out("retrieval.csv"), &report)?;
    snapshot(cfg, "eval-retrieval")?;
    Ok(report)
}

pub fn eval_gap_cmd(cfg: &RunConfig) -> Result<GapReport> {
    let path = cfg.paths.embeddings();
    let records = formats::read_embeddings(&path)?;
    let report = gap_from_records(&records, cfg.eval.fas_variant).map_err(|e| AppError::format(&path, e.to_string()))?;
    formats::write_gap(&cfg.paths.out("gap.csv"), &report)?;
    formats::write_mean_difference(&cfg.paths.out("mean_difference.csv"), &report.curve)?;
    formats::write_pca(&cfg.paths.out("pca.csv"), &records)?;
    snapshot(cfg, "eval-gap")?;
    Ok(report)
}

/// Everything the ablation and sweep tables report for one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub auc: Option<f64>,
    pub auc_prob: Option<f64>,
    pub recall: Vec<(usize, f64)>,
    pub map: Vec<(usize, f64)>,
    pub gap: GapReport,
    pub final_loss: LossBreakdown,
    pub wall_time_secs: f64,
}

impl CellMetrics {
    pub fn recall_at(&self, p: usize) -> Option<f64> {
        self.recall.iter().find(|(k, _)| *k == p).map(|(_, v)| *v)
    }

    pub fn delta_mean(&self) -> f64 {
        self.gap.curve.last().map_or(0.0, |(_, d)| *d)
    }
}

pub fn evaluate_model(model: &Model, val: &Corpus, opts: &EvalOptions) -> Result<(Option<f64>, Option<f64>, xmalign_core::evaluation::RetrievalReport, GapReport)> {
    let z = eval_zeroshot(model, val, opts)?;
    let r = eval_retrieval(model, val, opts)?;
    let g = eval_gap(model, val, opts.fas_variant)?;
    Ok((z.macro_auc, z.macro_auc_prob, r, g))
}

pub fn run_cell(train_cfg: &TrainConfig, train: &Corpus, val: &Corpus, opts: &EvalOptions) -> Result<CellMetrics> {
    let out = train_corpus(train_cfg, train)?;
    let (auc, auc_prob, r, gap) = evaluate_model(&out.checkpoint.model, val, opts)?;
    Ok(CellMetrics {
        auc,
        auc_prob,
        recall: r.recall,
        map: r.map,
        gap,
        final_loss: *out.report.epochs.last().expect("epochs >= 1"),
        wall_time_secs: out.report.wall_time_secs.unwrap_or(0.0),
    })
}

/// Runs `jobs` on a small worker pool; results come back in job order.
pub fn run_parallel<J, R, F>(jobs: &[J], threads: usize, f: F) -> Vec<R>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> R + Sync,
{
    let threads = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len().max(1));
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().expect("results")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// The four semantic-summarization × knowledge-bank cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Baseline,
    SummariesOnly,
    BankOnly,
    Full,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Baseline, Cell::SummariesOnly, Cell::BankOnly, Cell::Full];

    pub fn name(self) -> &'static str {
        match self {
            Cell::Baseline => "baseline",
            Cell::SummariesOnly => "ss-only",
            Cell::BankOnly => "cmki-only",
            Cell::Full => "full",
        }
    }

    pub fn use_summaries(self) -> bool {
        matches!(self, Cell::SummariesOnly | Cell::Full)
    }

    pub fn use_cmki(self) -> bool {
        matches!(self, Cell::BankOnly | Cell::Full)
    }

    pub fn apply(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            use_summaries: self.use_summaries(),
            use_cmki: self.use_cmki(),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub cell: Cell,
    pub outcome: std::result::Result<CellMetrics, String>,
    exit_code: i32,
}

fn metric_header(opts: &EvalOptions) -> Vec<String> {
    let mut h: Vec<String> = ["auc", "auc_prob"].iter().map(|s| s.to_string()).collect();
    h.extend(opts.recall_at.iter().map(|p| format!("recall@{p}")));
    h.extend(opts.map_at.iter().map(|q| format!("map@{q}")));
    h.extend(["silhouette", "fas", "fas_variant", "delta_mean"].iter().map(|s| s.to_string()));
    h
}

fn metric_values(m: &CellMetrics) -> Vec<String> {
    let mut v = vec![fmt_opt(m.auc), fmt_opt(m.auc_prob)];
    v.extend(m.recall.iter().map(|(_, x)| x.to_string()));
    v.extend(m.map.iter().map(|(_, x)| x.to_string()));
    v.push(m.gap.silhouette.to_string());
    v.push(m.gap.fas.to_string());
    v.push(m.gap.variant.as_str().to_string());
    v.push(m.delta_mean().to_string());
    v
}

fn mean_of(ms: &[&CellMetrics]) -> CellMetrics {
    let n = ms.len() as f64;
    let avg = |f: &dyn Fn(&CellMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&CellMetrics) -> Option<f64>| {
        let v: Option<Vec<f64>> = ms.iter().map(|m| f(m)).collect();
        v.map(|v| v.iter().sum::<f64>() / n)
    };
    let first = ms[0];
    let curve = first
        .gap
        .curve
        .iter()
        .enumerate()
        .map(|(i, (k, _))| (*k, avg(&|m| m.gap.curve[i].1)))
        .collect();
    CellMetrics {
        auc: avg_opt(&|m| m.auc),
        auc_prob: avg_opt(&|m| m.auc_prob),
        recall: first.recall.iter().enumerate().map(|(i, (p, _))| (*p, avg(&|m| m.recall[i].1))).collect(),
        map: first.map.iter().enumerate().map(|(i, (q, _))| (*q, avg(&|m| m.map[i].1))).collect(),
        gap: GapReport {
            silhouette: avg(&|m| m.gap.silhouette),
            fas: avg(&|m| m.gap.fas),
            variant: first.gap.variant,
            curve,
        },
        final_loss: LossBreakdown {
            mse: avg(&|m| m.final_loss.mse),
            info: avg(&|m| m.final_loss.info),
            info_r: avg(&|m| m.final_loss.info_r),
            total: avg(&|m| m.final_loss.total),
        },
        wall_time_secs: avg(&|m| m.wall_time_secs),
    }
}

/// Per-cell means over the seeds that succeeded, in [`Cell::ALL`] order.
pub fn cell_means(results: &[CellResult]) -> Vec<(Cell, Option<CellMetrics>)> {
    Cell::ALL
        .iter()
        .map(|&c| {
            let ok: Vec<&CellMetrics> =
                results.iter().filter(|r| r.cell == c).filter_map(|r| r.outcome.as_ref().ok()).collect();
            (c, (!ok.is_empty()).then(|| mean_of(&ok)))
        })
        .collect()
}

fn fail_if_any(results: impl Iterator<Item = i32>, total: usize) -> Result<()> {
    let codes: Vec<i32> = results.filter(|&c| c != 0).collect();
    match codes.first() {
        None => Ok(()),
        Some(&code) => Err(AppError::RunsFailed {
            failed: codes.len(),
            total,
            code,
        }),
    }
}

/// Trains and evaluates every cell for every seed. With more than one seed,
/// `ablation.csv` gains a `mean` row per cell. The CSVs are written even when
/// some cells fail; the error then reports how many did.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let train = load_split(cfg, Split::Train)?;
    let val = load_split(cfg, Split::Val)?;
    let jobs: Vec<(u64, Cell)> = cfg
        .ablation
        .seeds
        .iter()
        .flat_map(|&s| Cell::ALL.iter().map(move |&c| (s, c)))
        .collect();
    let results = run_parallel(&jobs, cfg.ablation.threads, |&(seed, cell)| {
        let outcome = run_cell(&cell.apply(&cfg.train, seed), &train, &val, &cfg.eval);
        CellResult {
            seed,
            cell,
            exit_code: outcome.as_ref().err().map_or(0, AppError::exit_code),
            outcome: outcome.map_err(|e| e.to_string()),
        }
    });

    let mut header: Vec<String> = ["seed", "cell", "use_summaries", "use_cmki", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(metric_header(&cfg.eval));
    let width = header.len();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let lead = |seed: String, c: Cell, status: &str| {
        vec![seed, c.name().into(), c.use_summaries().to_string(), c.use_cmki().to_string(), status.into()]
    };
    for r in &results {
        let mut row = lead(r.seed.to_string(), r.cell, if r.outcome.is_ok() { "ok" } else { "failed" });
        match &r.outcome {
            Ok(m) => {
                row.extend(metric_values(m));
                for (n, d) in &m.gap.curve {
                    curves.push(vec![r.cell.name().into(), r.seed.to_string(), n.to_string(), d.to_string()]);
                }
            }
            Err(e) => {
                eprintln!("cell {} seed {} failed: {e}", r.cell.name(), r.seed);
                row.resize(width, String::new());
            }
        }
        rows.push(row);
    }
    let means = if cfg.ablation.seeds.len() > 1 { cell_means(&results) } else { Vec::new() };
    for (c, m) in means {
        let mut row = lead("mean".into(), c, if m.is_some() { "ok" } else { "failed" });
        match m {
            Some(m) => {
                row.extend(metric_values(&m));
                for (n, d) in &m.gap.curve {
                    curves.push(vec![c.name().into(), "mean".into(), n.to_string(), d.to_string()]);
                }
            }
            None => row.resize(width, String::new()),
        }
        rows.push(row);
    }
    formats::write_rows(&cfg.paths.out("ablation.csv"), &header, &rows)?;
    let curve_header: Vec<String> = ["cell", "seed", "n", "delta_mean"].iter().map(|s| s.to_string()).collect();
    formats::write_rows(&cfg.paths.out("ablation_mean_difference.csv"), &curve_header, &curves)?;
    snapshot(cfg, "ablate")?;
    fail_if_any(results.iter().map(|r| r.exit_code), results.len())?;
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k: usize,
    pub outcome: std::result::Result<(Option<f64>, Option<f64>), String>,
    exit_code: i32,
}

/// One full-model training and zero-shot evaluation per bank size, rows
/// sorted by K.
pub fn sweep_k(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let train = load_split(cfg, Split::Train)?;
    let val = load_split(cfg, Split::Val)?;
    let mut ks = cfg.sweep.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    for &k in ks.iter().filter(|&&k| k > LARGE_K) {
        eprintln!("warning: K = {k} is a very large bank; expect a long run");
    }
    let rows = run_parallel(&ks, cfg.ablation.threads, |&k| {
        let tc = TrainConfig {
            bank_size: k,
            use_cmki: true,
            use_summaries: true,
            ..cfg.train.clone()
        };
        let outcome = train_corpus(&tc, &train).and_then(|o| {
            let z = eval_zeroshot(&o.checkpoint.model, &val, &cfg.eval)?;
            Ok((z.macro_auc, z.macro_auc_prob))
        });
        SweepRow {
            k,
            exit_code: outcome.as_ref().err().map_or(0, AppError::exit_code),
            outcome: outcome.map_err(|e| e.to_string()),
        }
    });
    let header: Vec<String> = ["k", "status", "auc", "auc_prob"].iter().map(|s| s.to_string()).collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| match &r.outcome {
            Ok((a, p)) => vec![r.k.to_string(), "ok".into(), fmt_opt(*a), fmt_opt(*p)],
            Err(_) => vec![r.k.to_string(), "failed".into(), String::new(), String::new()],
        })
        .collect();
    formats::write_rows(&cfg.paths.out("sweep_k.csv"), &header, &table)?;
    snapshot(cfg, "sweep-k")?;
    fail_if_any(rows.iter().map(|r| r.exit_code), rows.len())?;
    Ok(rows)
}
