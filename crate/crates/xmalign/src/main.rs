use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmalign::commands;
use xmalign::config::{resolve, RunConfig, SEED_ENV};
use xmalign::error::{AppError, Result};
use xmalign::formats::fmt_opt;
use xmalign_core::synthdata::Split;

#[derive(Parser)]
#[command(name = "xmodal-align", version, about = "Cross-modal alignment experiments on synthetic volume/report pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val corpus.
    GenData,
    /// Train a model and write its checkpoint and per-epoch losses.
    Train,
    /// Embed a split with a trained checkpoint.
    Embed {
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
    },
    /// Zero-shot classification of the validation split.
    EvalZeroshot,
    /// Report-to-volume Recall@P and volume-to-volume MAP@Q.
    EvalRetrieval,
    /// Modality-gap metrics and 2-D projection from an embeddings file.
    EvalGap,
    /// Summaries × knowledge-bank ablation over several seeds.
    Ablate,
    /// Train and evaluate one model per bank size.
    SweepK,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

/// Every flag is shorthand for a config key and lands in the run's config
/// snapshot.
#[derive(Args)]
struct Common {
    /// JSON config file; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (`paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    no_cmki: bool,
    #[arg(long, global = true)]
    no_summaries: bool,
    /// Comma-separated bank sizes for `sweep-k`.
    #[arg(long, value_delimiter = ',', global = true)]
    k_list: Vec<usize>,
    /// Comma-separated seeds for `ablate`.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Vec<u64>,
}

fn json_list<T: ToString>(xs: &[T]) -> String {
    format!("[{}]", xs.iter().map(T::to_string).collect::<Vec<_>>().join(","))
}

fn json_str(p: &std::path::Path) -> String {
    serde_json::to_string(&p.to_string_lossy()).expect("string serializes")
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("train.seed", s.to_string());
        }
        if let Some(p) = &self.out {
            push("paths.out_dir", json_str(p));
        }
        if let Some(p) = &self.data {
            push("paths.data_dir", json_str(p));
        }
        if let Some(p) = &self.checkpoint {
            push("paths.checkpoint", json_str(p));
        }
        if let Some(p) = &self.embeddings {
            push("paths.embeddings", json_str(p));
        }
        if let Some(e) = self.epochs {
            push("train.epochs", e.to_string());
        }
        if self.no_cmki {
            push("train.use_cmki", "false".into());
        }
        if self.no_summaries {
            push("train.use_summaries", "false".into());
        }
        if !self.k_list.is_empty() {
            push("sweep.k_list", json_list(&self.k_list));
        }
        if !self.seeds.is_empty() {
            push("ablation.seeds", json_list(&self.seeds));
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let env_seed = std::env::var(SEED_ENV).ok();
        resolve(self.config.as_deref(), env_seed.as_deref(), &self.overrides()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::GenData => {
            let (train, val) = commands::gen_data(&cfg)?;
            println!("wrote {} train / {} val samples to {}", train.len(), val.len(), cfg.paths.data_dir().display());
        }
        Command::Train => {
            let out = commands::train(&cfg)?;
            let last = out.report.epochs.last().expect("epochs >= 1");
            println!(
                "trained {} epochs in {:.1}s: mse {:.4} info {:.4} info_r {:.4} total {:.4}",
                out.report.epochs.len(),
                out.report.wall_time_secs.unwrap_or(0.0),
                last.mse,
                last.info,
                last.info_r,
                last.total
            );
            println!("checkpoint: {}", out.report.checkpoint_path.unwrap_or_default());
        }
        Command::Embed { split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
            };
            println!("embeddings: {}", commands::embed(&cfg, split)?.display());
        }
        Command::EvalZeroshot => {
            let r = commands::eval_zeroshot_cmd(&cfg)?;
            println!("macro AUC {} (probability {})", fmt_opt(r.macro_auc), fmt_opt(r.macro_auc_prob));
        }
        Command::EvalRetrieval => {
            let r = commands::eval_retrieval_cmd(&cfg)?;
            for (p, v) in &r.recall {
                println!("recall@{p} {v:.4}");
            }
            for (q, v) in &r.map {
                println!("map@{q} {v:.4}");
            }
        }
        Command::EvalGap => {
            let g = commands::eval_gap_cmd(&cfg)?;
            println!("silhouette {:.4} fas {:.4} ({})", g.silhouette, g.fas, g.variant.as_str());
        }
        Command::Ablate => {
            let results = commands::ablate(&cfg)?;
            for (cell, m) in commands::cell_means(&results) {
                if let Some(m) = m {
                    println!(
                        "{:<10} auc {} recall@10 {} fas {:.4}",
                        cell.name(),
                        fmt_opt(m.auc),
                        fmt_opt(m.recall_at(10)),
                        m.gap.fas
                    );
                }
            }
        }
        Command::SweepK => {
            for row in commands::sweep_k(&cfg)? {
                if let Ok((auc, _)) = row.outcome {
                    println!("K={} auc {}", row.k, fmt_opt(auc));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
