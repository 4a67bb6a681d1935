use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_xmodal-align");

/// A corpus small enough that a full lifecycle takes well under a second.
const SMALL: &[&str] = &["data.n_train=96", "data.n_val=40", "train.epochs=2"];

fn run(out: &Path, args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--out").arg(out).env_remove("XMALIGN_SEED");
    for s in SMALL.iter().chain(sets) {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], sets: &[&str]) -> Output {
    let o = run(out, args, sets);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = csv(path);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("{name} missing from {path:?}"));
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn default_gen_data_line_counts_and_frequency_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN).args(["gen-data", "--out"]).arg(dir.path()).output().unwrap();
    assert!(o.status.success());
    let data = dir.path().join("data");
    let lines = |f: &str| fs::read_to_string(data.join(f)).unwrap().lines().count();
    assert_eq!(lines("train.ndjson"), 2000);
    assert_eq!(lines("val.ndjson"), 400);
    assert!(data.join("spec.json").exists());
    let (h, rows) = csv(&data.join("label_frequencies.csv"));
    assert_eq!(h, ["label", "count"]);
    assert_eq!(rows.len(), 8);
}

#[test]
fn same_seed_gives_identical_corpus_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["gen-data"], &[]);
    ok(b.path(), &["gen-data"], &[]);
    for f in ["train.ndjson", "val.ndjson", "spec.json", "label_frequencies.csv"] {
        assert_eq!(fs::read(a.path().join("data").join(f)).unwrap(), fs::read(b.path().join("data").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn probability_above_one_exits_2_naming_p() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen-data"], &["data.frequencies=[1.5,0.3,0.3,0.3,0.3,0.3,0.02,0.02]"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("p[0]"), "{err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen-data"], &["train.learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn missing_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["train"], &[]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["eval-gap"], &[]).status.code(), Some(3));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"], &[]);
    let o = run(dir.path(), &["train"], &["train.lr=1e300"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn no_cmki_run_has_zero_bank_losses() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"], &[]);
    ok(dir.path(), &["train", "--no-cmki"], &[]);
    let losses = dir.path().join("losses.csv");
    assert_eq!(csv(&losses).0, ["epoch", "mse", "info", "info_r", "total"]);
    for col in ["mse", "info_r"] {
        assert!(column(&losses, col).iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{col}");
    }
    assert!(column(&losses, "info").iter().all(|v| v.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn rerun_gives_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"], &[]);
    ok(dir.path(), &["train"], &[]);
    let first = fs::read(dir.path().join("model.ckpt")).unwrap();
    ok(dir.path(), &["train"], &[]);
    assert_eq!(first, fs::read(dir.path().join("model.ckpt")).unwrap());
}

#[test]
fn seed_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"], &[]);
    let snap = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["train", "--out"]).arg(dir.path()).env_remove("XMALIGN_SEED");
        for s in SMALL {
            cmd.arg("--set").arg(s);
        }
        if let Some(e) = env {
            cmd.env("XMALIGN_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.status().unwrap().success());
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("train.config.json")).unwrap()).unwrap();
        v["train"]["seed"].as_u64().unwrap()
    };
    assert_eq!(snap(None, None), 0);
    assert_eq!(snap(Some("7"), None), 7);
    assert_eq!(snap(Some("7"), Some("9")), 9);
}

#[test]
fn evaluation_outputs_are_finite_and_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for cmd in ["gen-data", "train", "embed", "eval-zeroshot", "eval-retrieval", "eval-gap"] {
        ok(d, &[cmd], &[]);
    }
    let (h, rows) = csv(&d.join("zeroshot.csv"));
    assert_eq!(h, ["metric", "label", "value"]);
    for r in &rows {
        if r[1] == "all" || r[2].is_empty() {
            continue;
        }
        let v: f64 = r[2].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{r:?}");
        if r[0] != "positives" {
            assert!(v <= 1.0, "{r:?}");
        }
    }

    let (h, rows) = csv(&d.join("retrieval.csv"));
    assert_eq!(
        h,
        ["relevance", "recall@5", "recall@10", "recall@50", "recall@100", "map@5", "map@10", "map@50"]
    );
    assert_eq!(rows[0][0], "any-overlap");
    for v in &rows[0][1..] {
        let v: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let (h, rows) = csv(&d.join("gap.csv"));
    assert_eq!(h, ["silhouette", "fas", "fas_variant"]);
    let fas: f64 = rows[0][1].parse().unwrap();
    assert!((0.0..=1.0).contains(&fas));
    assert_eq!(rows[0][2], "clamped");

    let (_, curve) = csv(&d.join("mean_difference.csv"));
    assert_eq!(curve.len(), 39);
    let (h, pca) = csv(&d.join("pca.csv"));
    assert_eq!(h, ["id", "modality", "pc1", "pc2"]);
    assert_eq!(pca.len(), 80);
}

#[test]
fn every_command_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lifecycle = || {
        for cmd in ["gen-data", "train", "embed", "eval-zeroshot", "eval-retrieval", "eval-gap"] {
            ok(d, &[cmd], &[]);
        }
        ok(d, &["ablate"], &["ablation.seeds=[0]", "ablation.threads=2"]);
        ok(d, &["sweep-k"], &["sweep.k_list=[4,8]"]);
        snapshot(d)
    };
    let first = lifecycle();
    let second = lifecycle();
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(second[k] == *v, "{k:?} differs between runs");
    }
}

#[test]
fn ablation_with_one_seed_has_four_rows_and_baseline_matches_standalone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data"], &[]);
    ok(d, &["ablate"], &["ablation.seeds=[3]"]);
    let ablation = d.join("ablation.csv");
    let (h, rows) = csv(&ablation);
    assert_eq!(rows.len(), 4);
    assert_eq!(&h[..5], ["seed", "cell", "use_summaries", "use_cmki", "status"]);
    let cells: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(cells, ["baseline", "ss-only", "cmki-only", "full"]);
    assert!(rows.iter().all(|r| r[4] == "ok"));

    ok(d, &["train", "--no-cmki", "--no-summaries", "--seed", "3"], &[]);
    ok(d, &["eval-zeroshot"], &[]);
    ok(d, &["eval-retrieval"], &[]);
    let (_, z) = csv(&d.join("zeroshot.csv"));
    let standalone_auc = &z.iter().find(|r| r[0] == "auc" && r[1] == "macro").unwrap()[2];
    assert_eq!(&column(&ablation, "auc")[0], standalone_auc);
    let (rh, r) = csv(&d.join("retrieval.csv"));
    for (i, name) in rh.iter().enumerate().skip(1) {
        assert_eq!(column(&ablation, name)[0], r[0][i], "{name}");
    }
}

#[test]
fn ablation_records_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data"], &[]);
    let o = run(d, &["ablate"], &["ablation.seeds=[0,1]", "train.lr=1e300"]);
    assert_eq!(o.status.code(), Some(4));
    let status = column(&d.join("ablation.csv"), "status");
    assert_eq!(status.len(), 12);
    assert!(status.iter().all(|s| s == "failed"));
}

#[test]
fn sweep_rows_are_sorted_by_k() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data"], &[]);
    ok(d, &["sweep-k", "--k-list", "16,4,8"], &[]);
    let (h, rows) = csv(&d.join("sweep_k.csv"));
    assert_eq!(h, ["k", "status", "auc", "auc_prob"]);
    let ks: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ks, ["4", "8", "16"]);

    ok(d, &["sweep-k", "--k-list", "8"], &[]);
    assert_eq!(csv(&d.join("sweep_k.csv")).1.len(), 1);
}

#[test]
fn very_large_bank_is_accepted_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data"], &[]);
    let o = ok(d, &["sweep-k", "--k-list", "2048"], &["train.epochs=1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("2048"));
    assert_eq!(csv(&d.join("sweep_k.csv")).1[0][1], "ok");
}

#[test]
fn dimension_mismatch_names_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data"], &[]);
    ok(d, &["train"], &[]);
    let other = d.join("narrow");
    let o = Command::new(BIN)
        .args(["gen-data", "--out"])
        .arg(d)
        .arg("--data")
        .arg(&other)
        .args(["--set", "data.input_dim=32", "--set", "train.encoder.input_dim=32"])
        .args(["--set", "data.n_train=20", "--set", "data.n_val=20"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(d, &["eval-zeroshot", "--data", other.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.ckpt") && err.contains("val.ndjson"), "{err}");
}
