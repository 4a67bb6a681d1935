use std::fs;

use serde_json::json;
use xmalign::config::{resolve, set_key, RunConfig};
use xmalign::error::AppError;
use xmalign::summarizer::Backend;

fn config_error(r: xmalign::error::Result<RunConfig>) -> String {
    match r {
        Err(e @ AppError::Config(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.to_string()
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn over(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn defaults_resolve_and_validate() {
    let cfg = resolve(None, None, &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.train.bank_size, 128);
    assert_eq!(cfg.eval.recall_at, [5, 10, 50, 100]);
    assert_eq!(cfg.eval.map_at, [5, 10, 50]);
    assert_eq!(cfg.ablation.seeds, [0, 1, 2]);
    assert_eq!(cfg.sweep.k_list, [32, 64, 128, 256]);
}

#[test]
fn file_then_env_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, json!({"train": {"seed": 5, "lr": 1e-3}, "paths": {"out_dir": "x"}}).to_string()).unwrap();

    let cfg = resolve(Some(&path), None, &[]).unwrap();
    assert_eq!((cfg.train.seed, cfg.train.lr), (5, 1e-3));
    assert_eq!(cfg.train.epochs, 30, "untouched keys keep their defaults");
    assert_eq!(cfg.paths.checkpoint(), std::path::Path::new("x/model.ckpt"));

    assert_eq!(resolve(Some(&path), Some("11"), &[]).unwrap().train.seed, 11);
    let cfg = resolve(Some(&path), Some("11"), &over(&[("train.seed", "12")])).unwrap();
    assert_eq!(cfg.train.seed, 12);
}

#[test]
fn bad_seed_env_is_a_config_error() {
    assert!(config_error(resolve(None, Some("abc"), &[])).contains("XMALIGN_SEED"));
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    config_error(resolve(None, None, &over(&[("colour", "1")])));
    assert!(config_error(resolve(None, None, &over(&[("train.adam.momentum", "0.9")]))).contains("momentum"));
}

#[test]
fn invalid_probability_names_p() {
    let msg = config_error(resolve(
        None,
        None,
        &over(&[("data.frequencies", "[0.5,0.3,1.2,0.3,0.3,0.3,0.02,0.02]")]),
    ));
    assert!(msg.contains("data") && msg.contains("p[2]"), "{msg}");
}

#[test]
fn problems_are_collected_across_sections() {
    let msg = config_error(resolve(
        None,
        None,
        &over(&[("train.batch_size", "0"), ("eval.threshold", "1.5"), ("sweep.k_list", "[]")]),
    ));
    assert!(msg.contains("batch_size") && msg.contains("threshold") && msg.contains("k_list"), "{msg}");
}

#[test]
fn encoder_width_must_match_the_corpus() {
    let msg = config_error(resolve(None, None, &over(&[("data.input_dim", "32")])));
    assert!(msg.contains("input_dim"), "{msg}");
    resolve(None, None, &over(&[("data.input_dim", "32"), ("train.encoder.input_dim", "32")])).unwrap();
}

#[test]
fn remote_backend_needs_an_endpoint() {
    assert!(config_error(resolve(None, None, &over(&[("summarizer.backend", "remote")]))).contains("endpoint"));
    let cfg = resolve(
        None,
        None,
        &over(&[("summarizer.backend", "remote"), ("summarizer.endpoint", "http://127.0.0.1:1/s")]),
    )
    .unwrap();
    assert_eq!(cfg.summarizer.backend, Backend::Remote);
}

#[test]
fn set_key_parses_json_and_falls_back_to_strings() {
    let mut doc = json!({"a": {"b": 1}});
    set_key(&mut doc, "a.b", "2.5").unwrap();
    set_key(&mut doc, "a.c", "[1,2]").unwrap();
    set_key(&mut doc, "a.d", "plain text").unwrap();
    set_key(&mut doc, "e.f", "true").unwrap();
    assert_eq!(doc, json!({"a": {"b": 2.5, "c": [1, 2], "d": "plain text"}, "e": {"f": true}}));
    assert!(set_key(&mut doc, "a.b.c", "1").is_err());
}

#[test]
fn snapshot_round_trips() {
    let cfg = resolve(None, Some("4"), &over(&[("train.lr", "0.00012345678901234")])).unwrap();
    let text = serde_json::to_string(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.json");
    fs::write(&path, text).unwrap();
    assert_eq!(resolve(Some(&path), None, &[]).unwrap(), cfg);
}
