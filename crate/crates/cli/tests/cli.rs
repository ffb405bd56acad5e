use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"{
  "batch_size": 32,
  "latent_dim": 4,
  "clusters": 4,
  "hidden": 16,
  "pretrain_epochs": 2,
  "epochs": 3,
  "anneal_epochs": 1,
  "patience": 0
}"#;

fn vdea(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdea"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = vdea(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr.lines().last().unwrap_or_default().to_string()
}

/// A temp dir holding a small synthetic dataset `ds` and `cfg.json`.
fn workspace() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "synth", "--out", "ds", "--users", "120", "--items", "40", "--ku", "0.3", "--seed", "4",
        ],
    );
    fs::write(tmp.path().join("cfg.json"), CONFIG).unwrap();
    tmp
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn synth_train_eval_happy_path() {
    let tmp = workspace();
    let d = tmp.path();
    ok(
        d,
        &[
            "train",
            "--data",
            "ds",
            "--config",
            "cfg.json",
            "--variant",
            "base",
            "--out",
            "run",
        ],
    );
    ok(
        d,
        &[
            "eval",
            "--data",
            "ds",
            "--checkpoint",
            "run/model.ckpt",
            "--split",
            "test",
            "--out",
            "ev",
        ],
    );
    let metrics = String::from_utf8(read(d, "ev/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "split,domain,k,hr,ndcg,pairs");
    assert!(lines[1].starts_with("test,source,5,") && lines[2].starts_with("test,target,5,"));
    for dir in ["ds", "run", "ev"] {
        let m: serde_json::Value =
            serde_json::from_slice(&read(d, &format!("{dir}/manifest.json"))).unwrap();
        assert!(m["versions"]["vdea"].is_string());
        assert!(m["config"].is_object());
    }
    let m: serde_json::Value = serde_json::from_slice(&read(d, "ev/manifest.json")).unwrap();
    let inputs = m["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("model.ckpt")));
    assert!(inputs.values().all(|v| v.as_str().unwrap().len() == 64));
    assert_eq!(
        read(d, "run/train_log.csv")
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        4
    );
}

#[test]
fn train_without_data_is_a_usage_error() {
    let tmp = workspace();
    let out = vdea(
        tmp.path(),
        &[
            "train",
            "--config",
            "cfg.json",
            "--variant",
            "base",
            "--out",
            "run",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        error_line(&out).starts_with("error[usage]: "),
        "{}",
        error_line(&out)
    );
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = workspace();
    let d = tmp.path();
    fs::write(d.join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    for args in [
        vec!["train", "--data", "ds", "--out", "r", "--unknown-flag"],
        vec!["train", "--data", "ds", "--out", "r", "--variant", "both"],
        vec![
            "train", "--data", "ds", "--out", "r", "--config", "bad.json",
        ],
        vec!["train", "--data", "missing", "--out", "r"],
        vec![
            "ablate", "--data", "ds", "--out", "r", "--sweep", "k", "--values", "2,2",
        ],
        vec![
            "eval",
            "--data",
            "ds",
            "--out",
            "r",
            "--checkpoint",
            "ds/meta.json",
            "--k",
            "0",
        ],
    ] {
        let out = vdea(d, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", error_line(&out));
        assert!(error_line(&out).starts_with("error[usage]: "));
    }
}

#[test]
fn bad_files_exit_with_three() {
    let tmp = workspace();
    let d = tmp.path();
    fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = vdea(
        d,
        &[
            "eval",
            "--data",
            "ds",
            "--checkpoint",
            "junk.ckpt",
            "--out",
            "ev",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[data]: "));
    // A directory without a dataset in it.
    let out = vdea(d, &["train", "--data", ".", "--out", "run"]);
    assert_eq!(out.status.code(), Some(3), "{}", error_line(&out));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = workspace();
    let d = tmp.path();
    for run in ["a", "b"] {
        ok(
            d,
            &[
                "train",
                "--data",
                "ds",
                "--config",
                "cfg.json",
                "--variant",
                "full",
                "--out",
                &format!("{run}/train"),
            ],
        );
        ok(
            d,
            &[
                "eval",
                "--data",
                "ds",
                "--checkpoint",
                &format!("{run}/train/model.ckpt"),
                "--split",
                "test",
                "--out",
                &format!("{run}/eval"),
            ],
        );
        ok(
            d,
            &[
                "export-embeddings",
                "--data",
                "ds",
                "--checkpoint",
                &format!("{run}/train/model.ckpt"),
                "--out",
                &format!("{run}/emb.tsv"),
            ],
        );
    }
    for file in ["train/model.ckpt", "eval/metrics.csv", "emb.tsv"] {
        assert_eq!(
            read(d, &format!("a/{file}")),
            read(d, &format!("b/{file}")),
            "{file} differs"
        );
    }
    // Same output path, same everything: the manifest is reproducible too.
    let first = read(d, "a/eval/manifest.json");
    ok(
        d,
        &[
            "eval",
            "--data",
            "ds",
            "--checkpoint",
            "a/train/model.ckpt",
            "--split",
            "test",
            "--out",
            "a/eval",
        ],
    );
    assert_eq!(first, read(d, "a/eval/manifest.json"));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = workspace();
    let d = tmp.path();
    ok(
        d,
        &[
            "train",
            "--data",
            "ds",
            "--config",
            "cfg.json",
            "--epochs",
            "1",
            "--model-seed",
            "9",
            "--out",
            "run",
        ],
    );
    let echo: serde_json::Value = serde_json::from_slice(&read(d, "run/config.json")).unwrap();
    assert_eq!(echo["epochs"], 1);
    assert_eq!(echo["model_seed"], 9);
    assert_eq!(echo["hidden"], 16);
    assert_eq!(echo["lambda_vl"], 0.7);
    let m: serde_json::Value = serde_json::from_slice(&read(d, "run/manifest.json")).unwrap();
    let overrides: Vec<&str> = m["overrides"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(overrides.contains(&"epochs") && overrides.contains(&"model_seed"));
    assert!(!overrides.contains(&"hidden"));
    assert_eq!(m["seeds"]["model"], 9);
    assert_eq!(
        read(d, "run/train_log.csv")
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        2
    );
}

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn inputs_are_left_untouched() {
    let tmp = workspace();
    let d = tmp.path();
    let before = dir_digest(&d.join("ds"));
    ok(
        d,
        &[
            "train", "--data", "ds", "--config", "cfg.json", "--out", "run",
        ],
    );
    ok(
        d,
        &[
            "ablate", "--data", "ds", "--config", "cfg.json", "--sweep", "variant", "--values",
            "base", "--out", "ab",
        ],
    );
    assert_eq!(before, dir_digest(&d.join("ds")));
}

#[test]
fn ablation_is_independent_of_job_count() {
    let tmp = workspace();
    let d = tmp.path();
    for (jobs, out) in [("1", "one"), ("3", "three")] {
        ok(
            d,
            &[
                "ablate",
                "--data",
                "ds",
                "--config",
                "cfg.json",
                "--sweep",
                "k_u",
                "--values",
                "0.3,0.6,0.9",
                "--jobs",
                jobs,
                "--out",
                out,
            ],
        );
    }
    let csv = read(d, "one/ablation.csv");
    assert_eq!(csv, read(d, "three/ablation.csv"));
    assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), 4);
    assert_eq!(fs::read_dir(d.join("one/cache")).unwrap().count(), 3);
}

#[test]
fn ingest_then_build() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut source = String::from("user_id,item_id,rating\n");
    let mut target = source.clone();
    for u in 0..30 {
        for i in 0..12 {
            if (u + i) % 3 != 0 {
                source.push_str(&format!("u{u},s{i},{}\n", 3 + (u + i) % 3));
            }
            if (u * i) % 4 != 1 {
                target.push_str(&format!("u{u},t{i},5\n"));
            }
        }
    }
    fs::write(d.join("s.csv"), &source).unwrap();
    fs::write(d.join("t.csv"), &target).unwrap();
    ok(
        d,
        &[
            "ingest",
            "--source",
            "s.csv",
            "--target",
            "t.csv",
            "--out",
            "mat",
            "--min-interactions",
            "2",
        ],
    );
    ok(
        d,
        &[
            "build",
            "--source-data",
            "mat",
            "--ku",
            "0.5",
            "--seed",
            "1",
            "--out",
            "ds",
        ],
    );
    let m: serde_json::Value = serde_json::from_slice(&read(d, "ds/meta.json")).unwrap();
    assert_eq!(m["overlapped_users"], 15);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(d, "mat/manifest.json")).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
    assert_eq!(manifest["config"]["min_interactions"], 2);
}
