use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magnet-lab")).args(args).current_dir(cwd).env("MAGNET_LAB_THREADS", "1").output().unwrap()
}

const CONFIG: &str = r#"{
    "model": {"d_model": 16, "n_heads": 2, "d_ff": 32},
    "pretrain": {"iterations": 3, "batch_size": 4, "checkpoint_every": 0},
    "run": {"iterations": 3, "batch_size": 4, "checkpoint_every": 2},
    "eval": {"infill_examples": 4, "rep_prefixes": 3, "continuation_tokens": 12, "masked_examples": 4,
             "eval_every": 2, "probe": {"steps": 20}}
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    dir
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(lab(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(lab(&["probe"], dir.path()).status.code(), Some(1));
    let out = lab(&[], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), r#"{"run": {"iters": 3}}"#).unwrap();
    assert_eq!(lab(&["train", "--config", "bad.json"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["probe", "--config", "c.json", "--checkpoint", "missing.bin"], dir.path()).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["gradcheck", "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max rel err"));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = setup();
    let p = dir.path();
    for out in ["a", "b"] {
        let o = lab(&["train", "--config", "c.json", "--seed", "3", "--out", out], p);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a/final.bin"), read("b/final.bin"));
    assert_eq!(read("a/training_log.csv"), read("b/training_log.csv"));
    let manifest = String::from_utf8(read("a/manifest.json")).unwrap();
    assert!(manifest.contains("config_fingerprint"));

    // Evaluation commands write fingerprinted metrics.
    for cmd in ["eval-ppl", "eval-repetition", "probe", "similarity"] {
        let out = format!("e_{cmd}");
        let o = lab(&[cmd, "--config", "c.json", "--seed", "3", "--checkpoint", "a/final.bin", "--out", &out], p);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(read(&format!("{out}/metrics.csv"))).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_fingerprint="));
        assert_eq!(lines.next().unwrap(), "metric,value,support,checkpoint,seed");
        assert!(lines.next().is_some());
    }

    for (cmd, file) in [("generate", "generations.txt"), ("infill", "infills.txt"), ("embed", "embeddings.tsv")] {
        let out = format!("x_{cmd}");
        let o = lab(&[cmd, "--config", "c.json", "--checkpoint", "a/final.bin", "--out", &out], p);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!read(&format!("{out}/{file}")).is_empty());
    }
}

#[test]
fn foreign_vocabulary_is_rejected() {
    let dir = setup();
    let p = dir.path();
    assert!(lab(&["train", "--config", "c.json", "--out", "a"], p).status.success());
    std::fs::write(p.join("other.json"), CONFIG.replacen('{', r#"{"corpus": {"seed": 9, "max_vocab": 60},"#, 1)).unwrap();
    let o = lab(&["probe", "--config", "other.json", "--checkpoint", "a/final.bin", "--out", "e"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary"));
}

#[test]
fn grids_emit_one_row_per_item() {
    let dir = setup();
    let p = dir.path();
    assert!(lab(&["train", "--config", "c.json", "--out", "a"], p).status.success());
    let o = lab(&["ablate", "--config", "c.json", "--checkpoint", "a/pretrain/final.bin", "--out", "ab"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(p.join("ab/ablation.csv")).unwrap();
    let names: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["MNTP", "SSCL", "MNTP+MSG", "SSCL+MSG", "MNTP+SSCL+MSG"]);

    let o = lab(&["mtp-vs-mntp", "--config", "c.json", "--checkpoint", "a/pretrain/final.bin", "--out", "m"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(p.join("m/mtp_vs_mntp.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.iter().filter(|r| r.contains("adapt_magnet")).count(), 3);
    assert_eq!(rows.iter().filter(|r| r.contains("adapt_mtp_ablation")).count(), 3);
}
