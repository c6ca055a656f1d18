use std::path::Path;
use std::process::{Command, Output};

fn nep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nep"))
        .args(args)
        .env_remove("NEP_SEED")
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    let out = nep(&["synth", "--out", dir.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_schema_is_a_usage_error_naming_the_path() {
    let out = nep(&[
        "train", "--nodes", "n.tsv", "--edges", "e.tsv", "--labels", "l.tsv",
        "--schema", "/no/such/schema.toml", "--out", "/tmp/unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/schema.toml"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(nep(&["train", "--dim", "many"]).status.code(), Some(2));
}

#[test]
fn sample_prints_one_header_per_batch() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().to_str().unwrap();
    let out = nep(&["sample", "--data", data, "-n", "3", "--batch", "4", "--max-len", "2", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let headers: Vec<&str> = text.lines().filter(|l| l.starts_with("# batch")).collect();
    assert_eq!(headers.len(), 3);
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        assert_eq!(line.split('\t').count(), 3, "{line}");
    }
    let again = nep(&["sample-paths", "--data", data, "-n", "3", "--batch", "4", "--max-len", "2", "--seed", "1"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn train_predict_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().to_str().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = nep(&[
        "--deterministic", "train", "--data", data, "--gamma", "20", "--batch", "5",
        "--dim", "8", "--seed", "3", "--out", run_s, "--export-embeddings",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "loss.tsv", "config.toml", "embeddings.tsv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(run.join("loss.tsv")).unwrap().lines().count(), 21);
    let ckpt = run.join("model.ckpt");
    let exported = nep(&["export-embeddings", "--data", data, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(exported.status.success());
    assert_eq!(
        String::from_utf8(exported.stdout).unwrap(),
        std::fs::read_to_string(run.join("embeddings.tsv")).unwrap()
    );
    let pred = nep(&["predict", "--data", data, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(pred.status.success());
    let text = String::from_utf8(pred.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 5000);
}

#[test]
fn baseline_writes_a_class_for_every_unlabeled_target() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out_file = dir.path().join("lp.tsv");
    let out = nep(&["baseline", "--data", dir.path().to_str().unwrap(), "--out", out_file.to_str().unwrap()]);
    assert!(out.status.success());
    let labeled = std::fs::read_to_string(dir.path().join("labels.tsv")).unwrap().lines().count();
    let written = std::fs::read_to_string(out_file).unwrap();
    assert_eq!(written.lines().count() + labeled, 5000);
    assert!(written.lines().all(|l| l.split('\t').count() == 2));
}
