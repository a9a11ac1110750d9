use std::fs;
use std::path::Path;
use std::process::Command;

use draft_cli::config::{parse_config, RunConfig};

const TINY: &str = r#"
run = "tiny"

[generator]
vocab_size = 32
seq_len = 48
n_risk_patterns = 2
risk_pattern_len = 4
risk_density = 0.1
min_turn_len = 4
max_turn_len = 8

[data]
n_train = 40
n_val = 20
pretrain_corpus = 8
n_shifted = 20
probe_fit = 20

[reasoner]
vocab_size = 32
d_model = 8
n_layers = 1
n_heads = 2
max_seq_len = 64
d_ff = 16

[extractor]
vocab_size = 32
d_model = 8
n_layers = 1
n_heads = 2
max_seq_len = 64
d_ff = 16

[pretrain]
steps = 3

[train]
steps = 4
batch_size = 4
l_s = 4

[experiments]
seeds = [0]
lengths = [2, 4]
efficiency_examples = 4
efficiency_warmup = 1

[theory]
sufficiency_worlds = 100
tv_triples = 300
decomposition_worlds = 5
ib_worlds = 3
chain_worlds = 10
"#;

fn draft(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_draft"))
        .args(args)
        .env_remove("DRAFT_OUTPUT_ROOT")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let (code, _, err) = draft(&[]);
    assert_ne!(code, 0);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (code, _, err) = draft(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("frobnicate"));
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = parse_config("run = \"m\"\n", &[]).unwrap();
    assert_eq!(cfg, RunConfig::named("m"));
    let snapshot = cfg.to_toml();
    assert!(snapshot.contains("[train]") && snapshot.contains("lr = "));
}

#[test]
fn config_round_trips_through_snapshot() {
    let cfg = parse_config(TINY, &[]).unwrap();
    let again = parse_config(&cfg.to_toml(), &[]).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn unknown_key_is_named() {
    let err = parse_config("run = \"x\"\n[train]\nleraning_rate = 0.1\n", &[]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("leraning_rate"), "{msg}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_required_key_is_named() {
    let msg = parse_config("[train]\nlr = 0.1\n", &[]).unwrap_err().to_string();
    assert!(msg.contains("run"), "{msg}");
}

#[test]
fn type_mismatch_names_key_and_type() {
    let msg = parse_config("run = \"x\"\n[train]\nlr = \"fast\"\n", &[]).unwrap_err().to_string();
    assert!(msg.contains("train.lr"), "{msg}");
    assert!(msg.contains("f64"), "{msg}");
}

#[test]
fn set_overrides_apply_and_validate() {
    let cfg = parse_config(TINY, &["train.lr=0.02".into(), "train.mode=one_stage".into()]).unwrap();
    assert_eq!(cfg.train.lr, 0.02);
    assert_eq!(cfg.train.mode.name(), "one_stage");
    let err = parse_config(TINY, &["train.threshold=1.5".into()]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = parse_config(TINY, &["noequals".into()]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn gen_data_writes_requested_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let (code, _, err) = draft(&["gen-data", "-c", &cfg, "--out", out.to_str().unwrap(), "--n", "37"]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(out.join("data/corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 37);
    for sub in ["checkpoints", "metrics", "features", "logs"] {
        assert!(out.join(sub).is_dir());
    }
    assert!(out.join("config.toml").exists());
}

#[test]
fn bad_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run = \"x\"\nbogus = 1\n");
    let (code, _, err) = draft(&["gen-data", "-c", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("bogus"));
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_draft"))
        .args(["gen-data", "-c", &cfg, "--n", "4"])
        .env("DRAFT_OUTPUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("root/tiny/data/corpus.jsonl").exists());
}

#[test]
fn conflicting_snapshot_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(draft(&["gen-data", "-c", &cfg, "--out", o, "--n", "4"]).0, 0);
    let (code, _, err) = draft(&["gen-data", "-c", &cfg, "--out", o, "--set", "train.lr=0.5"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn verify_theory_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("theory");
    let (code, stdout, err) = draft(&["verify-theory", "-c", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}{err}");
    assert!(stdout.contains("causal accessibility: tail true prefix_dec true"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics/theory.json")).unwrap()).unwrap();
    assert_eq!(report["violations"], 0);
}

#[test]
fn train_then_reproduce_and_detect_edits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();
    let (code, stdout, err) = draft(&["train", "-c", &cfg, "--out", o, "-q"]);
    assert_eq!(code, 0, "{stdout}{err}");
    assert!(out.join("metrics/train.json").exists());
    let (code, _, err) = draft(&["eval", "-c", &cfg, "--out", o, "-q"]);
    assert_eq!(code, 0, "{err}");

    let (code, stdout, err) = draft(&["reproduce", o]);
    assert_eq!(code, 0, "{stdout}{err}");
    assert!(stdout.contains("reproduced"));

    // a copy with an edited seed must not reproduce
    let edited = tmp.path().join("edited");
    copy_dir(&out, &edited);
    let snap = edited.join("config.toml");
    let mut edit = parse_config(&fs::read_to_string(&snap).unwrap(), &[]).unwrap();
    edit.train.seed = 5;
    fs::write(&snap, edit.to_toml()).unwrap();
    let (code, stdout, _) = draft(&["reproduce", edited.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(stdout.contains("does not reproduce"));

    // and neither must one with an edited draft length
    let edited = tmp.path().join("edited_ls");
    copy_dir(&out, &edited);
    let snap = edited.join("config.toml");
    let mut edit = parse_config(&fs::read_to_string(&snap).unwrap(), &[]).unwrap();
    edit.train.l_s = 2;
    fs::write(&snap, edit.to_toml()).unwrap();
    let (code, stdout, _) = draft(&["reproduce", edited.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(stdout.lines().count() > 1, "expected a diff summary: {stdout}");
}

#[test]
fn reproduce_without_snapshot_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = draft(&["reproduce", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("snapshot"));
}

#[test]
fn export_features_writes_csv_with_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let (code, _, err) = draft(&[
        "export-features",
        "-c",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--modes",
        "one_stage,decoupled",
        "-q",
    ]);
    assert_eq!(code, 0, "{err}");
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics/probe.json")).unwrap()).unwrap();
    let rows = probe["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let key = rows[0]["key"].as_str().unwrap();
    let csv = fs::read_to_string(out.join(format!("features/{key}-val.csv"))).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 8);
    assert!(header.starts_with("id,label,f0"));
    assert_eq!(lines.count(), 20);
}

#[test]
fn bench_efficiency_reports_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let (code, stdout, err) = draft(&["bench-efficiency", "-c", &cfg, "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("explicit l_s=4"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics/efficiency.json")).unwrap()).unwrap();
    assert!(report["one_stage"]["peak_memory_bytes"].as_u64().is_some());
    // timing files are exempt from value comparison
    let (code, stdout, err) = draft(&["reproduce", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}{err}");
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}
