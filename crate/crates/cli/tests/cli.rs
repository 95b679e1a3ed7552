//! End-to-end tests of the `sourcetrace` binary: workflow wiring, exit
//! codes, determinism, and output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sourcetrace"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_small(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let out = run(&[
        "synth",
        "--out",
        corpus.to_str().unwrap(),
        "--speakers",
        "4",
        "--utts-per-attack",
        "1",
        "--bonafide-per-speaker",
        "2",
        "--duration",
        "0.5",
        "--seed",
        "11",
    ]);
    assert_code(&out, 0);
    corpus
}

fn split_default(dir: &Path, corpus: &Path) -> PathBuf {
    let manifest = dir.join("split.tsv");
    let out = run(&[
        "split",
        "--protocol",
        corpus.join("protocol.txt").to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
        "--eval-fraction",
        "0.25",
        "--seed",
        "2",
    ]);
    assert_code(&out, 0);
    manifest
}

fn train_tiny(dir: &Path, corpus: &Path, manifest: &Path, mode: &str, seed: &str) -> PathBuf {
    let out_dir = dir.join(format!("run-{mode}-{seed}"));
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        mode,
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--channels",
        "4",
        "--blocks",
        "1",
        "--embedding-dim",
        "8",
        "--target-seconds",
        "0.5",
        "--seed",
        seed,
    ]);
    assert_code(&out, 0);
    out_dir
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&[
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--speakers",
            "2",
            "--utts-per-attack",
            "1",
            "--duration",
            "0.5",
            "--seed",
            "9",
        ]);
        assert_code(&out, 0);
    }
    let proto_a = std::fs::read(a.join("protocol.txt")).unwrap();
    let proto_b = std::fs::read(b.join("protocol.txt")).unwrap();
    assert_eq!(proto_a, proto_b);
    let text = String::from_utf8(proto_a).unwrap();
    assert_eq!(text.lines().count(), 2 * (19 + 2));
    for utt in ["SYN001_BF_000", "SYN002_A19_000", "SYN001_A05_000"] {
        let wa = std::fs::read(a.join("wav").join(format!("{utt}.wav"))).unwrap();
        let wb = std::fs::read(b.join("wav").join(format!("{utt}.wav"))).unwrap();
        assert_eq!(wa, wb, "wav bytes differ for {utt}");
    }
}

#[test]
fn synth_rejects_invalid_duration_naming_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--out",
        tmp.path().join("c").to_str().unwrap(),
        "--duration",
        "0.1",
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--duration"), "stderr: {stderr}");
}

#[test]
fn locked_output_directory_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("busy");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(".sourcetrace.lock"), "123").unwrap();
    let out = run(&["synth", "--out", dir.to_str().unwrap(), "--speakers", "1"]);
    assert_code(&out, 4);
}

#[test]
fn split_default_routes_eval_to_the_eval_attacks() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let mut parts = line.split('\t');
        let utt = parts.next().unwrap();
        let side = parts.next().unwrap();
        if side == "eval" {
            let ok = ["_BF_", "_A01_", "_A05_", "_A07_"]
                .iter()
                .any(|tag| utt.contains(tag));
            assert!(ok, "unexpected eval utterance {utt}");
        }
    }
}

#[test]
fn split_honors_eval_attack_override() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = tmp.path().join("override.tsv");
    let out = run(&[
        "split",
        "--protocol",
        corpus.join("protocol.txt").to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
        "--eval-attacks",
        "A02",
        "--eval-fraction",
        "0.25",
        "--seed",
        "2",
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut eval_attack_lines = 0;
    for line in text.lines() {
        let mut parts = line.split('\t');
        let utt = parts.next().unwrap();
        let side = parts.next().unwrap();
        if side == "eval" && !utt.contains("_BF_") {
            assert!(utt.contains("_A02_"), "unexpected eval utterance {utt}");
            eval_attack_lines += 1;
        }
    }
    assert!(eval_attack_lines > 0);
}

#[test]
fn split_rejects_unknown_attack_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let out = run(&[
        "split",
        "--protocol",
        corpus.join("protocol.txt").to_str().unwrap(),
        "--out",
        tmp.path().join("m.tsv").to_str().unwrap(),
        "--eval-attacks",
        "A99",
    ]);
    assert_code(&out, 2);
}

#[test]
fn verify_manifest_fails_on_injected_speaker_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    // Flip one eval-side bona fide utterance to train: its speaker now sits
    // on both sides.
    let text = std::fs::read_to_string(&manifest).unwrap();
    let eval_speaker = text
        .lines()
        .find(|l| l.ends_with("\teval"))
        .and_then(|l| l.split('_').next())
        .unwrap()
        .to_string();
    let broken: String = text
        .lines()
        .map(|l| {
            if l.starts_with(&format!("{eval_speaker}_BF_000")) {
                format!("{}\ttrain\n", l.split('\t').next().unwrap())
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let broken_path = tmp.path().join("broken.tsv");
    std::fs::write(&broken_path, broken).unwrap();
    let out = run(&[
        "split",
        "--protocol",
        corpus.join("protocol.txt").to_str().unwrap(),
        "--out",
        tmp.path().join("unused.tsv").to_str().unwrap(),
        "--verify-manifest",
        broken_path.to_str().unwrap(),
        "--eval-fraction",
        "0.25",
        "--seed",
        "2",
    ]);
    assert_code(&out, 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "stdout: {stdout}");
}

#[test]
fn train_fails_fast_on_missing_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--corpus",
        tmp.path().join("nope").to_str().unwrap(),
        "--manifest",
        tmp.path().join("nope.tsv").to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}

#[test]
fn train_produces_checkpoint_log_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    let run_dir = train_tiny(tmp.path(), &corpus, &manifest, "multitask", "5");
    assert!(run_dir.join("checkpoint.json").exists());
    assert!(run_dir.join("config.resolved.json").exists());
    assert!(!run_dir.join(".sourcetrace.lock").exists(), "lock released");
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    let mut train_lines = 0;
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("epoch").is_some());
        assert!(v.get("loss").is_some());
        if v["split"] == "train" {
            train_lines += 1;
        }
    }
    assert_eq!(train_lines, 2);
}

#[test]
fn train_is_idempotent_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    let r1 = train_tiny(tmp.path(), &corpus, &manifest, "multitask", "5");
    let r2 = tmp.path().join("again");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        r2.to_str().unwrap(),
        "--mode",
        "multitask",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--channels",
        "4",
        "--blocks",
        "1",
        "--embedding-dim",
        "8",
        "--target-seconds",
        "0.5",
        "--seed",
        "5",
    ]);
    assert_code(&out, 0);
    let a = std::fs::read(r1.join("checkpoint.json")).unwrap();
    let b = std::fs::read(r2.join("checkpoint.json")).unwrap();
    assert_eq!(a, b, "checkpoints differ across identical runs");
}

#[test]
fn eval_reports_attribute_metrics_and_writes_scores_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    let run_dir = train_tiny(tmp.path(), &corpus, &manifest, "multitask", "6");
    let eval_dir = tmp.path().join("eval");

    // Without --scores-out: report only.
    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    let attr = report.get("attribute").expect("attribute metrics");
    for key in ["conv_accuracy", "spk_accuracy", "wg_accuracy"] {
        assert!(attr.get(key).is_some(), "missing {key}");
    }
    for key in ["conv_confusion", "spk_confusion", "wg_confusion"] {
        assert!(attr.get(key).is_some(), "missing {key}");
    }
    assert!(report.get("eer_percent").is_some());
    assert!(!eval_dir.join("scores").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("EER [%]"));

    // With --scores-out: fused and per-head files with identical utt sets.
    let eval2 = tmp.path().join("eval2");
    let scores = eval2.join("scores");
    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        eval2.to_str().unwrap(),
        "--scores-out",
        scores.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let utts = |name: &str| -> Vec<String> {
        std::fs::read_to_string(scores.join(name))
            .unwrap()
            .lines()
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect()
    };
    let fused = utts("fused.tsv");
    assert!(!fused.is_empty());
    assert_eq!(fused, utts("conv.tsv"));
    assert_eq!(fused, utts("spk.tsv"));
    assert_eq!(fused, utts("wg.tsv"));
}

#[test]
fn binary_mode_reports_eer_without_attribute_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = split_default(tmp.path(), &corpus);
    let run_dir = train_tiny(tmp.path(), &corpus, &manifest, "binary", "7");
    let eval_dir = tmp.path().join("eval-bin");
    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(report.get("attribute").is_none());
    assert!(report.get("eer_percent").is_some());
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[synth]\nspeakers = 3\nduration_secs = 0.5\nseed = 4\n",
    )
    .unwrap();
    let dir = tmp.path().join("from-config");
    let out = run(&[
        "synth",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--speakers",
        "2",
        "--utts-per-attack",
        "1",
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(dir.join("protocol.txt")).unwrap();
    // Flag wins over the file's 3 speakers.
    assert!(text.lines().all(|l| !l.starts_with("SYN003")));
    assert!(text.lines().any(|l| l.starts_with("SYN002")));
    // Resolved config persisted with the effective values.
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["speakers"], 2);
    assert_eq!(resolved["rng_seed"], 4);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_code(&out, 2);
}

#[test]
fn data_root_env_var_resolves_relative_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth_small(tmp.path());
    let manifest = tmp.path().join("m.tsv");
    let out = bin()
        .args([
            "split",
            "--protocol",
            "corpus/protocol.txt",
            "--out",
            manifest.to_str().unwrap(),
            "--eval-fraction",
            "0.25",
        ])
        .env("SOURCETRACE_DATA_ROOT", corpus.parent().unwrap())
        .output()
        .expect("binary runs");
    assert_code(&out, 0);
    assert!(manifest.exists());
}
