//! End-to-end runs of the structree binary: every subcommand, the exit code
//! contract (0 ok, 1 usage/config, 2 data, 3 numeric), and byte-stable output.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structree"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn structree")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Write a small synthetic corpus and return its path.
fn make_corpus(dir: &Path, docs: usize, classes: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join("corpus.jsonl");
    let out = run(bin()
        .arg("synth")
        .args(["--docs", &docs.to_string()])
        .args(["--classes", &classes.to_string()])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(&path));
    assert_exit(&out, 0);
    path
}

/// Train a tiny model on `corpus` and return the checkpoint path.
fn quick_train(dir: &Path, corpus: &Path, extra: &[&str]) -> std::path::PathBuf {
    let ckpt = dir.join("ckpt.json");
    let log = dir.join("log.jsonl");
    let out = run(bin()
        .arg("train")
        .arg("--corpus")
        .arg(corpus)
        .args(["--embed-dim", "6", "--hidden-dim", "8", "--epochs", "2", "--batch-size", "16"])
        .arg("--out")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log)
        .args(extra));
    assert_exit(&out, 0);
    ckpt
}

#[test]
fn params_prints_closed_form_counts() {
    let out = run(bin().args(["params", "--model", "tree-lstm", "--e", "700", "--h", "128", "--l", "24"]));
    assert_exit(&out, 0);
    assert_eq!(stdout(&out).trim(), "428056");

    let out = run(bin().args(["params", "--model", "seq-lstm", "--e", "300", "--h", "64", "--l", "4"]));
    assert_exit(&out, 0);
    assert_eq!(stdout(&out).trim(), "93956");

    let out = run(bin().args(["params", "--model", "mlp", "--e", "300", "--h", "64", "--l", "4"]));
    assert_exit(&out, 0);
    assert_eq!(stdout(&out).trim(), "23684");
}

#[test]
fn params_rejects_zero_dims() {
    let out = run(bin().args(["params", "--model", "mlp", "--e", "0", "--h", "4", "--l", "2"]));
    assert_exit(&out, 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_exit(&run(bin().arg("no-such-command")), 1);
    assert_exit(&run(bin().args(["train", "--epochs", "not-a-number"])), 1);
    assert_exit(&run(bin().arg("--help")), 0);
    assert_exit(&run(bin().arg("--version")), 0);
}

#[test]
fn missing_inputs_map_to_the_right_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = make_corpus(tmp.path(), 20, 2, 3);

    // A checkpoint that does not exist is a configuration problem.
    let out = run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(tmp.path().join("absent.json"))
        .arg("--corpus")
        .arg(&corpus));
    assert_exit(&out, 1);

    // A corpus that does not exist is a data problem.
    let out = run(bin()
        .arg("train")
        .arg("--corpus")
        .arg(tmp.path().join("absent.jsonl"))
        .arg("--out")
        .arg(tmp.path().join("ckpt.json"))
        .arg("--log")
        .arg(tmp.path().join("log.jsonl")));
    assert_exit(&out, 2);
}

#[test]
fn synth_train_eval_viz_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = make_corpus(tmp.path(), 40, 3, 11);
    let ckpt = quick_train(tmp.path(), &corpus, &["--model", "tree-lstm", "--variant", "zero"]);

    let log = fs::read_to_string(tmp.path().join("log.jsonl")).unwrap();
    // Two epochs, each logging a train loss line and a validation metric line.
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("epoch").is_some() && v.get("value").is_some(), "bad log line {line}");
    }

    let metrics_a = tmp.path().join("a.json");
    let metrics_b = tmp.path().join("b.json");
    for out_path in [&metrics_a, &metrics_b] {
        let out = run(bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(&ckpt)
            .args(["--split", "test"])
            .arg("--corpus")
            .arg(&corpus)
            .arg("--out")
            .arg(out_path));
        assert_exit(&out, 0);
    }
    assert_eq!(
        fs::read(&metrics_a).unwrap(),
        fs::read(&metrics_b).unwrap(),
        "repeated eval must be byte-identical"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&metrics_a).unwrap()).unwrap();
    assert!(report["macro_f1"].is_number());
    assert!(report["confusion"].is_array());

    let viz_dir = tmp.path().join("viz");
    let out = run(bin()
        .arg("viz")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--corpus")
        .arg(&corpus)
        .args(["--ids", "0,2"])
        .arg("--out-dir")
        .arg(&viz_dir));
    assert_exit(&out, 0);
    for id in [0, 2] {
        let json = fs::read_to_string(viz_dir.join(format!("{id}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v.get("prediction").is_some() && v.get("nodes").is_some());
        let html = fs::read_to_string(viz_dir.join(format!("{id}.html"))).unwrap();
        assert!(html.starts_with("<!DOCTYPE html>"));
        assert!(html.contains("weight"));
    }

    // An id past the corpus end is a data error.
    let out = run(bin()
        .arg("viz")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--corpus")
        .arg(&corpus)
        .args(["--ids", "999"])
        .arg("--out-dir")
        .arg(&viz_dir));
    assert_exit(&out, 2);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = make_corpus(tmp.path(), 30, 2, 5);
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    fs::create_dir_all(&dir_a).unwrap();
    fs::create_dir_all(&dir_b).unwrap();
    let ckpt_a = quick_train(&dir_a, &corpus, &["--model", "seq-lstm", "--seed", "9"]);
    let ckpt_b = quick_train(&dir_b, &corpus, &["--model", "seq-lstm", "--seed", "9"]);
    assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(&ckpt_b).unwrap());
    assert_eq!(
        fs::read(dir_a.join("log.jsonl")).unwrap(),
        fs::read(dir_b.join("log.jsonl")).unwrap()
    );
}

#[test]
fn eval_rejects_labels_outside_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let two = make_corpus(tmp.path(), 30, 2, 5);
    let ckpt = quick_train(tmp.path(), &two, &["--model", "mlp"]);
    // Same synth vocabulary, one more class than the classifier has outputs.
    let four = tmp.path().join("four.jsonl");
    let out = run(bin()
        .arg("synth")
        .args(["--docs", "30", "--classes", "4", "--seed", "5"])
        .arg("--out")
        .arg(&four));
    assert_exit(&out, 0);
    let out = run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--corpus")
        .arg(&four)
        .args(["--split", "all"])
        .arg("--out")
        .arg(tmp.path().join("m.json")));
    assert_exit(&out, 1);
}

fn epochs_logged(log: &Path) -> u64 {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .max()
        .unwrap()
}

#[test]
fn env_vars_override_config_file_and_flags_override_env() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = make_corpus(tmp.path(), 20, 2, 7);
    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "# comment line\nepochs = 3\nhidden_dim = 8\n").unwrap();

    let log = tmp.path().join("log.jsonl");
    let out = run(bin()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .args(["--model", "mlp", "--embed-dim", "6", "--batch-size", "16"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("ckpt.json"))
        .arg("--log")
        .arg(&log)
        .env("STRUCTREE_EPOCHS", "1"));
    assert_exit(&out, 0);
    assert_eq!(epochs_logged(&log), 1, "env epochs=1 should beat the config file's 3");

    let out = run(bin()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .args(["--model", "mlp", "--embed-dim", "6", "--batch-size", "16", "--epochs", "2"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("ckpt2.json"))
        .arg("--log")
        .arg(&log)
        .env("STRUCTREE_EPOCHS", "1"));
    assert_exit(&out, 0);
    assert_eq!(epochs_logged(&log), 2, "the --epochs flag should beat the env var");
}

#[test]
fn prepare_skips_bad_files_and_filters_short_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    fs::create_dir_all(raw.join("0")).unwrap();
    fs::create_dir_all(raw.join("1")).unwrap();
    fs::write(
        raw.join("0/long.txt"),
        "= Intro =\n\nFirst thing here. Second thing too.\n\nAnother paragraph sits here.\n\n\
         = Findings =\n\nThe result held. It replicated. Reviewers agreed with it.\n",
    )
    .unwrap();
    fs::write(raw.join("0/short.txt"), "= Only =\n\nOne sentence lives here.\n").unwrap();
    fs::write(
        raw.join("1/long.txt"),
        "= History =\n\nOld notes. More notes. Still more notes.\n\n\
         = Exam =\n\nNormal exam today. Nothing odd found.\n\nFollow up next year. Bring records.\n",
    )
    .unwrap();
    fs::write(raw.join("1/broken.txt"), "text before\n= \n").unwrap();

    let out_path = tmp.path().join("prep.jsonl");
    let out = run(bin()
        .arg("prepare")
        .arg("--input")
        .arg(&raw)
        .args(["--format", "sectioned", "--filter"])
        .arg("--out")
        .arg(&out_path));
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("prepared 2 documents"), "stdout:\n{text}");
    assert!(text.contains("class 0: 1") && text.contains("class 1: 1"), "stdout:\n{text}");
    assert!(text.contains("sections: p50"), "stdout:\n{text}");
    assert!(stderr(&out).contains("broken.txt"));
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 2);

    // JSON mode reads both single trees and corpus files.
    let jraw = tmp.path().join("jraw");
    fs::create_dir_all(&jraw).unwrap();
    let corpus = make_corpus(tmp.path(), 3, 2, 1);
    fs::copy(&corpus, jraw.join("many.jsonl")).unwrap();
    let one_line = fs::read_to_string(&corpus).unwrap().lines().next().unwrap().to_string();
    fs::write(jraw.join("one.json"), one_line).unwrap();
    let jout = tmp.path().join("jprep.jsonl");
    let out = run(bin()
        .arg("prepare")
        .arg("--input")
        .arg(&jraw)
        .args(["--format", "json"])
        .arg("--out")
        .arg(&jout));
    assert_exit(&out, 0);
    assert_eq!(fs::read_to_string(&jout).unwrap().lines().count(), 4);
}

#[test]
fn prepare_with_no_survivors_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    fs::create_dir_all(&raw).unwrap();
    fs::write(raw.join("bad.json"), "not json [").unwrap();
    let out = run(bin()
        .arg("prepare")
        .arg("--input")
        .arg(&raw)
        .args(["--format", "json"])
        .arg("--out")
        .arg(tmp.path().join("out.jsonl")));
    assert_exit(&out, 2);
}
