//! End-to-end tests of the `ecsp` binary: outputs and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecsp::corpus::write_corpus;
use ecsp::synthetic::{generate, SyntheticConfig};
use tempfile::TempDir;

const TOY: &str = "[encoder]\nkind = \"toy\"\nhidden_dim = 16\n\n[span]\nmax_len = 8\n\n\
                   [train]\ntotal_steps = 30\npeak_lr = 0.01\nbatch_size = 2\nseed = 1\n";

fn ecsp(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecsp"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        write_corpus(
            &corpus,
            &generate(&SyntheticConfig {
                num_documents: 12,
                seed: 4,
                ..SyntheticConfig::default()
            }),
        )
        .unwrap();
        let config_path = dir.path().join("config.toml");
        std::fs::write(&config_path, config).unwrap();
        Fixture {
            dir,
            corpus,
            config: config_path,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &Path) -> Output {
        ecsp(&[&"train", &"--corpus", &self.corpus, &"--config", &self.config, &"--out", &out])
    }
}

#[test]
fn stats_on_an_empty_file_prints_zeros() {
    let f = Fixture::new(TOY);
    let empty = f.path("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = ecsp(&[&"stats", &"--corpus", &empty]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for row in ["Instances: 0", "Pairs: 0", "Length ≤ 20: 0", "coverage@20 = 0.00%"] {
        assert!(text.contains(row), "missing {row:?} in\n{text}");
    }
}

#[test]
fn stats_reports_the_requested_length() {
    let f = Fixture::new(TOY);
    let o = ecsp(&[&"stats", &"--corpus", &f.corpus, &"--max-len", &"3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("Instances: 12"), "{text}");
    assert!(text.contains("Length ≤ 3:"), "{text}");
    assert!(text.contains("coverage@3 = "), "{text}");
}

#[test]
fn malformed_corpus_is_a_usage_error_with_the_line() {
    let f = Fixture::new(TOY);
    let bad = f.path("bad.jsonl");
    let first = std::fs::read_to_string(&f.corpus).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&bad, format!("{first}\n{{not json\n")).unwrap();
    let o = ecsp(&[&"stats", &"--corpus", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(ecsp(&[&"frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_writes_a_checkpoint_and_log() {
    let f = Fixture::new(TOY);
    let out = f.path("model");
    let o = f.train(&out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(summary["dev_f1"].is_number());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["schema_version"], "1");
    assert!(meta["dev_f1"].is_number());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["step"], 30);
    for key in ["loss", "lr", "dev_f1"] {
        assert!(last.get(key).is_some(), "log line lacks {key}");
    }
}

#[test]
fn missing_total_steps_names_the_key() {
    let f = Fixture::new("[encoder]\nkind = \"toy\"\nhidden_dim = 8\n");
    let o = f.train(&f.path("model"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.total_steps"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let f = Fixture::new(&format!("{TOY}learning_rate = 3\n"));
    let o = f.train(&f.path("model"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn existing_output_needs_overwrite_even_with_resume() {
    let f = Fixture::new(TOY);
    let out = f.path("model");
    assert_eq!(f.train(&out).status.code(), Some(0));
    let again = ecsp(&[
        &"train", &"--corpus", &f.corpus, &"--config", &f.config, &"--out", &out, &"--resume",
    ]);
    assert_eq!(again.status.code(), Some(2));
    let resumed = ecsp(&[
        &"train",
        &"--corpus",
        &f.corpus,
        &"--config",
        &f.config,
        &"--out",
        &out,
        &"--resume",
        &"--overwrite",
    ]);
    assert_eq!(resumed.status.code(), Some(0), "{}", stderr(&resumed));
}

#[test]
fn divergence_exits_with_training_failure() {
    let f = Fixture::new(&TOY.replace("peak_lr = 0.01", "peak_lr = 1e300"));
    let o = f.train(&f.path("model"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn crossval_rejects_a_single_fold() {
    let f = Fixture::new(TOY);
    let o = ecsp(&[
        &"crossval", &"--corpus", &f.corpus, &"--config", &f.config, &"--folds", &"1", &"--out", &f.path("cv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn crossval_reports_every_fold_and_a_mean() {
    let f = Fixture::new(TOY);
    let out = f.path("cv");
    let o = ecsp(&[
        &"crossval", &"--corpus", &f.corpus, &"--config", &f.config, &"--folds", &"3", &"--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    assert!(report["mean"].is_object());
    assert!(report["failures"].as_array().unwrap().is_empty());
    assert!(out.join("fold-00").join("metadata.json").is_file());
}

#[test]
fn predict_writes_one_line_per_document() {
    let f = Fixture::new(TOY);
    let model = f.path("model");
    assert_eq!(f.train(&model).status.code(), Some(0));
    let output = f.path("pred.jsonl");
    let o = ecsp(&[&"predict", &"--model", &model, &"--input", &f.corpus, &"--output", &output]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[0]["doc_id"], "syn-00000");
    for line in &lines {
        for pair in line["pairs"].as_array().unwrap() {
            for key in ["emotion", "cause", "category", "score"] {
                assert!(pair.get(key).is_some(), "pair lacks {key}: {pair}");
            }
            assert!(pair["emotion"]["start"].is_u64() && pair["cause"]["end"].is_u64());
        }
    }
}

#[test]
fn predict_with_an_unreadable_model_dir_is_a_model_error() {
    let f = Fixture::new(TOY);
    let o = ecsp(&[
        &"predict", &"--model", &f.path("nowhere"), &"--input", &f.corpus, &"--output", &f.path("p.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn predict_rejects_a_foreign_schema_version() {
    let f = Fixture::new(TOY);
    let model = f.path("model");
    assert_eq!(f.train(&model).status.code(), Some(0));
    let meta_path = model.join("metadata.json");
    let meta = std::fs::read_to_string(&meta_path).unwrap();
    std::fs::write(&meta_path, meta.replace("\"schema_version\": \"1\"", "\"schema_version\": \"99\"")).unwrap();
    let o = ecsp(&[&"predict", &"--model", &model, &"--input", &f.corpus, &"--output", &f.path("p.jsonl")]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_in_clause_mode_on_a_span_checkpoint() {
    let f = Fixture::new(TOY);
    let model = f.path("model");
    assert_eq!(f.train(&model).status.code(), Some(0));
    let o = ecsp(&[&"eval", &"--model", &model, &"--corpus", &f.corpus, &"--mode", &"clause", &"--oracle-emotion"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report.to_string().contains("ECE_clause"), "{report}");

    let o = ecsp(&[&"eval", &"--model", &model, &"--corpus", &f.corpus, &"--oracle-emotion"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_output_is_identical_across_runs() {
    let f = Fixture::new(TOY);
    let model = f.path("model");
    assert_eq!(f.train(&model).status.code(), Some(0));
    let run = || stdout(&ecsp(&[&"eval", &"--model", &model, &"--corpus", &f.corpus]));
    assert_eq!(run(), run());
}
