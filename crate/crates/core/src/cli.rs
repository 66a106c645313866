//! The `ecsp` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 training failure,
//! 4 model or I/O incompatibility.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, restore_into, METADATA_FILE};
use crate::config::RunConfig;
use crate::corpus::{corpus_stats, dev_split, kfold_split, length_coverage, load_corpus_with, Corpus, CorpusStats};
use crate::crossval::crossval;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMode};
use crate::model::{EtcModel, Extractor};
use crate::training::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ecsp", version, about = "Emotion-cause span-pair extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus counts and span-length coverage.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        /// Ignore unknown keys in the corpus file.
        #[arg(long)]
        lenient: bool,
    },
    /// Train one model and write its checkpoint directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train on the training part of this fold only.
        #[arg(long)]
        fold: Option<usize>,
        /// Number of folds used with `--fold`.
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Start from the weights already in `--out` (requires `--overwrite`).
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        overwrite: bool,
        /// Config override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        lenient: bool,
    },
    /// K-fold cross-validation with per-fold and mean reports.
    Crossval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        lenient: bool,
    },
    /// Write extracted pairs for every document as JSON lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Score a model on an annotated corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "span")]
        mode: EvalMode,
        /// Clause mode only: supply gold emotions for emotion cause extraction.
        #[arg(long)]
        oracle_emotion: bool,
        #[arg(long)]
        lenient: bool,
    },
}

/// A failed command: the message for stderr and the exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Any error while reading a config file is a configuration error.
fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(path).map_err(|e| usage(e.to_string()))?;
    for o in overrides {
        config.set_override(o)?;
    }
    config.validate_model()?;
    config.train.validate()?;
    config.train.total_steps()?;
    Ok(config)
}

/// Any error while reading a model directory is a model error.
fn load_model(dir: &Path) -> Result<EtcModel, Failure> {
    load_checkpoint(dir).map_err(|e| Failure {
        code: EXIT_MODEL,
        message: format!("{}: {e}", dir.display()),
    })
}

fn is_nonempty_dir(path: &Path) -> bool {
    std::fs::read_dir(path).is_ok_and(|mut it| it.next().is_some())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Stats {
            corpus,
            max_len,
            lenient,
        } => {
            if max_len == 0 {
                return Err(usage("--max-len must be at least 1"));
            }
            let corpus = load_corpus_with(&corpus, lenient)?;
            let stats = corpus_stats(&corpus);
            write_out(out, &stats_table(&stats, max_len))
        }
        Command::Train {
            corpus,
            config,
            out: out_dir,
            fold,
            folds,
            resume,
            overwrite,
            overrides,
            lenient,
        } => {
            let config = load_config(&config, &overrides)?;
            if is_nonempty_dir(&out_dir) && !overwrite {
                return Err(usage(format!(
                    "{} already exists; pass --overwrite to replace it",
                    out_dir.display()
                )));
            }
            if resume && !out_dir.join(METADATA_FILE).is_file() {
                return Err(usage(format!("--resume: no checkpoint in {}", out_dir.display())));
            }
            let corpus = load_corpus_with(&corpus, lenient)?;
            let train_docs: Corpus = match fold {
                Some(k) => {
                    let splits = kfold_split(&corpus, folds, config.train.seed)?;
                    let split = splits
                        .get(k)
                        .ok_or_else(|| usage(format!("--fold {k} is out of range for {folds} folds")))?;
                    corpus.subset(&split.train_ids)
                }
                None => corpus.clone(),
            };
            let (train_set, dev_set) = dev_split(&train_docs, config.train.dev_fraction, config.train.seed);
            let mut model = EtcModel::new(config, corpus.categories())?;
            if resume {
                restore_into(&mut model, &out_dir).map_err(|e| Failure {
                    code: EXIT_MODEL,
                    message: e.to_string(),
                })?;
            }
            let outcome = train(&mut model, &train_set, &dev_set, &out_dir)?;
            let summary = serde_json::json!({
                "out": out_dir.display().to_string(),
                "best_step": outcome.best_step,
                "dev_f1": outcome.best_dev_f1,
                "steps_run": outcome.steps_run,
                "stopped_early": outcome.stopped_early,
                "supervision": outcome.supervision,
            });
            write_out(out, &format!("{summary}\n"))
        }
        Command::Crossval {
            corpus,
            config,
            folds,
            out: out_dir,
            jobs,
            overrides,
            lenient,
        } => {
            if folds < 2 {
                return Err(usage("--folds must be at least 2"));
            }
            let config = load_config(&config, &overrides)?;
            let corpus = load_corpus_with(&corpus, lenient)?;
            let report = crossval(&corpus, &config, folds, jobs, &out_dir)?;
            let text = serde_json::to_string_pretty(&report.to_json()).expect("JSON values serialize");
            write_out(out, &(text + "\n"))?;
            if report.failures.is_empty() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_TRAINING,
                    message: format!("{} of {folds} folds failed", report.failures.len()),
                })
            }
        }
        Command::Predict {
            model,
            input,
            output,
            lenient,
        } => {
            let model = load_model(&model)?;
            let corpus = load_corpus_with(&input, lenient)?;
            let file = File::create(&output).map_err(|e| Error::io(&output, e))?;
            let mut writer = BufWriter::new(file);
            for doc in &corpus {
                let prediction = model.predict(doc)?;
                let line = serde_json::json!({ "doc_id": doc.doc_id, "pairs": prediction.pairs });
                writeln!(writer, "{line}").map_err(|e| Error::io(&output, e))?;
            }
            writer.flush().map_err(|e| Error::io(&output, e))?;
            Ok(())
        }
        Command::Eval {
            model,
            corpus,
            mode,
            oracle_emotion,
            lenient,
        } => {
            if oracle_emotion && mode != EvalMode::Clause {
                return Err(usage("--oracle-emotion requires --mode clause"));
            }
            let model = load_model(&model)?;
            let corpus = load_corpus_with(&corpus, lenient)?;
            let report = evaluate(&corpus, &model, mode, oracle_emotion)?;
            let text = serde_json::to_string_pretty(&report.to_json()).expect("JSON values serialize");
            write_out(out, &(text + "\n"))
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Error::io("<stdout>", e).into())
}

/// The human-readable table printed by `ecsp stats`.
pub fn stats_table(stats: &CorpusStats, max_len: usize) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("Instances".into(), stats.num_documents.to_string()),
        ("Clauses".into(), stats.num_clauses.to_string()),
        ("Pairs".into(), stats.num_pairs.to_string()),
        ("Emotions".into(), stats.num_emotions.to_string()),
        ("Causes".into(), stats.num_causes.to_string()),
    ];
    for k in 1..=3 {
        rows.push((format!("Cause_{k}"), stats.cause_docs(k).to_string()));
    }
    let more: usize = stats.num_cause_docs_by_count.range(4..).map(|(_, n)| n).sum();
    if more > 0 {
        rows.push(("Cause_4+".into(), more.to_string()));
    }
    rows.push(("Annotations".into(), stats.num_annotations.to_string()));
    let mut lengths = vec![2, 5, 10, 15, 20];
    if !lengths.contains(&max_len) {
        lengths.push(max_len);
        lengths.sort_unstable();
    }
    for l in lengths {
        rows.push((format!("Length ≤ {l}"), stats.annotations_up_to(l).to_string()));
    }
    let mut text: String = rows.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
    text.push_str(&format!(
        "coverage@{max_len} = {:.2}%\n",
        100.0 * length_coverage(stats, max_len)
    ));
    text
}
