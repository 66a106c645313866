//! K-fold cross-validation: train and evaluate one model per fold.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::corpus::{dev_split, kfold_split, Corpus, FoldSplit};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_all, EvalReport};
use crate::model::EtcModel;
use crate::training::{train, TrainOutcome};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold_index: usize,
    pub model_dir: PathBuf,
    pub report: EvalReport,
    pub best_step: usize,
    pub best_dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalReport {
    pub folds: Vec<FoldResult>,
    /// Folds that failed, with the error message; excluded from the mean.
    pub failures: Vec<(usize, String)>,
    pub mean: EvalReport,
}

impl CrossvalReport {
    /// Mean scores plus one entry per fold; stable for identical inputs.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean.to_json(),
            "folds": self.folds.iter().map(|f| serde_json::json!({
                "fold": f.fold_index,
                "best_step": f.best_step,
                "best_dev_f1": (f.best_dev_f1 * 10000.0).round() / 100.0,
                "report": f.report.to_json(),
            })).collect::<Vec<_>>(),
            "failures": self.failures.iter().map(|(fold, message)| serde_json::json!({
                "fold": fold,
                "error": message,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Trains on one fold's training documents (minus a dev split) and scores the
/// best checkpoint on the fold's held-out documents.
pub fn run_fold(corpus: &Corpus, split: &FoldSplit, config: &RunConfig, out_dir: &Path) -> Result<FoldResult> {
    let train_docs = corpus.subset(&split.train_ids);
    let test_docs = corpus.subset(&split.test_ids);
    let (train_set, dev_set) = dev_split(&train_docs, config.train.dev_fraction, config.train.seed);
    let model_dir = out_dir.join(format!("fold-{:02}", split.fold_index));
    let mut model = EtcModel::new(config.clone(), corpus.categories())?;
    let TrainOutcome {
        best_step,
        best_dev_f1,
        ..
    } = train(&mut model, &train_set, &dev_set, &model_dir)?;
    let report = evaluate_all(&test_docs, &model)?;
    let path = model_dir.join(REPORT_FILE);
    write_json(&path, &report.to_json())?;
    Ok(FoldResult {
        fold_index: split.fold_index,
        model_dir,
        report,
        best_step,
        best_dev_f1,
    })
}

/// Runs every fold, `jobs` at a time, and writes `report.json` to `out_dir`.
/// A failing fold is recorded in the report rather than aborting the others.
/// Results do not depend on `jobs`.
pub fn crossval(corpus: &Corpus, config: &RunConfig, folds: usize, jobs: usize, out_dir: &Path) -> Result<CrossvalReport> {
    if jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let splits = kfold_split(corpus, folds, config.train.seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut results: Vec<Option<Result<FoldResult>>> = (0..splits.len()).map(|_| None).collect();
    for (chunk_splits, chunk_results) in splits.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_splits
                .iter()
                .map(|split| scope.spawn(move || run_fold(corpus, split, config, out_dir)))
                .collect();
            for (slot, handle) in chunk_results.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("fold thread panicked"));
            }
        });
    }
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for (split, result) in splits.iter().zip(results) {
        match result.expect("every fold ran") {
            Ok(fold) => folds.push(fold),
            Err(e) => {
                log::error!("fold {}: {e}", split.fold_index);
                failures.push((split.fold_index, e.to_string()));
            }
        }
    }
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    let report = CrossvalReport {
        mean: EvalReport::mean(&reports),
        folds,
        failures,
    };
    write_json(&out_dir.join(REPORT_FILE), &report.to_json())?;
    Ok(report)
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
