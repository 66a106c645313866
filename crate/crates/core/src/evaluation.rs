//! Exact-boundary metrics for span-level extraction and their clause-level relaxations.
//!
//! A predicted item counts as correct only when both its start and end match
//! a gold item exactly. Counts are summed over documents before computing
//! precision, recall and F1. Clause-level tasks first map every span to the
//! set of clauses it overlaps.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, SpanRef};
use crate::error::{Error, Result};
use crate::model::{Extractor, Prediction};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub proposed: usize,
    pub annotated: usize,
    pub correct: usize,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            proposed: self.proposed + o.proposed,
            annotated: self.annotated + o.annotated,
            correct: self.correct + o.correct,
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Precision, recall and F1; empty denominators give 0.
pub fn prf1(counts: MatchCounts) -> Prf {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Prf::from_precision_recall(
        ratio(counts.correct, counts.proposed),
        ratio(counts.correct, counts.annotated),
    )
}

/// Set-based exact matching; duplicates on either side collapse.
pub fn match_spans_exact<T: Eq + Hash>(gold: &[T], predicted: &[T]) -> MatchCounts {
    let gold: HashSet<&T> = gold.iter().collect();
    let predicted: HashSet<&T> = predicted.iter().collect();
    MatchCounts {
        proposed: predicted.len(),
        annotated: gold.len(),
        correct: predicted.iter().filter(|p| gold.contains(*p)).count(),
    }
}

/// An emotion-cause pair for matching. `doc` keeps pairs from different
/// documents apart.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairItem {
    pub doc: usize,
    pub emotion: SpanRef,
    pub cause: SpanRef,
    pub category: Option<String>,
}

/// Pair matching. Both spans must match exactly and, with
/// `require_category`, the category too. Each gold pair matches at most one
/// prediction; duplicate predictions collapse.
pub fn match_pairs(gold: &[PairItem], predicted: &[PairItem], require_category: bool) -> Result<MatchCounts> {
    type Key = (usize, SpanRef, SpanRef, Option<String>);
    let key = |p: &PairItem| -> Result<Key> {
        let category = if require_category {
            Some(p.category.clone().ok_or_else(|| {
                Error::InvalidArgument("category matching requires categories on every pair".into())
            })?)
        } else {
            None
        };
        Ok((p.doc, p.emotion, p.cause, category))
    };
    let gold: BTreeSet<Key> = gold.iter().map(key).collect::<Result<_>>()?;
    let predicted: BTreeSet<Key> = predicted.iter().map(key).collect::<Result<_>>()?;
    let mut used = BTreeSet::new();
    let mut correct = 0;
    for p in &predicted {
        if gold.contains(p) && used.insert(p) {
            correct += 1;
        }
    }
    Ok(MatchCounts {
        proposed: predicted.len(),
        annotated: gold.len(),
        correct,
    })
}

/// Indices of the clauses that any span overlaps by at least one token.
pub fn relax_to_clauses(document: &Document, spans: &[SpanRef]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for span in spans {
        for (i, clause) in document.clauses.iter().enumerate() {
            if clause.overlaps(span) {
                out.insert(i);
            }
        }
    }
    out
}

/// Clause-index pairs covered by an emotion span and a cause span.
fn relax_pair(document: &Document, emotion: SpanRef, cause: SpanRef) -> Vec<(usize, usize)> {
    let es = relax_to_clauses(document, &[emotion]);
    let cs = relax_to_clauses(document, &[cause]);
    es.iter()
        .flat_map(|&e| cs.iter().map(move |&c| (e, c)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Eese,
    Ecse,
    Ecspe,
    Ecsp,
    EeeClause,
    CeClause,
    EcpeClause,
    EceClause,
}

impl Task {
    pub const SPAN: [Task; 4] = [Task::Eese, Task::Ecse, Task::Ecspe, Task::Ecsp];
    pub const CLAUSE: [Task; 4] = [Task::EeeClause, Task::CeClause, Task::EcpeClause, Task::EceClause];

    pub fn name(self) -> &'static str {
        match self {
            Task::Eese => "EESE",
            Task::Ecse => "ECSE",
            Task::Ecspe => "ECSPE",
            Task::Ecsp => "ECSP",
            Task::EeeClause => "EEE_clause",
            Task::CeClause => "CE_clause",
            Task::EcpeClause => "ECPE_clause",
            Task::EceClause => "ECE_clause",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Span,
    Clause,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "span" => Ok(EvalMode::Span),
            "clause" => Ok(EvalMode::Clause),
            other => Err(Error::InvalidArgument(format!(
                "mode must be `span` or `clause`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub prf: Prf,
    /// Present for a single evaluation, absent for fold means.
    pub counts: Option<MatchCounts>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    /// Number of evaluations averaged into this report.
    pub folds: usize,
    pub oracle_emotion: bool,
}

#[derive(Serialize, Deserialize)]
struct TaskJson {
    precision: f64,
    recall: f64,
    f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<MatchCounts>,
}

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

impl EvalReport {
    pub fn score(&self, task: Task) -> Option<&TaskScore> {
        self.tasks.get(&task)
    }

    pub fn f1(&self, task: Task) -> Option<f64> {
        self.score(task).map(|s| s.prf.f1)
    }

    /// Adds the tasks of `other` that this report lacks.
    pub fn merge(mut self, other: EvalReport) -> EvalReport {
        for (task, score) in other.tasks {
            self.tasks.entry(task).or_insert(score);
        }
        self.oracle_emotion |= other.oracle_emotion;
        self
    }

    /// Per-task arithmetic mean of precision, recall and F1.
    pub fn mean(reports: &[EvalReport]) -> EvalReport {
        let mut tasks = BTreeMap::new();
        let all: BTreeSet<Task> = reports.iter().flat_map(|r| r.tasks.keys().copied()).collect();
        for task in all {
            let scores: Vec<&Prf> = reports
                .iter()
                .filter_map(|r| r.tasks.get(&task).map(|s| &s.prf))
                .collect();
            let n = scores.len() as f64;
            tasks.insert(
                task,
                TaskScore {
                    prf: Prf {
                        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
                        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
                        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
                    },
                    counts: None,
                },
            );
        }
        EvalReport {
            tasks,
            folds: reports.len(),
            oracle_emotion: reports.iter().any(|r| r.oracle_emotion),
        }
    }

    /// JSON with metrics as percentages rounded to two decimals.
    pub fn to_json(&self) -> serde_json::Value {
        let tasks: serde_json::Map<String, serde_json::Value> = self
            .tasks
            .iter()
            .map(|(task, s)| {
                let t = TaskJson {
                    precision: pct(s.prf.precision),
                    recall: pct(s.prf.recall),
                    f1: pct(s.prf.f1),
                    counts: s.counts,
                };
                (task.name().to_string(), serde_json::to_value(t).expect("serializable"))
            })
            .collect();
        serde_json::json!({
            "folds": self.folds,
            "oracle_emotion": self.oracle_emotion,
            "tasks": tasks,
        })
    }

    /// Fixed-width table, one row per task, percentages with two decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>8} {:>8} {:>8}\n", "task", "P", "R", "F1");
        for (task, s) in &self.tasks {
            out.push_str(&format!(
                "{:<12} {:>8.2} {:>8.2} {:>8.2}\n",
                task.name(),
                100.0 * s.prf.precision,
                100.0 * s.prf.recall,
                100.0 * s.prf.f1
            ));
        }
        out
    }
}

fn score(counts: MatchCounts) -> TaskScore {
    TaskScore {
        prf: prf1(counts),
        counts: Some(counts),
    }
}

/// Evaluates precomputed predictions, one per document in corpus order.
/// `oracle` holds predictions made with gold emotions supplied; when present
/// the clause-level ECE task is scored from it.
pub fn evaluate_predictions(
    corpus: &Corpus,
    predictions: &[Prediction],
    oracle: Option<&[Prediction]>,
    mode: EvalMode,
) -> Result<EvalReport> {
    if predictions.len() != corpus.len() || oracle.is_some_and(|o| o.len() != corpus.len()) {
        return Err(Error::InvalidArgument(
            "one prediction per document is required".into(),
        ));
    }
    let mut counts: BTreeMap<Task, MatchCounts> = BTreeMap::new();
    for (i, (doc, pred)) in corpus.iter().zip(predictions).enumerate() {
        let tag = |spans: &[SpanRef]| -> Vec<(usize, SpanRef)> { spans.iter().map(|s| (i, *s)).collect() };
        match mode {
            EvalMode::Span => {
                *counts.entry(Task::Eese).or_default() +=
                    match_spans_exact(&tag(&doc.emotion_spans()), &tag(&pred.emotions));
                *counts.entry(Task::Ecse).or_default() +=
                    match_spans_exact(&tag(&doc.cause_spans()), &tag(&pred.causes));
                let gold: Vec<PairItem> = doc
                    .pairs
                    .iter()
                    .map(|p| PairItem {
                        doc: i,
                        emotion: p.emotion,
                        cause: p.cause,
                        category: Some(p.category.clone()),
                    })
                    .collect();
                let predicted: Vec<PairItem> = pred
                    .pairs
                    .iter()
                    .map(|p| PairItem {
                        doc: i,
                        emotion: p.emotion,
                        cause: p.cause,
                        category: Some(p.category.clone()),
                    })
                    .collect();
                *counts.entry(Task::Ecspe).or_default() += match_pairs(&gold, &predicted, false)?;
                *counts.entry(Task::Ecsp).or_default() += match_pairs(&gold, &predicted, true)?;
            }
            EvalMode::Clause => {
                let clauses = |spans: &[SpanRef]| -> Vec<(usize, usize)> {
                    relax_to_clauses(doc, spans).into_iter().map(|c| (i, c)).collect()
                };
                *counts.entry(Task::EeeClause).or_default() +=
                    match_spans_exact(&clauses(&doc.emotion_spans()), &clauses(&pred.emotions));
                *counts.entry(Task::CeClause).or_default() +=
                    match_spans_exact(&clauses(&doc.cause_spans()), &clauses(&pred.causes));
                let gold_pairs: Vec<(usize, (usize, usize))> = doc
                    .pairs
                    .iter()
                    .flat_map(|p| relax_pair(doc, p.emotion, p.cause))
                    .map(|cp| (i, cp))
                    .collect();
                let pred_pairs: Vec<(usize, (usize, usize))> = pred
                    .pairs
                    .iter()
                    .flat_map(|p| relax_pair(doc, p.emotion, p.cause))
                    .map(|cp| (i, cp))
                    .collect();
                *counts.entry(Task::EcpeClause).or_default() +=
                    match_spans_exact(&gold_pairs, &pred_pairs);
                let source = oracle.map_or(pred, |o| &o[i]);
                let paired_causes: Vec<SpanRef> = source.pairs.iter().map(|p| p.cause).collect();
                *counts.entry(Task::EceClause).or_default() +=
                    match_spans_exact(&clauses(&doc.cause_spans()), &clauses(&paired_causes));
            }
        }
    }
    Ok(EvalReport {
        tasks: counts.into_iter().map(|(t, c)| (t, score(c))).collect(),
        folds: 1,
        oracle_emotion: oracle.is_some(),
    })
}

/// Runs `extractor` over the corpus and scores it. `oracle_emotion` is only
/// defined for clause mode, where it supplies gold emotions for the ECE task.
pub fn evaluate(
    corpus: &Corpus,
    extractor: &dyn Extractor,
    mode: EvalMode,
    oracle_emotion: bool,
) -> Result<EvalReport> {
    if oracle_emotion && mode != EvalMode::Clause {
        return Err(Error::InvalidArgument(
            "--oracle-emotion is only defined for clause mode".into(),
        ));
    }
    let predictions: Vec<Prediction> = corpus
        .iter()
        .map(|d| extractor.predict(d))
        .collect::<Result<_>>()?;
    let oracle: Option<Vec<Prediction>> = if oracle_emotion {
        Some(
            corpus
                .iter()
                .map(|d| extractor.predict_with_emotions(d, &d.emotion_spans()))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    evaluate_predictions(corpus, &predictions, oracle.as_deref(), mode)
}

/// Span-mode and clause-mode tasks in one report.
pub fn evaluate_all(corpus: &Corpus, extractor: &dyn Extractor) -> Result<EvalReport> {
    let predictions: Vec<Prediction> = corpus
        .iter()
        .map(|d| extractor.predict(d))
        .collect::<Result<_>>()?;
    let span = evaluate_predictions(corpus, &predictions, None, EvalMode::Span)?;
    let clause = evaluate_predictions(corpus, &predictions, None, EvalMode::Clause)?;
    Ok(span.merge(clause))
}
