//! Supervision, the joint loss, the learning-rate schedule and the training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{CandidateMode, TrainConfig};
use crate::corpus::{ClauseSpan, Corpus, Document, GoldPair, SpanRef};
use crate::encoder::window_plan;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMode, Task};
use crate::model::{EtcModel, LossBreakdown};
use crate::nn::cross_entropy;
use crate::pairing::{PairCandidate, PairDistribution};
use crate::params::{Adam, Parameterized};
use crate::spans::{CandidateSpan, SpanType, SpanTypeDistribution};

/// One encoder window with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<(CandidateSpan, SpanType)>,
    /// Pair candidates with their label index; `categories.len()` means none.
    pub pairs: Vec<(PairCandidate, usize)>,
}

/// Span labels plus bookkeeping about gold spans that received no candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanLabels {
    pub labels: Vec<SpanType>,
    /// Distinct gold spans with no identical candidate (usually longer than the maximum length).
    pub uncovered: usize,
    /// Gold spans annotated both as emotion and as cause; labeled emotion.
    pub conflicts: usize,
}

fn gold_types(document: &Document) -> (BTreeMap<SpanRef, SpanType>, usize) {
    let mut types = BTreeMap::new();
    let mut conflicts = 0;
    for span in document.cause_spans() {
        types.insert(span, SpanType::Cause);
    }
    for span in document.emotion_spans() {
        if types.insert(span, SpanType::Emotion) == Some(SpanType::Cause) {
            conflicts += 1;
            log::warn!(
                "document {}: span {span} is both emotion and cause; labeled emotion",
                document.doc_id
            );
        }
    }
    (types, conflicts)
}

/// A candidate is labeled emotion (cause) iff it equals a gold emotion (cause)
/// span exactly; all other candidates are none.
pub fn assign_span_labels(document: &Document, candidates: &[CandidateSpan]) -> SpanLabels {
    let (types, conflicts) = gold_types(document);
    let labels: Vec<SpanType> = candidates
        .iter()
        .map(|c| types.get(c).copied().unwrap_or(SpanType::None))
        .collect();
    let offered: BTreeSet<&CandidateSpan> = candidates.iter().collect();
    let uncovered = types.keys().filter(|s| !offered.contains(s)).count();
    SpanLabels {
        labels,
        uncovered,
        conflicts,
    }
}

/// Labels clause candidates by overlap with gold spans (emotion wins).
pub fn assign_clause_labels(document: &Document, clauses: &[ClauseSpan]) -> SpanLabels {
    let (types, conflicts) = gold_types(document);
    let labels = clauses
        .iter()
        .map(|c| {
            let overlapping: Vec<SpanType> = types
                .iter()
                .filter(|(s, _)| s.overlaps(c))
                .map(|(_, t)| *t)
                .collect();
            if overlapping.contains(&SpanType::Emotion) {
                SpanType::Emotion
            } else if overlapping.contains(&SpanType::Cause) {
                SpanType::Cause
            } else {
                SpanType::None
            }
        })
        .collect();
    SpanLabels {
        labels,
        uncovered: 0,
        conflicts,
    }
}

/// Gold emotion spans × gold cause spans; annotated combinations carry their
/// category, the rest `None`.
pub fn assign_pair_labels(document: &Document) -> Vec<(PairCandidate, Option<String>)> {
    let mut gold: BTreeMap<(SpanRef, SpanRef), &str> = BTreeMap::new();
    for p in &document.pairs {
        gold.entry((p.emotion, p.cause)).or_insert(p.category.as_str());
    }
    let causes = document.cause_spans();
    document
        .emotion_spans()
        .into_iter()
        .flat_map(|emotion| {
            let gold = &gold;
            causes.iter().map(move |&cause| {
                (
                    PairCandidate { emotion, cause },
                    gold.get(&(emotion, cause)).map(|c| c.to_string()),
                )
            })
        })
        .collect()
}

/// Clause-level analogue of [`assign_pair_labels`].
fn assign_clause_pair_labels(document: &Document) -> Vec<(PairCandidate, Option<String>)> {
    let clause_of = |span: SpanRef| -> Vec<ClauseSpan> {
        document
            .clauses
            .iter()
            .filter(|c| c.overlaps(&span))
            .copied()
            .collect()
    };
    let mut gold: BTreeMap<(SpanRef, SpanRef), &str> = BTreeMap::new();
    let mut emotions = BTreeSet::new();
    let mut causes = BTreeSet::new();
    for p in &document.pairs {
        for e in clause_of(p.emotion) {
            emotions.insert(e);
            for c in clause_of(p.cause) {
                causes.insert(c);
                gold.entry((e, c)).or_insert(p.category.as_str());
            }
        }
    }
    emotions
        .iter()
        .flat_map(|&emotion| {
            let gold = &gold;
            causes.iter().map(move |&cause| {
                (
                    PairCandidate { emotion, cause },
                    gold.get(&(emotion, cause)).map(|c| c.to_string()),
                )
            })
        })
        .collect()
}

/// `span_w · mean CE(spans) + pair_w · mean CE(pairs)`; an empty set contributes 0.
pub fn joint_loss(
    spans: &[(SpanTypeDistribution, SpanType)],
    pairs: &[(PairDistribution, usize)],
    span_weight: f64,
    pair_weight: f64,
) -> Result<f64> {
    let mean = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
    let span_ce: f64 = spans
        .iter()
        .map(|(d, y)| cross_entropy(&d.probs, y.index()))
        .sum();
    let mut pair_ce = 0.0;
    for (d, y) in pairs {
        if *y >= d.probs.len() {
            return Err(Error::UnknownLabel(y.to_string()));
        }
        pair_ce += cross_entropy(&d.probs, *y);
    }
    Ok(span_weight * mean(span_ce, spans.len()) + pair_weight * mean(pair_ce, pairs.len()))
}

/// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let Ok(total) = config.total_steps() else {
        return 0.0;
    };
    if total < 2 || step >= total {
        return 0.0;
    }
    let warmup = ((config.warmup_fraction * total as f64).round() as usize).clamp(1, total - 1);
    if step <= warmup {
        config.peak_lr * step as f64 / warmup as f64
    } else {
        config.peak_lr * (total - step) as f64 / (total - warmup) as f64
    }
}

/// Counters about supervision that could not be used as-is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionStats {
    pub windows: usize,
    pub uncovered_gold_spans: usize,
    pub conflicting_gold_spans: usize,
    pub pairs_dropped_across_windows: usize,
}

/// Splits every document into encoder windows and labels candidates and pairs.
pub fn build_examples(model: &EtcModel, corpus: &Corpus) -> Result<(Vec<TrainingExample>, SupervisionStats)> {
    let mut stats = SupervisionStats::default();
    let mut examples = Vec::new();
    for doc in corpus {
        let windows = window_plan(doc, model.encoder.max_tokens())?;
        for window in &windows {
            let offset = window.tokens.start;
            let local = |s: SpanRef| SpanRef::new(s.start - offset, s.end - offset);
            let mut pairs = Vec::new();
            for p in &doc.pairs {
                if window.contains(&p.emotion) && window.contains(&p.cause) {
                    pairs.push(GoldPair {
                        emotion: local(p.emotion),
                        cause: local(p.cause),
                        category: p.category.clone(),
                    });
                } else if window.contains(&p.emotion) {
                    stats.pairs_dropped_across_windows += 1;
                    log::warn!(
                        "document {}: pair {} -> {} crosses encoder windows; dropped",
                        doc.doc_id,
                        p.emotion,
                        p.cause
                    );
                }
            }
            let window_doc = Document {
                doc_id: doc.doc_id.clone(),
                tokens: doc.tokens[window.tokens.start..=window.tokens.end].to_vec(),
                clauses: doc.clauses[window.clauses.clone()].iter().map(|c| local(*c)).collect(),
                pairs,
            };
            examples.push(example_for(model, &window_doc, &mut stats)?);
        }
    }
    Ok((examples, stats))
}

fn example_for(model: &EtcModel, doc: &Document, stats: &mut SupervisionStats) -> Result<TrainingExample> {
    let candidates = model.candidates(doc.len(), &doc.clauses);
    let (labels, pair_labels) = match model.config.span.candidates {
        CandidateMode::Spans => (assign_span_labels(doc, &candidates), assign_pair_labels(doc)),
        CandidateMode::Clauses => (
            assign_clause_labels(doc, &candidates),
            assign_clause_pair_labels(doc),
        ),
    };
    stats.windows += 1;
    stats.uncovered_gold_spans += labels.uncovered;
    stats.conflicting_gold_spans += labels.conflicts;
    let pairs = pair_labels
        .into_iter()
        .filter(|(p, _)| {
            candidates.contains(&p.emotion) && candidates.contains(&p.cause)
        })
        .map(|(p, cat)| {
            let label = match cat {
                Some(c) => model
                    .category_index(&c)
                    .ok_or(Error::UnknownLabel(c))?,
                None => model.none_label(),
            };
            Ok((p, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingExample {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens.clone(),
        spans: candidates.into_iter().zip(labels.labels).collect(),
        pairs,
    })
}

/// Keeps every positive candidate and a seeded `ratio` share of the negatives.
fn downsample(example: &TrainingExample, ratio: f64, rng: &mut ChaCha8Rng) -> TrainingExample {
    let spans = example
        .spans
        .iter()
        .filter(|(_, t)| *t != SpanType::None || rng.random::<f64>() < ratio)
        .copied()
        .collect();
    TrainingExample {
        spans,
        ..example.clone()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the steps since the previous entry.
    pub loss: f64,
    pub span_loss: f64,
    pub pair_loss: f64,
    pub dev_f1: f64,
    pub best_dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps_run: usize,
    pub best_step: usize,
    pub best_dev_f1: f64,
    pub evaluations: usize,
    pub stopped_early: bool,
    pub supervision: SupervisionStats,
    pub log: Vec<LogEntry>,
}

/// Trains `model` with Adam, evaluating ECSP F1 on `dev` every
/// `eval_interval_steps` and stopping after `patience_evals` evaluations
/// without improvement. The best model is written to `out_dir` (with a
/// `train_log.jsonl`) and loaded back into `model`.
pub fn train(model: &mut EtcModel, train_set: &Corpus, dev_set: &Corpus, out_dir: &Path) -> Result<TrainOutcome> {
    let cfg = model.config.train.clone();
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (examples, supervision) = build_examples(model, train_set)?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);

    let total_steps = cfg.total_steps()?;
    let interval = cfg.eval_interval_steps.unwrap_or(examples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::default();
    let mut grads = model.heads.zeros_like();
    model.encoder.zero_grad();

    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0;
    let mut best: Option<(usize, f64)> = None;
    let mut checkpoint = None;
    let mut since_improvement = 0;
    let mut window_loss = LossBreakdown::default();
    let mut window_steps = 0;
    let mut log = Vec::new();
    let mut steps_run = 0;
    let mut stopped_early = false;

    for step in 1..=total_steps {
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
                epoch += 1;
            }
            let idx = order.pop().expect("refilled above");
            let example = match cfg.neg_downsample {
                Some(ratio) => downsample(&examples[idx], ratio, &mut rng),
                None => examples[idx].clone(),
            };
            let loss = model.loss_and_grads(&example, &mut rng, &mut grads)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: loss.total,
                });
            }
            let scale = 1.0 / cfg.batch_size as f64;
            window_loss.total += loss.total * scale;
            window_loss.span += loss.span * scale;
            window_loss.pair += loss.pair * scale;
        }
        if cfg.batch_size > 1 {
            let scale = 1.0 / cfg.batch_size as f64;
            grads.visit_mut(&mut |_, mut g| g.mapv_inplace(|v| v * scale));
        }
        let lr = lr_at(step, &cfg);
        adam.step(&mut model.heads, &grads, lr);
        model.encoder.step(lr)?;
        grads.zero();
        if !model.heads.all_finite() {
            return Err(Error::Diverged {
                step,
                loss: f64::NAN,
            });
        }
        window_steps += 1;
        steps_run = step;

        if step % interval == 0 || step == total_steps {
            let report = evaluate(dev_set, model, EvalMode::Span, false)?;
            let dev_f1 = report.f1(Task::Ecsp).unwrap_or(0.0);
            let improved = best.is_none_or(|(_, b)| dev_f1 > b);
            if improved {
                best = Some((step, dev_f1));
                since_improvement = 0;
                checkpoint = Some(save_checkpoint(model, out_dir, step, dev_f1)?);
            } else {
                since_improvement += 1;
            }
            let n = window_steps.max(1) as f64;
            let entry = LogEntry {
                step,
                epoch,
                lr,
                loss: window_loss.total / n,
                span_loss: window_loss.span / n,
                pair_loss: window_loss.pair / n,
                dev_f1,
                best_dev_f1: best.map_or(dev_f1, |(_, b)| b),
            };
            log::info!(
                "step {step} epoch {epoch} loss {:.5} dev ECSP F1 {:.4}",
                entry.loss,
                dev_f1
            );
            let line = serde_json::to_string(&entry).expect("log entries serialize");
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
            log.push(entry);
            window_loss = LossBreakdown::default();
            window_steps = 0;
            if since_improvement >= cfg.patience_evals {
                stopped_early = true;
                break;
            }
        }
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    let (best_step, best_dev_f1) = best.expect("the final step always evaluates");
    let checkpoint = checkpoint.expect("the first evaluation always saves");
    crate::checkpoint::restore_into(model, out_dir)?;
    Ok(TrainOutcome {
        checkpoint,
        steps_run,
        best_step,
        best_dev_f1,
        evaluations: log.len(),
        stopped_early,
        supervision,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldPair;

    fn doc(pairs: Vec<GoldPair>) -> Document {
        Document {
            doc_id: "t".into(),
            tokens: (0..30).map(|i| format!("w{i}")).collect(),
            clauses: vec![SpanRef::new(0, 9), SpanRef::new(10, 19), SpanRef::new(20, 29)],
            pairs,
        }
    }

    fn gp(e: (usize, usize), c: (usize, usize), cat: &str) -> GoldPair {
        GoldPair {
            emotion: SpanRef::new(e.0, e.1),
            cause: SpanRef::new(c.0, c.1),
            category: cat.into(),
        }
    }

    #[test]
    fn exact_boundary_span_labels() {
        let d = doc(vec![gp((3, 7), (12, 14), "fear")]);
        let cands = [SpanRef::new(3, 7), SpanRef::new(3, 6), SpanRef::new(12, 14)];
        let l = assign_span_labels(&d, &cands);
        assert_eq!(l.labels, vec![SpanType::Emotion, SpanType::None, SpanType::Cause]);
        assert_eq!(l.uncovered, 0);
    }

    #[test]
    fn no_pairs_means_all_none() {
        let d = doc(vec![]);
        let cands = crate::spans::enumerate_spans(30, 5);
        assert!(assign_span_labels(&d, &cands).labels.iter().all(|t| *t == SpanType::None));
        assert!(assign_pair_labels(&d).is_empty());
    }

    #[test]
    fn long_gold_span_is_counted_not_labeled() {
        let d = doc(vec![gp((0, 24), (25, 26), "joy")]);
        let cands = crate::spans::enumerate_spans(30, 20);
        let l = assign_span_labels(&d, &cands);
        assert_eq!(l.uncovered, 1);
        assert!(!l.labels.contains(&SpanType::Emotion));
        assert_eq!(l.labels.iter().filter(|t| **t == SpanType::Cause).count(), 1);
    }

    #[test]
    fn span_in_both_roles_becomes_emotion() {
        let d = doc(vec![gp((1, 2), (5, 6), "joy"), gp((8, 9), (1, 2), "joy")]);
        let l = assign_span_labels(&d, &[SpanRef::new(1, 2)]);
        assert_eq!(l.labels, vec![SpanType::Emotion]);
        assert_eq!(l.conflicts, 1);
    }

    #[test]
    fn pair_labels_cover_the_cartesian_product() {
        let one = assign_pair_labels(&doc(vec![gp((0, 1), (5, 6), "fear")]));
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].1.as_deref(), Some("fear"));

        let two = assign_pair_labels(&doc(vec![gp((0, 1), (5, 6), "fear"), gp((12, 13), (20, 22), "joy")]));
        assert_eq!(two.len(), 4);
        assert_eq!(two.iter().filter(|(_, c)| c.is_some()).count(), 2);
        assert_eq!(two.iter().filter(|(_, c)| c.is_none()).count(), 2);
    }

    #[test]
    fn joint_loss_values() {
        let one_hot = SpanTypeDistribution {
            probs: [1.0, 0.0, 0.0],
        };
        let pair = PairDistribution {
            probs: vec![0.0, 1.0],
        };
        assert_eq!(
            joint_loss(&[(one_hot, SpanType::Emotion)], &[(pair.clone(), 1)], 1.0, 1.0).unwrap(),
            0.0
        );
        let uniform3 = SpanTypeDistribution {
            probs: [1.0 / 3.0; 3],
        };
        let uniform7 = PairDistribution {
            probs: vec![1.0 / 7.0; 7],
        };
        let l = joint_loss(&[(uniform3, SpanType::None)], &[(uniform7, 4)], 1.0, 1.0).unwrap();
        assert!((l - (3f64.ln() + 7f64.ln())).abs() < 1e-12);
        assert!(joint_loss(&[], &[(pair, 2)], 1.0, 1.0).is_err());
        assert_eq!(joint_loss(&[(uniform3, SpanType::Cause)], &[], 1.0, 1.0).unwrap(), 3f64.ln());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            total_steps: Some(1000),
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(100, &cfg), 5e-5);
        assert_eq!(lr_at(1000, &cfg), 0.0);
        assert!((lr_at(50, &cfg) - 2.5e-5).abs() < 1e-18);
        assert!((lr_at(550, &cfg) - 2.5e-5).abs() < 1e-18);
    }
}
