//! Oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ecsp::evaluation::MatchCounts;
use ecsp::model::Heads;
use ecsp::params::Parameterized;
use ecsp::training::TrainingExample;
use ecsp::EtcModel;
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- matching

/// Double-loop matcher: de-duplicate each side by pairwise comparison, then
/// greedily match every prediction to an unused equal gold item.
pub fn brute_force_match<T: PartialEq>(gold: &[T], predicted: &[T]) -> MatchCounts {
    let dedup = |items: &[T]| -> Vec<usize> {
        let mut keep = Vec::new();
        for i in 0..items.len() {
            if !(0..i).any(|j| items[j] == items[i]) {
                keep.push(i);
            }
        }
        keep
    };
    let g = dedup(gold);
    let p = dedup(predicted);
    let mut used = vec![false; g.len()];
    let mut correct = 0;
    for &pi in &p {
        for (k, &gi) in g.iter().enumerate() {
            if !used[k] && gold[gi] == predicted[pi] {
                used[k] = true;
                correct += 1;
                break;
            }
        }
    }
    MatchCounts {
        proposed: p.len(),
        annotated: g.len(),
        correct,
    }
}

// ---------------------------------------------------------------- counting

/// Corpus counts computed straight from the JSON lines.
#[derive(Debug, Default, PartialEq)]
pub struct OracleCounts {
    pub documents: usize,
    pub clauses: usize,
    pub annotations: usize,
    pub up_to: BTreeMap<usize, usize>,
    pub cause_docs: BTreeMap<usize, usize>,
}

pub fn count_jsonl(text: &str, lengths: &[usize]) -> OracleCounts {
    let mut out = OracleCounts::default();
    let mut all_lengths = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        out.documents += 1;
        out.clauses += v["clauses"].as_array().unwrap().len();
        let span = |s: &serde_json::Value| (s["start"].as_u64().unwrap(), s["end"].as_u64().unwrap());
        let mut emotions = BTreeSet::new();
        let mut causes = BTreeSet::new();
        for p in v["pairs"].as_array().into_iter().flatten() {
            emotions.insert(span(&p["emotion"]));
            causes.insert(span(&p["cause"]));
        }
        *out.cause_docs.entry(causes.len()).or_default() += 1;
        for (s, e) in emotions.iter().chain(&causes) {
            all_lengths.push((e - s + 1) as usize);
        }
    }
    out.annotations = all_lengths.len();
    for &l in lengths {
        out.up_to.insert(l, all_lengths.iter().filter(|&&x| x <= l).count());
    }
    out
}

// ---------------------------------------------------------------- gradients

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Differences below this are finite-difference round-off, whatever the ratio.
pub const ABS_FLOOR: f64 = 1e-8;

fn flat_by_name(params: &dyn Parameterized) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    params.visit(&mut |name, t| out.push((name.to_string(), t.iter().copied().collect())));
    out
}

fn nudge(params: &mut dyn Parameterized, tensor: &str, index: usize, delta: f64) {
    params.visit_mut(&mut |name, mut t| {
        if name == tensor {
            *t.iter_mut().nth(index).unwrap() += delta;
        }
    });
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensors with at least one probed entry.
    pub tensors: BTreeSet<String>,
    pub failures: Vec<String>,
}

impl GradReport {
    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.checked += 1;
        self.tensors.insert(tensor.to_string());
        if analytic.abs().max(numeric.abs()) >= ABS_FLOOR {
            self.max_rel_error = self.max_rel_error.max(rel);
        }
        if diff >= ABS_FLOOR && rel > REL_TOL {
            self.failures
                .push(format!("{tensor}[{index}]: analytic {analytic:e} vs numeric {numeric:e}"));
        }
    }
}

/// Samples up to `per_tensor` entries with nonzero analytic gradient (and a
/// few zero ones) from every tensor.
fn probes(grads: &[(String, Vec<f64>)], per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, g) in grads {
        let nonzero = (0..g.len()).filter(|&i| g[i] != 0.0).choose_multiple(rng, per_tensor);
        let zero = (0..g.len()).filter(|&i| g[i] == 0.0).choose_multiple(rng, per_tensor / 4);
        out.extend(nonzero.into_iter().chain(zero).map(|i| (name.clone(), i)));
    }
    out
}

/// Central differences of the joint loss against the head gradients
/// (span head, pair head, length and distance tables) and, when exposed,
/// the encoder gradients. Dropout must be 0.
pub fn check_gradients(model: &mut EtcModel, example: &TrainingExample, per_tensor: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let mut grads: Heads = model.heads.zeros_like();
    model.encoder.zero_grad();
    model
        .loss_and_grads(example, &mut ChaCha8Rng::seed_from_u64(0), &mut grads)
        .unwrap();
    let head_grads = flat_by_name(&grads);
    let encoder_grads = model
        .encoder
        .trainable()
        .then(|| model.encoder.grads().map(flat_by_name))
        .flatten();
    model.encoder.zero_grad();

    for (tensor, i) in probes(&head_grads, per_tensor, &mut rng) {
        let analytic = head_grads.iter().find(|(n, _)| *n == tensor).unwrap().1[i];
        nudge(&mut model.heads, &tensor, i, EPS);
        let up = model.loss(example).unwrap().total;
        nudge(&mut model.heads, &tensor, i, -2.0 * EPS);
        let down = model.loss(example).unwrap().total;
        nudge(&mut model.heads, &tensor, i, EPS);
        report.record(&tensor, i, analytic, (up - down) / (2.0 * EPS));
    }
    if let Some(encoder_grads) = encoder_grads {
        for (tensor, i) in probes(&encoder_grads, per_tensor / 2, &mut rng) {
            let analytic = encoder_grads.iter().find(|(n, _)| *n == tensor).unwrap().1[i];
            let at = |model: &mut EtcModel, delta: f64| {
                nudge(model.encoder.params_mut().unwrap(), &tensor, i, delta);
                model.loss(example).unwrap().total
            };
            let up = at(model, EPS);
            let down = at(model, -2.0 * EPS);
            at(model, EPS);
            report.record(&format!("encoder.{tensor}"), i, analytic, (up - down) / (2.0 * EPS));
        }
    }
    report
}
