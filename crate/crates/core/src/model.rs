//! The extract-then-classify model: encoder, span-type head and pair head.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CandidateMode, RunConfig};
use crate::corpus::{ClauseSpan, Document, SpanRef};
use crate::encoder::{build_encoder, window_plan, Encoder, TokenEncoding};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax};
use crate::pairing::{
    cartesian_pairs, classify_pair, localized_context, represent_pair, PairCandidate, PairHead,
};
use crate::params::Parameterized;
use crate::spans::{
    classify_span, iter_spans, represent_span, represent_span_clamped, select_spans, span_logits,
    CandidateSpan, SpanHead, SpanRepresentation, SpanType, SpanTypeDistribution,
};
use crate::training::TrainingExample;

/// Highest-probability spans of each type kept for pairing. Bounds the
/// Cartesian product for poorly trained models.
pub const MAX_SPANS_PER_TYPE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedPair {
    pub emotion: SpanRef,
    pub cause: SpanRef,
    pub category: String,
    pub score: f64,
}

/// Everything a model proposes for one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prediction {
    pub emotions: Vec<SpanRef>,
    pub causes: Vec<SpanRef>,
    pub pairs: Vec<ExtractedPair>,
}

/// Anything that can propose emotion spans, cause spans and categorized pairs.
pub trait Extractor {
    fn predict(&self, document: &Document) -> Result<Prediction>;

    /// Prediction with the emotion spans supplied instead of extracted.
    fn predict_with_emotions(&self, document: &Document, emotions: &[SpanRef]) -> Result<Prediction>;
}

/// Both heads as one parameter group (`span.*`, `pair.*`). Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub span: SpanHead,
    pub pair: PairHead,
}

impl Heads {
    pub fn zeros_like(&self) -> Heads {
        Heads {
            span: self.span.zeros_like(),
            pair: self.pair.zeros_like(),
        }
    }
}

impl Parameterized for Heads {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        self.span.visit(&mut |n, t| f(&format!("span.{n}"), t));
        self.pair.visit(&mut |n, t| f(&format!("pair.{n}"), t));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        self.span.visit_mut(&mut |n, t| f(&format!("span.{n}"), t));
        self.pair.visit_mut(&mut |n, t| f(&format!("pair.{n}"), t));
    }
}

/// Unweighted mean cross-entropies and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub span: f64,
    pub pair: f64,
}

pub struct EtcModel {
    pub config: RunConfig,
    pub categories: Vec<String>,
    pub encoder: Box<dyn Encoder>,
    pub heads: Heads,
}

impl std::fmt::Debug for EtcModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EtcModel")
            .field("encoder", &self.encoder.id())
            .field("categories", &self.categories)
            .finish_non_exhaustive()
    }
}

struct GradSink<'a> {
    heads: &'a mut Heads,
    hidden: Array2<f64>,
    global: Array1<f64>,
}

impl EtcModel {
    /// Builds the encoder from `config.encoder` and randomly initialized heads.
    pub fn new(config: RunConfig, categories: Vec<String>) -> Result<Self> {
        let encoder = build_encoder(&config.encoder, config.train.seed, config.train.dropout)?;
        Self::with_encoder(config, categories, encoder)
    }

    pub fn with_encoder(
        config: RunConfig,
        categories: Vec<String>,
        encoder: Box<dyn Encoder>,
    ) -> Result<Self> {
        config.validate_model()?;
        if categories.is_empty() {
            return Err(Error::Config("the category vocabulary is empty".into()));
        }
        let d = encoder.hidden_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x4ead_5eed);
        let span = SpanHead::new(d, config.span.max_len, config.span.phi_dim, &mut rng);
        let pair = PairHead::new(
            d,
            config.span.phi_dim,
            config.pair.psi_dim,
            config.pair.dist_buckets,
            categories.len(),
            &mut rng,
        );
        Ok(Self {
            config,
            categories,
            encoder,
            heads: Heads { span, pair },
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    /// Index of the `none` pair label.
    pub fn none_label(&self) -> usize {
        self.categories.len()
    }

    /// Candidate spans for a window of `n` tokens whose clauses are `clauses`
    /// (window-local offsets).
    pub fn candidates(&self, n: usize, clauses: &[ClauseSpan]) -> Vec<CandidateSpan> {
        match self.config.span.candidates {
            CandidateMode::Spans => iter_spans(n, self.config.span.max_len).collect(),
            CandidateMode::Clauses => clauses.to_vec(),
        }
    }

    fn represent(&self, span: CandidateSpan, encoding: &TokenEncoding) -> Result<SpanRepresentation> {
        match self.config.span.candidates {
            CandidateMode::Spans => represent_span(span, encoding, &self.heads.span),
            CandidateMode::Clauses => represent_span_clamped(span, encoding, &self.heads.span),
        }
    }

    fn lc_dim(&self) -> usize {
        2 * self.hidden_dim() + self.heads.pair.psi_dim()
    }

    /// Classifies every candidate of an encoded window.
    pub fn span_distributions(
        &self,
        encoding: &TokenEncoding,
        candidates: &[CandidateSpan],
    ) -> Result<Vec<(CandidateSpan, SpanTypeDistribution)>> {
        candidates
            .iter()
            .map(|&span| {
                let rep = self.represent(span, encoding)?;
                Ok((span, classify_span(&rep, &self.heads.span)?))
            })
            .collect()
    }

    fn keep_most_likely(
        dists: &[(CandidateSpan, SpanTypeDistribution)],
        spans: Vec<CandidateSpan>,
        ty: SpanType,
    ) -> Vec<CandidateSpan> {
        if spans.len() <= MAX_SPANS_PER_TYPE {
            return spans;
        }
        let mut scored: Vec<(f64, CandidateSpan)> = dists
            .iter()
            .filter(|(_, d)| d.predicted() == ty)
            .map(|(s, d)| (d.prob(ty), *s))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<CandidateSpan> =
            scored.into_iter().take(MAX_SPANS_PER_TYPE).map(|(_, s)| s).collect();
        kept.sort();
        kept
    }

    /// Runs the pipeline on one window. `forced_emotions` replaces the
    /// extracted emotion spans when given.
    fn predict_window(
        &self,
        tokens: &[String],
        clauses: &[ClauseSpan],
        forced_emotions: Option<&[SpanRef]>,
    ) -> Result<Prediction> {
        let encoding = self.encoder.encode(tokens)?;
        let candidates = self.candidates(tokens.len(), clauses);
        let dists = self.span_distributions(&encoding, &candidates)?;
        let (emotions, causes) = select_spans(&dists);
        let emotions = match forced_emotions {
            Some(given) => given.to_vec(),
            None => Self::keep_most_likely(&dists, emotions, SpanType::Emotion),
        };
        let causes = Self::keep_most_likely(&dists, causes, SpanType::Cause);

        let mut pairs = Vec::new();
        for candidate in cartesian_pairs(&emotions, &causes) {
            let dist = self.classify_candidate_pair(&candidate, &encoding)?;
            let label = dist.predicted();
            if label == self.none_label() {
                continue;
            }
            pairs.push(ExtractedPair {
                emotion: candidate.emotion,
                cause: candidate.cause,
                category: self.categories[label].clone(),
                score: dist.probs[label],
            });
        }
        Ok(Prediction {
            emotions,
            causes,
            pairs,
        })
    }

    pub fn classify_candidate_pair(
        &self,
        pair: &PairCandidate,
        encoding: &TokenEncoding,
    ) -> Result<crate::pairing::PairDistribution> {
        let ge = self.represent(pair.emotion, encoding)?;
        let gc = self.represent(pair.cause, encoding)?;
        let lc = self
            .config
            .pair
            .use_localized_context
            .then(|| localized_context(pair, encoding, &self.heads.pair));
        let rep = represent_pair(&ge, &gc, lc.as_ref(), self.lc_dim());
        classify_pair(&rep, &self.heads.pair)
    }

    fn predict_document(&self, document: &Document, forced: Option<&[SpanRef]>) -> Result<Prediction> {
        // Clause candidates: supplied spans stand for the clauses they overlap.
        let clause_forced: Option<Vec<SpanRef>> = match (forced, self.config.span.candidates) {
            (Some(spans), CandidateMode::Clauses) => Some(
                document
                    .clauses
                    .iter()
                    .filter(|c| spans.iter().any(|s| c.overlaps(s)))
                    .copied()
                    .collect(),
            ),
            _ => None,
        };
        let forced = clause_forced.as_deref().or(forced);
        let mut out = Prediction::default();
        for window in window_plan(document, self.encoder.max_tokens())? {
            let offset = window.tokens.start;
            let tokens = &document.tokens[window.tokens.start..=window.tokens.end];
            let clauses: Vec<ClauseSpan> = document.clauses[window.clauses.clone()]
                .iter()
                .map(|c| SpanRef::new(c.start - offset, c.end - offset))
                .collect();
            let local_forced: Option<Vec<SpanRef>> = forced.map(|spans| {
                spans
                    .iter()
                    .filter(|s| window.contains(s))
                    .map(|s| SpanRef::new(s.start - offset, s.end - offset))
                    .collect()
            });
            let p = self.predict_window(tokens, &clauses, local_forced.as_deref())?;
            out.emotions.extend(p.emotions.iter().map(|s| s.shifted(offset)));
            out.causes.extend(p.causes.iter().map(|s| s.shifted(offset)));
            out.pairs.extend(p.pairs.into_iter().map(|mut pair| {
                pair.emotion = pair.emotion.shifted(offset);
                pair.cause = pair.cause.shifted(offset);
                pair
            }));
        }
        out.pairs.sort_by(|a, b| {
            (a.emotion.start, a.cause.start, a.emotion.end, a.cause.end).cmp(&(
                b.emotion.start,
                b.cause.start,
                b.emotion.end,
                b.cause.end,
            ))
        });
        Ok(out)
    }

    /// Full pipeline on one document: pairs whose predicted label is not
    /// `none`, sorted by `(emotion.start, cause.start)`.
    pub fn extract_pairs(&self, document: &Document) -> Result<Vec<ExtractedPair>> {
        Ok(self.predict_document(document, None)?.pairs)
    }

    /// Joint loss of one training example with the encoder in evaluation mode.
    pub fn loss(&self, example: &TrainingExample) -> Result<LossBreakdown> {
        let encoding = self.encoder.encode(&example.tokens)?;
        self.heads_loss(example, &encoding, None)
    }

    /// Training-mode forward and backward. Head gradients are added to
    /// `grads`; encoder gradients are accumulated inside the encoder.
    pub fn loss_and_grads(
        &mut self,
        example: &TrainingExample,
        rng: &mut ChaCha8Rng,
        grads: &mut Heads,
    ) -> Result<LossBreakdown> {
        let encoding = self.encoder.forward_train(&example.tokens, rng)?;
        let mut sink = GradSink {
            heads: grads,
            hidden: Array2::zeros(encoding.hidden.raw_dim()),
            global: Array1::zeros(encoding.global.raw_dim()),
        };
        let loss = self.heads_loss(example, &encoding, Some(&mut sink))?;
        let (hidden, global) = (sink.hidden, sink.global);
        self.encoder.backward(&hidden, &global)?;
        Ok(loss)
    }

    fn heads_loss(
        &self,
        example: &TrainingExample,
        encoding: &TokenEncoding,
        mut sink: Option<&mut GradSink<'_>>,
    ) -> Result<LossBreakdown> {
        let weights = (
            self.config.train.span_loss_weight,
            self.config.train.pair_loss_weight,
        );
        let mut span_loss = 0.0;
        let n_spans = example.spans.len();
        for (span, label) in &example.spans {
            let rep = self.represent(*span, encoding)?;
            let probs = softmax(span_logits(&rep, &self.heads.span)?.view());
            let y = label.index();
            span_loss += cross_entropy(probs.as_slice().expect("contiguous"), y) / n_spans as f64;
            if let Some(sink) = sink.as_deref_mut() {
                let mut dlogits = probs;
                dlogits[y] -= 1.0;
                dlogits *= weights.0 / n_spans as f64;
                let dg = self.heads.span.weight.dot(&dlogits);
                accumulate_linear(&mut sink.heads.span.weight, &mut sink.heads.span.bias, rep.g.view(), &dlogits);
                self.backprop_span_rep(*span, &rep, dg.view(), sink);
            }
        }

        let mut pair_loss = 0.0;
        let n_pairs = example.pairs.len();
        let g_dim = self.heads.span.input_dim();
        for (pair, label) in &example.pairs {
            if *label >= self.heads.pair.num_labels() {
                return Err(Error::UnknownLabel(label.to_string()));
            }
            let ge = self.represent(pair.emotion, encoding)?;
            let gc = self.represent(pair.cause, encoding)?;
            let lc = self
                .config
                .pair
                .use_localized_context
                .then(|| localized_context(pair, encoding, &self.heads.pair));
            let rep = represent_pair(&ge, &gc, lc.as_ref(), self.lc_dim());
            let probs = softmax(crate::pairing::pair_logits(&rep, &self.heads.pair)?.view());
            pair_loss += cross_entropy(probs.as_slice().expect("contiguous"), *label) / n_pairs as f64;
            if let Some(sink) = sink.as_deref_mut() {
                let mut dlogits = probs;
                dlogits[*label] -= 1.0;
                dlogits *= weights.1 / n_pairs as f64;
                let dp = self.heads.pair.weight.dot(&dlogits);
                accumulate_linear(&mut sink.heads.pair.weight, &mut sink.heads.pair.bias, rep.p.view(), &dlogits);
                self.backprop_span_rep(pair.emotion, &ge, dp.slice(s![0..g_dim]), sink);
                self.backprop_span_rep(pair.cause, &gc, dp.slice(s![g_dim..2 * g_dim]), sink);
                if let Some(lc) = &lc {
                    let d = self.hidden_dim();
                    let dlc = dp.slice(s![2 * g_dim..]);
                    if let Some(range) = lc.range {
                        let dsum = dlc.slice(s![0..d]);
                        for t in range.start..=range.end {
                            sink.hidden.row_mut(t).scaled_add(1.0, &dsum);
                        }
                        for (k, &row) in lc.argmax.iter().enumerate() {
                            sink.hidden[[row, k]] += dlc[d + k];
                        }
                    }
                    sink.heads
                        .pair
                        .distance_table
                        .row_mut(lc.distance)
                        .scaled_add(1.0, &dlc.slice(s![2 * d..]));
                }
            }
        }

        Ok(LossBreakdown {
            total: weights.0 * span_loss + weights.1 * pair_loss,
            span: span_loss,
            pair: pair_loss,
        })
    }

    fn backprop_span_rep(
        &self,
        span: CandidateSpan,
        rep: &SpanRepresentation,
        dg: ArrayView1<'_, f64>,
        sink: &mut GradSink<'_>,
    ) {
        let d = self.hidden_dim();
        sink.global.scaled_add(1.0, &dg.slice(s![0..d]));
        let dsum = dg.slice(s![d..2 * d]);
        for t in span.start..=span.end {
            sink.hidden.row_mut(t).scaled_add(1.0, &dsum);
        }
        for (k, &row) in rep.argmax.iter().enumerate() {
            sink.hidden[[row, k]] += dg[2 * d + k];
        }
        sink.heads
            .span
            .length_table
            .row_mut(rep.length_row)
            .scaled_add(1.0, &dg.slice(s![3 * d..]));
    }
}

/// `weight += x ⊗ dlogits`, `bias += dlogits`.
fn accumulate_linear(
    weight: &mut Array2<f64>,
    bias: &mut Array1<f64>,
    x: ArrayView1<'_, f64>,
    dlogits: &Array1<f64>,
) {
    for (mut row, &xi) in weight.axis_iter_mut(Axis(0)).zip(x.iter()) {
        if xi != 0.0 {
            row.scaled_add(xi, dlogits);
        }
    }
    *bias += dlogits;
}

impl Extractor for EtcModel {
    fn predict(&self, document: &Document) -> Result<Prediction> {
        self.predict_document(document, None)
    }

    fn predict_with_emotions(&self, document: &Document, emotions: &[SpanRef]) -> Result<Prediction> {
        self.predict_document(document, Some(emotions))
    }
}

/// Echoes the gold annotation; useful as an upper bound and in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldEcho;

impl Extractor for GoldEcho {
    fn predict(&self, document: &Document) -> Result<Prediction> {
        Ok(Prediction {
            emotions: document.emotion_spans(),
            causes: document.cause_spans(),
            pairs: document
                .pairs
                .iter()
                .map(|p| ExtractedPair {
                    emotion: p.emotion,
                    cause: p.cause,
                    category: p.category.clone(),
                    score: 1.0,
                })
                .collect(),
        })
    }

    fn predict_with_emotions(&self, document: &Document, emotions: &[SpanRef]) -> Result<Prediction> {
        let given: BTreeSet<SpanRef> = emotions.iter().copied().collect();
        let mut p = self.predict(document)?;
        p.emotions = given.iter().copied().collect();
        p.pairs.retain(|pair| given.contains(&pair.emotion));
        Ok(p)
    }
}

/// Predicts nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyExtractor;

impl Extractor for EmptyExtractor {
    fn predict(&self, _document: &Document) -> Result<Prediction> {
        Ok(Prediction::default())
    }

    fn predict_with_emotions(&self, _document: &Document, emotions: &[SpanRef]) -> Result<Prediction> {
        Ok(Prediction {
            emotions: emotions.to_vec(),
            ..Prediction::default()
        })
    }
}
