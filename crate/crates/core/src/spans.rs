//! Candidate span enumeration, span representations and the span-type classifier.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SpanRef;
use crate::encoder::TokenEncoding;
use crate::error::{Error, Result};
use crate::nn::{normal_matrix, softmax, sum_max_pool};
use crate::params::Parameterized;

/// A candidate is an inclusive token range; its length is `end - start + 1`.
pub type CandidateSpan = SpanRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanType {
    Emotion,
    Cause,
    None,
}

impl SpanType {
    /// Classifier output order. Ties resolve to the earlier entry.
    pub const ALL: [SpanType; 3] = [SpanType::Emotion, SpanType::Cause, SpanType::None];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Spans of length `1..=max_len` over `n` tokens, ordered by `(start, end)`.
pub fn iter_spans(n: usize, max_len: usize) -> impl Iterator<Item = CandidateSpan> {
    (0..n).flat_map(move |start| {
        let last = (start + max_len).min(n);
        (start..last).map(move |end| SpanRef::new(start, end))
    })
}

pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<CandidateSpan> {
    iter_spans(n, max_len).collect()
}

/// Shared span-type classifier plus the span-length embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanHead {
    /// `(3d + phi_dim, 3)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Row `l - 1` embeds span length `l`; shape `(max_len, phi_dim)`.
    pub length_table: Array2<f64>,
}

impl SpanHead {
    pub fn new<R: Rng>(hidden_dim: usize, max_len: usize, phi_dim: usize, rng: &mut R) -> Self {
        let input = 3 * hidden_dim + phi_dim;
        Self {
            weight: normal_matrix(input, SpanType::ALL.len(), 0.02, rng),
            bias: Array1::zeros(SpanType::ALL.len()),
            length_table: normal_matrix(max_len, phi_dim, 0.02, rng),
        }
    }

    pub fn zeros(hidden_dim: usize, max_len: usize, phi_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((3 * hidden_dim + phi_dim, SpanType::ALL.len())),
            bias: Array1::zeros(SpanType::ALL.len()),
            length_table: Array2::zeros((max_len, phi_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            length_table: Array2::zeros(self.length_table.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn phi_dim(&self) -> usize {
        self.length_table.ncols()
    }

    pub fn max_len(&self) -> usize {
        self.length_table.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        (self.input_dim() - self.phi_dim()) / 3
    }
}

impl Parameterized for SpanHead {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        f("weight", self.weight.view().into_dyn());
        f("bias", self.bias.view().into_dyn());
        f("length_table", self.length_table.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        f("weight", self.weight.view_mut().into_dyn());
        f("bias", self.bias.view_mut().into_dyn());
        f("length_table", self.length_table.view_mut().into_dyn());
    }
}

/// `g = [global; sum of rows; max of rows; length embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepresentation {
    pub g: Array1<f64>,
    /// Token row that supplied each max-pooled component.
    pub(crate) argmax: Vec<usize>,
    /// Row of the length table used.
    pub(crate) length_row: usize,
}

impl SpanRepresentation {
    pub fn dim(&self) -> usize {
        self.g.len()
    }
}

/// Builds the span representation. Fails when the span is longer than the
/// length table or falls outside the encoding.
pub fn represent_span(
    span: CandidateSpan,
    encoding: &TokenEncoding,
    head: &SpanHead,
) -> Result<SpanRepresentation> {
    if span.len() > head.max_len() {
        return Err(Error::SpanTooLong {
            length: span.len(),
            max_len: head.max_len(),
        });
    }
    represent_with_length_row(span, encoding, head, span.len() - 1)
}

/// Like [`represent_span`] but clamps the length index to the table, for
/// candidates (such as whole clauses) that may exceed it.
pub fn represent_span_clamped(
    span: CandidateSpan,
    encoding: &TokenEncoding,
    head: &SpanHead,
) -> Result<SpanRepresentation> {
    let row = span.len().min(head.max_len()) - 1;
    represent_with_length_row(span, encoding, head, row)
}

fn represent_with_length_row(
    span: CandidateSpan,
    encoding: &TokenEncoding,
    head: &SpanHead,
    length_row: usize,
) -> Result<SpanRepresentation> {
    let d = encoding.dim();
    if span.start > span.end || span.end >= encoding.len() {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: encoding.len(),
        });
    }
    if 3 * d + head.phi_dim() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: head.input_dim(),
            found: 3 * d + head.phi_dim(),
        });
    }
    let (sum, max, argmax) = sum_max_pool(encoding.hidden.view(), span.start, span.end);
    let mut g = Array1::zeros(head.input_dim());
    g.slice_mut(s![0..d]).assign(&encoding.global);
    g.slice_mut(s![d..2 * d]).assign(&sum);
    g.slice_mut(s![2 * d..3 * d]).assign(&max);
    g.slice_mut(s![3 * d..]).assign(&head.length_table.row(length_row));
    Ok(SpanRepresentation {
        g,
        argmax,
        length_row,
    })
}

/// Probabilities over `(emotion, cause, none)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanTypeDistribution {
    pub probs: [f64; 3],
}

impl SpanTypeDistribution {
    pub fn prob(&self, ty: SpanType) -> f64 {
        self.probs[ty.index()]
    }

    /// Highest-probability type; exact ties resolve emotion > cause > none.
    pub fn predicted(&self) -> SpanType {
        SpanType::ALL[crate::nn::argmax(&self.probs)]
    }
}

pub fn span_logits(rep: &SpanRepresentation, head: &SpanHead) -> Result<Array1<f64>> {
    if rep.dim() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: head.input_dim(),
            found: rep.dim(),
        });
    }
    Ok(rep.g.dot(&head.weight) + &head.bias)
}

pub fn classify_span(rep: &SpanRepresentation, head: &SpanHead) -> Result<SpanTypeDistribution> {
    let p = softmax(span_logits(rep, head)?.view());
    Ok(SpanTypeDistribution {
        probs: [p[0], p[1], p[2]],
    })
}

/// Splits candidates into predicted emotion spans and cause spans, keeping
/// candidate order. Spans predicted `none` are dropped.
pub fn select_spans(
    candidates: &[(CandidateSpan, SpanTypeDistribution)],
) -> (Vec<CandidateSpan>, Vec<CandidateSpan>) {
    let mut emotions = Vec::new();
    let mut causes = Vec::new();
    for (span, dist) in candidates {
        match dist.predicted() {
            SpanType::Emotion => emotions.push(*span),
            SpanType::Cause => causes.push(*span),
            SpanType::None => {}
        }
    }
    (emotions, causes)
}
