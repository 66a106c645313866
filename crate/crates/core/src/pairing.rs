//! Emotion-cause pairing: Cartesian candidates, localized context and the pair classifier.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::corpus::SpanRef;
use crate::encoder::TokenEncoding;
use crate::error::{Error, Result};
use crate::nn::{normal_matrix, softmax, sum_max_pool};
use crate::params::Parameterized;
use crate::spans::{CandidateSpan, SpanRepresentation};

/// The pair label used for rejected pairings.
pub const NONE_LABEL: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairCandidate {
    pub emotion: CandidateSpan,
    pub cause: CandidateSpan,
}

/// All `(e, c)` combinations, emotion-major.
pub fn cartesian_pairs(emotions: &[CandidateSpan], causes: &[CandidateSpan]) -> Vec<PairCandidate> {
    emotions
        .iter()
        .flat_map(|&emotion| causes.iter().map(move |&cause| PairCandidate { emotion, cause }))
        .collect()
}

/// Tokens strictly between two spans and the gap length, independent of
/// which span is the emotion. Overlapping or adjacent spans have no
/// between-range and distance 0.
pub fn between(a: SpanRef, b: SpanRef) -> (Option<SpanRef>, usize) {
    let (first, second) = if (a.start, a.end) <= (b.start, b.end) {
        (a, b)
    } else {
        (b, a)
    };
    if second.start <= first.end + 1 {
        (None, 0)
    } else {
        let range = SpanRef::new(first.end + 1, second.start - 1);
        (Some(range), range.len())
    }
}

/// Pair classifier over `categories ∪ {none}` plus the distance embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHead {
    /// `(8d + 2 phi_dim + psi_dim, K + 1)`; the last column is `none`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// `(dist_buckets, psi_dim)`
    pub distance_table: Array2<f64>,
}

impl PairHead {
    pub fn input_dim_for(hidden_dim: usize, phi_dim: usize, psi_dim: usize) -> usize {
        8 * hidden_dim + 2 * phi_dim + psi_dim
    }

    pub fn new<R: Rng>(
        hidden_dim: usize,
        phi_dim: usize,
        psi_dim: usize,
        dist_buckets: usize,
        num_categories: usize,
        rng: &mut R,
    ) -> Self {
        let input = Self::input_dim_for(hidden_dim, phi_dim, psi_dim);
        Self {
            weight: normal_matrix(input, num_categories + 1, 0.02, rng),
            bias: Array1::zeros(num_categories + 1),
            distance_table: normal_matrix(dist_buckets, psi_dim, 0.02, rng),
        }
    }

    pub fn zeros(
        hidden_dim: usize,
        phi_dim: usize,
        psi_dim: usize,
        dist_buckets: usize,
        num_categories: usize,
    ) -> Self {
        Self {
            weight: Array2::zeros((
                Self::input_dim_for(hidden_dim, phi_dim, psi_dim),
                num_categories + 1,
            )),
            bias: Array1::zeros(num_categories + 1),
            distance_table: Array2::zeros((dist_buckets, psi_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            distance_table: Array2::zeros(self.distance_table.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.weight.ncols()
    }

    pub fn none_index(&self) -> usize {
        self.num_labels() - 1
    }

    pub fn psi_dim(&self) -> usize {
        self.distance_table.ncols()
    }

    pub fn dist_buckets(&self) -> usize {
        self.distance_table.nrows()
    }
}

impl Parameterized for PairHead {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        f("weight", self.weight.view().into_dyn());
        f("bias", self.bias.view().into_dyn());
        f("distance_table", self.distance_table.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        f("weight", self.weight.view_mut().into_dyn());
        f("bias", self.bias.view_mut().into_dyn());
        f("distance_table", self.distance_table.view_mut().into_dyn());
    }
}

/// `[sum of between rows; max of between rows; distance embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedContext {
    pub features: Array1<f64>,
    pub range: Option<SpanRef>,
    /// Clamped distance, also the distance-table row.
    pub distance: usize,
    pub(crate) argmax: Vec<usize>,
}

impl LocalizedContext {
    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

pub fn localized_context(
    pair: &PairCandidate,
    encoding: &TokenEncoding,
    head: &PairHead,
) -> LocalizedContext {
    let d = encoding.dim();
    let (range, gap) = between(pair.emotion, pair.cause);
    let distance = gap.min(head.dist_buckets() - 1);
    let (sum, max, argmax) = match range {
        Some(r) => sum_max_pool(encoding.hidden.view(), r.start, r.end),
        None => (Array1::zeros(d), Array1::zeros(d), Vec::new()),
    };
    let mut features = Array1::zeros(2 * d + head.psi_dim());
    features.slice_mut(s![0..d]).assign(&sum);
    features.slice_mut(s![d..2 * d]).assign(&max);
    features
        .slice_mut(s![2 * d..])
        .assign(&head.distance_table.row(distance));
    LocalizedContext {
        features,
        range,
        distance,
        argmax,
    }
}

/// `p = [g_emotion; g_cause; LC]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRepresentation {
    pub p: Array1<f64>,
}

impl PairRepresentation {
    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

/// Concatenates the two span representations with the localized context;
/// `None` stands for the ablated (all-zero) context of width `lc_dim`.
pub fn represent_pair(
    emotion: &SpanRepresentation,
    cause: &SpanRepresentation,
    context: Option<&LocalizedContext>,
    lc_dim: usize,
) -> PairRepresentation {
    let g = emotion.dim();
    let mut p = Array1::zeros(2 * g + lc_dim);
    p.slice_mut(s![0..g]).assign(&emotion.g);
    p.slice_mut(s![g..2 * g]).assign(&cause.g);
    if let Some(lc) = context {
        p.slice_mut(s![2 * g..]).assign(&lc.features);
    }
    PairRepresentation { p }
}

/// Probabilities over the category vocabulary followed by `none`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    pub probs: Vec<f64>,
}

impl PairDistribution {
    pub fn none_index(&self) -> usize {
        self.probs.len() - 1
    }

    /// Predicted label index. An exact tie that involves `none` resolves to
    /// `none`; other ties resolve to the earliest category.
    pub fn predicted(&self) -> usize {
        let best = crate::nn::argmax(&self.probs);
        if self.probs[self.none_index()] >= self.probs[best] {
            self.none_index()
        } else {
            best
        }
    }

    pub fn score(&self) -> f64 {
        self.probs[self.predicted()]
    }
}

pub fn pair_logits(rep: &PairRepresentation, head: &PairHead) -> Result<Array1<f64>> {
    if rep.dim() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: head.input_dim(),
            found: rep.dim(),
        });
    }
    Ok(rep.p.dot(&head.weight) + &head.bias)
}

pub fn classify_pair(rep: &PairRepresentation, head: &PairHead) -> Result<PairDistribution> {
    Ok(PairDistribution {
        probs: softmax(pair_logits(rep, head)?.view()).to_vec(),
    })
}
