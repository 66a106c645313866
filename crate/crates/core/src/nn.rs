//! Small numeric helpers shared by the heads.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

/// Cross-entropy of `probs` against the class `label`, floored to avoid `ln 0`.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

/// Index of the largest value; on exact ties the earlier index wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sum and max pooling over rows `start..=end` of `hidden`, with the row that
/// produced each max. An empty range (`start > end`) yields zero vectors.
pub fn sum_max_pool(
    hidden: ArrayView2<'_, f64>,
    start: usize,
    end: usize,
) -> (Array1<f64>, Array1<f64>, Vec<usize>) {
    let d = hidden.ncols();
    if start > end {
        return (Array1::zeros(d), Array1::zeros(d), Vec::new());
    }
    let mut sum = hidden.row(start).to_owned();
    let mut max = sum.clone();
    let mut argmax = vec![start; d];
    for t in start + 1..=end {
        let row = hidden.row(t);
        sum += &row;
        for k in 0..d {
            if row[k] > max[k] {
                max[k] = row[k];
                argmax[k] = t;
            }
        }
    }
    (sum, max, argmax)
}

pub(crate) fn normal_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}
