use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{Encoder, TokenEncoding};
use crate::error::{Error, Result};
use crate::params::{read_safetensors, restore_group, save_safetensors, Adam, Parameterized};

const BOUNDARY: &str = "\u{0}<boundary>";
const FILE: &str = "encoder.safetensors";

#[derive(Debug, Clone)]
pub struct ToyParams {
    /// `(3d, d)`: reads the previous, current and next token embeddings.
    pub token_weight: Array2<f64>,
    pub token_bias: Array1<f64>,
    /// `(d, d)`
    pub global_weight: Array2<f64>,
    pub global_bias: Array1<f64>,
}

impl ToyParams {
    fn zeros(d: usize) -> Self {
        Self {
            token_weight: Array2::zeros((3 * d, d)),
            token_bias: Array1::zeros(d),
            global_weight: Array2::zeros((d, d)),
            global_bias: Array1::zeros(d),
        }
    }
}

impl Parameterized for ToyParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        f("token_weight", self.token_weight.view().into_dyn());
        f("token_bias", self.token_bias.view().into_dyn());
        f("global_weight", self.global_weight.view().into_dyn());
        f("global_bias", self.global_bias.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        f("token_weight", self.token_weight.view_mut().into_dyn());
        f("token_bias", self.token_bias.view_mut().into_dyn());
        f("global_weight", self.global_weight.view_mut().into_dyn());
        f("global_bias", self.global_bias.view_mut().into_dyn());
    }
}

struct Cache {
    inputs: Array2<f64>,
    activations: Array2<f64>,
    mean: Array1<f64>,
    hidden_mask: Array2<f64>,
    global_mask: Array1<f64>,
}

/// Frozen hash-derived token embeddings, one trainable affine layer over a
/// three-token window followed by `tanh`, and a global vector from an affine
/// map of the mean token row.
pub struct ToyEncoder {
    dim: usize,
    max_positions: usize,
    seed: u64,
    dropout: f64,
    trainable: bool,
    pub params: ToyParams,
    grads: ToyParams,
    adam: Adam,
    cache: Option<Cache>,
}

impl ToyEncoder {
    pub fn new(dim: usize, max_positions: usize, seed: u64, dropout: f64, trainable: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70e_e7c0de);
        let mut normal = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
        };
        let params = ToyParams {
            token_weight: normal(3 * dim, dim, (1.0 / (3 * dim) as f64).sqrt()),
            token_bias: Array1::zeros(dim),
            global_weight: normal(dim, dim, (1.0 / dim as f64).sqrt()),
            global_bias: Array1::zeros(dim),
        };
        Self {
            dim,
            max_positions,
            seed,
            dropout,
            trainable,
            params,
            grads: ToyParams::zeros(dim),
            adam: Adam::default(),
            cache: None,
        }
    }

    pub fn set_dropout(&mut self, dropout: f64) {
        self.dropout = dropout;
    }

    /// The frozen embedding of `token`, a pure function of the seed and the string.
    pub fn embedding(&self, token: &str) -> Array1<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        Array1::from_shape_simple_fn(self.dim, || rng.sample::<f64, _>(StandardNormal))
    }

    fn inputs(&self, tokens: &[String]) -> Array2<f64> {
        let d = self.dim;
        let boundary = self.embedding(BOUNDARY);
        let rows: Vec<Array1<f64>> = tokens.iter().map(|t| self.embedding(t)).collect();
        let mut x = Array2::zeros((tokens.len(), 3 * d));
        for t in 0..tokens.len() {
            let prev = if t == 0 { &boundary } else { &rows[t - 1] };
            let next = rows.get(t + 1).unwrap_or(&boundary);
            x.slice_mut(s![t, 0..d]).assign(prev);
            x.slice_mut(s![t, d..2 * d]).assign(&rows[t]);
            x.slice_mut(s![t, 2 * d..]).assign(next);
        }
        x
    }

    fn check_len(&self, tokens: &[String]) -> Result<()> {
        if tokens.len() > self.max_positions {
            return Err(Error::Encoder(format!(
                "{} tokens exceed max_positions {}",
                tokens.len(),
                self.max_positions
            )));
        }
        Ok(())
    }

    fn forward(&self, inputs: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let activations =
            (inputs.dot(&self.params.token_weight) + &self.params.token_bias).mapv(f64::tanh);
        let mean = activations
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.dim));
        let global = mean.dot(&self.params.global_weight) + &self.params.global_bias;
        (activations, mean, global)
    }
}

pub(super) fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if p <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl Encoder for ToyEncoder {
    fn id(&self) -> String {
        format!("toy-d{}-seed{}", self.dim, self.seed)
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_positions
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn encode(&self, tokens: &[String]) -> Result<TokenEncoding> {
        self.check_len(tokens)?;
        let (hidden, _, global) = self.forward(&self.inputs(tokens));
        Ok(TokenEncoding { hidden, global })
    }

    fn forward_train(&mut self, tokens: &[String], rng: &mut ChaCha8Rng) -> Result<TokenEncoding> {
        self.check_len(tokens)?;
        let inputs = self.inputs(tokens);
        let (activations, mean, global) = self.forward(&inputs);
        let hidden_mask = dropout_mask(activations.dim(), self.dropout, rng);
        let global_mask = dropout_mask((1, self.dim), self.dropout, rng).remove_axis(Axis(0));
        let encoding = TokenEncoding {
            hidden: &activations * &hidden_mask,
            global: &global * &global_mask,
        };
        self.cache = Some(Cache {
            inputs,
            activations,
            mean,
            hidden_mask,
            global_mask,
        });
        Ok(encoding)
    }

    fn backward(&mut self, grad_hidden: &Array2<f64>, grad_global: &Array1<f64>) -> Result<()> {
        if !self.trainable {
            return Ok(());
        }
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Encoder("backward called without a training forward".into()))?;
        let n = cache.activations.nrows();
        let d_global = grad_global * &cache.global_mask;
        self.grads.global_bias += &d_global;
        for (i, m) in cache.mean.iter().enumerate() {
            self.grads
                .global_weight
                .row_mut(i)
                .scaled_add(*m, &d_global);
        }
        let d_mean = self.params.global_weight.dot(&d_global);
        let mut d_act = grad_hidden * &cache.hidden_mask;
        if n > 0 {
            d_act += &(d_mean / n as f64);
        }
        let d_pre = d_act * cache.activations.mapv(|a| 1.0 - a * a);
        self.grads.token_weight += &cache.inputs.t().dot(&d_pre);
        self.grads.token_bias += &d_pre.sum_axis(Axis(0));
        Ok(())
    }

    fn step(&mut self, lr: f64) -> Result<()> {
        if self.trainable {
            self.adam.step(&mut self.params, &self.grads, lr);
        }
        self.grads.zero();
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.grads.zero();
        self.cache = None;
    }

    fn save(&self, dir: &Path) -> Result<()> {
        save_safetensors(&dir.join(FILE), &[("toy", &self.params)])
    }

    fn load(&mut self, dir: &Path) -> Result<()> {
        restore_group(&read_safetensors(&dir.join(FILE))?, "toy", &mut self.params)
    }

    fn params(&self) -> Option<&dyn Parameterized> {
        Some(&self.params)
    }

    fn params_mut(&mut self) -> Option<&mut dyn Parameterized> {
        Some(&mut self.params)
    }

    fn grads(&self) -> Option<&dyn Parameterized> {
        Some(&self.grads)
    }
}
