//! Contextual token encoders.
//!
//! Every encoder returns one `d`-dimensional row per corpus token plus a
//! document-level `global` vector. Two implementations exist: [`ToyEncoder`]
//! (small, deterministic, used by tests and desk-scale runs) and, with the
//! `pretrained` feature, a BERT-style transformer adapter.

#[cfg(feature = "pretrained")]
mod bert;
mod toy;
#[cfg(feature = "pretrained")]
pub mod pretrained;

use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SpanRef};
use crate::error::{Error, Result};
use crate::params::Parameterized;

pub use toy::ToyEncoder;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoding {
    /// One row per token, shape `(n, d)`.
    pub hidden: Array2<f64>,
    /// Document-level context vector of length `d`.
    pub global: Array1<f64>,
}

impl TokenEncoding {
    pub fn len(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.hidden.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().chain(self.global.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Pretrained,
    Toy,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(EncoderKind::Pretrained),
            "toy" => Ok(EncoderKind::Toy),
            other => Err(Error::Config(format!(
                "encoder.kind must be `pretrained` or `toy`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Pretrained => "pretrained",
            EncoderKind::Toy => "toy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Local directory or name under `$ECSP_CACHE`; pretrained only.
    pub model_id: String,
    /// Toy only; pretrained encoders report their own width.
    pub hidden_dim: usize,
    pub max_positions: usize,
    pub trainable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Pretrained,
            model_id: "bert-base-chinese".into(),
            hidden_dim: 768,
            max_positions: 512,
            trainable: true,
        }
    }
}

impl EncoderConfig {
    pub fn toy(hidden_dim: usize) -> Self {
        Self {
            kind: EncoderKind::Toy,
            model_id: String::new(),
            hidden_dim,
            max_positions: 512,
            trainable: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EncoderKind::Toy && self.hidden_dim < 8 {
            return Err(Error::Config(format!(
                "encoder.hidden_dim must be at least 8 for the toy encoder, got {}",
                self.hidden_dim
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("encoder.max_positions must be positive".into()));
        }
        if self.kind == EncoderKind::Pretrained && self.model_id.is_empty() {
            return Err(Error::MissingKey("encoder.model_id".into()));
        }
        Ok(())
    }
}

/// A trainable token encoder.
///
/// `forward_train` caches whatever `backward` needs; `backward` accumulates
/// gradients until `step` applies and clears them.
pub trait Encoder: Send {
    fn id(&self) -> String;
    fn hidden_dim(&self) -> usize;
    /// Most corpus tokens accepted by a single call.
    fn max_tokens(&self) -> usize;
    fn trainable(&self) -> bool;

    /// Evaluation-mode encoding: no dropout, deterministic.
    fn encode(&self, tokens: &[String]) -> Result<TokenEncoding>;
    fn forward_train(&mut self, tokens: &[String], rng: &mut ChaCha8Rng) -> Result<TokenEncoding>;
    fn backward(&mut self, grad_hidden: &Array2<f64>, grad_global: &Array1<f64>) -> Result<()>;
    fn step(&mut self, lr: f64) -> Result<()>;
    fn zero_grad(&mut self);

    fn save(&self, dir: &Path) -> Result<()>;
    fn load(&mut self, dir: &Path) -> Result<()>;

    /// In-memory parameters, when the encoder keeps them as `f64` tensors.
    fn params(&self) -> Option<&dyn Parameterized> {
        None
    }
    fn params_mut(&mut self) -> Option<&mut dyn Parameterized> {
        None
    }
    fn grads(&self) -> Option<&dyn Parameterized> {
        None
    }
}

/// Builds the encoder described by `config`. `seed` fixes toy embeddings and
/// initialization; `dropout` applies to encoder outputs during training.
pub fn build_encoder(config: &EncoderConfig, seed: u64, dropout: f64) -> Result<Box<dyn Encoder>> {
    config.validate()?;
    match config.kind {
        EncoderKind::Toy => Ok(Box::new(ToyEncoder::new(
            config.hidden_dim,
            config.max_positions,
            seed,
            dropout,
            config.trainable,
        ))),
        #[cfg(feature = "pretrained")]
        EncoderKind::Pretrained => Ok(Box::new(pretrained::PretrainedEncoder::from_config(
            config, seed, dropout,
        )?)),
        #[cfg(not(feature = "pretrained"))]
        EncoderKind::Pretrained => Err(Error::Encoder(
            "this build was compiled without the `pretrained` feature".into(),
        )),
    }
}

/// Encodes a whole document, which must fit the encoder in one call.
pub fn encode(document: &Document, encoder: &dyn Encoder) -> Result<TokenEncoding> {
    if document.len() > encoder.max_tokens() {
        return Err(Error::WindowRequired {
            doc_id: document.doc_id.clone(),
            len: document.len(),
            max_positions: encoder.max_tokens(),
        });
    }
    encoder.encode(&document.tokens)
}

/// A group of consecutive whole clauses encoded together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub tokens: SpanRef,
    pub clauses: Range<usize>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, span: &SpanRef) -> bool {
        self.tokens.start <= span.start && span.end <= self.tokens.end
    }
}

/// Greedy first-fit grouping of consecutive clauses into windows of at most
/// `max_positions` tokens.
pub fn window_plan(document: &Document, max_positions: usize) -> Result<Vec<Window>> {
    let mut windows: Vec<Window> = Vec::new();
    for (i, clause) in document.clauses.iter().enumerate() {
        if clause.len() > max_positions {
            return Err(Error::ClauseTooLong {
                doc_id: document.doc_id.clone(),
                clause: i,
                len: clause.len(),
                max_positions,
            });
        }
        match windows.last_mut() {
            Some(w) if w.len() + clause.len() <= max_positions => {
                w.tokens.end = clause.end;
                w.clauses.end = i + 1;
            }
            _ => windows.push(Window {
                tokens: *clause,
                clauses: i..i + 1,
            }),
        }
    }
    Ok(windows)
}
