//! Run configuration.
//!
//! The configuration is a flat set of dotted keys (`encoder.kind`,
//! `train.peak_lr`, ...). Files are TOML, where `[train]` tables and dotted
//! keys both flatten to the same names. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value as Json;

use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    /// Every span up to `span.max_len` tokens.
    Spans,
    /// Exactly the corpus clauses.
    Clauses,
}

impl std::fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CandidateMode::Spans => "spans",
            CandidateMode::Clauses => "clauses",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanConfig {
    pub max_len: usize,
    pub phi_dim: usize,
    pub candidates: CandidateMode,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            max_len: 20,
            phi_dim: 25,
            candidates: CandidateMode::Spans,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub psi_dim: usize,
    pub dist_buckets: usize,
    pub use_localized_context: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            psi_dim: 50,
            dist_buckets: 64,
            use_localized_context: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Required for training; there is no sensible default.
    pub total_steps: Option<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    pub patience_evals: usize,
    /// `None` evaluates once per pass over the training documents.
    pub eval_interval_steps: Option<usize>,
    pub seed: u64,
    pub span_loss_weight: f64,
    pub pair_loss_weight: f64,
    /// Fraction of `none` span candidates kept per document; `None` keeps all.
    pub neg_downsample: Option<f64>,
    /// Share of the training documents held out for early stopping; 0 reuses
    /// the training documents.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-5,
            warmup_fraction: 0.1,
            total_steps: None,
            dropout: 0.1,
            batch_size: 1,
            patience_evals: 20,
            eval_interval_steps: None,
            seed: 42,
            span_loss_weight: 1.0,
            pair_loss_weight: 1.0,
            neg_downsample: None,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> Result<usize> {
        self.total_steps
            .ok_or_else(|| Error::MissingKey("train.total_steps".into()))
    }

    pub fn warmup_steps(&self) -> Result<usize> {
        Ok((self.warmup_fraction * self.total_steps()? as f64).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.total_steps()?;
        let positive = [
            ("train.peak_lr", self.peak_lr),
            ("train.total_steps", total as f64),
            ("train.batch_size", self.batch_size as f64),
            ("train.patience_evals", self.patience_evals as f64),
        ];
        for (key, value) in positive {
            if value.is_nan() || value <= 0.0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config("train.warmup_fraction must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("train.dropout must be in [0, 1)".into()));
        }
        if self.span_loss_weight < 0.0 || self.pair_loss_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if let Some(r) = self.neg_downsample {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config("train.neg_downsample must be in (0, 1]".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("train.dev_fraction must be in [0, 1)".into()));
        }
        if self.eval_interval_steps == Some(0) {
            return Err(Error::Config("train.eval_interval_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub span: SpanConfig,
    pub pair: PairConfig,
    pub train: TrainConfig,
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "encoder.kind",
    "encoder.model_id",
    "encoder.hidden_dim",
    "encoder.max_positions",
    "encoder.trainable",
    "span.max_len",
    "span.phi_dim",
    "span.candidates",
    "pair.psi_dim",
    "pair.dist_buckets",
    "pair.use_localized_context",
    "train.peak_lr",
    "train.warmup_fraction",
    "train.total_steps",
    "train.dropout",
    "train.batch_size",
    "train.patience_evals",
    "train.eval_interval_steps",
    "train.seed",
    "train.span_loss_weight",
    "train.pair_loss_weight",
    "train.neg_downsample",
    "train.dev_fraction",
];

fn as_usize(key: &str, v: &Json) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| Error::Config(format!("{key} must be a non-negative integer, got {v}")))
}

fn as_f64(key: &str, v: &Json) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Config(format!("{key} must be a number, got {v}")))
}

fn as_bool(key: &str, v: &Json) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Config(format!("{key} must be a boolean, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Json) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Config(format!("{key} must be a string, got {v}")))
}

impl RunConfig {
    /// A small toy-encoder configuration suitable for desk-scale runs.
    pub fn toy(hidden_dim: usize) -> Self {
        Self {
            encoder: EncoderConfig::toy(hidden_dim),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &Json) -> Result<()> {
        match key {
            "encoder.kind" => self.encoder.kind = as_str(key, value)?.parse::<EncoderKind>()?,
            "encoder.model_id" => self.encoder.model_id = as_str(key, value)?.to_string(),
            "encoder.hidden_dim" => self.encoder.hidden_dim = as_usize(key, value)?,
            "encoder.max_positions" => self.encoder.max_positions = as_usize(key, value)?,
            "encoder.trainable" => self.encoder.trainable = as_bool(key, value)?,
            "span.max_len" => self.span.max_len = as_usize(key, value)?,
            "span.phi_dim" => self.span.phi_dim = as_usize(key, value)?,
            "span.candidates" => {
                self.span.candidates = match as_str(key, value)? {
                    "spans" => CandidateMode::Spans,
                    "clauses" => CandidateMode::Clauses,
                    other => {
                        return Err(Error::Config(format!(
                            "span.candidates must be `spans` or `clauses`, got `{other}`"
                        )))
                    }
                }
            }
            "pair.psi_dim" => self.pair.psi_dim = as_usize(key, value)?,
            "pair.dist_buckets" => self.pair.dist_buckets = as_usize(key, value)?,
            "pair.use_localized_context" => self.pair.use_localized_context = as_bool(key, value)?,
            "train.peak_lr" => self.train.peak_lr = as_f64(key, value)?,
            "train.warmup_fraction" => self.train.warmup_fraction = as_f64(key, value)?,
            "train.total_steps" => self.train.total_steps = Some(as_usize(key, value)?),
            "train.dropout" => self.train.dropout = as_f64(key, value)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, value)?,
            "train.patience_evals" => self.train.patience_evals = as_usize(key, value)?,
            "train.eval_interval_steps" => {
                self.train.eval_interval_steps = Some(as_usize(key, value)?)
            }
            "train.seed" => self.train.seed = as_usize(key, value)? as u64,
            "train.span_loss_weight" => self.train.span_loss_weight = as_f64(key, value)?,
            "train.pair_loss_weight" => self.train.pair_loss_weight = as_f64(key, value)?,
            "train.neg_downsample" => self.train.neg_downsample = Some(as_f64(key, value)?),
            "train.dev_fraction" => self.train.dev_fraction = as_f64(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override; the value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => toml_to_json(t.remove("v").expect("parsed key")),
            Err(_) => Json::String(raw.to_string()),
        };
        self.set(key.trim(), &value)
    }

    pub fn from_flat(map: &BTreeMap<String, Json>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            if v.is_null() {
                if KEYS.contains(&k.as_str()) {
                    continue;
                }
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            cfg.set(k, v)?;
        }
        cfg.validate_model()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", toml::Value::Table(table), &mut flat);
        Self::from_flat(&flat)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Every key with its current value; unset optional keys are `null`.
    pub fn to_flat(&self) -> BTreeMap<String, Json> {
        let opt_usize = |v: Option<usize>| v.map_or(Json::Null, Json::from);
        let entries: Vec<(&str, Json)> = vec![
            ("encoder.kind", Json::from(self.encoder.kind.to_string())),
            ("encoder.model_id", Json::from(self.encoder.model_id.clone())),
            ("encoder.hidden_dim", Json::from(self.encoder.hidden_dim)),
            ("encoder.max_positions", Json::from(self.encoder.max_positions)),
            ("encoder.trainable", Json::from(self.encoder.trainable)),
            ("span.max_len", Json::from(self.span.max_len)),
            ("span.phi_dim", Json::from(self.span.phi_dim)),
            ("span.candidates", Json::from(self.span.candidates.to_string())),
            ("pair.psi_dim", Json::from(self.pair.psi_dim)),
            ("pair.dist_buckets", Json::from(self.pair.dist_buckets)),
            (
                "pair.use_localized_context",
                Json::from(self.pair.use_localized_context),
            ),
            ("train.peak_lr", Json::from(self.train.peak_lr)),
            ("train.warmup_fraction", Json::from(self.train.warmup_fraction)),
            ("train.total_steps", opt_usize(self.train.total_steps)),
            ("train.dropout", Json::from(self.train.dropout)),
            ("train.batch_size", Json::from(self.train.batch_size)),
            ("train.patience_evals", Json::from(self.train.patience_evals)),
            ("train.eval_interval_steps", opt_usize(self.train.eval_interval_steps)),
            ("train.seed", Json::from(self.train.seed)),
            ("train.span_loss_weight", Json::from(self.train.span_loss_weight)),
            ("train.pair_loss_weight", Json::from(self.train.pair_loss_weight)),
            (
                "train.neg_downsample",
                self.train.neg_downsample.map_or(Json::Null, Json::from),
            ),
            ("train.dev_fraction", Json::from(self.train.dev_fraction)),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Checks the model-shape keys; training keys are checked by
    /// [`TrainConfig::validate`].
    pub fn validate_model(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.span.max_len == 0 {
            return Err(Error::Config("span.max_len must be at least 1".into()));
        }
        if self.pair.dist_buckets == 0 {
            return Err(Error::Config("pair.dist_buckets must be at least 1".into()));
        }
        Ok(())
    }
}

fn toml_to_json(value: toml::Value) -> Json {
    match value {
        toml::Value::String(s) => Json::String(s),
        toml::Value::Integer(i) => Json::from(i),
        toml::Value::Float(f) => Json::from(f),
        toml::Value::Boolean(b) => Json::Bool(b),
        toml::Value::Datetime(d) => Json::String(d.to_string()),
        toml::Value::Array(a) => Json::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => {
            Json::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect())
        }
    }
}

fn flatten(prefix: &str, value: toml::Value, out: &mut BTreeMap<String, Json>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), toml_to_json(other));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reported_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.span.max_len, 20);
        assert_eq!(cfg.span.phi_dim, 25);
        assert_eq!(cfg.pair.psi_dim, 2 * cfg.span.phi_dim);
        assert_eq!(cfg.pair.dist_buckets, 64);
        assert_eq!(cfg.train.peak_lr, 5e-5);
        assert_eq!(cfg.train.dropout, 0.1);
        assert_eq!(cfg.train.batch_size, 1);
        assert_eq!(cfg.train.patience_evals, 20);
        assert_eq!(cfg.encoder.hidden_dim, 768);
    }

    #[test]
    fn toml_tables_and_dotted_keys_flatten_alike() {
        let a = RunConfig::from_toml_str(
            "[encoder]\nkind = \"toy\"\nhidden_dim = 32\n[train]\ntotal_steps = 10\n",
        )
        .unwrap();
        let b = RunConfig::from_toml_str(
            "encoder.kind = \"toy\"\nencoder.hidden_dim = 32\ntrain.total_steps = 10\n",
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.encoder.kind, EncoderKind::Toy);
        assert_eq!(a.train.total_steps, Some(10));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("train.learning_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"));
    }

    #[test]
    fn missing_total_steps_is_named() {
        let err = RunConfig::default().train.validate().unwrap_err();
        assert!(err.to_string().contains("train.total_steps"));
    }

    #[test]
    fn flat_round_trip_and_overrides() {
        let mut cfg = RunConfig::toy(16);
        cfg.set_override("train.total_steps=300").unwrap();
        cfg.set_override("span.candidates = clauses").unwrap();
        cfg.set_override("pair.use_localized_context=false").unwrap();
        assert_eq!(cfg.span.candidates, CandidateMode::Clauses);
        assert_eq!(RunConfig::from_flat(&cfg.to_flat()).unwrap(), cfg);
        assert!(cfg.set_override("nonsense").is_err());
        assert_eq!(cfg.to_flat().len(), KEYS.len());
    }
}
