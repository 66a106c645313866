//! BERT-style transformer adapter built on candle.
//!
//! A model directory holds `config.json`, `tokenizer.json` and
//! `model.safetensors` in the Hugging Face layout. `model_id` is either such a
//! directory or a name resolved under `$ECSP_CACHE`; nothing is downloaded.
//!
//! Each corpus token is tokenized on its own and its subword pieces are
//! mean-pooled back into one row, so offsets always refer to corpus tokens.
//! The `[CLS]` output is the global vector.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use tokenizers::Tokenizer;

use super::bert::{Bert, BertConfig};
use super::toy::dropout_mask;
use super::{EncoderConfig, TokenEncoding};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
/// Records the original model id inside a fine-tuned checkpoint.
const ORIGIN_FILE: &str = "encoder.json";

fn enc_err(e: impl std::fmt::Display) -> Error {
    Error::Encoder(e.to_string())
}

/// Finds the model directory for `model_id`.
pub fn resolve_model_dir(model_id: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(model_id);
    if direct.join(CONFIG_FILE).is_file() {
        return Ok(direct);
    }
    if let Some(cache) = std::env::var_os("ECSP_CACHE") {
        let cached = PathBuf::from(cache).join(model_id);
        if cached.join(CONFIG_FILE).is_file() {
            return Ok(cached);
        }
    }
    Err(Error::Encoder(format!(
        "model {model_id:?} not found: expected a directory with {CONFIG_FILE}, {TOKENIZER_FILE} and \
         {WEIGHTS_FILE}, either at that path or under $ECSP_CACHE"
    )))
}

struct Pending {
    hidden: Tensor,
    global: Tensor,
    hidden_mask: Array2<f64>,
    global_mask: Array1<f64>,
}

pub struct PretrainedEncoder {
    id: String,
    dir: PathBuf,
    config_json: String,
    tokenizer: Tokenizer,
    model: Bert,
    varmap: VarMap,
    optimizer: Option<AdamW>,
    device: Device,
    cls: u32,
    sep: u32,
    unk: u32,
    hidden_dim: usize,
    max_positions: usize,
    dropout: f64,
    cache: Option<Pending>,
    /// Sum of surrogate losses since the last `step`.
    surrogate: Option<Tensor>,
}

fn special(tokenizer: &Tokenizer, candidates: &[&str]) -> Result<u32> {
    candidates
        .iter()
        .find_map(|t| tokenizer.token_to_id(t))
        .ok_or_else(|| Error::Encoder(format!("tokenizer lacks {}", candidates[0])))
}

/// Copies `tensors` into the matching variables, ignoring an optional `bert.` prefix.
fn assign(varmap: &VarMap, tensors: &HashMap<String, Tensor>) -> Result<()> {
    let vars = varmap.data().lock().expect("varmap lock");
    for (name, var) in vars.iter() {
        // Older checkpoints call layer-norm parameters gamma/beta.
        let legacy = name.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
        let source = [name.as_str(), legacy.as_str()]
            .iter()
            .find_map(|n| tensors.get(*n).or_else(|| tensors.get(&format!("bert.{n}"))))
            .ok_or_else(|| Error::Encoder(format!("weights file lacks tensor {name}")))?;
        if source.dims() != var.dims() {
            return Err(Error::Encoder(format!(
                "tensor {name}: shape {:?} does not match {:?}",
                source.dims(),
                var.dims()
            )));
        }
        var.set(&source.to_dtype(DType::F32).map_err(enc_err)?)
            .map_err(enc_err)?;
    }
    Ok(())
}

impl PretrainedEncoder {
    pub fn from_config(config: &EncoderConfig, seed: u64, dropout: f64) -> Result<Self> {
        let dir = resolve_model_dir(&config.model_id)?;
        let device = Device::Cpu;
        device.set_seed(seed).ok();
        let config_json =
            std::fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
        let bert: BertConfig = serde_json::from_str(&config_json).map_err(enc_err)?;
        let tokenizer = Tokenizer::from_file(dir.join(TOKENIZER_FILE)).map_err(enc_err)?;

        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let model = Bert::load(&bert, vb).map_err(enc_err)?;
        let weights = candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &device).map_err(enc_err)?;
        assign(&varmap, &weights)?;

        let optimizer = if config.trainable {
            let params = ParamsAdamW {
                lr: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            };
            Some(AdamW::new(varmap.all_vars(), params).map_err(enc_err)?)
        } else {
            None
        };
        let id = std::fs::read_to_string(dir.join(ORIGIN_FILE))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v.get("model_id").and_then(|m| m.as_str()).map(String::from))
            .unwrap_or_else(|| config.model_id.clone());
        Ok(Self {
            id,
            dir,
            config_json,
            cls: special(&tokenizer, &["[CLS]", "<s>"])?,
            sep: special(&tokenizer, &["[SEP]", "</s>"])?,
            unk: special(&tokenizer, &["[UNK]", "<unk>"])?,
            tokenizer,
            model,
            varmap,
            optimizer,
            device,
            hidden_dim: bert.hidden_size,
            // [CLS] and [SEP] take two positions.
            max_positions: config.max_positions.min(bert.max_position_embeddings) - 2,
            dropout,
            cache: None,
            surrogate: None,
        })
    }

    /// Piece ids with `[CLS]`/`[SEP]` and the row-normalized pooling matrix
    /// mapping piece rows (excluding specials) to corpus tokens.
    fn pieces(&self, tokens: &[String]) -> Result<(Vec<u32>, Tensor)> {
        let mut ids = vec![self.cls];
        let mut owner = Vec::new();
        for (i, token) in tokens.iter().enumerate() {
            let encoding = self.tokenizer.encode(token.as_str(), false).map_err(enc_err)?;
            let pieces = encoding.get_ids();
            if pieces.is_empty() {
                ids.push(self.unk);
                owner.push(i);
            } else {
                ids.extend_from_slice(pieces);
                owner.extend(std::iter::repeat_n(i, pieces.len()));
            }
        }
        ids.push(self.sep);
        if ids.len() > self.max_positions + 2 {
            return Err(Error::Encoder(format!(
                "{} tokens expand to {} subword pieces, more than the {} positions available; \
                 lower encoder.max_positions so documents are windowed",
                tokens.len(),
                ids.len() - 2,
                self.max_positions
            )));
        }
        let n = tokens.len();
        let m = owner.len();
        let mut counts = vec![0f32; n];
        for &o in &owner {
            counts[o] += 1.0;
        }
        let mut pool = vec![0f32; n * m];
        for (j, &o) in owner.iter().enumerate() {
            pool[o * m + j] = 1.0 / counts[o];
        }
        let pool = Tensor::from_vec(pool, (n, m), &self.device).map_err(enc_err)?;
        Ok((ids, pool))
    }

    /// Token rows `(n, d)` and the global vector `(d,)` as graph tensors.
    fn run(&self, tokens: &[String]) -> Result<(Tensor, Tensor)> {
        let (ids, pool) = self.pieces(tokens)?;
        let len = ids.len();
        let input = Tensor::new(ids.as_slice(), &self.device).map_err(enc_err)?;
        let out = self.model.forward(&input).map_err(enc_err)?;
        let global = out.get(0).map_err(enc_err)?;
        let body = out.narrow(0, 1, len - 2).map_err(enc_err)?;
        let hidden = pool.matmul(&body).map_err(enc_err)?;
        Ok((hidden, global))
    }

    fn to_ndarray(hidden: &Tensor, global: &Tensor) -> Result<TokenEncoding> {
        let (n, d) = hidden.dims2().map_err(enc_err)?;
        let h: Vec<f64> = hidden
            .to_dtype(DType::F64)
            .and_then(|t| t.flatten_all())
            .and_then(|t| t.to_vec1())
            .map_err(enc_err)?;
        let g: Vec<f64> = global
            .to_dtype(DType::F64)
            .and_then(|t| t.to_vec1())
            .map_err(enc_err)?;
        Ok(TokenEncoding {
            hidden: Array2::from_shape_vec((n, d), h).expect("shape from dims"),
            global: Array1::from(g),
        })
    }

    fn tensor2(&self, a: &Array2<f64>) -> Result<Tensor> {
        let v: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        Tensor::from_vec(v, a.dim(), &self.device).map_err(enc_err)
    }

    fn tensor1(&self, a: &Array1<f64>) -> Result<Tensor> {
        let v: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        Tensor::from_vec(v, a.len(), &self.device).map_err(enc_err)
    }
}

impl super::Encoder for PretrainedEncoder {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn max_tokens(&self) -> usize {
        self.max_positions
    }

    fn trainable(&self) -> bool {
        self.optimizer.is_some()
    }

    fn encode(&self, tokens: &[String]) -> Result<TokenEncoding> {
        if tokens.is_empty() {
            return Ok(TokenEncoding {
                hidden: Array2::zeros((0, self.hidden_dim)),
                global: Array1::zeros(self.hidden_dim),
            });
        }
        let (hidden, global) = self.run(tokens)?;
        Self::to_ndarray(&hidden.detach(), &global.detach())
    }

    fn forward_train(&mut self, tokens: &[String], rng: &mut ChaCha8Rng) -> Result<TokenEncoding> {
        if tokens.is_empty() || self.optimizer.is_none() {
            let mut enc = self.encode(tokens)?;
            let hm = dropout_mask(enc.hidden.dim(), self.dropout, rng);
            enc.hidden = &enc.hidden * &hm;
            return Ok(enc);
        }
        let (hidden, global) = self.run(tokens)?;
        let mut enc = Self::to_ndarray(&hidden, &global)?;
        let hidden_mask = dropout_mask(enc.hidden.dim(), self.dropout, rng);
        let global_mask = dropout_mask((1, self.hidden_dim), self.dropout, rng).row(0).to_owned();
        enc.hidden = &enc.hidden * &hidden_mask;
        enc.global = &enc.global * &global_mask;
        self.cache = Some(Pending {
            hidden,
            global,
            hidden_mask,
            global_mask,
        });
        Ok(enc)
    }

    /// Accumulates the surrogate `sum(hidden ⊙ G_h) + sum(global ⊙ G_g)`,
    /// whose parameter gradient equals the chain-rule gradient.
    fn backward(&mut self, grad_hidden: &Array2<f64>, grad_global: &Array1<f64>) -> Result<()> {
        let Some(cache) = self.cache.take() else {
            return Ok(());
        };
        let gh = self.tensor2(&(grad_hidden * &cache.hidden_mask))?;
        let gg = self.tensor1(&(grad_global * &cache.global_mask))?;
        let term = (cache.hidden.mul(&gh).and_then(|t| t.sum_all()))
            .and_then(|a| a + cache.global.mul(&gg)?.sum_all()?)
            .map_err(enc_err)?;
        self.surrogate = Some(match self.surrogate.take() {
            Some(total) => (total + term).map_err(enc_err)?,
            None => term,
        });
        Ok(())
    }

    fn step(&mut self, lr: f64) -> Result<()> {
        let Some(surrogate) = self.surrogate.take() else {
            return Ok(());
        };
        if let Some(opt) = self.optimizer.as_mut() {
            opt.set_learning_rate(lr);
            opt.backward_step(&surrogate).map_err(enc_err)?;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.surrogate = None;
        self.cache = None;
    }

    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(CONFIG_FILE), &self.config_json).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
        if dir != self.dir {
            std::fs::copy(self.dir.join(TOKENIZER_FILE), dir.join(TOKENIZER_FILE))
                .map_err(|e| Error::io(dir.join(TOKENIZER_FILE), e))?;
        }
        let origin = serde_json::json!({ "model_id": self.id });
        std::fs::write(dir.join(ORIGIN_FILE), origin.to_string()).map_err(|e| Error::io(dir.join(ORIGIN_FILE), e))?;
        self.varmap.save(dir.join(WEIGHTS_FILE)).map_err(enc_err)
    }

    fn load(&mut self, dir: &Path) -> Result<()> {
        let weights = candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &self.device).map_err(enc_err)?;
        assign(&self.varmap, &weights)
    }
}

/// Writes a randomly initialized miniature BERT with a word-piece tokenizer
/// over `vocab` to `dir`. Useful for tests and offline smoke runs.
pub fn write_random_model(dir: &Path, vocab: &[&str], hidden_size: usize, seed: u64) -> Result<()> {
    use tokenizers::models::wordpiece::WordPiece;

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut words: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].map(String::from).to_vec();
    words.extend(vocab.iter().map(|w| w.to_string()));
    let vocab_path = dir.join("vocab.txt");
    std::fs::write(&vocab_path, words.join("\n") + "\n").map_err(|e| Error::io(&vocab_path, e))?;
    let model = WordPiece::from_file(&vocab_path.to_string_lossy())
        .unk_token("[UNK]".into())
        .build()
        .map_err(enc_err)?;
    Tokenizer::new(model)
        .save(dir.join(TOKENIZER_FILE), false)
        .map_err(enc_err)?;

    let config = serde_json::json!({
        "vocab_size": words.len(),
        "hidden_size": hidden_size,
        "num_hidden_layers": 1,
        "num_attention_heads": 2,
        "intermediate_size": 2 * hidden_size,
        "hidden_act": "gelu",
        "hidden_dropout_prob": 0.0,
        "max_position_embeddings": 64,
        "type_vocab_size": 2,
        "initializer_range": 0.02,
        "layer_norm_eps": 1e-12,
        "pad_token_id": 0,
        "classifier_dropout": null,
        "model_type": "bert"
    });
    std::fs::write(dir.join(CONFIG_FILE), config.to_string()).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    let bert: BertConfig = serde_json::from_value(config).map_err(enc_err)?;
    let device = Device::Cpu;
    device.set_seed(seed).ok();
    let varmap = VarMap::new();
    Bert::load(&bert, VarBuilder::from_varmap(&varmap, DType::F32, &device)).map_err(enc_err)?;
    // Prefix as in published checkpoints.
    let tensors: HashMap<String, Tensor> = varmap
        .data()
        .lock()
        .expect("varmap lock")
        .iter()
        .map(|(k, v): (&String, &Var)| (format!("bert.{k}"), v.as_tensor().clone()))
        .collect();
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE)).map_err(enc_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderKind};
    use rand::SeedableRng;

    fn tiny(dir: &Path) -> PretrainedEncoder {
        write_random_model(dir, &["a", "b", "c", "##c", "ab"], 16, 0).unwrap();
        let config = EncoderConfig {
            kind: EncoderKind::Pretrained,
            model_id: dir.to_string_lossy().into_owned(),
            hidden_dim: 0,
            max_positions: 64,
            trainable: true,
        };
        PretrainedEncoder::from_config(&config, 0, 0.0).unwrap()
    }

    fn toks(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_row_per_corpus_token() {
        let dir = tempfile::tempdir().unwrap();
        let enc = tiny(dir.path());
        // "abc" splits into "ab" + "##c" and is pooled back into one row.
        let out = enc.encode(&toks(&["a", "abc", "b", "zzz"])).unwrap();
        assert_eq!(out.hidden.dim(), (4, 16));
        assert_eq!(out.global.len(), 16);
        assert!(out.is_finite());
        assert_eq!(enc.max_tokens(), 62);
    }

    #[test]
    fn training_step_changes_the_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let mut enc = tiny(dir.path());
        let tokens = toks(&["a", "b", "c"]);
        let before = enc.encode(&tokens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = enc.forward_train(&tokens, &mut rng).unwrap();
        enc.backward(&Array2::ones(fwd.hidden.dim()), &Array1::ones(16)).unwrap();
        enc.step(1e-2).unwrap();
        let after = enc.encode(&tokens).unwrap();
        assert_ne!(before.hidden, after.hidden);
    }

    #[test]
    fn gradients_reach_every_layer() {
        let dir = tempfile::tempdir().unwrap();
        let mut enc = tiny(dir.path());
        let snapshot = |enc: &PretrainedEncoder| -> Vec<(String, Vec<f32>)> {
            let vars = enc.varmap.data().lock().unwrap();
            let mut out: Vec<_> = vars
                .iter()
                .map(|(k, v)| (k.clone(), v.as_tensor().flatten_all().unwrap().to_vec1().unwrap()))
                .collect();
            out.sort_by(|a, b| a.0.cmp(&b.0));
            out
        };
        let before = snapshot(&enc);
        let tokens = toks(&["a", "b", "ab"]);
        let fwd = enc.forward_train(&tokens, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Array2::from_shape_fn(fwd.hidden.dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        enc.backward(&g, &Array1::from_shape_fn(16, |j| (j % 3) as f64 - 1.0)).unwrap();
        enc.step(1e-2).unwrap();
        for ((name, a), (_, b)) in before.iter().zip(snapshot(&enc)) {
            // The unused second token-type row and unseen word rows stay put.
            assert_ne!(a, &b, "{name} did not move");
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let src = tempfile::tempdir().unwrap();
        let dst = tempfile::tempdir().unwrap();
        let mut enc = tiny(src.path());
        let tokens = toks(&["ab", "c"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = enc.forward_train(&tokens, &mut rng).unwrap();
        enc.backward(&Array2::ones(fwd.hidden.dim()), &Array1::zeros(16)).unwrap();
        enc.step(1e-2).unwrap();
        enc.save(dst.path()).unwrap();
        let config = EncoderConfig {
            kind: EncoderKind::Pretrained,
            model_id: dst.path().to_string_lossy().into_owned(),
            hidden_dim: 0,
            max_positions: 64,
            trainable: false,
        };
        let reloaded = PretrainedEncoder::from_config(&config, 0, 0.0).unwrap();
        assert_eq!(reloaded.id(), enc.id());
        assert_eq!(enc.encode(&tokens).unwrap(), reloaded.encode(&tokens).unwrap());
    }

    #[test]
    fn missing_model_is_an_encoder_error() {
        assert!(matches!(resolve_model_dir("/nonexistent/model"), Err(Error::Encoder(_))));
    }
}
