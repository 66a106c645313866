//! A BERT forward pass built only from differentiable tensor ops.
//!
//! The stock candle implementation uses a fused layer norm that does not
//! propagate gradients, which would silently freeze everything below the
//! last layer. Parameter names follow the Hugging Face layout so published
//! `model.safetensors` files load unchanged.

use candle_core::{DType, Module, Result, Tensor, D};
use candle_nn::{embedding, linear, Embedding, Linear, VarBuilder};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_act")]
    pub hidden_act: String,
}

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

fn default_act() -> String {
    "gelu".into()
}

struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    fn load(size: usize, eps: f64, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(size, "weight", candle_nn::Init::Const(1.0))?,
            bias: vb.get_with_hints(size, "bias", candle_nn::Init::Const(0.0))?,
            eps,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)? as f64;
        let centered = x.broadcast_sub(&(x.sum_keepdim(D::Minus1)? / d)?)?;
        let var = (centered.sqr()?.sum_keepdim(D::Minus1)? / d)?;
        centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
    heads: usize,
    exact_gelu: bool,
}

impl Layer {
    fn load(cfg: &BertConfig, vb: VarBuilder) -> Result<Self> {
        let h = cfg.hidden_size;
        let att = vb.pp("attention");
        Ok(Self {
            query: linear(h, h, att.pp("self").pp("query"))?,
            key: linear(h, h, att.pp("self").pp("key"))?,
            value: linear(h, h, att.pp("self").pp("value"))?,
            attn_out: linear(h, h, att.pp("output").pp("dense"))?,
            attn_norm: LayerNorm::load(h, cfg.layer_norm_eps, att.pp("output").pp("LayerNorm"))?,
            intermediate: linear(h, cfg.intermediate_size, vb.pp("intermediate").pp("dense"))?,
            output: linear(cfg.intermediate_size, h, vb.pp("output").pp("dense"))?,
            out_norm: LayerNorm::load(h, cfg.layer_norm_eps, vb.pp("output").pp("LayerNorm"))?,
            heads: cfg.num_attention_heads,
            exact_gelu: cfg.hidden_act != "gelu_new" && cfg.hidden_act != "gelu_pytorch_tanh",
        })
    }

    /// `x` is `(seq, hidden)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h) = x.dims2()?;
        let dh = h / self.heads;
        let split = |t: Tensor| t.reshape((n, self.heads, dh))?.transpose(0, 1)?.contiguous();
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?;
        let v = split(self.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let ctx = candle_nn::ops::softmax(&scores, D::Minus1)?
            .matmul(&v)?
            .transpose(0, 1)?
            .reshape((n, h))?;
        let x = self.attn_norm.forward(&(self.attn_out.forward(&ctx)? + x)?)?;
        let inner = self.intermediate.forward(&x)?;
        let inner = if self.exact_gelu { inner.gelu_erf()? } else { inner.gelu()? };
        self.out_norm.forward(&(self.output.forward(&inner)? + x)?)
    }
}

pub struct Bert {
    words: Embedding,
    positions: Embedding,
    types: Embedding,
    norm: LayerNorm,
    layers: Vec<Layer>,
}

impl Bert {
    pub fn load(cfg: &BertConfig, vb: VarBuilder) -> Result<Self> {
        let emb = vb.pp("embeddings");
        let h = cfg.hidden_size;
        Ok(Self {
            words: embedding(cfg.vocab_size, h, emb.pp("word_embeddings"))?,
            positions: embedding(cfg.max_position_embeddings, h, emb.pp("position_embeddings"))?,
            types: embedding(cfg.type_vocab_size, h, emb.pp("token_type_embeddings"))?,
            norm: LayerNorm::load(h, cfg.layer_norm_eps, emb.pp("LayerNorm"))?,
            layers: (0..cfg.num_hidden_layers)
                .map(|i| Layer::load(cfg, vb.pp("encoder").pp("layer").pp(i)))
                .collect::<Result<_>>()?,
        })
    }

    /// Final hidden states `(seq, hidden)` for one unpadded sequence.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let n = ids.dim(0)?;
        let device = ids.device();
        let positions = Tensor::arange(0u32, n as u32, device)?;
        let types = Tensor::zeros(n, DType::U32, device)?;
        let x = (self.words.forward(ids)? + self.positions.forward(&positions)?)?;
        let mut x = self.norm.forward(&(x + self.types.forward(&types)?)?)?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }
}
