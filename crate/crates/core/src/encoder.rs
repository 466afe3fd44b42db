//! Bidirectional transformer encoder with learned token, segment and
//! position embeddings.
//!
//! Layers use the post-norm residual order of the original BERT:
//! `x = LN(x + Attn(x)); x = LN(x + FFN(x))`, with GELU in the feed-forward
//! block and ε = 1e-12 in every layer norm.

use rand::RngCore;
use seqtag_tensor::{Real, Tensor};

use crate::batch::Batch;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::nn::{init_weight, LayerNorm, Linear, Mode, Params};

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Number of segment ids (sentence A / sentence B).
pub const NUM_SEGMENTS: usize = 2;

/// Additive score for masked keys; `exp` of it underflows to exactly zero.
const MASKED_SCORE: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Width of the embedding block; a projection maps it to `hidden_size`
    /// when the two differ (used by a narrow generator sharing embeddings).
    pub embedding_size: usize,
}

impl EncoderConfig {
    /// 4 layers, 64 hidden units, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        Self::with_shape(vocab_size, 4, 64, 4)
    }

    /// 12 layers, 768 hidden units, 12 heads.
    pub fn base(vocab_size: usize) -> Self {
        Self::with_shape(vocab_size, 12, 768, 12)
    }

    pub fn with_shape(vocab_size: usize, num_layers: usize, hidden_size: usize, num_heads: usize) -> Self {
        EncoderConfig {
            num_layers,
            hidden_size,
            num_heads,
            ffn_size: 4 * hidden_size,
            max_positions: 256,
            vocab_size,
            dropout: 0.1,
            embedding_size: hidden_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
            ("embedding_size", self.embedding_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.set("num_layers", self.num_layers);
        s.set("hidden_size", self.hidden_size);
        s.set("num_heads", self.num_heads);
        s.set("ffn_size", self.ffn_size);
        s.set("max_positions", self.max_positions);
        s.set("vocab_size", self.vocab_size);
        s.set("dropout", self.dropout);
        s.set("embedding_size", self.embedding_size);
        s
    }

    /// Reads a config, taking unspecified fields from `defaults`.
    pub fn from_settings(s: &Settings, defaults: &EncoderConfig) -> Result<Self> {
        let hidden_size = s.get_or("hidden_size", defaults.hidden_size)?;
        let c = EncoderConfig {
            num_layers: s.get_or("num_layers", defaults.num_layers)?,
            hidden_size,
            num_heads: s.get_or("num_heads", defaults.num_heads)?,
            ffn_size: s.get_or(
                "ffn_size",
                if s.contains("hidden_size") { 4 * hidden_size } else { defaults.ffn_size },
            )?,
            max_positions: s.get_or("max_positions", defaults.max_positions)?,
            vocab_size: s.get_or("vocab_size", defaults.vocab_size)?,
            dropout: s.get_or("dropout", defaults.dropout)?,
            embedding_size: s.get_or(
                "embedding_size",
                if s.contains("hidden_size") { hidden_size } else { defaults.embedding_size },
            )?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Token + segment + position embeddings, then layer norm and dropout.
///
/// Cloning shares the underlying tables.
#[derive(Debug, Clone)]
pub struct Embeddings<F: Real = f32> {
    pub token: Tensor<F>,
    pub segment: Tensor<F>,
    pub position: Tensor<F>,
    pub norm: LayerNorm<F>,
    pub dropout: f64,
}

impl<F: Real> Embeddings<F> {
    pub fn new(rng: &mut dyn RngCore, config: &EncoderConfig) -> Self {
        let e = config.embedding_size;
        Embeddings {
            token: init_weight(rng, &[config.vocab_size, e]),
            segment: init_weight(rng, &[NUM_SEGMENTS, e]),
            position: init_weight(rng, &[config.max_positions, e]),
            norm: LayerNorm::new(e, LAYER_NORM_EPS),
            dropout: config.dropout,
        }
    }

    pub fn dim(&self) -> usize {
        self.token.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.token.shape()[0]
    }

    pub fn max_positions(&self) -> usize {
        self.position.shape()[0]
    }

    /// `[batch, seq, dim]` embeddings of `batch.ids`, positions `0..seq`.
    pub fn forward(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let (b, s) = (batch.batch_size, batch.seq_len);
        if s > self.max_positions() {
            return Err(Error::Contract(format!(
                "sequence length {s} exceeds max_positions {}",
                self.max_positions()
            )));
        }
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
        let x = self
            .token
            .embedding(&batch.ids)?
            .add(&self.segment.embedding(&batch.segment_ids)?)?
            .add(&self.position.embedding(&positions)?)?
            .reshape(&[b, s, self.dim()])?;
        let x = self.norm.forward(&x)?;
        mode.dropout(&x, self.dropout)
    }
}

impl<F: Real> Params<F> for Embeddings<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}token"), self.token.clone()));
        out.push((format!("{prefix}segment"), self.segment.clone()));
        out.push((format!("{prefix}position"), self.position.clone()));
        self.norm.collect_params(&format!("{prefix}norm."), out);
    }
}

/// Additive `[batch·heads, seq, seq]` score mask: 0 for real keys, a large
/// negative value for padded keys.
pub fn key_mask<F: Real>(attention_mask: &[bool], batch: usize, seq: usize, heads: usize) -> Result<Tensor<F>> {
    let masked = F::from_f64c(MASKED_SCORE);
    let mut m = Vec::with_capacity(batch * heads * seq * seq);
    for b in 0..batch {
        let row: Vec<F> = attention_mask[b * seq..(b + 1) * seq]
            .iter()
            .map(|&real| if real { F::zero() } else { masked })
            .collect();
        for _ in 0..heads * seq {
            m.extend_from_slice(&row);
        }
    }
    Ok(Tensor::from_vec(m, &[batch * heads, seq, seq])?)
}

/// Scaled dot-product multi-head self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention<F: Real = f32> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub num_heads: usize,
}

impl<F: Real> SelfAttention<F> {
    /// Projects `input` → `heads × head_dim` for Q/K/V and back to `input`.
    pub fn new(rng: &mut dyn RngCore, input: usize, num_heads: usize, head_dim: usize) -> Self {
        let inner = num_heads * head_dim;
        SelfAttention {
            query: Linear::new(rng, input, inner),
            key: Linear::new(rng, input, inner),
            value: Linear::new(rng, input, inner),
            output: Linear::new(rng, inner, input),
            num_heads,
        }
    }

    fn split_heads(&self, x: &Tensor<F>, b: usize, s: usize) -> Result<Tensor<F>> {
        let inner = x.shape()[2];
        let d = inner / self.num_heads;
        Ok(x.reshape(&[b, s, self.num_heads, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * self.num_heads, s, d])?)
    }

    /// Returns the projected output `[batch, seq, input]` and the attention
    /// probabilities `[batch, heads, seq, seq]`.
    pub fn forward(&self, x: &Tensor<F>, mask: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (b, s) = (x.shape()[0], x.shape()[1]);
        let a = self.num_heads;
        let q = self.split_heads(&self.query.forward(x)?, b, s)?;
        let k = self.split_heads(&self.key.forward(x)?, b, s)?;
        let v = self.split_heads(&self.value.forward(x)?, b, s)?;
        let d = q.shape()[2];
        let scale = F::from_f64c(1.0 / (d as f64).sqrt());
        let probs = q.matmul_t(&k)?.mul_scalar(scale).add(mask)?.softmax();
        let ctx = probs
            .matmul(&v)?
            .reshape(&[b, a, s, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, s, a * d])?;
        Ok((self.output.forward(&ctx)?, probs.reshape(&[b, a, s, s])?))
    }
}

impl<F: Real> Params<F> for SelfAttention<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.query.collect_params(&format!("{prefix}query."), out);
        self.key.collect_params(&format!("{prefix}key."), out);
        self.value.collect_params(&format!("{prefix}value."), out);
        self.output.collect_params(&format!("{prefix}output."), out);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer<F: Real = f32> {
    pub attention: SelfAttention<F>,
    pub attention_norm: LayerNorm<F>,
    pub ffn_inner: Linear<F>,
    pub ffn_outer: Linear<F>,
    pub ffn_norm: LayerNorm<F>,
    pub dropout: f64,
}

impl<F: Real> EncoderLayer<F> {
    pub fn new(rng: &mut dyn RngCore, config: &EncoderConfig) -> Self {
        let h = config.hidden_size;
        EncoderLayer {
            attention: SelfAttention::new(rng, h, config.num_heads, config.head_dim()),
            attention_norm: LayerNorm::new(h, LAYER_NORM_EPS),
            ffn_inner: Linear::new(rng, h, config.ffn_size),
            ffn_outer: Linear::new(rng, config.ffn_size, h),
            ffn_norm: LayerNorm::new(h, LAYER_NORM_EPS),
            dropout: config.dropout,
        }
    }

    /// `LN(x + dropout(Attn(x)))`, plus the attention probabilities.
    pub fn attention_sublayer(&self, x: &Tensor<F>, mask: &Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, Tensor<F>)> {
        let (a, probs) = self.attention.forward(x, mask)?;
        let a = mode.dropout(&a, self.dropout)?;
        Ok((self.attention_norm.forward(&x.add(&a)?)?, probs))
    }

    /// `LN(x + dropout(W₂ GELU(W₁ x)))`.
    pub fn ffn_sublayer(&self, x: &Tensor<F>, mode: &mut Mode) -> Result<Tensor<F>> {
        let f = self.ffn_outer.forward(&self.ffn_inner.forward(x)?.gelu())?;
        let f = mode.dropout(&f, self.dropout)?;
        self.ffn_norm.forward(&x.add(&f)?)
    }

    pub fn forward(&self, x: &Tensor<F>, mask: &Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, Tensor<F>)> {
        let (x, probs) = self.attention_sublayer(x, mask, mode)?;
        Ok((self.ffn_sublayer(&x, mode)?, probs))
    }
}

impl<F: Real> Params<F> for EncoderLayer<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.attention.collect_params(&format!("{prefix}attention."), out);
        self.attention_norm.collect_params(&format!("{prefix}attention_norm."), out);
        self.ffn_inner.collect_params(&format!("{prefix}ffn.inner."), out);
        self.ffn_outer.collect_params(&format!("{prefix}ffn.outer."), out);
        self.ffn_norm.collect_params(&format!("{prefix}ffn_norm."), out);
    }
}

/// Per-layer hidden states: `layers[0]` is the embedding output and
/// `layers[i]` the output of transformer layer `i`, each `[batch, seq, hidden]`.
#[derive(Debug, Clone)]
pub struct EncoderOutput<F: Real = f32> {
    pub layers: Vec<Tensor<F>>,
    /// Attention probabilities per layer, `[batch, heads, seq, seq]`.
    pub attention: Vec<Tensor<F>>,
}

impl<F: Real> EncoderOutput<F> {
    pub fn last(&self) -> &Tensor<F> {
        self.layers.last().expect("at least the embedding layer")
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<F: Real = f32> {
    pub config: EncoderConfig,
    pub embeddings: Embeddings<F>,
    pub projection: Option<Linear<F>>,
    pub layers: Vec<EncoderLayer<F>>,
}

impl<F: Real> Encoder<F> {
    pub fn new(config: EncoderConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let embeddings = Embeddings::new(rng, &config);
        Self::with_embeddings(config, embeddings, rng)
    }

    /// Builds an encoder around an existing (possibly shared) embedding block.
    pub fn with_embeddings(config: EncoderConfig, embeddings: Embeddings<F>, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embedding_size || embeddings.vocab_size() != config.vocab_size {
            return Err(Error::Config(format!(
                "embedding block is {}×{}, config expects {}×{}",
                embeddings.vocab_size(),
                embeddings.dim(),
                config.vocab_size,
                config.embedding_size
            )));
        }
        let projection =
            (config.embedding_size != config.hidden_size).then(|| Linear::new(rng, config.embedding_size, config.hidden_size));
        let layers = (0..config.num_layers).map(|_| EncoderLayer::new(rng, &config)).collect();
        Ok(Encoder {
            config,
            embeddings,
            projection,
            layers,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn forward(&self, batch: &Batch, mode: &mut Mode) -> Result<EncoderOutput<F>> {
        let mut x = self.embeddings.forward(batch, mode)?;
        if let Some(p) = &self.projection {
            x = p.forward(&x)?;
        }
        let mask = key_mask(&batch.attention_mask, batch.batch_size, batch.seq_len, self.config.num_heads)?;
        let mut layers = Vec::with_capacity(self.layers.len() + 1);
        let mut attention = Vec::with_capacity(self.layers.len());
        layers.push(x.clone());
        for layer in &self.layers {
            let (y, probs) = layer.forward(&x, &mask, mode)?;
            attention.push(probs);
            layers.push(y.clone());
            x = y;
        }
        Ok(EncoderOutput { layers, attention })
    }

    /// Parameters excluding the embedding block.
    pub fn body_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        if let Some(p) = &self.projection {
            p.collect_params(&format!("{prefix}embeddings_project."), out);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&format!("{prefix}layers.{i}."), out);
        }
    }
}

impl<F: Real> Params<F> for Encoder<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.embeddings.collect_params(&format!("{prefix}embeddings."), out);
        self.body_params(prefix, out);
    }
}
