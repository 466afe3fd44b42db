use rand::RngCore;
use seqtag_tensor::{Real, Tensor};

use super::rnn::{BiRnn, CellKind};
use crate::batch::Batch;
use crate::config::Settings;
use crate::encoder::{key_mask, SelfAttention};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mode, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    FineTune,
    BiLstm,
    BiGru,
    BiLstmAttn,
    BiGruAttn,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::FineTune,
        HeadKind::BiLstm,
        HeadKind::BiGru,
        HeadKind::BiLstmAttn,
        HeadKind::BiGruAttn,
    ];

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            HeadKind::FineTune => "+Fine-Tune",
            HeadKind::BiLstm => "+BiLSTM",
            HeadKind::BiGru => "+BiGRU",
            HeadKind::BiLstmAttn => "+BiLSTM_Attn",
            HeadKind::BiGruAttn => "+BiGRU_Attn",
        }
    }

    /// Name used in configuration files.
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::FineTune => "fine_tune",
            HeadKind::BiLstm => "bilstm",
            HeadKind::BiGru => "bigru",
            HeadKind::BiLstmAttn => "bilstm_attn",
            HeadKind::BiGruAttn => "bigru_attn",
        }
    }

    /// Accepts config names, table labels, and upper-case forms.
    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches('+').to_ascii_lowercase().replace('-', "_");
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown head kind {s:?}")))
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            HeadKind::FineTune => None,
            HeadKind::BiLstm | HeadKind::BiLstmAttn => Some(CellKind::Lstm),
            HeadKind::BiGru | HeadKind::BiGruAttn => Some(CellKind::Gru),
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, HeadKind::BiLstmAttn | HeadKind::BiGruAttn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    /// Per-head attention dimension.
    pub attn_dim: usize,
    pub attn_heads: usize,
    pub dropout: f64,
    pub num_tags: usize,
}

impl HeadConfig {
    /// RNN 256 units, 1 layer, 3 attention heads of 64, dropout 0.5.
    pub fn new(kind: HeadKind, num_tags: usize) -> Self {
        HeadConfig {
            kind,
            rnn_hidden: 256,
            rnn_layers: 1,
            attn_dim: 64,
            attn_heads: 3,
            dropout: 0.5,
            num_tags,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tags == 0 {
            return Err(Error::Config("num_tags must be at least 1".into()));
        }
        if self.kind.cell().is_some() && (self.rnn_hidden == 0 || self.rnn_layers == 0) {
            return Err(Error::Config("RNN heads need positive rnn_hidden and rnn_layers".into()));
        }
        if self.kind.has_attention() && (self.attn_dim == 0 || self.attn_heads == 0) {
            return Err(Error::Config("attention heads need positive attn_dim and attn_heads".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("head dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.set("kind", self.kind.name());
        s.set("rnn_hidden", self.rnn_hidden);
        s.set("rnn_layers", self.rnn_layers);
        s.set("attn_dim", self.attn_dim);
        s.set("attn_heads", self.attn_heads);
        s.set("dropout", self.dropout);
        s.set("num_tags", self.num_tags);
        s
    }

    /// Reads a config; `num_tags` and `kind` fall back to the arguments.
    pub fn from_settings(s: &Settings, kind: HeadKind, num_tags: usize) -> Result<Self> {
        let kind = match s.get("kind") {
            Some(k) => HeadKind::parse(k)?,
            None => kind,
        };
        let d = HeadConfig::new(kind, num_tags);
        let c = HeadConfig {
            kind,
            rnn_hidden: s.get_or("rnn_hidden", d.rnn_hidden)?,
            rnn_layers: s.get_or("rnn_layers", d.rnn_layers)?,
            attn_dim: s.get_or("attn_dim", d.attn_dim)?,
            attn_heads: s.get_or("attn_heads", d.attn_heads)?,
            dropout: s.get_or("dropout", d.dropout)?,
            num_tags: s.get_or("num_tags", d.num_tags)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// One of the five tagging heads.
///
/// `FineTune` is dropout + linear. The RNN kinds run a bidirectional RNN,
/// the attention kinds add residual multi-head self-attention over its
/// outputs, and all end in dropout + linear.
#[derive(Debug, Clone)]
pub struct Head<F: Real = f32> {
    pub config: HeadConfig,
    pub rnn: Option<BiRnn<F>>,
    pub attention: Option<SelfAttention<F>>,
    pub output: Linear<F>,
}

impl<F: Real> Head<F> {
    pub fn new(config: HeadConfig, input_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let rnn = config
            .kind
            .cell()
            .map(|cell| BiRnn::new(rng, cell, input_dim, config.rnn_hidden, config.rnn_layers));
        let feature = rnn.as_ref().map_or(input_dim, BiRnn::output_dim);
        let attention = config
            .kind
            .has_attention()
            .then(|| SelfAttention::new(rng, feature, config.attn_heads, config.attn_dim));
        let output = Linear::new(rng, feature, config.num_tags);
        Ok(Head {
            config,
            rnn,
            attention,
            output,
        })
    }

    /// Width of the features entering the output layer.
    pub fn feature_dim(&self) -> usize {
        self.output.input_dim()
    }

    /// `[batch, seq, input]` → `[batch, seq, num_tags]` logits.
    pub fn forward(&self, x: &Tensor<F>, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let mut h = x.clone();
        if let Some(rnn) = &self.rnn {
            h = rnn.forward(&h, &batch.lengths)?;
        }
        if let Some(att) = &self.attention {
            let mask = key_mask(&batch.attention_mask, batch.batch_size, batch.seq_len, att.num_heads)?;
            let (a, _) = att.forward(&h, &mask)?;
            h = h.add(&a)?;
        }
        let h = mode.dropout(&h, self.config.dropout)?;
        self.output.forward(&h)
    }
}

impl<F: Real> Params<F> for Head<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        if let Some(rnn) = &self.rnn {
            rnn.collect_params(&format!("{prefix}rnn."), out);
        }
        if let Some(att) = &self.attention {
            att.collect_params(&format!("{prefix}attention."), out);
        }
        self.output.collect_params(&format!("{prefix}output."), out);
    }
}
