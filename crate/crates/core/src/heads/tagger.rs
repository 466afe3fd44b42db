use rand::RngCore;
use seqtag_tensor::{Real, Tensor, IGNORE_INDEX};

use super::head::{Head, HeadConfig, HeadKind};
use super::scalar_mix::ScalarMix;
use super::tagset::{Scheme, TagSet};
use crate::batch::Batch;
use crate::checkpoint::Checkpoint;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{Mode, Params};
use crate::tokenizer::{encode_sentence, TokenSequence, Vocab};

/// Encoder, scalar mix and head, plus what is needed to tag raw words.
#[derive(Debug, Clone)]
pub struct TaggerModel<F: Real = f32> {
    pub encoder: Encoder<F>,
    pub mix: ScalarMix<F>,
    pub head: Head<F>,
    pub tagset: TagSet,
    pub vocab: Vocab,
    pub max_len: usize,
}

impl<F: Real> TaggerModel<F> {
    pub fn new(
        encoder_config: EncoderConfig,
        head_config: HeadConfig,
        tagset: TagSet,
        vocab: Vocab,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let encoder = Encoder::new(encoder_config, rng)?;
        Self::with_encoder(encoder, head_config, tagset, vocab, rng)
    }

    pub fn with_encoder(
        encoder: Encoder<F>,
        head_config: HeadConfig,
        tagset: TagSet,
        vocab: Vocab,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if head_config.num_tags != tagset.len() {
            return Err(Error::Config(format!(
                "head has {} tags but the tag set has {}",
                head_config.num_tags,
                tagset.len()
            )));
        }
        if vocab.len() != encoder.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the encoder expects {}",
                vocab.len(),
                encoder.config.vocab_size
            )));
        }
        let mix = ScalarMix::new(encoder.config.num_layers + 1);
        let head = Head::new(head_config, encoder.hidden_size(), rng)?;
        let max_len = encoder.config.max_positions;
        Ok(TaggerModel {
            encoder,
            mix,
            head,
            tagset,
            vocab,
            max_len,
        })
    }

    /// `[batch, seq, num_tags]` logits at every subword position.
    pub fn logits(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let out = self.encoder.forward(batch, mode)?;
        let mixed = self.mix.forward(&out.layers)?;
        self.head.forward(&mixed, batch, mode)
    }

    pub fn encode(&self, words: &[impl AsRef<str>]) -> Result<TokenSequence> {
        encode_sentence(words, &self.vocab, self.max_len)
    }

    /// Encoder parameters, named `encoder.*`.
    pub fn encoder_params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.encoder.collect_params("encoder.", &mut out);
        out
    }

    /// Scalar-mix and head parameters, named `scalar_mix.*` and `head.*`.
    pub fn head_params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.mix.collect_params("scalar_mix.", &mut out);
        self.head.collect_params("head.", &mut out);
        out
    }

    /// Tags for a batch of encoded sentences, one per retained word.
    pub fn predict_batch(&self, seqs: &[TokenSequence]) -> Result<Vec<Vec<usize>>> {
        let batch = Batch::from_sequences(seqs, self.vocab.pad_id())?;
        let logits = seqtag_tensor::no_grad(|| self.logits(&batch, &mut Mode::Eval))?;
        let ids = argmax(&logits)?;
        Ok(seqs
            .iter()
            .enumerate()
            .map(|(b, s)| {
                s.word_start_positions()
                    .into_iter()
                    .map(|p| ids[b * batch.seq_len + p])
                    .collect()
            })
            .collect())
    }

    /// One tag per input word. Words lost to truncation get tag id 0 and a
    /// warning is logged.
    pub fn tag_sentence(&self, words: &[impl AsRef<str>]) -> Result<Vec<String>> {
        if words.is_empty() {
            return Err(Error::Contract("cannot tag an empty sentence".into()));
        }
        let seq = self.encode(words)?;
        let mut ids = self.predict_batch(std::slice::from_ref(&seq))?.pop().unwrap();
        if seq.truncated {
            log::warn!(
                "sentence of {} words truncated to {}; the rest get tag {}",
                seq.source_words,
                seq.num_words,
                self.tagset.label(0).unwrap()
            );
            ids.resize(words.len(), 0);
        }
        Ok(ids.into_iter().map(|i| self.tagset.label(i).unwrap().to_string()).collect())
    }

    /// Checkpoint with tensors `encoder.*`, `scalar_mix.*`, `head.*`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.vocab.clone());
        c.config.merge_prefixed("encoder.", &self.encoder.config.to_settings());
        c.config.merge_prefixed("head.", &self.head.config.to_settings());
        c.config.set("tagset.labels", self.tagset.labels().join(" "));
        c.config.set("tagset.scheme", self.tagset.scheme().name());
        c.config.set("max_len", self.max_len);
        c.metadata.set("task", "tagger");
        c.metadata.set("encoder_prefix", "encoder.");
        c.add_params("", &self.encoder_params());
        c.add_params("", &self.head_params());
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.metadata.get("task") != Some("tagger") {
            return Err(Error::Config("checkpoint does not hold a tagger".into()));
        }
        let enc_cfg = EncoderConfig::from_settings(
            &ckpt.config.section("encoder."),
            &EncoderConfig::desk(ckpt.vocab.len()),
        )?;
        let scheme = Scheme::parse(&ckpt.config.require::<String>("tagset.scheme")?)?;
        let labels: String = ckpt.config.require("tagset.labels")?;
        let tagset = TagSet::new(labels.split(' '), scheme)?;
        let head_cfg = HeadConfig::from_settings(&ckpt.config.section("head."), HeadKind::FineTune, tagset.len())?;
        // parameters are overwritten below; the stream only fixes shapes
        let mut rng = crate::train::init_rng(0);
        let mut model = Self::new(enc_cfg, head_cfg, tagset, ckpt.vocab.clone(), &mut rng)?;
        model.max_len = ckpt.config.get_or("max_len", model.max_len)?;
        let mut params = model.encoder_params();
        params.extend(model.head_params());
        let report = ckpt.load_into("", &params)?;
        if !report.missing.is_empty() {
            return Err(Error::Config(format!("checkpoint lacks {}", report.missing.join(", "))));
        }
        Ok(model)
    }
}

impl<F: Real> Params<F> for TaggerModel<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.encoder.collect_params(&format!("{prefix}encoder."), out);
        self.mix.collect_params(&format!("{prefix}scalar_mix."), out);
        self.head.collect_params(&format!("{prefix}head."), out);
    }
}

/// Per-position targets for one padded batch: the gold tag id at each
/// word-start position, ignore elsewhere.
pub fn word_targets(batch: &Batch, gold: &[Vec<usize>], num_tags: usize) -> Result<Vec<i64>> {
    if gold.len() != batch.batch_size {
        return Err(Error::Contract(format!(
            "{} gold rows for a batch of {}",
            gold.len(),
            batch.batch_size
        )));
    }
    let mut targets = vec![IGNORE_INDEX; batch.num_positions()];
    for (b, tags) in gold.iter().enumerate() {
        let row = b * batch.seq_len..(b + 1) * batch.seq_len;
        for pos in row {
            if !batch.is_word_start[pos] {
                continue;
            }
            let w = batch.word_index[pos] as usize;
            // words past the gold list were never encoded
            let Some(&tag) = tags.get(w) else {
                return Err(Error::Contract(format!("row {b} has no gold tag for word {w}")));
            };
            if tag >= num_tags {
                return Err(Error::Contract(format!("tag id {tag} out of range for {num_tags} tags")));
            }
            targets[pos] = tag as i64;
        }
    }
    Ok(targets)
}

/// Mean cross-entropy at word-start positions.
pub fn tag_loss<F: Real>(logits: &Tensor<F>, batch: &Batch, gold: &[Vec<usize>]) -> Result<Tensor<F>> {
    let num_tags = *logits.shape().last().unwrap();
    let targets = word_targets(batch, gold, num_tags)?;
    if targets.iter().all(|&t| t == IGNORE_INDEX) {
        return Err(Error::Contract("batch has no word-start positions".into()));
    }
    Ok(logits.cross_entropy(&targets)?)
}

/// Index of the largest entry along the last axis, lowest index on ties.
pub fn argmax<F: Real>(logits: &Tensor<F>) -> Result<Vec<usize>> {
    let width = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::Contract("argmax of a scalar".into()))?;
    if width == 0 {
        return Err(Error::Contract("argmax over an empty axis".into()));
    }
    Ok(logits
        .to_vec()
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}
