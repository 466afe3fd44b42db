//! Replaced-token-detection pretraining.
//!
//! A small generator encoder fills the masked positions with samples from
//! its MLM distribution; a discriminator encoder labels every real token as
//! original or replaced. Both share one embedding block and train on
//! `gen_loss + λ · disc_loss`. Samples are plain ids, so no gradient flows
//! from the discriminator loss back through the sampling step.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::RngCore;
use seqtag_tensor::{Adam, ParamGroup, Real, Tensor, IGNORE_INDEX};

use crate::batch::Batch;
use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::mlm::{diverged, encode_corpus, losses_from_meta, losses_to_meta, mlm_loss, padded_targets, select_mask_targets, MlmHead, PretrainConfig, PretrainRun};
use crate::nn::{init_weight, Mode, Params};
use crate::tokenizer::{TokenSequence, Vocab};
use crate::train;

/// Weight of the discriminator loss.
pub const DEFAULT_LAMBDA: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ElectraConfig {
    pub generator: EncoderConfig,
    pub discriminator: EncoderConfig,
    pub lambda: f64,
}

impl ElectraConfig {
    /// Generator at half the discriminator width and head count, same
    /// depth, reading the discriminator's embeddings through a projection.
    pub fn from_discriminator(discriminator: EncoderConfig) -> Self {
        let generator = EncoderConfig {
            hidden_size: (discriminator.hidden_size / 2).max(1),
            num_heads: (discriminator.num_heads / 2).max(1),
            ffn_size: (discriminator.ffn_size / 2).max(1),
            ..discriminator.clone()
        };
        ElectraConfig {
            generator,
            discriminator,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let (g, d) = (&self.generator, &self.discriminator);
        if g.hidden_size > d.hidden_size {
            return Err(Error::Config(format!(
                "generator width {} exceeds discriminator width {}",
                g.hidden_size, d.hidden_size
            )));
        }
        if g.vocab_size != d.vocab_size || g.embedding_size != d.embedding_size || g.max_positions != d.max_positions {
            return Err(Error::Config("generator and discriminator must share one embedding block".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.merge_prefixed("generator.", &self.generator.to_settings());
        s.merge_prefixed("discriminator.", &self.discriminator.to_settings());
        s.set("lambda", self.lambda);
        s
    }

    /// Reads `discriminator.*`, `generator.*` and `lambda`; generator keys
    /// override the derived half-width defaults.
    pub fn from_settings(s: &Settings, defaults: &EncoderConfig) -> Result<Self> {
        let discriminator = EncoderConfig::from_settings(&s.section("discriminator."), defaults)?;
        let derived = ElectraConfig::from_discriminator(discriminator);
        let c = ElectraConfig {
            generator: EncoderConfig::from_settings(&s.section("generator."), &derived.generator)?,
            lambda: s.get_or("lambda", DEFAULT_LAMBDA)?,
            discriminator: derived.discriminator,
        };
        c.validate()?;
        Ok(c)
    }
}

/// `softmax(h · tableᵀ)`: generator distribution over the vocabulary for
/// states `h` (`[.., emb]`) and embedding table `[vocab, emb]`.
pub fn generator_probs<F: Real>(h: &Tensor<F>, table: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(h.matmul_t(table)?.softmax())
}

/// `σ(wᵀh)` per position for states `[.., hidden]` and `w` of shape `[hidden, 1]`.
pub fn discriminator_probs<F: Real>(h: &Tensor<F>, w: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(h.matmul(w)?.sigmoid())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RtdLabel {
    Original,
    Replaced,
    /// `[CLS]`, `[SEP]` and padding.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtdBatch {
    pub corrupted_ids: Vec<usize>,
    pub labels: Vec<RtdLabel>,
}

impl RtdBatch {
    pub fn num_replaced(&self) -> usize {
        self.labels.iter().filter(|&&l| l == RtdLabel::Replaced).count()
    }

    /// 0/1 targets and the mask of labelled positions, for a BCE loss.
    pub fn targets<F: Real>(&self) -> (Vec<F>, Vec<bool>) {
        self.labels
            .iter()
            .map(|l| match l {
                RtdLabel::Replaced => (F::one(), true),
                RtdLabel::Original => (F::zero(), true),
                RtdLabel::Ignore => (F::zero(), false),
            })
            .unzip()
    }
}

/// Samples a replacement at every position with a target, from the rows of
/// `probs` (`[positions, vocab]` row-major), and labels the result.
///
/// `targets` hold the original ids at masked positions and
/// [`IGNORE_INDEX`] elsewhere; other real positions keep `batch.ids`.
pub fn sample_and_label<F: Real>(batch: &Batch, targets: &[i64], probs: &[F], rng: &mut dyn RngCore) -> Result<RtdBatch> {
    let n = batch.num_positions();
    if targets.len() != n || n == 0 || !probs.len().is_multiple_of(n) {
        return Err(Error::Contract(format!(
            "{} targets and {} probabilities for {n} positions",
            targets.len(),
            probs.len()
        )));
    }
    let vocab = probs.len() / n;
    let mut out = RtdBatch {
        corrupted_ids: batch.ids.clone(),
        labels: Vec::with_capacity(n),
    };
    for pos in 0..n {
        let real = batch.attention_mask[pos] && batch.word_index[pos] >= 0;
        if !real {
            out.labels.push(RtdLabel::Ignore);
            continue;
        }
        if targets[pos] == IGNORE_INDEX {
            out.labels.push(RtdLabel::Original);
            continue;
        }
        let row = probs[pos * vocab..(pos + 1) * vocab].iter().map(|p| p.to_f64().unwrap());
        let dist = WeightedIndex::new(row)
            .map_err(|e| Error::Contract(format!("generator row {pos} is not a distribution: {e}")))?;
        let sample = dist.sample(rng);
        out.corrupted_ids[pos] = sample;
        out.labels.push(if sample as i64 == targets[pos] {
            RtdLabel::Original
        } else {
            RtdLabel::Replaced
        });
    }
    Ok(out)
}

/// Generator and discriminator with one shared embedding block.
#[derive(Debug, Clone)]
pub struct ElectraModel<F: Real = f32> {
    pub config: ElectraConfig,
    pub generator: Encoder<F>,
    pub generator_head: MlmHead<F>,
    pub discriminator: Encoder<F>,
    /// `[hidden, 1]`, no bias.
    pub discriminator_weight: Tensor<F>,
}

impl<F: Real> ElectraModel<F> {
    pub fn new(config: ElectraConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let discriminator = Encoder::new(config.discriminator.clone(), rng)?;
        let generator = Encoder::with_embeddings(config.generator.clone(), discriminator.embeddings.clone(), rng)?;
        let generator_head = MlmHead::new(
            rng,
            config.generator.hidden_size,
            config.generator.embedding_size,
            config.generator.vocab_size,
        );
        let discriminator_weight = init_weight(rng, &[config.discriminator.hidden_size, 1]);
        Ok(ElectraModel {
            config,
            generator,
            generator_head,
            discriminator,
            discriminator_weight,
        })
    }

    /// `[batch, seq, vocab]` generator logits.
    pub fn generator_logits(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let h = self.generator.forward(batch, mode)?;
        self.generator_head.logits(h.last(), &self.generator.embeddings.token)
    }

    /// `[batch·seq]` discriminator logits `wᵀh`.
    pub fn discriminator_logits(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let h = self.discriminator.forward(batch, mode)?;
        Ok(h.last().matmul(&self.discriminator_weight)?.reshape(&[batch.num_positions()])?)
    }

    /// Generator parameters that are not shared with the discriminator.
    pub fn generator_params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.generator.body_params("generator.", &mut out);
        self.generator_head.collect_params("generator.mlm_head.", &mut out);
        out
    }

    /// Discriminator parameters, including the shared embeddings.
    pub fn discriminator_params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.discriminator.collect_params("discriminator.", &mut out);
        out.push(("discriminator_head.weight".into(), self.discriminator_weight.clone()));
        out
    }
}

impl<F: Real> Params<F> for ElectraModel<F> {
    /// Every parameter once; the shared embeddings appear under
    /// `discriminator.embeddings.*`.
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        for (n, t) in self.discriminator_params().into_iter().chain(self.generator_params()) {
            out.push((format!("{prefix}{n}"), t));
        }
    }
}

pub struct ElectraLosses<F: Real = f32> {
    pub generator: Tensor<F>,
    pub discriminator: Tensor<F>,
    pub combined: Tensor<F>,
    pub rtd: RtdBatch,
}

/// One joint forward pass on a masked batch.
///
/// `batch` holds the masked ids and `targets` the originals at masked
/// positions (as produced by [`select_mask_targets`]).
pub fn electra_step<F: Real>(
    model: &ElectraModel<F>,
    batch: &Batch,
    targets: &[i64],
    lambda: f64,
    mode: &mut Mode,
    rng: &mut dyn RngCore,
) -> Result<ElectraLosses<F>> {
    let gen_logits = model.generator_logits(batch, mode)?;
    let generator = mlm_loss(&gen_logits, targets)?;
    let probs = seqtag_tensor::no_grad(|| gen_logits.softmax()).to_vec();
    let rtd = sample_and_label(batch, targets, &probs, rng)?;
    let corrupted = batch.with_ids(rtd.corrupted_ids.clone())?;
    let logits = model.discriminator_logits(&corrupted, mode)?;
    let (y, mask) = rtd.targets::<F>();
    let discriminator = logits.bce_with_logits(&y, &mask)?;
    let combined = generator.add(&discriminator.mul_scalar(F::from_f64(lambda).unwrap()))?;
    Ok(ElectraLosses {
        generator,
        discriminator,
        combined,
        rtd,
    })
}

/// Share of labelled positions the discriminator classifies correctly
/// (threshold 0.5) on freshly masked and sampled copies of `seqs`.
pub fn discriminator_accuracy(model: &ElectraModel<f32>, seqs: &[TokenSequence], vocab: &Vocab, seed: u64) -> Result<f64> {
    let mut rng = train::split_rng(seed);
    let (mut right, mut total) = (0usize, 0usize);
    for chunk in seqs.chunks(32) {
        let (batch, targets) = masked_batch(chunk, vocab, &mut rng)?;
        let (rtd, logits) = seqtag_tensor::no_grad(|| -> Result<_> {
            let gen = model.generator_logits(&batch, &mut Mode::Eval)?.softmax().to_vec();
            let rtd = sample_and_label(&batch, &targets, &gen, &mut rng)?;
            let logits = model.discriminator_logits(&batch.with_ids(rtd.corrupted_ids.clone())?, &mut Mode::Eval)?;
            Ok((rtd, logits.to_vec()))
        })?;
        for (label, z) in rtd.labels.iter().zip(logits) {
            let predicted = if z > 0.0 { RtdLabel::Replaced } else { RtdLabel::Original };
            if *label != RtdLabel::Ignore {
                total += 1;
                right += usize::from(predicted == *label);
            }
        }
    }
    if total == 0 {
        return Err(Error::Contract("no labelled positions to evaluate".into()));
    }
    Ok(right as f64 / total as f64)
}

fn masked_batch(seqs: &[TokenSequence], vocab: &Vocab, rng: &mut dyn RngCore) -> Result<(Batch, Vec<i64>)> {
    let mut masked = Vec::with_capacity(seqs.len());
    let mut plans = Vec::with_capacity(seqs.len());
    for s in seqs {
        let plan = select_mask_targets(s, vocab, rng)?;
        let mut m = s.clone();
        m.ids = plan.input_ids.clone();
        masked.push(m);
        plans.push(plan);
    }
    let batch = Batch::from_sequences(&masked, vocab.pad_id())?;
    let targets = padded_targets(&plans, batch.seq_len);
    Ok((batch, targets))
}

fn electra_checkpoint(
    model: &ElectraModel<f32>,
    adam: &Adam<f32>,
    vocab: &Vocab,
    seed: u64,
    epoch: usize,
    losses: &[Vec<f64>],
) -> Checkpoint {
    let mut c = Checkpoint::new(vocab.clone());
    c.config = model.config.to_settings();
    c.metadata.set("task", "electra");
    c.metadata.set("encoder_prefix", "discriminator.");
    c.metadata.set("seed", seed);
    c.metadata.set("epoch", epoch);
    c.metadata.set("losses", losses_to_meta(losses));
    c.add_params("", &model.parameters());
    train::save_optimizer(&mut c, adam);
    c
}

/// Restores a model saved by [`train_electra`].
pub fn electra_from_checkpoint(ckpt: &Checkpoint) -> Result<ElectraModel<f32>> {
    if ckpt.metadata.get("task") != Some("electra") {
        return Err(Error::Config("checkpoint does not hold an ELECTRA model".into()));
    }
    let config = ElectraConfig::from_settings(&ckpt.config, &EncoderConfig::desk(ckpt.vocab.len()))?;
    let model = ElectraModel::new(config, &mut train::init_rng(0))?;
    let report = ckpt.load_into("", &model.parameters())?;
    if !report.missing.is_empty() {
        return Err(Error::Config(format!("checkpoint lacks {}", report.missing.join(", "))));
    }
    Ok(model)
}

/// Jointly pretrains generator and discriminator. Loss rows are
/// `[generator, discriminator, combined]` epoch means.
pub fn train_electra(
    sentences: &[String],
    vocab: &Vocab,
    config: &ElectraConfig,
    train_config: &PretrainConfig,
    seed: u64,
    resume: Option<&Checkpoint>,
) -> Result<PretrainRun> {
    config.validate()?;
    let max_len = train_config.max_len.min(config.discriminator.max_positions);
    let seqs = encode_corpus(sentences, vocab, max_len)?;
    let model = ElectraModel::<f32>::new(config.clone(), &mut train::init_rng(seed))?;
    let mut adam = Adam::new(vec![ParamGroup {
        config: train_config.optimizer,
        params: model.parameters(),
    }])?;
    let mut start = 0;
    let mut losses = Vec::new();
    if let Some(ckpt) = resume {
        if &ckpt.vocab != vocab {
            return Err(Error::Config("resume checkpoint has a different vocabulary".into()));
        }
        let report = ckpt.load_into("", &model.parameters())?;
        if !report.missing.is_empty() {
            return Err(Error::Config(format!("resume checkpoint lacks {}", report.missing.join(", "))));
        }
        train::restore_optimizer(ckpt, &mut adam)?;
        start = ckpt.metadata.require("epoch")?;
        losses = losses_from_meta(ckpt.metadata.get("losses"))?;
    }

    let mut last_good: Option<Checkpoint> = resume.cloned();
    for epoch in start + 1..=train_config.epochs {
        let mut rng = train::epoch_rng(seed, epoch);
        // dropout draws from its own stream so sampling stays aligned
        let mut dropout_rng = train::epoch_rng(seed.wrapping_add(1), epoch);
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for idx in train::shuffled_batches(seqs.len(), train_config.batch_size, &mut rng) {
            let chunk: Vec<TokenSequence> = idx.iter().map(|&i| seqs[i].clone()).collect();
            let (batch, targets) = masked_batch(&chunk, vocab, &mut rng)?;
            let step = electra_step(&model, &batch, &targets, config.lambda, &mut Mode::Train(&mut dropout_rng), &mut rng)?;
            let values = [
                train::scalar(&step.generator),
                train::scalar(&step.discriminator),
                train::scalar(&step.combined),
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(diverged(epoch, last_good));
            }
            step.combined.backward()?;
            if let Err(e) = adam.step() {
                return Err(match e {
                    seqtag_tensor::TensorError::NonFiniteGradient { .. } => diverged(epoch, last_good),
                    other => other.into(),
                });
            }
            adam.zero_grad();
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            count += 1;
        }
        let row: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        log::info!("electra epoch {epoch}: gen {:.6} disc {:.6} combined {:.6}", row[0], row[1], row[2]);
        losses.push(row);
        last_good = Some(electra_checkpoint(&model, &adam, vocab, seed, epoch, &losses));
    }
    let checkpoint = match last_good {
        Some(c) => c,
        None => electra_checkpoint(&model, &adam, vocab, seed, start, &losses),
    };
    Ok(PretrainRun { checkpoint, losses })
}
