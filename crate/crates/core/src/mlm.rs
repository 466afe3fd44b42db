//! Whole-word masked-language-model pretraining.
//!
//! Each word is selected independently with probability 0.15 (one word is
//! forced when the draw selects none). A selected word gets one action for
//! all of its subwords: 80% `[MASK]`, 10% unchanged, 10% a random
//! non-special id drawn per subword. The loss is the mean cross-entropy over
//! the subword positions of selected words only.

use rand::{Rng, RngCore};
use seqtag_tensor::{Adam, OptimizerGroup, ParamGroup, Real, Tensor, IGNORE_INDEX};

use crate::batch::Batch;
use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::encoder::{Encoder, EncoderConfig, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::nn::{init_zeros, LayerNorm, Linear, Mode, Params};
use crate::tokenizer::{encode_sentence, TokenSequence, Vocab};
use crate::train;

pub const SELECT_PROB: f64 = 0.15;
pub const MASK_PROB: f64 = 0.8;
pub const KEEP_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskAction {
    Mask,
    Keep,
    Random,
}

/// Which words were selected in one sequence and what was done to them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// Selected word positions, ascending.
    pub selected_words: Vec<usize>,
    /// Action per selected word, parallel to `selected_words`.
    pub actions: Vec<MaskAction>,
    /// The sequence after corruption (ids actually fed to the model).
    pub input_ids: Vec<usize>,
    /// Original id at subword positions of selected words, ignore elsewhere.
    pub targets: Vec<i64>,
}

impl MaskPlan {
    pub fn action_of(&self, word: usize) -> Option<MaskAction> {
        self.selected_words
            .iter()
            .position(|&w| w == word)
            .map(|i| self.actions[i])
    }

    /// Builds a plan from explicit choices; RANDOM words take their
    /// replacement ids from `random_ids`, one per subword, in order.
    pub fn from_choices(
        seq: &TokenSequence,
        mask_id: usize,
        choices: &[(usize, MaskAction)],
        random_ids: &mut dyn Iterator<Item = usize>,
    ) -> Result<Self> {
        let mut plan = MaskPlan {
            selected_words: Vec::with_capacity(choices.len()),
            actions: Vec::with_capacity(choices.len()),
            input_ids: seq.ids.clone(),
            targets: vec![IGNORE_INDEX; seq.len()],
        };
        let spans = seq.word_spans();
        for &(word, action) in choices {
            let span = spans.get(word).ok_or_else(|| {
                Error::Contract(format!("word {word} out of range for {} words", spans.len()))
            })?;
            plan.selected_words.push(word);
            plan.actions.push(action);
            for pos in span.clone() {
                plan.targets[pos] = seq.ids[pos] as i64;
                plan.input_ids[pos] = match action {
                    MaskAction::Mask => mask_id,
                    MaskAction::Keep => seq.ids[pos],
                    MaskAction::Random => random_ids
                        .next()
                        .ok_or_else(|| Error::Contract("ran out of random replacement ids".into()))?,
                };
            }
        }
        Ok(plan)
    }
}

/// Draws a whole-word mask plan for `seq`.
pub fn select_mask_targets(seq: &TokenSequence, vocab: &Vocab, rng: &mut dyn RngCore) -> Result<MaskPlan> {
    let n = seq.num_words;
    if n == 0 {
        return Err(Error::Contract("sequence has no maskable words".into()));
    }
    let regular = vocab.regular_ids();
    if regular.is_empty() {
        return Err(Error::Contract("vocabulary has no regular tokens to sample".into()));
    }
    let mut selected: Vec<usize> = (0..n).filter(|_| rng.gen_bool(SELECT_PROB)).collect();
    if selected.is_empty() {
        selected.push(rng.gen_range(0..n));
    }
    let choices: Vec<(usize, MaskAction)> = selected
        .into_iter()
        .map(|w| {
            let u: f64 = rng.gen();
            let action = if u < MASK_PROB {
                MaskAction::Mask
            } else if u < MASK_PROB + KEEP_PROB {
                MaskAction::Keep
            } else {
                MaskAction::Random
            };
            (w, action)
        })
        .collect();
    let random: Vec<usize> = {
        let spans = seq.word_spans();
        let needed: usize = choices
            .iter()
            .filter(|(_, a)| *a == MaskAction::Random)
            .map(|&(w, _)| spans[w].len())
            .sum();
        (0..needed).map(|_| rng.gen_range(regular.clone())).collect()
    };
    MaskPlan::from_choices(seq, vocab.mask_id(), &choices, &mut random.into_iter())
}

/// Mean cross-entropy of `[batch, seq, vocab]` logits at non-ignored targets.
pub fn mlm_loss<F: Real>(logits: &Tensor<F>, targets: &[i64]) -> Result<Tensor<F>> {
    if targets.iter().all(|&t| t == IGNORE_INDEX) {
        return Err(Error::Contract("every position is ignored; the MLM loss is undefined".into()));
    }
    Ok(logits.cross_entropy(targets)?)
}

/// Dense + GELU + layer norm, then a decoder tied to the token embeddings
/// plus a learned output bias.
#[derive(Debug, Clone)]
pub struct MlmHead<F: Real = f32> {
    pub dense: Linear<F>,
    pub norm: LayerNorm<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> MlmHead<F> {
    pub fn new(rng: &mut dyn RngCore, hidden: usize, embedding: usize, vocab: usize) -> Self {
        MlmHead {
            dense: Linear::new(rng, hidden, embedding),
            norm: LayerNorm::new(embedding, LAYER_NORM_EPS),
            bias: init_zeros(&[vocab]),
        }
    }

    /// The transformed state whose dot products with embedding rows are the
    /// vocabulary scores.
    pub fn transform(&self, hidden: &Tensor<F>) -> Result<Tensor<F>> {
        self.norm.forward(&self.dense.forward(hidden)?.gelu())
    }

    /// `[batch, seq, vocab]` logits using `token_table` (`[vocab, emb]`).
    pub fn logits(&self, hidden: &Tensor<F>, token_table: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.transform(hidden)?.matmul_t(token_table)?.add(&self.bias)?)
    }
}

impl<F: Real> Params<F> for MlmHead<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.dense.collect_params(&format!("{prefix}dense."), out);
        self.norm.collect_params(&format!("{prefix}norm."), out);
        out.push((format!("{prefix}bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct MlmModel<F: Real = f32> {
    pub encoder: Encoder<F>,
    pub head: MlmHead<F>,
}

impl<F: Real> MlmModel<F> {
    pub fn new(config: EncoderConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let encoder = Encoder::new(config.clone(), rng)?;
        let head = MlmHead::new(rng, config.hidden_size, config.embedding_size, config.vocab_size);
        Ok(MlmModel { encoder, head })
    }

    pub fn logits(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor<F>> {
        let out = self.encoder.forward(batch, mode)?;
        self.head.logits(out.last(), &self.encoder.embeddings.token)
    }
}

impl<F: Real> Params<F> for MlmModel<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.encoder.collect_params(&format!("{prefix}encoder."), out);
        self.head.collect_params(&format!("{prefix}mlm_head."), out);
    }
}

/// Hyperparameters of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerGroup,
    pub max_len: usize,
}

impl Default for PretrainConfig {
    /// Batch size 16 and the pretraining Adam group at a desk-scale
    /// learning rate of 1e-3.
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 16,
            optimizer: OptimizerGroup::pretraining(1e-3),
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
        }
    }
}

impl PretrainConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let d = PretrainConfig::default();
        let mut optimizer = d.optimizer;
        optimizer.learning_rate = s.get_or("learning_rate", optimizer.learning_rate)?;
        optimizer.weight_decay = s.get_or("weight_decay", optimizer.weight_decay)?;
        optimizer.epsilon = s.get_or("adam_epsilon", optimizer.epsilon)?;
        optimizer.validate()?;
        let c = PretrainConfig {
            epochs: s.get_or("epochs", d.epochs)?,
            batch_size: s.get_or("batch_size", d.batch_size)?,
            optimizer,
            max_len: s.get_or("max_len", d.max_len)?,
        };
        if c.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(c)
    }
}

/// Result of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub checkpoint: Checkpoint,
    /// Per-epoch loss columns, from epoch 1 (including epochs restored from
    /// a resumed checkpoint).
    pub losses: Vec<Vec<f64>>,
}

impl PretrainRun {
    pub fn log(&self) -> String {
        train::format_log(&self.losses)
    }
}

/// Encodes whitespace-split sentences, skipping ones that end up empty.
pub fn encode_corpus(sentences: &[String], vocab: &Vocab, max_len: usize) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        let words: Vec<&str> = s.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let seq = encode_sentence(&words, vocab, max_len)?;
        if seq.num_words > 0 {
            out.push(seq);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    Ok(out)
}

pub(crate) fn losses_to_meta(losses: &[Vec<f64>]) -> String {
    losses
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

pub(crate) fn losses_from_meta(text: Option<&str>) -> Result<Vec<Vec<f64>>> {
    match text {
        None | Some("") => Ok(Vec::new()),
        Some(t) => t
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|v| v.parse().map_err(|_| Error::Config(format!("bad loss history entry {v:?}"))))
                    .collect()
            })
            .collect(),
    }
}

fn mlm_checkpoint(
    model: &MlmModel<f32>,
    adam: &Adam<f32>,
    vocab: &Vocab,
    seed: u64,
    epoch: usize,
    losses: &[Vec<f64>],
) -> Checkpoint {
    let mut c = Checkpoint::new(vocab.clone());
    c.config.merge_prefixed("encoder.", &model.encoder.config.to_settings());
    c.metadata.set("task", "mlm");
    c.metadata.set("encoder_prefix", "encoder.");
    c.metadata.set("seed", seed);
    c.metadata.set("epoch", epoch);
    c.metadata.set("losses", losses_to_meta(losses));
    c.add_params("", &model.parameters());
    train::save_optimizer(&mut c, adam);
    c
}

/// Pretrains an encoder with the MLM objective.
///
/// With `resume`, parameters, optimizer state and loss history are restored
/// and training continues after the stored epoch up to `config.epochs`.
pub fn train_mlm(
    sentences: &[String],
    vocab: &Vocab,
    encoder_config: EncoderConfig,
    config: &PretrainConfig,
    seed: u64,
    resume: Option<&Checkpoint>,
) -> Result<PretrainRun> {
    let seqs = encode_corpus(sentences, vocab, config.max_len.min(encoder_config.max_positions))?;
    let model = MlmModel::<f32>::new(encoder_config, &mut train::init_rng(seed))?;
    let mut adam = Adam::new(vec![ParamGroup {
        config: config.optimizer,
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
    for epoch in start + 1..=config.epochs {
        let mut rng = train::epoch_rng(seed, epoch);
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in train::shuffled_batches(seqs.len(), config.batch_size, &mut rng) {
            let mut masked = Vec::with_capacity(idx.len());
            let mut plans = Vec::with_capacity(idx.len());
            for &i in &idx {
                let plan = select_mask_targets(&seqs[i], vocab, &mut rng)?;
                let mut s = seqs[i].clone();
                s.ids = plan.input_ids.clone();
                masked.push(s);
                plans.push(plan);
            }
            let batch = Batch::from_sequences(&masked, vocab.pad_id())?;
            let targets = padded_targets(&plans, batch.seq_len);
            let logits = model.logits(&batch, &mut Mode::Train(&mut rng))?;
            let loss = mlm_loss(&logits, &targets)?;
            let value = train::scalar(&loss);
            if !value.is_finite() {
                return Err(diverged(epoch, last_good));
            }
            loss.backward()?;
            if let Err(e) = adam.step() {
                return Err(match e {
                    seqtag_tensor::TensorError::NonFiniteGradient { .. } => diverged(epoch, last_good),
                    other => other.into(),
                });
            }
            adam.zero_grad();
            total += value;
            count += 1;
        }
        let mean = total / count as f64;
        log::info!("mlm epoch {epoch}: loss {mean:.6}");
        losses.push(vec![mean]);
        last_good = Some(mlm_checkpoint(&model, &adam, vocab, seed, epoch, &losses));
    }
    let checkpoint = match last_good {
        Some(c) => c,
        None => mlm_checkpoint(&model, &adam, vocab, seed, start, &losses),
    };
    Ok(PretrainRun { checkpoint, losses })
}

pub(crate) fn diverged(epoch: usize, last_good: Option<Checkpoint>) -> Error {
    Error::Diverged {
        epoch,
        last_good: last_good.map(Box::new),
    }
}

/// Concatenates per-sequence targets, padding each to `seq_len`.
pub(crate) fn padded_targets(plans: &[MaskPlan], seq_len: usize) -> Vec<i64> {
    let mut t = Vec::with_capacity(plans.len() * seq_len);
    for p in plans {
        t.extend_from_slice(&p.targets);
        t.extend(std::iter::repeat_n(IGNORE_INDEX, seq_len - p.targets.len()));
    }
    t
}
