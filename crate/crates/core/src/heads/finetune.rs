use rand::seq::SliceRandom;
use seqtag_tensor::{Adam, OptimizerGroup, ParamGroup, Tensor};

use super::head::{HeadConfig, HeadKind};
use super::tagger::{tag_loss, TaggerModel};
use super::tagset::TagSet;
use crate::batch::Batch;
use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::conll::{ConllDataset, TaggedSentence};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{Mode, Params};
use crate::tokenizer::{TokenSequence, Vocab};
use crate::train;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_group: OptimizerGroup,
    pub head_group: OptimizerGroup,
    /// Share of the training data held out when no dev set is given.
    pub dev_fraction: f64,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    pub max_len: usize,
}

impl Default for FinetuneConfig {
    /// Encoder lr 2e-5, head lr 1e-3, batch 16, 10% dev split.
    fn default() -> Self {
        FinetuneConfig {
            epochs: 30,
            batch_size: 16,
            encoder_group: OptimizerGroup::finetune_encoder(),
            head_group: OptimizerGroup::finetune_head(),
            dev_fraction: 0.1,
            patience: None,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
        }
    }
}

impl FinetuneConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let d = FinetuneConfig::default();
        let mut encoder_group = d.encoder_group;
        encoder_group.learning_rate = s.get_or("encoder_lr", encoder_group.learning_rate)?;
        let mut head_group = d.head_group;
        head_group.learning_rate = s.get_or("head_lr", head_group.learning_rate)?;
        encoder_group.validate()?;
        head_group.validate()?;
        let patience: usize = s.get_or("patience", 0)?;
        let c = FinetuneConfig {
            epochs: s.get_or("epochs", d.epochs)?,
            batch_size: s.get_or("batch_size", d.batch_size)?,
            encoder_group,
            head_group,
            dev_fraction: s.get_or("dev_fraction", d.dev_fraction)?,
            patience: (patience > 0).then_some(patience),
            max_len: s.get_or("max_len", d.max_len)?,
        };
        if c.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&c.dev_fraction) {
            return Err(Error::Config(format!("dev_fraction {} outside [0, 1)", c.dev_fraction)));
        }
        Ok(c)
    }
}

/// Where the encoder comes from.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInit<'a> {
    /// Randomly initialized encoder of the given shape.
    Fresh(&'a EncoderConfig, &'a Vocab),
    /// A pretraining or tagger checkpoint; its `encoder_prefix` metadata
    /// names where the encoder tensors live.
    Checkpoint(&'a Checkpoint),
}

/// What a warm start actually restored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WarmStart {
    pub encoder_tensors: usize,
    pub head_restored: bool,
    /// Why a head in the checkpoint was not reused, if it was not.
    pub notice: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    /// The model at its best dev epoch.
    pub model: TaggerModel<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub warm_start: WarmStart,
    pub train_size: usize,
    pub dev_size: usize,
}

impl FinetuneRun {
    /// `epoch<TAB>loss<TAB>dev_accuracy` lines.
    pub fn log_text(&self) -> String {
        let rows: Vec<Vec<f64>> = self.log.iter().map(|e| vec![e.loss, e.dev_accuracy]).collect();
        train::format_log(&rows)
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.metadata.set("seed", seed);
        c.metadata.set("epoch", self.best_epoch);
        c
    }
}

/// Splits off `fraction` of `sentences` (at least one) as a dev set with a
/// seeded shuffle. Returns (train, dev).
pub fn split_dev(sentences: &[TaggedSentence], fraction: f64, seed: u64) -> (Vec<TaggedSentence>, Vec<TaggedSentence>) {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut train::split_rng(seed));
    let n_dev = ((sentences.len() as f64 * fraction).round() as usize)
        .max(1)
        .min(sentences.len().saturating_sub(1));
    let (dev, rest) = order.split_at(n_dev);
    let mut rest = rest.to_vec();
    rest.sort_unstable();
    let mut dev = dev.to_vec();
    dev.sort_unstable();
    let pick = |ix: &[usize]| ix.iter().map(|&i| sentences[i].clone()).collect();
    (pick(&rest), pick(&dev))
}

fn build_model(
    init: EncoderInit,
    head_config: &HeadConfig,
    tagset: &TagSet,
    seed: u64,
) -> Result<(TaggerModel<f32>, WarmStart)> {
    let mut rng = train::init_rng(seed);
    match init {
        EncoderInit::Fresh(cfg, vocab) => {
            let model = TaggerModel::new(cfg.clone(), head_config.clone(), tagset.clone(), vocab.clone(), &mut rng)?;
            Ok((model, WarmStart::default()))
        }
        EncoderInit::Checkpoint(ckpt) => {
            let prefix = ckpt.metadata.get("encoder_prefix").unwrap_or("encoder.").to_string();
            let cfg = EncoderConfig::from_settings(
                &ckpt.config.section(&prefix),
                &EncoderConfig::desk(ckpt.vocab.len()),
            )?;
            let encoder = Encoder::<f32>::new(cfg, &mut rng)?;
            let report = ckpt.load_into(&prefix, &encoder.parameters())?;
            if !report.missing.is_empty() {
                return Err(Error::Config(format!(
                    "checkpoint lacks encoder tensors {prefix}{}",
                    report.missing.join(", ")
                )));
            }
            let model = TaggerModel::with_encoder(encoder, head_config.clone(), tagset.clone(), ckpt.vocab.clone(), &mut rng)?;
            let mut warm = WarmStart {
                encoder_tensors: report.loaded.len(),
                ..WarmStart::default()
            };
            if ckpt.has_prefix("head.") {
                match reusable_head(ckpt, head_config, tagset) {
                    Ok(()) => {
                        let r = ckpt.load_into("", &model.head_params())?;
                        warm.head_restored = r.missing.is_empty();
                    }
                    Err(why) => warm.notice = Some(why),
                }
                if let Some(n) = &warm.notice {
                    log::warn!("starting a fresh head: {n}");
                }
            }
            Ok((model, warm))
        }
    }
}

fn reusable_head(ckpt: &Checkpoint, head_config: &HeadConfig, tagset: &TagSet) -> std::result::Result<(), String> {
    let found = ckpt.config.get("head.kind").unwrap_or("unknown");
    if !matches!(HeadKind::parse(found), Ok(k) if k == head_config.kind) {
        return Err(format!("checkpoint head is {found}, not {}", head_config.kind.name()));
    }
    let labels = tagset.labels().join(" ");
    if ckpt.config.get("tagset.labels") != Some(labels.as_str()) {
        return Err("checkpoint head was trained on a different tag set".into());
    }
    Ok(())
}

fn encode_all(model: &TaggerModel<f32>, sentences: &[TaggedSentence], max_len: usize) -> Result<Vec<(TokenSequence, Vec<usize>)>> {
    sentences
        .iter()
        .map(|s| {
            let seq = crate::tokenizer::encode_sentence(&s.words, &model.vocab, max_len)?;
            let gold = s
                .tags
                .iter()
                .map(|t| {
                    model
                        .tagset
                        .id(t)
                        .ok_or_else(|| Error::Config(format!("tag {t:?} is not in the training tag set")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seq, gold))
        })
        .collect()
}

/// Share of retained words whose predicted tag is the gold tag.
pub fn encoded_accuracy(model: &TaggerModel<f32>, data: &[(TokenSequence, Vec<usize>)], batch_size: usize) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for chunk in data.chunks(batch_size.max(1)) {
        let seqs: Vec<TokenSequence> = chunk.iter().map(|(s, _)| s.clone()).collect();
        for (pred, (_, gold)) in model.predict_batch(&seqs)?.iter().zip(chunk) {
            right += pred.iter().zip(gold).filter(|(p, g)| p == g).count();
            total += pred.len();
        }
    }
    Ok(if total == 0 { 0.0 } else { right as f64 / total as f64 })
}

fn snapshot(params: &[(String, Tensor<f32>)]) -> Vec<Vec<f32>> {
    params.iter().map(|(_, t)| t.to_vec()).collect()
}

fn restore(params: &[(String, Tensor<f32>)], saved: &[Vec<f32>]) -> Result<()> {
    for ((_, t), v) in params.iter().zip(saved) {
        t.set_data(v)?;
    }
    Ok(())
}

/// Adam with the encoder group over `encoder.*` and the head group over
/// the scalar mix and head.
pub fn optimizer(model: &TaggerModel<f32>, config: &FinetuneConfig) -> Result<Adam<f32>> {
    Ok(Adam::new(vec![
        ParamGroup {
            config: config.encoder_group,
            params: model.encoder_params(),
        },
        ParamGroup {
            config: config.head_group,
            params: model.head_params(),
        },
    ])?)
}

/// Trains a tagger on `train_data`.
///
/// Without `dev`, a seeded `dev_fraction` split of the training sentences
/// is held out. The parameters of the best dev epoch (earliest on ties) are
/// restored before returning.
pub fn finetune(
    init: EncoderInit,
    train_data: &ConllDataset,
    dev: Option<&[TaggedSentence]>,
    head_config: &HeadConfig,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneRun> {
    if train_data.sentences.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let mut head_config = head_config.clone();
    head_config.num_tags = train_data.tagset.len();
    let (model, warm_start) = build_model(init, &head_config, &train_data.tagset, seed)?;
    let max_len = config.max_len.min(model.encoder.config.max_positions);

    let (train_sents, dev_sents) = match dev {
        Some(d) => (train_data.sentences.clone(), d.to_vec()),
        None if train_data.sentences.len() < 2 => {
            log::warn!("one training sentence; evaluating on the training data");
            (train_data.sentences.clone(), train_data.sentences.clone())
        }
        None => split_dev(&train_data.sentences, config.dev_fraction, seed),
    };
    let train_enc = encode_all(&model, &train_sents, max_len)?;
    let dev_enc = encode_all(&model, &dev_sents, max_len)?;

    let mut adam = optimizer(&model, config)?;
    let all_params = model.parameters();

    let mut log = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, snapshot(&all_params));
    for epoch in 1..=config.epochs {
        let mut rng = train::epoch_rng(seed, epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for idx in train::shuffled_batches(train_enc.len(), config.batch_size, &mut rng) {
            let seqs: Vec<TokenSequence> = idx.iter().map(|&i| train_enc[i].0.clone()).collect();
            let gold: Vec<Vec<usize>> = idx.iter().map(|&i| train_enc[i].1.clone()).collect();
            let batch = Batch::from_sequences(&seqs, model.vocab.pad_id())?;
            let logits = model.logits(&batch, &mut Mode::Train(&mut rng))?;
            let loss = tag_loss(&logits, &batch, &gold)?;
            let value = train::scalar(&loss);
            if !value.is_finite() {
                return Err(crate::mlm::diverged(epoch, None));
            }
            loss.backward()?;
            adam.step().map_err(|e| match e {
                seqtag_tensor::TensorError::NonFiniteGradient { .. } => crate::mlm::diverged(epoch, None),
                other => other.into(),
            })?;
            adam.zero_grad();
            total += value;
            count += 1;
        }
        let loss = total / count as f64;
        let dev_accuracy = encoded_accuracy(&model, &dev_enc, config.batch_size)?;
        log::info!("finetune epoch {epoch}: loss {loss:.6} dev accuracy {dev_accuracy:.4}");
        log.push(EpochLog {
            epoch,
            loss,
            dev_accuracy,
        });
        if dev_accuracy > best.1 {
            best = (epoch, dev_accuracy, snapshot(&all_params));
        } else if config.patience.is_some_and(|p| epoch - best.0 >= p) {
            log::info!("no dev improvement for {} epochs; stopping", epoch - best.0);
            break;
        }
    }
    restore(&all_params, &best.2)?;
    Ok(FinetuneRun {
        model,
        log,
        best_epoch: best.0,
        best_dev_accuracy: best.1.max(0.0),
        warm_start,
        train_size: train_sents.len(),
        dev_size: dev_sents.len(),
    })
}
