//! Tagging heads over a scalar mix of encoder layers.
//!
//! The pipeline per sentence is: encoder layers → scalar mix → head →
//! per-subword tag logits, read off at the first subword of every word.

mod finetune;
mod head;
mod rnn;
mod scalar_mix;
mod tagger;
mod tagset;

pub use finetune::{encoded_accuracy, finetune, optimizer, split_dev, EncoderInit, EpochLog, FinetuneConfig, FinetuneRun, WarmStart};
pub use head::{Head, HeadConfig, HeadKind};
pub use rnn::{BiRnn, CellKind, RnnDirection};
pub use scalar_mix::ScalarMix;
pub use tagger::{argmax, tag_loss, word_targets, TaggerModel};
pub use tagset::{Scheme, TagSet};
