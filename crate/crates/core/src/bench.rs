//! Per-sentence decoding time of a trained tagger.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::heads::TaggerModel;

/// Result of [`bench_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub sentences: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub avg_words_per_sentence: f64,
    pub ms_per_sentence: f64,
}

impl BenchReport {
    /// `key=value` lines in a fixed order:
    /// `sentences`, `warmup`, `repeats`, `avg_words_per_sentence` (2 decimals),
    /// `ms_per_sentence` (4 decimals).
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "sentences={}", self.sentences).unwrap();
        writeln!(out, "warmup={}", self.warmup).unwrap();
        writeln!(out, "repeats={}", self.repeats).unwrap();
        writeln!(out, "avg_words_per_sentence={:.2}", self.avg_words_per_sentence).unwrap();
        writeln!(out, "ms_per_sentence={:.4}", self.ms_per_sentence).unwrap();
        out
    }
}

/// Times `tag_sentence` over every sentence, `warmup` untimed passes then
/// `repeats` timed passes, on the calling thread. Tokenization of the given
/// words, the forward pass and the argmax are all inside the timed region.
pub fn bench_decode<S: AsRef<str>>(
    model: &TaggerModel<f32>,
    sentences: &[Vec<S>],
    warmup: usize,
    repeats: usize,
) -> Result<BenchReport> {
    if sentences.is_empty() {
        return Err(Error::Contract("no sentences to benchmark".into()));
    }
    if repeats == 0 {
        return Err(Error::Contract("repeats must be at least 1".into()));
    }
    let words: usize = sentences.iter().map(Vec::len).sum();
    for _ in 0..warmup {
        for s in sentences {
            model.tag_sentence(s)?;
        }
    }
    let start = Instant::now();
    for _ in 0..repeats {
        for s in sentences {
            std::hint::black_box(model.tag_sentence(s)?);
        }
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchReport {
        sentences: sentences.len(),
        warmup,
        repeats,
        avg_words_per_sentence: words as f64 / sentences.len() as f64,
        ms_per_sentence: elapsed / (sentences.len() * repeats) as f64,
    })
}
