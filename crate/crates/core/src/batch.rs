//! Padding a group of encoded sentences into one rectangular batch.

use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

/// Row-major `[batch, seq]` arrays padded with `[PAD]` to the longest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// True at real (non-pad) positions.
    pub attention_mask: Vec<bool>,
    pub word_index: Vec<i64>,
    pub is_word_start: Vec<bool>,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_sequences(seqs: &[TokenSequence], pad_id: usize) -> Result<Self> {
        Self::padded_to(seqs, pad_id, 0)
    }

    /// Pads to at least `min_len` positions.
    pub fn padded_to(seqs: &[TokenSequence], pad_id: usize, min_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Contract("cannot batch zero sequences".into()));
        }
        let seq_len = seqs.iter().map(TokenSequence::len).max().unwrap().max(min_len);
        let n = seqs.len() * seq_len;
        let mut b = Batch {
            batch_size: seqs.len(),
            seq_len,
            ids: Vec::with_capacity(n),
            segment_ids: Vec::with_capacity(n),
            attention_mask: Vec::with_capacity(n),
            word_index: Vec::with_capacity(n),
            is_word_start: Vec::with_capacity(n),
            lengths: Vec::with_capacity(seqs.len()),
        };
        for s in seqs {
            let pad = seq_len - s.len();
            b.ids.extend(s.ids.iter().copied().chain(std::iter::repeat_n(pad_id, pad)));
            b.segment_ids
                .extend(s.segment_ids.iter().copied().chain(std::iter::repeat_n(0, pad)));
            b.attention_mask
                .extend(std::iter::repeat_n(true, s.len()).chain(std::iter::repeat_n(false, pad)));
            b.word_index
                .extend(s.word_index.iter().copied().chain(std::iter::repeat_n(-1, pad)));
            b.is_word_start
                .extend(s.is_word_start.iter().copied().chain(std::iter::repeat_n(false, pad)));
            b.lengths.push(s.len());
        }
        Ok(b)
    }

    pub fn num_positions(&self) -> usize {
        self.batch_size * self.seq_len
    }

    /// The same batch with different token ids (e.g. after corruption).
    pub fn with_ids(&self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.ids.len() {
            return Err(Error::Contract(format!(
                "replacement ids have length {}, batch has {}",
                ids.len(),
                self.ids.len()
            )));
        }
        Ok(Batch { ids, ..self.clone() })
    }
}
