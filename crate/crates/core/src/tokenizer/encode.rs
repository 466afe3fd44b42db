use super::vocab::Vocab;
use super::wordpiece::wordpiece_ids;
use crate::error::{Error, Result};

/// Default and maximum supported sequence length, in subwords.
pub const DEFAULT_MAX_LEN: usize = 256;

/// One encoded sentence: `[CLS] pieces.. [SEP]` with subword→word alignment.
///
/// Unpadded; [`Batch`](crate::batch::Batch) pads a group of sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// Owning word position per subword; `-1` for `[CLS]`, `[SEP]` and padding.
    pub word_index: Vec<i64>,
    pub is_word_start: Vec<bool>,
    /// Words kept after truncation.
    pub num_words: usize,
    /// Words in the input sentence.
    pub source_words: usize,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Subword positions of each retained word, in order.
    pub fn word_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut spans: Vec<std::ops::Range<usize>> = Vec::with_capacity(self.num_words);
        for (pos, &w) in self.word_index.iter().enumerate() {
            if w < 0 {
                continue;
            }
            let w = w as usize;
            if w == spans.len() {
                spans.push(pos..pos + 1);
            } else {
                spans[w].end = pos + 1;
            }
        }
        spans
    }

    /// Position of the first subword of every retained word.
    pub fn word_start_positions(&self) -> Vec<usize> {
        self.is_word_start
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

/// Encodes whitespace-separated words as `[CLS] + subwords + [SEP]`.
///
/// Words are dropped whole from the end once the subword budget
/// `max_len - 2` would be exceeded; the `truncated` flag records it.
pub fn encode_sentence<S: AsRef<str>>(words: &[S], vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if words.is_empty() {
        return Err(Error::Contract("cannot encode an empty sentence".into()));
    }
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} leaves no room for a word")));
    }
    let budget = max_len - 2;
    let mut ids = vec![vocab.cls_id()];
    let mut word_index = vec![-1i64];
    let mut is_word_start = vec![false];
    let mut num_words = 0;
    for (w, word) in words.iter().enumerate() {
        let pieces = wordpiece_ids(word.as_ref(), vocab);
        if ids.len() - 1 + pieces.len() > budget {
            break;
        }
        for (i, id) in pieces.into_iter().enumerate() {
            ids.push(id);
            word_index.push(w as i64);
            is_word_start.push(i == 0);
        }
        num_words += 1;
    }
    ids.push(vocab.sep_id());
    word_index.push(-1);
    is_word_start.push(false);
    Ok(TokenSequence {
        segment_ids: vec![0; ids.len()],
        ids,
        word_index,
        is_word_start,
        num_words,
        source_words: words.len(),
        truncated: num_words < words.len(),
    })
}
