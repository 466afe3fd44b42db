//! WordPiece tokenization and sentence encoding.
//!
//! Input text is NFC-normalized, split on whitespace into words, and each word
//! is segmented greedily into the longest vocabulary pieces. Continuation
//! pieces carry a `##` prefix. Encoded sentences keep a subword→word
//! alignment so tags can be attached to the first piece of every word.

mod build;
mod encode;
mod vocab;
mod wordpiece;

pub use build::{build_vocab, VocabOptions};
pub use encode::{encode_sentence, TokenSequence, DEFAULT_MAX_LEN};
pub use vocab::{Vocab, CLS, CONTINUATION, MASK, PAD, SEP, SPECIAL_TOKENS, UNK};
pub use wordpiece::{nfc, wordpiece_ids, wordpiece_tokenize, MAX_WORD_CHARS};
