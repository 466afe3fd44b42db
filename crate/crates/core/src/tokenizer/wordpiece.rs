use std::borrow::Cow;

use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

use super::vocab::{Vocab, CONTINUATION, UNK};

/// Words longer than this many characters map straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

/// NFC-normalizes `text`, borrowing when it is already normalized.
pub fn nfc(text: &str) -> Cow<'_, str> {
    match is_nfc_quick(text.chars()) {
        IsNormalized::Yes => Cow::Borrowed(text),
        _ => Cow::Owned(text.nfc().collect()),
    }
}

/// Greedy longest-match-first WordPiece segmentation of a single word.
///
/// Pieces after the first carry the `##` prefix. If any suffix of the word
/// cannot be matched the whole word becomes a single `[UNK]`.
pub fn wordpiece_tokenize(word: &str, vocab: &Vocab) -> Vec<String> {
    wordpiece_ids(word, vocab)
        .into_iter()
        .map(|id| vocab.token(id).unwrap_or(UNK).to_string())
        .collect()
}

/// Like [`wordpiece_tokenize`] but returns vocabulary ids.
pub fn wordpiece_ids(word: &str, vocab: &Vocab) -> Vec<usize> {
    let word = nfc(word);
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return vec![vocab.unk_id()];
    }
    let mut pieces = Vec::new();
    let mut buf = String::with_capacity(word.len() + 2);
    let mut start = 0;
    while start < chars.len() {
        let begin = chars[start].0;
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let stop = chars.get(end).map_or(word.len(), |c| c.0);
            buf.clear();
            if start > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.push_str(&word[begin..stop]);
            if let Some(id) = vocab.id(&buf) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => return vec![vocab.unk_id()],
        }
    }
    pieces
}
