use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in their fixed id order.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Prefix marking a word piece that continues the previous one.
pub const CONTINUATION: &str = "##";

/// A subword vocabulary: a bijection between token strings and ids.
///
/// The five special tokens always occupy ids 0..5 in the order of
/// [`SPECIAL_TOKENS`], so `[PAD]` is id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list whose first five entries
    /// are the special tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(special) {
                return Err(Error::Config(format!(
                    "vocabulary must start with {SPECIAL_TOKENS:?}; entry {i} is {:?}",
                    tokens.get(i)
                )));
            }
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Config(format!("empty token at id {id}")));
            }
            if id >= SPECIAL_TOKENS.len() && tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("token {tok:?} contains whitespace")));
            }
            if id_of.insert(tok.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, id_of })
    }

    /// Prepends the special tokens to `tokens`, dropping duplicates while
    /// keeping first occurrences.
    pub fn with_specials<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = std::collections::HashSet::new();
        let all: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .filter(|t| seen.insert(t.clone()))
            .collect();
        Self::from_tokens(all)
    }

    /// Parses the vocabulary file format: one token per line, line number = id.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn cls_id(&self) -> usize {
        2
    }

    pub fn sep_id(&self) -> usize {
        3
    }

    pub fn mask_id(&self) -> usize {
        4
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Ids eligible as random replacements during masking.
    pub fn regular_ids(&self) -> std::ops::Range<usize> {
        SPECIAL_TOKENS.len()..self.tokens.len()
    }
}
