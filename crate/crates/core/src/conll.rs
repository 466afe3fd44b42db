//! CoNLL-style column files: one token per line, blank line between
//! sentences, `#` comment lines.

use std::path::Path;

use crate::error::{Error, Result};
use crate::heads::{Scheme, TagSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new<W: Into<String>, T: Into<String>>(words: impl IntoIterator<Item = W>, tags: impl IntoIterator<Item = T>) -> Self {
        TaggedSentence {
            words: words.into_iter().map(Into::into).collect(),
            tags: tags.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllDataset {
    pub sentences: Vec<TaggedSentence>,
    pub tagset: TagSet,
}

impl ConllDataset {
    /// Checks the dataset invariants against `tagset`.
    pub fn new(sentences: Vec<TaggedSentence>, tagset: TagSet) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() || s.words.len() != s.tags.len() {
                return Err(Error::Contract(format!(
                    "sentence {i} has {} words and {} tags",
                    s.words.len(),
                    s.tags.len()
                )));
            }
            if let Some(t) = s.tags.iter().find(|t| tagset.id(t).is_none()) {
                return Err(Error::Contract(format!("sentence {i} uses tag {t:?} outside the tag set")));
            }
        }
        Ok(ConllDataset { sentences, tagset })
    }

    pub fn num_words(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::len).sum()
    }
}

/// Parses column text. `word_col` and `tag_col` are 0-based; columns are
/// separated by tabs or runs of spaces.
pub fn parse_conll(text: &str, origin: &str, word_col: usize, tag_col: usize) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut current = TaggedSentence::new(Vec::<String>::new(), Vec::<String>::new());
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::replace(
                    &mut current,
                    TaggedSentence::new(Vec::<String>::new(), Vec::<String>::new()),
                ));
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        let need = word_col.max(tag_col) + 1;
        if cols.len() < need {
            return Err(Error::parse(
                format!("{origin}:{}", n + 1),
                format!("expected at least {need} columns, found {}", cols.len()),
            ));
        }
        current.words.push(crate::tokenizer::nfc(cols[word_col]).into_owned());
        current.tags.push(cols[tag_col].to_string());
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(Error::parse(origin, "no sentences"));
    }
    Ok(sentences)
}

pub fn read_conll(path: impl AsRef<Path>, word_col: usize, tag_col: usize, scheme: Scheme) -> Result<ConllDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sentences = parse_conll(&text, &path.display().to_string(), word_col, tag_col)?;
    let tagset = TagSet::from_sentences(&sentences, scheme)?;
    ConllDataset::new(sentences, tagset)
}

/// Two tab-separated columns per token, a blank line after each sentence.
pub fn format_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(w);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_conll(path: impl AsRef<Path>, sentences: &[TaggedSentence]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_conll(sentences)).map_err(|e| Error::io(path, e))
}
