//! Pretraining-corpus cleaning and sharding.
//!
//! Three rules are applied, in this order: duplicate documents are dropped
//! (first occurrence survives), sentences with fewer than four whitespace
//! words are dropped, and sentences containing a character outside the
//! letter whitelist are dropped. A sentence failing both sentence rules is
//! counted as short only.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::nfc;

/// Sentences with fewer whitespace-delimited words than this are dropped.
pub const MIN_SENTENCE_WORDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    /// File name or other identifier used in error messages.
    pub id: String,
    pub text: String,
}

/// Reads every `.txt` file in `dir`, ordered by file name.
pub fn read_documents(dir: impl AsRef<Path>) -> Result<Vec<Document>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "txt"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let id = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok(Document { id, text })
        })
        .collect()
}

/// The set of characters a kept sentence may contain (whitespace aside).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    chars: HashSet<char>,
}

const VIETNAMESE_VOWELS: [&str; 12] = ["a", "ă", "â", "e", "ê", "i", "o", "ô", "ơ", "u", "ư", "y"];
// grave, acute, hook above, tilde, dot below
const TONE_MARKS: [char; 5] = ['\u{0300}', '\u{0301}', '\u{0309}', '\u{0303}', '\u{0323}'];
const PUNCTUATION: &str = ".,;:!?…-–—'\"“”‘’()[]{}/\\%&+*=<>@#$_|~^`";

impl Charset {
    /// ASCII letters, the Vietnamese alphabet with all tone marks in both
    /// cases, digits, and common punctuation.
    pub fn vietnamese() -> Self {
        let mut chars: HashSet<char> = ('a'..='z').chain('A'..='Z').chain('0'..='9').collect();
        chars.extend(PUNCTUATION.chars());
        chars.extend(['đ', 'Đ']);
        for v in VIETNAMESE_VOWELS {
            let base = nfc(v).into_owned();
            for form in std::iter::once(base.clone()).chain(TONE_MARKS.iter().map(|t| format!("{base}{t}"))) {
                let composed = nfc(&form).into_owned();
                for c in composed.chars().chain(composed.to_uppercase().chars()) {
                    chars.insert(c);
                }
            }
        }
        Charset { chars }
    }

    /// Every non-whitespace character of `text` is allowed.
    pub fn from_text(text: &str) -> Self {
        Charset {
            chars: nfc(text).chars().filter(|c| !c.is_whitespace()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_text(&text))
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// True when every non-whitespace character of `sentence` is allowed.
    pub fn accepts(&self, sentence: &str) -> bool {
        sentence.chars().all(|c| c.is_whitespace() || self.contains(c))
    }

    /// Sorted characters, for writing a whitelist file.
    pub fn to_text(&self) -> String {
        let sorted: BTreeSet<char> = self.chars.iter().copied().collect();
        let mut s: String = sorted.into_iter().collect();
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub docs_in: usize,
    pub docs_deduped: usize,
    pub sentences_in: usize,
    pub sentences_dropped_short: usize,
    pub sentences_dropped_charset: usize,
    pub sentences_out: usize,
}

impl fmt::Display for CleanStats {
    /// The structured-text report: one `key=value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "docs_in={}", self.docs_in)?;
        writeln!(f, "docs_deduped={}", self.docs_deduped)?;
        writeln!(f, "sentences_in={}", self.sentences_in)?;
        writeln!(f, "sentences_dropped_short={}", self.sentences_dropped_short)?;
        writeln!(f, "sentences_dropped_charset={}", self.sentences_dropped_charset)?;
        writeln!(f, "sentences_out={}", self.sentences_out)
    }
}

/// Hash of the whitespace-collapsed, lowercased, NFC text.
fn content_key(text: &str) -> [u8; 32] {
    let norm = nfc(text).to_lowercase();
    let mut h = Sha256::new();
    for (i, w) in norm.split_whitespace().enumerate() {
        if i > 0 {
            h.update(b" ");
        }
        h.update(w.as_bytes());
    }
    h.finalize().into()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!' | '…')
}

/// Splits after `.`, `?`, `!` or `…` when followed by whitespace or the end,
/// and at line breaks. Sentences are trimmed; empty ones are skipped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut start = 0;
        for (i, &(pos, c)) in chars.iter().enumerate() {
            let next_is_break = chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace());
            if is_terminal(c) && next_is_break {
                let end = pos + c.len_utf8();
                push_trimmed(&mut out, &line[start..end]);
                start = end;
            }
        }
        push_trimmed(&mut out, &line[start..]);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Applies the cleaning rules; output order follows input order.
pub fn clean_corpus(docs: &[Document], charset: &Charset) -> (Vec<String>, CleanStats) {
    let mut stats = CleanStats {
        docs_in: docs.len(),
        ..CleanStats::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for doc in docs {
        if !seen.insert(content_key(&doc.text)) {
            stats.docs_deduped += 1;
            continue;
        }
        for sentence in split_sentences(&nfc(&doc.text)) {
            stats.sentences_in += 1;
            if sentence.split_whitespace().count() < MIN_SENTENCE_WORDS {
                stats.sentences_dropped_short += 1;
            } else if !charset.accepts(&sentence) {
                stats.sentences_dropped_charset += 1;
            } else {
                out.push(sentence);
            }
        }
    }
    stats.sentences_out = out.len();
    (out, stats)
}

/// File name of shard `i`.
pub fn shard_name(i: usize) -> String {
    format!("shard_{i:05}.txt")
}

/// Shuffles `sentences` with `seed` and writes them, one per line, into
/// consecutive shards of `shard_size` lines under `dir`.
pub fn shard_sentences(sentences: &[String], shard_size: usize, seed: u64, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if shard_size == 0 {
        return Err(Error::Config("shard_size must be at least 1".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut order: Vec<&String> = sentences.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut paths = Vec::new();
    for (i, chunk) in order.chunks(shard_size).enumerate() {
        let path = dir.join(shard_name(i));
        let mut text = String::new();
        for s in chunk {
            text.push_str(s);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads sentences (non-empty lines) from files in the given order.
pub fn read_sentences<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        out.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    Ok(out)
}

/// Shard files (`shard_*.txt`) in `dir`, in shard order.
pub fn list_shards(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("shard_") && n.ends_with(".txt"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
