use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::vocab::{Vocab, CONTINUATION};
use super::wordpiece::{nfc, wordpiece_ids};
use crate::error::{Error, Result};

/// Options for [`build_vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabOptions {
    /// Minimum pair frequency for a merge when learning from scratch.
    pub min_count: usize,
    /// Upper bound on the learned vocabulary size, specials included.
    pub max_size: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            min_count: 2,
            max_size: 8000,
        }
    }
}

fn word_counts<I, S>(corpus: I) -> Result<BTreeMap<String, usize>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = BTreeMap::new();
    let mut sentences = 0usize;
    for sentence in corpus {
        sentences += 1;
        for w in nfc(sentence.as_ref()).split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    if sentences == 0 || counts.is_empty() {
        return Err(Error::Config("vocabulary corpus is empty".into()));
    }
    Ok(counts)
}

/// Builds a vocabulary from a sentence stream.
///
/// With a `base` vocabulary this prunes it: exactly the base tokens that
/// appear as a piece of some corpus word's segmentation survive, plus the
/// specials, in base order. Without one it learns a WordPiece vocabulary
/// from characters by repeatedly merging the most frequent adjacent piece
/// pair until `max_size` is reached or no pair occurs `min_count` times.
pub fn build_vocab<I, S>(corpus: I, base: Option<&Vocab>, options: VocabOptions) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let counts = word_counts(corpus)?;
    match base {
        Some(base) => Ok(prune(&counts, base)),
        None => learn(&counts, options),
    }
}

fn prune(counts: &BTreeMap<String, usize>, base: &Vocab) -> Vocab {
    let mut used = vec![false; base.len()];
    for word in counts.keys() {
        for id in wordpiece_ids(word, base) {
            used[id] = true;
        }
    }
    let kept = base
        .tokens()
        .iter()
        .zip(&used)
        .enumerate()
        .filter(|&(id, (_, &u))| u && !base.is_special(id))
        .map(|(_, (t, _))| t.clone());
    Vocab::with_specials(kept).expect("subset of a valid vocabulary")
}

fn learn(counts: &BTreeMap<String, usize>, options: VocabOptions) -> Result<Vocab> {
    if options.max_size <= super::vocab::SPECIAL_TOKENS.len() {
        return Err(Error::Config(format!(
            "vocabulary size budget {} leaves no room for tokens",
            options.max_size
        )));
    }
    let mut words: Vec<(Vec<String>, usize)> = counts
        .iter()
        .map(|(w, &c)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, ch)| {
                    if i == 0 {
                        ch.to_string()
                    } else {
                        format!("{CONTINUATION}{ch}")
                    }
                })
                .collect();
            (pieces, c)
        })
        .collect();

    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    for (pieces, _) in &words {
        alphabet.extend(pieces.iter().cloned());
    }
    let mut tokens: Vec<String> = alphabet.into_iter().collect();
    let room = options.max_size - super::vocab::SPECIAL_TOKENS.len();
    tokens.truncate(room);

    while tokens.len() < room {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (pieces, c) in &words {
            for w in pieces.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += c;
            }
        }
        // highest count, ties to the lexicographically smallest pair
        let best = pairs
            .into_iter()
            .filter(|&(_, c)| c >= options.min_count.max(1))
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((left, right), _)) = best else {
            break;
        };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{}", right.trim_start_matches(CONTINUATION));
        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == left && pieces[i + 1] == right {
                    pieces[i] = merged.clone();
                    pieces.remove(i + 1);
                }
                i += 1;
            }
        }
        if !tokens.contains(&merged) {
            tokens.push(merged);
        }
    }
    Vocab::with_specials(tokens)
}
