use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::conll::TaggedSentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Flat labels (part-of-speech).
    Pos,
    /// IOB2 entity labels.
    Ner,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Pos => "pos",
            Scheme::Ner => "ner",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(Scheme::Pos),
            "ner" => Ok(Scheme::Ner),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected pos or ner"))),
        }
    }
}

/// Ordered tag labels; id = position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    labels: Vec<String>,
    id_of: HashMap<String, usize>,
    scheme: Scheme,
}

impl TagSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, scheme: Scheme) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Config("tag set is empty".into()));
        }
        let mut id_of = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::Config(format!("invalid tag label {l:?}")));
            }
            if id_of.insert(l.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate tag label {l:?}")));
            }
        }
        if scheme == Scheme::Ner {
            for l in &labels {
                if let Some(x) = l.strip_prefix("I-") {
                    if !id_of.contains_key(&format!("B-{x}")) {
                        return Err(Error::Config(format!("tag {l} has no matching B-{x}")));
                    }
                } else if l != "O" && !l.starts_with("B-") {
                    return Err(Error::Config(format!("tag {l:?} is not IOB2")));
                }
            }
        }
        Ok(TagSet { labels, id_of, scheme })
    }

    /// Labels seen in `sentences`, sorted; for NER "O" comes first and every
    /// entity type gets both its B- and I- label.
    pub fn from_sentences(sentences: &[TaggedSentence], scheme: Scheme) -> Result<Self> {
        let seen: BTreeSet<&str> = sentences.iter().flat_map(|s| s.tags.iter().map(String::as_str)).collect();
        match scheme {
            Scheme::Pos => Self::new(seen, scheme),
            Scheme::Ner => {
                let mut types = BTreeSet::new();
                for t in &seen {
                    match t.strip_prefix("B-").or_else(|| t.strip_prefix("I-")) {
                        Some(x) => {
                            types.insert(x);
                        }
                        None if *t == "O" => {}
                        None => return Err(Error::Config(format!("tag {t:?} is not IOB2"))),
                    }
                }
                let labels = std::iter::once("O".to_string())
                    .chain(types.iter().flat_map(|x| [format!("B-{x}"), format!("I-{x}")]));
                Self::new(labels, scheme)
            }
        }
    }

    pub fn from_text(text: &str, scheme: Scheme) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()), scheme)
    }

    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>, scheme: Scheme) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, scheme)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.id_of.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
}
