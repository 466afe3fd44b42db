//! Token accuracy and entity-level precision, recall and F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A typed span of word positions, `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Entity {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Entity {
            label: label.into(),
            start,
            end,
        }
    }
}

/// Fraction of positions where the predicted tag equals the gold tag.
pub fn token_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::Contract("token accuracy of an empty sequence".into()));
    }
    let right = pred.iter().zip(gold).filter(|(p, g)| p.as_ref() == g.as_ref()).count();
    Ok(right as f64 / gold.len() as f64)
}

fn check_lengths(pred: usize, gold: usize) -> Result<()> {
    if pred != gold {
        return Err(Error::Contract(format!("{pred} predicted tags for {gold} gold tags")));
    }
    Ok(())
}

enum Iob<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str, pos: usize) -> Result<Iob<'_>> {
    if tag == "O" {
        return Ok(Iob::Outside);
    }
    let (kind, label) = match (tag.strip_prefix("B-"), tag.strip_prefix("I-")) {
        (Some(l), _) => (true, l),
        (_, Some(l)) => (false, l),
        _ => return Err(Error::parse(format!("tag {pos}"), format!("{tag:?} is not O, B-X or I-X"))),
    };
    if label.is_empty() || label.starts_with("B-") || label.starts_with("I-") {
        return Err(Error::parse(format!("tag {pos}"), format!("{tag:?} has no valid entity type")));
    }
    Ok(if kind { Iob::Begin(label) } else { Iob::Inside(label) })
}

/// Decodes IOB2 tags into maximal spans. An `I-X` that does not continue
/// an open `X` entity starts a new one.
pub fn extract_entities<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Entity>> {
    let mut out = Vec::new();
    let mut open: Option<Entity> = None;
    for (pos, tag) in tags.iter().enumerate() {
        let continues = match parse_tag(tag.as_ref(), pos)? {
            Iob::Inside(l) if open.as_ref().is_some_and(|e| e.label == l) => None,
            Iob::Begin(l) | Iob::Inside(l) => Some(Some(l)),
            Iob::Outside => Some(None),
        };
        match continues {
            None => open.as_mut().unwrap().end = pos + 1,
            Some(next) => {
                out.extend(open.take());
                open = next.map(|l| Entity::new(l, pos, pos + 1));
            }
        }
    }
    out.extend(open);
    Ok(out)
}

/// Counts for one entity type (or all of them).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EntityCounts {
    pub ne_true: usize,
    pub ne_sys: usize,
    pub ne_ref: usize,
}

impl EntityCounts {
    /// `ne_true / ne_sys`, 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.ne_true, self.ne_sys)
    }

    /// `ne_true / ne_ref`, 0 when the gold data has no entities.
    pub fn recall(&self) -> f64 {
        ratio(self.ne_true, self.ne_ref)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: EntityCounts) {
        self.ne_true += other.ne_true;
        self.ne_sys += other.ne_sys;
        self.ne_ref += other.ne_ref;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Token accuracy plus overall and per-type entity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub overall: EntityCounts,
    pub per_label: BTreeMap<String, EntityCounts>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.overall.precision()
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall()
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }

    /// Aligned columns: one row for all entities, then one per type.
    pub fn to_table(&self) -> String {
        let mut out = format!("accuracy: {:.4}\n", self.accuracy);
        let rows = std::iter::once(("ALL", &self.overall)).chain(self.per_label.iter().map(|(l, c)| (l.as_str(), c)));
        let width = self.per_label.keys().map(|l| l.chars().count()).max().unwrap_or(0).max(5);
        writeln!(
            out,
            "{:<width$}  {:>9}  {:>6}  {:>6}  {:>9}  {:>6}  {:>6}",
            "label", "precision", "recall", "f1", "ne_true", "ne_sys", "ne_ref"
        )
        .unwrap();
        for (label, c) in rows {
            writeln!(
                out,
                "{label:<width$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>9}  {:>6}  {:>6}",
                c.precision(),
                c.recall(),
                c.f1(),
                c.ne_true,
                c.ne_sys,
                c.ne_ref
            )
            .unwrap();
        }
        out
    }

    /// `key=value` lines with per-type keys under `label.<type>.`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "accuracy={:.6}", self.accuracy).unwrap();
        let mut put = |prefix: &str, c: &EntityCounts| {
            writeln!(out, "{prefix}precision={:.6}", c.precision()).unwrap();
            writeln!(out, "{prefix}recall={:.6}", c.recall()).unwrap();
            writeln!(out, "{prefix}f1={:.6}", c.f1()).unwrap();
            writeln!(out, "{prefix}ne_true={}", c.ne_true).unwrap();
            writeln!(out, "{prefix}ne_sys={}", c.ne_sys).unwrap();
            writeln!(out, "{prefix}ne_ref={}", c.ne_ref).unwrap();
        };
        put("", &self.overall);
        for (label, c) in &self.per_label {
            put(&format!("label.{label}."), c);
        }
        out
    }
}

fn entity_counts(pred: &[Entity], gold: &[Entity]) -> BTreeMap<String, EntityCounts> {
    let gold_set: BTreeSet<&Entity> = gold.iter().collect();
    let mut per = BTreeMap::<String, EntityCounts>::new();
    for e in pred {
        let c = per.entry(e.label.clone()).or_default();
        c.ne_sys += 1;
        if gold_set.contains(e) {
            c.ne_true += 1;
        }
    }
    for e in gold {
        per.entry(e.label.clone()).or_default().ne_ref += 1;
    }
    per
}

/// Scores one tagged sequence.
pub fn entity_f1<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> Result<EvalReport> {
    evaluate_corpus(&[(pred, gold)])
}

/// Scores a corpus of (predicted, gold) sentence pairs; entities never
/// cross sentence boundaries.
pub fn evaluate_corpus<P, G, S, T>(pairs: &[(P, G)]) -> Result<EvalReport>
where
    P: AsRef<[S]>,
    G: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    let (mut right, mut total) = (0usize, 0usize);
    let mut per_label = BTreeMap::<String, EntityCounts>::new();
    for (pred, gold) in pairs {
        let (pred, gold) = (pred.as_ref(), gold.as_ref());
        check_lengths(pred.len(), gold.len())?;
        right += pred.iter().zip(gold).filter(|(p, g)| p.as_ref() == g.as_ref()).count();
        total += gold.len();
        for (label, c) in entity_counts(&extract_entities(pred)?, &extract_entities(gold)?) {
            per_label.entry(label).or_default().add(c);
        }
    }
    let mut overall = EntityCounts::default();
    for c in per_label.values() {
        overall.add(*c);
    }
    Ok(EvalReport {
        accuracy: ratio(right, total),
        overall,
        per_label,
    })
}
