//! Encoder × head comparison grid: every cell fine-tunes one head on one
//! encoder with the shared seed and is scored on the test data.

use std::fmt::Write as _;

use crate::checkpoint::Checkpoint;
use crate::conll::{ConllDataset, TaggedSentence};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, token_accuracy};
use crate::heads::{finetune, EncoderInit, FinetuneConfig, HeadConfig, HeadKind, Scheme};
use crate::tokenizer::Vocab;

/// Where one grid column's encoder comes from.
#[derive(Debug, Clone)]
pub enum EncoderSource {
    Fresh(EncoderConfig, Vocab),
    Checkpoint(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct GridColumn {
    pub name: String,
    pub source: EncoderSource,
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub columns: Vec<GridColumn>,
    pub heads: Vec<HeadKind>,
    /// Template for every head; `kind` and `num_tags` are set per cell.
    pub head: HeadConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
    /// Run cells on separate threads. Cells share no mutable state, but
    /// bit-identical results are only promised for sequential runs.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub columns: Vec<String>,
    pub rows: Vec<HeadKind>,
    /// `cells[row][column]`: the test score, or the failure message.
    pub cells: Vec<Vec<std::result::Result<f64, String>>>,
    /// "accuracy" for POS data, "f1" for NER data.
    pub metric: &'static str,
}

impl GridResult {
    /// Markdown table in percent with two decimals; the best cell of each
    /// column is bold and failed cells read `ERR`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("| Model |");
        for c in &self.columns {
            write!(out, " {c} |").unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        let best: Vec<Option<f64>> = (0..self.columns.len())
            .map(|c| {
                self.cells
                    .iter()
                    .filter_map(|row| row[c].as_ref().ok().copied())
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            })
            .collect();
        for (r, kind) in self.rows.iter().enumerate() {
            write!(out, "| {} |", kind.label()).unwrap();
            for (c, cell) in self.cells[r].iter().enumerate() {
                match cell {
                    Ok(v) if Some(*v) == best[c] => write!(out, " **{:.2}** |", v * 100.0).unwrap(),
                    Ok(v) => write!(out, " {:.2} |", v * 100.0).unwrap(),
                    Err(_) => out.push_str(" ERR |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn run_cell(
    column: &GridColumn,
    kind: HeadKind,
    config: &GridConfig,
    train: &ConllDataset,
    test: &[TaggedSentence],
) -> Result<f64> {
    let init = match &column.source {
        EncoderSource::Fresh(c, v) => EncoderInit::Fresh(c, v),
        EncoderSource::Checkpoint(c) => EncoderInit::Checkpoint(c),
    };
    let head = HeadConfig {
        kind,
        num_tags: train.tagset.len(),
        ..config.head.clone()
    };
    let run = finetune(init, train, None, &head, &config.finetune, config.seed)?;
    let mut pairs = Vec::with_capacity(test.len());
    for s in test {
        pairs.push((run.model.tag_sentence(&s.words)?, s.tags.clone()));
    }
    match train.tagset.scheme() {
        Scheme::Pos => {
            let pred: Vec<&String> = pairs.iter().flat_map(|(p, _)| p).collect();
            let gold: Vec<&String> = pairs.iter().flat_map(|(_, g)| g).collect();
            token_accuracy(&pred, &gold)
        }
        Scheme::Ner => Ok(evaluate_corpus(&pairs)?.f1()),
    }
}

/// Fills the grid. A failing cell is recorded as `Err` and the remaining
/// cells still run.
pub fn run_grid(config: &GridConfig, train: &ConllDataset, test: &[TaggedSentence]) -> Result<GridResult> {
    if config.columns.is_empty() || config.heads.is_empty() {
        return Err(Error::Config("the grid needs at least one encoder and one head".into()));
    }
    let cells_of = |kind: HeadKind| -> Vec<std::result::Result<f64, String>> {
        config
            .columns
            .iter()
            .map(|col| {
                run_cell(col, kind, config, train, test).map_err(|e| {
                    log::error!("grid cell {} / {} failed: {e}", kind.label(), col.name);
                    e.to_string()
                })
            })
            .collect()
    };
    let cells = if config.parallel {
        log::warn!("parallel grid: cells run concurrently and results are not guaranteed bit-identical");
        std::thread::scope(|s| {
            let handles: Vec<_> = config.heads.iter().map(|&k| s.spawn(move || cells_of(k))).collect();
            handles.into_iter().map(|h| h.join().expect("grid worker panicked")).collect()
        })
    } else {
        config.heads.iter().map(|&k| cells_of(k)).collect()
    };
    Ok(GridResult {
        columns: config.columns.iter().map(|c| c.name.clone()).collect(),
        rows: config.heads.clone(),
        cells,
        metric: match train.tagset.scheme() {
            Scheme::Pos => "accuracy",
            Scheme::Ner => "f1",
        },
    })
}
