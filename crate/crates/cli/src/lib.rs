//! The `seqtag` command line.
//!
//! Every subcommand takes `--config FILE` (flat `key=value` text),
//! repeatable `--set KEY=VALUE` overrides applied on top of the file, and a
//! `--seed` that governs all randomness. Exit codes: 0 on success, 1 on a
//! usage error, 2 when the command itself fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqtag::config::Settings;
use seqtag::heads::Scheme;

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seqtag", version, about = "Pretrain, fine-tune and evaluate transformer sequence taggers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file of `key=value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = key_value)]
    overrides: Vec<String>,
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn key_value(entry: &str) -> Result<String, String> {
    match entry.split_once('=') {
        Some((k, _)) if !k.trim().is_empty() => Ok(entry.to_string()),
        _ => Err(format!("{entry:?} is not KEY=VALUE")),
    }
}

impl Common {
    fn settings(&self) -> seqtag::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::new(),
        };
        for entry in &self.overrides {
            s.apply(entry)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Pos,
    Ner,
}

impl Task {
    fn scheme(self) -> Scheme {
        match self {
            Task::Pos => Scheme::Pos,
            Task::Ner => Scheme::Ner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Kv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deduplicate, filter and shard a directory of raw documents.
    Clean {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        /// Whitelist file; every non-whitespace character in it is allowed.
        #[arg(long, value_name = "FILE")]
        charset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Learn a WordPiece vocabulary, or prune `--base` to a corpus.
    BuildVocab {
        /// Sentence files or shard directories.
        #[arg(long, required = true, value_name = "PATH")]
        input: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, value_name = "FILE")]
        base: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain an encoder with masked language modeling.
    PretrainMlm(PretrainArgs),
    /// Pretrain a generator/discriminator pair with replaced token detection.
    PretrainElectra(PretrainArgs),
    /// Fine-tune an encoder and a tagging head on CoNLL data.
    Finetune {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        dev: Option<PathBuf>,
        /// Pretrained checkpoint; without it a fresh encoder is built.
        #[arg(long, value_name = "FILE")]
        encoder: Option<PathBuf>,
        /// Vocabulary for a fresh encoder; learned from the training words
        /// when absent.
        #[arg(long, value_name = "FILE", conflicts_with = "encoder")]
        vocab: Option<PathBuf>,
        /// fine_tune, bilstm, bigru, bilstm_attn or bigru_attn.
        #[arg(long, value_name = "KIND")]
        head: Option<String>,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        columns: Columns,
        #[command(flatten)]
        common: Common,
    },
    /// Tag whitespace-tokenized sentences, one per line.
    Tag {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted CoNLL tags against gold tags.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[command(flatten)]
        columns: Columns,
        #[command(flatten)]
        common: Common,
    },
    /// Time per-sentence decoding of a trained tagger.
    Bench {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Sentences to decode; the built-in 20-sentence fixture when absent.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune and score every encoder × head combination.
    Grid {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        test: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// `NAME=CHECKPOINT`, or `NAME=fresh` for an untrained encoder; may
        /// be repeated.
        #[arg(long = "encoder", required = true, value_name = "NAME=SOURCE")]
        encoders: Vec<String>,
        /// Comma-separated head kinds; all five when absent.
        #[arg(long, value_delimiter = ',', value_name = "KINDS")]
        heads: Vec<String>,
        /// Run cells on separate threads (results may differ in the last bits).
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[command(flatten)]
        columns: Columns,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Sentence files or shard directories.
    #[arg(long, required = true, value_name = "PATH")]
    input: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Per-epoch loss log; printed to stdout when absent.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Columns {
    /// 0-based word column of the CoNLL files.
    #[arg(long, default_value_t = 0)]
    word_col: usize,
    /// 0-based tag column of the CoNLL files.
    #[arg(long, default_value_t = 1)]
    tag_col: usize,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
