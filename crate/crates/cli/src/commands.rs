use std::io::Write as _;
use std::path::{Path, PathBuf};

use seqtag::bench::bench_decode;
use seqtag::checkpoint::Checkpoint;
use seqtag::config::Settings;
use seqtag::conll::{parse_conll, read_conll, TaggedSentence};
use seqtag::corpus::{clean_corpus, list_shards, read_documents, read_sentences, shard_sentences, Charset};
use seqtag::electra::{train_electra, ElectraConfig};
use seqtag::encoder::EncoderConfig;
use seqtag::eval::{evaluate_corpus, token_accuracy};
use seqtag::grid::{run_grid, EncoderSource, GridColumn, GridConfig};
use seqtag::heads::{finetune, EncoderInit, FinetuneConfig, HeadConfig, HeadKind, TaggerModel};
use seqtag::mlm::{train_mlm, PretrainConfig, PretrainRun};
use seqtag::synthetic::{bench_sentences, task_vocab};
use seqtag::tokenizer::{build_vocab, Vocab, VocabOptions};
use seqtag::{Error, Result};

use crate::{Columns, Command, Common, Format, PretrainArgs, Task};

pub(crate) fn execute(command: Command) -> Result<()> {
    match command {
        Command::Clean {
            input,
            output,
            charset,
            common,
        } => clean(&input, &output, charset.as_deref(), &common),
        Command::BuildVocab {
            input,
            output,
            base,
            common,
        } => build(&input, &output, base.as_deref(), &common),
        Command::PretrainMlm(args) => pretrain(&args, Objective::Mlm),
        Command::PretrainElectra(args) => pretrain(&args, Objective::Electra),
        Command::Finetune {
            train,
            dev,
            encoder,
            vocab,
            head,
            task,
            output,
            log,
            columns,
            common,
        } => {
            let paths = FinetunePaths {
                train: &train,
                dev: dev.as_deref(),
                encoder: encoder.as_deref(),
                vocab: vocab.as_deref(),
                output: &output,
                log: log.as_deref(),
            };
            fine_tune(&paths, head.as_deref(), task, &columns, &common)
        }
        Command::Tag {
            model,
            input,
            output,
            common: _,
        } => tag(&model, &input, output.as_deref()),
        Command::Eval {
            pred,
            gold,
            task,
            format,
            columns,
            common: _,
        } => eval(&pred, &gold, task, format, &columns),
        Command::Bench { model, input, common } => bench(&model, input.as_deref(), &common),
        Command::Grid {
            train,
            test,
            task,
            encoders,
            heads,
            parallel,
            output,
            columns,
            common,
        } => grid(&train, &test, task, &encoders, &heads, parallel, output.as_deref(), &columns, &common),
    }
}

/// Writes `text` to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sentences from files and shard directories, in argument order.
fn read_inputs(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let shards = list_shards(p)?;
            if shards.is_empty() {
                return Err(Error::Config(format!("{} holds no shard files", p.display())));
            }
            files.extend(shards);
        } else {
            files.push(p.clone());
        }
    }
    read_sentences(&files)
}

fn clean(input: &Path, output: &Path, charset: Option<&Path>, common: &Common) -> Result<()> {
    let s = common.settings()?;
    let charset = match charset {
        Some(p) => Charset::load(p)?,
        None => Charset::vietnamese(),
    };
    let docs = read_documents(input)?;
    let (sentences, stats) = clean_corpus(&docs, &charset);
    shard_sentences(&sentences, s.get_or("shard_size", 10_000)?, common.seed, output)?;
    emit(None, &stats.to_string())
}

fn build(input: &[PathBuf], output: &Path, base: Option<&Path>, common: &Common) -> Result<()> {
    let s = common.settings()?;
    let d = VocabOptions::default();
    let options = VocabOptions {
        min_count: s.get_or("min_count", d.min_count)?,
        max_size: s.get_or("max_size", d.max_size)?,
    };
    let base = base.map(Vocab::load).transpose()?;
    let vocab = build_vocab(read_inputs(input)?, base.as_ref(), options)?;
    vocab.save(output)?;
    emit(None, &format!("tokens={}\n", vocab.len()))
}

#[derive(Clone, Copy)]
enum Objective {
    Mlm,
    Electra,
}

fn pretrain(args: &PretrainArgs, objective: Objective) -> Result<()> {
    let s = args.common.settings()?;
    let vocab = Vocab::load(&args.vocab)?;
    let sentences = read_inputs(&args.input)?;
    let train_config = PretrainConfig::from_settings(&s)?;
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let seed = args.common.seed;
    let defaults = EncoderConfig::desk(vocab.len());
    let result: Result<PretrainRun> = match objective {
        Objective::Mlm => {
            let mut enc = EncoderConfig::from_settings(&s.section("encoder."), &defaults)?;
            enc.vocab_size = vocab.len();
            train_mlm(&sentences, &vocab, enc, &train_config, seed, resume.as_ref())
        }
        Objective::Electra => {
            let mut cfg = s.clone();
            cfg.set("discriminator.vocab_size", vocab.len());
            cfg.set("generator.vocab_size", vocab.len());
            let config = ElectraConfig::from_settings(&cfg, &defaults)?;
            train_electra(&sentences, &vocab, &config, &train_config, seed, resume.as_ref())
        }
    };
    let run = match result {
        Ok(run) => run,
        Err(Error::Diverged {
            epoch,
            last_good: Some(ckpt),
        }) => {
            ckpt.save(&args.output)?;
            log::error!("wrote the last good state to {}", args.output.display());
            return Err(Error::Diverged { epoch, last_good: None });
        }
        Err(e) => return Err(e),
    };
    run.checkpoint.save(&args.output)?;
    emit(args.log.as_deref(), &run.log())
}

struct FinetunePaths<'a> {
    train: &'a Path,
    dev: Option<&'a Path>,
    encoder: Option<&'a Path>,
    vocab: Option<&'a Path>,
    output: &'a Path,
    log: Option<&'a Path>,
}

/// `head.*` settings; a `--head` flag wins over `head.kind`. The tag count
/// is a placeholder, replaced by the size of the training tag set.
fn head_template(s: &Settings, kind: Option<&str>) -> Result<HeadConfig> {
    let mut head = s.section("head.");
    if let Some(k) = kind {
        head.set("kind", HeadKind::parse(k)?.name());
    }
    HeadConfig::from_settings(&head, HeadKind::FineTune, 1)
}

fn fresh_encoder(s: &Settings, vocab: &Vocab) -> Result<EncoderConfig> {
    let mut enc = EncoderConfig::from_settings(&s.section("encoder."), &EncoderConfig::desk(vocab.len()))?;
    enc.vocab_size = vocab.len();
    Ok(enc)
}

fn fine_tune(paths: &FinetunePaths, head: Option<&str>, task: Task, columns: &Columns, common: &Common) -> Result<()> {
    let s = common.settings()?;
    let train = read_conll(paths.train, columns.word_col, columns.tag_col, task.scheme())?;
    let dev = match paths.dev {
        Some(p) => Some(read_conll(p, columns.word_col, columns.tag_col, task.scheme())?.sentences),
        None => None,
    };
    let head = head_template(&s, head)?;
    let config = FinetuneConfig::from_settings(&s)?;
    let ckpt = paths.encoder.map(Checkpoint::load).transpose()?;
    let vocab = match (&ckpt, paths.vocab) {
        (Some(_), _) => None,
        (None, Some(p)) => Some(Vocab::load(p)?),
        (None, None) => Some(task_vocab(&train.sentences)?),
    };
    let enc;
    let init = match (&ckpt, &vocab) {
        (Some(c), _) => EncoderInit::Checkpoint(c),
        (None, Some(v)) => {
            enc = fresh_encoder(&s, v)?;
            EncoderInit::Fresh(&enc, v)
        }
        (None, None) => unreachable!("a vocabulary is built whenever there is no checkpoint"),
    };
    let run = finetune(init, &train, dev.as_deref(), &head, &config, common.seed)?;
    run.checkpoint(common.seed).save(paths.output)?;
    if let Some(log) = paths.log {
        emit(Some(log), &run.log_text())?;
    }
    let mut summary = format!(
        "train_sentences={}\ndev_sentences={}\nbest_epoch={}\nbest_dev_accuracy={:.6}\n",
        run.train_size, run.dev_size, run.best_epoch, run.best_dev_accuracy
    );
    if let Some(n) = &run.warm_start.notice {
        summary.push_str(&format!("notice={n}\n"));
    }
    emit(None, &summary)
}

fn tag(model: &Path, input: &Path, output: Option<&Path>) -> Result<()> {
    let model = TaggerModel::<f32>::from_checkpoint(&Checkpoint::load(model)?)?;
    let text = std::fs::read_to_string(input).map_err(|e| io_error(input, e))?;
    let mut out = String::new();
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if !words.is_empty() {
            let tags = model.tag_sentence(&words)?;
            let pairs: Vec<String> = words.iter().zip(&tags).map(|(w, t)| format!("{w}/{t}")).collect();
            out.push_str(&pairs.join(" "));
        }
        out.push('\n');
    }
    emit(output, &out)
}

fn read_tags(path: &Path, columns: &Columns) -> Result<Vec<TaggedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_conll(&text, &path.display().to_string(), columns.word_col, columns.tag_col)
}

fn eval(pred: &Path, gold: &Path, task: Task, format: Format, columns: &Columns) -> Result<()> {
    let (p, g) = (read_tags(pred, columns)?, read_tags(gold, columns)?);
    if p.len() != g.len() {
        return Err(Error::Contract(format!("{} predicted sentences for {} gold sentences", p.len(), g.len())));
    }
    for (i, (a, b)) in p.iter().zip(&g).enumerate() {
        if a.words != b.words {
            return Err(Error::Contract(format!("sentence {} has different words in the two files", i + 1)));
        }
    }
    let text = match task {
        Task::Pos => {
            let pt: Vec<&String> = p.iter().flat_map(|s| &s.tags).collect();
            let gt: Vec<&String> = g.iter().flat_map(|s| &s.tags).collect();
            let acc = token_accuracy(&pt, &gt)?;
            match format {
                Format::Table => format!("accuracy: {acc:.4}\n"),
                Format::Kv => format!("accuracy={acc:.6}\n"),
            }
        }
        Task::Ner => {
            let pairs: Vec<(&[String], &[String])> = p.iter().zip(&g).map(|(a, b)| (&a.tags[..], &b.tags[..])).collect();
            let report = evaluate_corpus(&pairs)?;
            match format {
                Format::Table => report.to_table(),
                Format::Kv => report.to_kv(),
            }
        }
    };
    emit(None, &text)
}

fn bench(model: &Path, input: Option<&Path>, common: &Common) -> Result<()> {
    let s = common.settings()?;
    let model = TaggerModel::<f32>::from_checkpoint(&Checkpoint::load(model)?)?;
    let sentences: Vec<Vec<String>> = match input {
        Some(p) => read_sentences(&[p])?
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect(),
        None => bench_sentences(),
    };
    let report = bench_decode(&model, &sentences, s.get_or("warmup", 3)?, s.get_or("repeats", 10)?)?;
    emit(None, &report.to_kv())
}

#[allow(clippy::too_many_arguments)]
fn grid(
    train: &Path,
    test: &Path,
    task: Task,
    encoders: &[String],
    heads: &[String],
    parallel: bool,
    output: Option<&Path>,
    columns: &Columns,
    common: &Common,
) -> Result<()> {
    let s = common.settings()?;
    let train = read_conll(train, columns.word_col, columns.tag_col, task.scheme())?;
    let test = read_tags(test, columns)?;
    let mut cols = Vec::with_capacity(encoders.len());
    for spec in encoders {
        let (name, source) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("encoder {spec:?} is not NAME=SOURCE")))?;
        let source = if source == "fresh" {
            let vocab = task_vocab(&train.sentences)?;
            EncoderSource::Fresh(fresh_encoder(&s, &vocab)?, vocab)
        } else {
            EncoderSource::Checkpoint(Checkpoint::load(source)?)
        };
        cols.push(GridColumn {
            name: name.to_string(),
            source,
        });
    }
    let heads = if heads.is_empty() {
        HeadKind::ALL.to_vec()
    } else {
        heads.iter().map(|h| HeadKind::parse(h)).collect::<Result<_>>()?
    };
    let config = GridConfig {
        columns: cols,
        heads,
        head: head_template(&s, None)?,
        finetune: FinetuneConfig::from_settings(&s)?,
        seed: common.seed,
        parallel,
    };
    let result = run_grid(&config, &train, &test)?;
    for (kind, row) in result.rows.iter().zip(&result.cells) {
        for (col, cell) in result.columns.iter().zip(row) {
            if let Err(msg) = cell {
                eprintln!("cell {} / {col}: {msg}", kind.label());
            }
        }
    }
    emit(output, &format!("metric: {}\n\n{}", result.metric, result.to_table()))
}
