//! Runs the `seqtag` binary through a complete small pipeline.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use seqtag::conll::write_conll;
use seqtag::synthetic::{lexicon_task, pretraining_corpus};

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn seqtag(dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_seqtag"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("the seqtag binary runs");
    Outcome {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Tiny model shapes so that every training subcommand runs in seconds.
pub const TINY: &[&str] = &[
    "--set", "epochs=2",
    "--set", "batch_size=8",
    "--set", "encoder.num_layers=1",
    "--set", "encoder.hidden_size=16",
    "--set", "encoder.num_heads=2",
    "--set", "discriminator.num_layers=1",
    "--set", "discriminator.hidden_size=16",
    "--set", "discriminator.num_heads=2",
    "--set", "head.rnn_hidden=8",
];

/// Raw documents plus train/test CoNLL files in `dir`.
pub fn write_inputs(dir: &Path) {
    let docs = dir.join("docs");
    std::fs::create_dir_all(&docs).unwrap();
    let lines = pretraining_corpus(160, 5);
    for (i, chunk) in lines.chunks(40).enumerate() {
        std::fs::write(docs.join(format!("doc{i}.txt")), chunk.join("\n")).unwrap();
    }
    write_conll(dir.join("train.conll"), &lexicon_task(40, 6)).unwrap();
    write_conll(dir.join("test.conll"), &lexicon_task(10, 7)).unwrap();
    let sentences: Vec<String> = lexicon_task(5, 8).iter().map(|s| s.words.join(" ")).collect();
    std::fs::write(dir.join("sentences.txt"), sentences.join("\n") + "\n").unwrap();
}

fn args<'a>(base: &[&'a str], seed: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(["--seed", seed]);
    v.extend(extra);
    v
}

/// Every subcommand, in pipeline order, with the given seed. Returns each
/// command's stdout keyed by subcommand name.
pub fn run_pipeline(dir: &Path, seed: &str) -> BTreeMap<&'static str, String> {
    write_inputs(dir);
    let steps: Vec<(&'static str, Vec<&str>)> = vec![
        ("clean", args(&["clean", "--input", "docs", "--output", "shards", "--set", "shard_size=50"], seed, &[])),
        ("build-vocab", args(&["build-vocab", "--input", "shards", "--output", "vocab.txt", "--set", "max_size=200"], seed, &[])),
        (
            "pretrain-mlm",
            args(&["pretrain-mlm", "--input", "shards", "--vocab", "vocab.txt", "--output", "mlm.ckpt"], seed, TINY),
        ),
        (
            "pretrain-electra",
            args(&["pretrain-electra", "--input", "shards", "--vocab", "vocab.txt", "--output", "electra.ckpt"], seed, TINY),
        ),
        (
            "finetune",
            args(
                &["finetune", "--train", "train.conll", "--encoder", "mlm.ckpt", "--head", "bilstm", "--task", "pos", "--output", "tagger.ckpt", "--log", "finetune.log"],
                seed,
                TINY,
            ),
        ),
        ("tag", args(&["tag", "--model", "tagger.ckpt", "--input", "sentences.txt"], seed, &[])),
        ("eval", args(&["eval", "--pred", "train.conll", "--gold", "train.conll", "--task", "pos"], seed, &[])),
        (
            "bench",
            args(&["bench", "--model", "tagger.ckpt", "--set", "warmup=0", "--set", "repeats=1"], seed, &[]),
        ),
        (
            "grid",
            args(
                &["grid", "--train", "train.conll", "--test", "test.conll", "--task", "pos", "--encoder", "mlm=mlm.ckpt", "--encoder", "electra=electra.ckpt", "--heads", "fine_tune,bigru"],
                seed,
                TINY,
            ),
        ),
    ];
    let mut out = BTreeMap::new();
    for (name, a) in steps {
        let r = seqtag(dir, &a);
        assert_eq!(r.code, 0, "{name} failed: {}", r.stderr);
        out.insert(name, r.stdout);
    }
    out
}

/// Every file the pipeline wrote, relative path to bytes.
pub fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Bench output without the wall-clock line.
pub fn without_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("ms_per_sentence="))
        .map(|l| format!("{l}\n"))
        .collect()
}
