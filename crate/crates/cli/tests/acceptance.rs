//! Acceptance suite: one check per criterion, each with its time budget.
//! Prints one PASS/FAIL line per criterion and fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqtag::batch::Batch;
use seqtag::bench::bench_decode;
use seqtag::checkpoint::Checkpoint;
use seqtag::conll::ConllDataset;
use seqtag::corpus::{clean_corpus, read_documents, Charset, CleanStats};
use seqtag::electra::{discriminator_accuracy, electra_from_checkpoint, sample_and_label, train_electra, ElectraConfig, RtdLabel};
use seqtag::encoder::{Encoder, EncoderConfig};
use seqtag::eval::{entity_f1, evaluate_corpus, extract_entities, token_accuracy};
use seqtag::grid::{run_grid, EncoderSource, GridColumn, GridConfig};
use seqtag::heads::{finetune, EncoderInit, FinetuneConfig, HeadConfig, HeadKind, ScalarMix, Scheme, TagSet, TaggerModel};
use seqtag::mlm::{encode_corpus, select_mask_targets, train_mlm, MaskAction, MaskPlan, PretrainConfig, KEEP_PROB, MASK_PROB};
use seqtag::nn::{Mode, Params};
use seqtag::synthetic::{bench_sentences, lexicon_task, pretraining_corpus, task_vocab};
use seqtag::tokenizer::{build_vocab, encode_sentence, Vocab, VocabOptions};
use seqtag_tensor::gradcheck::check_gradients;
use seqtag_tensor::{Tensor, TensorError, IGNORE_INDEX};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Writes past the test harness's output capture so the lines always show.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

// ------------------------------------------------------------------ 1

fn param(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn gradient_correctness() -> Check {
    const H: f64 = 1e-4;
    let mut worst_op = (0.0f64, "");
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[4, 5], -1.0, 1.0);
        let bt = param(&mut rng, &[2, 5, 4], -1.0, 1.0);
        let v = param(&mut rng, &[4], -1.0, 1.0);
        let g = param(&mut rng, &[4], 0.5, 1.5);
        let table = param(&mut rng, &[6, 4], -1.0, 1.0);
        let w34 = weights(&mut rng, &[2, 3, 4]);
        let w35 = weights(&mut rng, &[2, 3, 5]);
        let ids: Vec<usize> = (0..5).map(|_| rng.gen_range(0..6)).collect();
        let w54 = weights(&mut rng, &[5, 4]);
        let targets: Vec<i64> = (0..6).map(|i| if i == 1 { IGNORE_INDEX } else { rng.gen_range(0..4) }).collect();
        let bits: Vec<f64> = (0..6).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        let drop_seed: u64 = rng.gen();
        let c = |t: Tensor<f64>, w: &Tensor<f64>| -> seqtag_tensor::Result<Tensor<f64>> { Ok(t.mul(w)?.sum_all()) };
        type Case<'a> = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn() -> seqtag_tensor::Result<Tensor<f64>> + 'a>);
        let cases: Vec<Case> = vec![
            ("tanh", vec![a.clone()], Box::new(|| c(a.tanh(), &w34))),
            ("sigmoid", vec![a.clone()], Box::new(|| c(a.sigmoid(), &w34))),
            ("gelu", vec![a.clone()], Box::new(|| c(a.gelu(), &w34))),
            ("softmax", vec![a.clone()], Box::new(|| c(a.softmax(), &w34))),
            ("log_softmax", vec![a.clone()], Box::new(|| c(a.log_softmax(), &w34))),
            ("matmul", vec![a.clone(), b.clone()], Box::new(|| c(a.matmul(&b)?, &w35))),
            ("matmul_t", vec![a.clone(), bt.clone()], Box::new(|| c(a.matmul_t(&bt)?, &w35))),
            (
                "add/sub/mul/mul_scalar",
                vec![a.clone(), v.clone()],
                Box::new(|| c(a.add(&v)?.mul(&a)?.sub(&v)?.mul_scalar(1.5), &w34)),
            ),
            ("layer_norm", vec![a.clone(), g.clone(), v.clone()], Box::new(|| c(a.layer_norm(&g, &v, 1e-12)?, &w34))),
            ("embedding", vec![table.clone()], Box::new(|| c(table.embedding(&ids)?, &w54))),
            (
                "dropout",
                vec![a.clone()],
                Box::new(|| c(a.dropout(0.3, true, &mut ChaCha8Rng::seed_from_u64(drop_seed))?, &w34)),
            ),
            (
                "concat/slice/reshape/permute",
                vec![a.clone()],
                Box::new(|| {
                    let cat = Tensor::concat(&[a.clone(), a.tanh()], 2)?.slice(2, 2, 6)?;
                    c(cat.reshape(&[2, 4, 3])?.permute(&[0, 2, 1])?, &w34)
                }),
            ),
            ("cross_entropy", vec![table.clone()], Box::new(|| table.cross_entropy(&targets))),
            (
                "bce_with_logits",
                vec![table.clone()],
                Box::new(|| table.slice(1, 0, 1)?.reshape(&[6])?.bce_with_logits(&bits, &[true, true, false, true, true, true])),
            ),
            ("mean_all", vec![a.clone()], Box::new(|| Ok(a.tanh().mean_all()))),
        ];
        for (name, inputs, f) in &cases {
            let e = check_gradients(inputs, H, f).map_err(err)?.max_relative_error();
            if e > worst_op.0 {
                worst_op = (e, name);
            }
        }
    }
    ensure(worst_op.0 < 1e-4, || format!("op {} relative error {:e}", worst_op.1, worst_op.0))?;

    let v = Vocab::with_specials(["phi", "công", "máy", "bay", "h", "##ạ"]).unwrap();
    let mut cfg = EncoderConfig::with_shape(v.len(), 2, 8, 2);
    cfg.max_positions = 16;
    cfg.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let enc = Encoder::<f64>::new(cfg, &mut rng).map_err(err)?;
    let seqs = [
        encode_sentence(&["phi", "công", "máy"], &v, 16).unwrap(),
        encode_sentence(&["bay", "hạ"], &v, 16).unwrap(),
    ];
    let batch = Batch::from_sequences(&seqs, v.pad_id()).map_err(err)?;
    let proj = weights(&mut rng, &[2, batch.seq_len, 8]);
    let params: Vec<Tensor<f64>> = enc.parameters().into_iter().map(|(_, t)| t).collect();
    let e2e = check_gradients(&params, H, || {
        let out = enc.forward(&batch, &mut Mode::Eval).map_err(|e| TensorError::Contract(e.to_string()))?;
        Ok(out.last().mul(&proj)?.sum_all())
    })
    .map_err(err)?
    .max_relative_error();
    ensure(e2e < 1e-3, || format!("end-to-end relative error {e2e:e}"))?;
    Ok(format!("worst op error {:.1e} ({}), end-to-end {e2e:.1e}", worst_op.0, worst_op.1))
}

// ------------------------------------------------------------------ 2

fn masking_statistics() -> Check {
    let corpus = pretraining_corpus(200, 0);
    let vocab = build_vocab(&corpus, None, VocabOptions { min_count: 2, max_size: 80 }).map_err(err)?;
    let pool: Vec<&str> = corpus.iter().flat_map(|s| s.split_whitespace()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut words, mut selected, mut violations) = (0usize, 0usize, 0usize);
    let mut actions = [0usize; 3];
    while words < 100_000 {
        let s: Vec<&str> = (0..50).map(|_| *pool.choose(&mut rng).unwrap()).collect();
        let seq = encode_sentence(&s, &vocab, 512).map_err(err)?;
        let plan = select_mask_targets(&seq, &vocab, &mut rng).map_err(err)?;
        words += seq.num_words;
        selected += plan.selected_words.len();
        for (w, span) in seq.word_spans().into_iter().enumerate() {
            let action = plan.action_of(w);
            for pos in span {
                let (orig, now) = (seq.ids[pos], plan.input_ids[pos]);
                let ok = match action {
                    None => now == orig && plan.targets[pos] == IGNORE_INDEX,
                    Some(MaskAction::Mask) => now == vocab.mask_id(),
                    Some(MaskAction::Keep) => now == orig,
                    Some(MaskAction::Random) => !vocab.is_special(now),
                };
                violations += usize::from(!ok);
            }
        }
        for a in &plan.actions {
            actions[*a as usize] += 1;
        }
    }
    let rate = selected as f64 / words as f64;
    let share = |i: usize| actions[i] as f64 / selected as f64;
    ensure((0.14..=0.16).contains(&rate), || format!("selection rate {rate:.4}"))?;
    ensure((share(0) - MASK_PROB).abs() <= 0.02, || format!("mask share {:.4}", share(0)))?;
    ensure((share(1) - KEEP_PROB).abs() <= 0.02, || format!("keep share {:.4}", share(1)))?;
    ensure((share(2) - 0.1).abs() <= 0.02, || format!("random share {:.4}", share(2)))?;
    ensure(violations == 0, || format!("{violations} whole-word violations"))?;
    Ok(format!(
        "{words} words, rate {rate:.4}, actions {:.3}/{:.3}/{:.3}, 0 violations",
        share(0),
        share(1),
        share(2)
    ))
}

// ------------------------------------------------------------------ 3

fn electra_labeling() -> Check {
    let v = Vocab::with_specials(["phi", "công", "điều", "khiển", "máy", "bay", "sân"]).unwrap();
    let words = ["phi", "công", "điều", "khiển", "máy", "bay"];
    let seq = encode_sentence(&words, &v, 16).map_err(err)?;
    let plan = MaskPlan::from_choices(&seq, v.mask_id(), &[(1, MaskAction::Mask), (4, MaskAction::Mask)], &mut std::iter::empty())
        .map_err(err)?;
    let mut masked = seq.clone();
    masked.ids = plan.input_ids.clone();
    let batch = Batch::from_sequences(&[masked], v.pad_id()).map_err(err)?;
    let n = v.len();
    let mut probs = vec![1.0 / n as f64; batch.seq_len * n];
    for (pos, token) in [(2, "công"), (5, "sân")] {
        let row = &mut probs[pos * n..(pos + 1) * n];
        row.fill(0.0);
        row[v.id(token).unwrap()] = 1.0;
    }
    let rtd = sample_and_label(&batch, &plan.targets, &probs, &mut ChaCha8Rng::seed_from_u64(0)).map_err(err)?;
    use RtdLabel::{Original as O, Replaced as R};
    ensure(rtd.labels[1..7] == [O, O, O, O, R, O], || format!("labels {:?}", &rtd.labels[1..7]))?;

    let row = &mut probs[5 * n..6 * n];
    row.fill(0.0);
    row[v.id("máy").unwrap()] = 0.35;
    for t in ["phi", "sân", "bay", "điều"] {
        row[v.id(t).unwrap()] = 0.1625;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    let mut replaced = 0;
    for _ in 0..draws {
        let r = sample_and_label(&batch, &plan.targets, &probs, &mut rng).map_err(err)?;
        replaced += usize::from(r.labels[5] == R);
    }
    let rate = replaced as f64 / draws as f64;
    ensure((rate - 0.65).abs() <= 0.02, || format!("replaced rate {rate:.4}, expected 0.65"))?;
    Ok(format!("labels (O,O,O,O,R,O); replaced rate {rate:.4} vs 1 - 0.35"))
}

// ------------------------------------------------------------------ 4

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

fn random_iob2(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(len);
    let mut open: Option<&str> = None;
    for _ in 0..len {
        let r: f64 = rng.gen();
        out.push(match open {
            Some(t) if r < 0.35 => format!("I-{t}"),
            _ if r < 0.6 => {
                open = None;
                "O".to_string()
            }
            _ => {
                let t = *TYPES.choose(rng).unwrap();
                open = Some(t);
                format!("B-{t}")
            }
        });
    }
    out
}

fn brute_force_spans(tags: &[String]) -> BTreeSet<(usize, usize, &'static str)> {
    let n = tags.len();
    let mut spans = BTreeSet::new();
    for start in 0..n {
        for end in start + 1..=n {
            for t in TYPES {
                if tags[start] == format!("B-{t}")
                    && tags[start + 1..end].iter().all(|x| *x == format!("I-{t}"))
                    && (end == n || tags[end] != format!("I-{t}"))
                {
                    spans.insert((start, end, t));
                }
            }
        }
    }
    spans
}

fn metric_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let len = rng.gen_range(1..=30);
        let gold = random_iob2(&mut rng, len);
        let pred = random_iob2(&mut rng, len);
        let (g, p) = (brute_force_spans(&gold), brute_force_spans(&pred));
        let tp = p.intersection(&g).count();
        let r = entity_f1(&pred, &gold).map_err(err)?;
        ensure((r.overall.ne_true, r.overall.ne_sys, r.overall.ne_ref) == (tp, p.len(), g.len()), || {
            format!("pair {i}: counts {:?} vs oracle ({tp}, {}, {})", r.overall, p.len(), g.len())
        })?;
        let (pr, rc) = (
            if p.is_empty() { 0.0 } else { tp as f64 / p.len() as f64 },
            if g.is_empty() { 0.0 } else { tp as f64 / g.len() as f64 },
        );
        let f1 = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
        ensure(r.f1() == f1, || format!("pair {i}: f1 {} vs oracle {f1}", r.f1()))?;
        let spans: BTreeSet<_> = extract_entities(&gold).map_err(err)?.into_iter().map(|e| (e.start, e.end, e.label)).collect();
        let oracle: BTreeSet<_> = g.iter().map(|&(s, e, l)| (s, e, l.to_string())).collect();
        ensure(spans == oracle, || format!("pair {i}: spans differ"))?;
    }
    let gold = ["B-PER", "I-PER", "O", "B-LOC", "O", "O"];
    let pred = ["B-PER", "I-PER", "O", "B-ORG", "O", "B-LOC"];
    let fixed = evaluate_corpus(&[(pred, gold)]).map_err(err)?;
    ensure(
        (fixed.overall.ne_sys, fixed.overall.ne_ref, fixed.overall.ne_true) == (3, 2, 1) && fixed.f1() == 0.4,
        || format!("fixed example gave {:?}, f1 {}", fixed.overall, fixed.f1()),
    )?;
    let tags = ["N", "V", "A", "E"];
    for i in 0..1000 {
        let len = rng.gen_range(1..=30);
        let gold: Vec<&str> = (0..len).map(|_| *tags.choose(&mut rng).unwrap()).collect();
        let pred: Vec<&str> = (0..len).map(|_| *tags.choose(&mut rng).unwrap()).collect();
        let mut right = 0;
        for k in 0..len {
            right += usize::from(pred[k] == gold[k]);
        }
        let acc = token_accuracy(&pred, &gold).map_err(err)?;
        ensure(acc == right as f64 / len as f64, || format!("accuracy pair {i}"))?;
    }
    Ok("1000 span-set pairs, fixed F1 = 0.4, 1000 accuracy pairs".into())
}

// ------------------------------------------------------------------ 5

fn desk_corpus() -> (Vec<String>, Vocab) {
    let corpus = pretraining_corpus(500, 1);
    let vocab = build_vocab(&corpus, None, VocabOptions::default()).unwrap();
    (corpus, vocab)
}

fn mlm_learning() -> Check {
    let (corpus, vocab) = desk_corpus();
    let cfg = PretrainConfig {
        epochs: 50,
        ..PretrainConfig::default()
    };
    let run = train_mlm(&corpus, &vocab, EncoderConfig::desk(vocab.len()), &cfg, 3, None).map_err(err)?;
    let (first, last) = (run.losses[0][0], run.losses.last().unwrap()[0]);
    ensure(last < 0.2 * first, || format!("loss {first:.3} -> {last:.3}"))?;
    Ok(format!("loss {first:.3} -> {last:.3} ({:.1}%)", 100.0 * last / first))
}

fn electra_learning() -> Check {
    let (corpus, vocab) = desk_corpus();
    let cfg = PretrainConfig {
        epochs: 50,
        ..PretrainConfig::default()
    };
    let config = ElectraConfig::from_discriminator(EncoderConfig::desk(vocab.len()));
    let run = train_electra(&corpus, &vocab, &config, &cfg, 3, None).map_err(err)?;
    let model = electra_from_checkpoint(&run.checkpoint).map_err(err)?;
    let held = encode_corpus(&pretraining_corpus(100, 77), &vocab, 256).map_err(err)?;
    let acc = discriminator_accuracy(&model, &held, &vocab, 5).map_err(err)?;
    ensure(acc >= 0.90, || format!("held-out discriminator accuracy {acc:.4}"))?;
    Ok(format!("held-out discriminator accuracy {acc:.4}"))
}

fn head_learning(kind: HeadKind) -> Check {
    let train = lexicon_task(200, 2);
    let test = lexicon_task(100, 1002);
    let vocab = task_vocab(&train).map_err(err)?;
    let data = ConllDataset::new(train.clone(), TagSet::from_sentences(&train, Scheme::Pos).map_err(err)?).map_err(err)?;
    let cfg = FinetuneConfig {
        epochs: 20,
        ..FinetuneConfig::default()
    };
    let enc = EncoderConfig::desk(vocab.len());
    let run = finetune(EncoderInit::Fresh(&enc, &vocab), &data, None, &HeadConfig::new(kind, 0), &cfg, 11).map_err(err)?;
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for s in &test {
        pred.extend(run.model.tag_sentence(&s.words).map_err(err)?);
        gold.extend(s.tags.iter().cloned());
    }
    let acc = token_accuracy(&pred, &gold).map_err(err)?;
    ensure(acc >= 0.99, || format!("{} held-out accuracy {acc:.4}", kind.label()))?;
    Ok(format!("{} held-out accuracy {acc:.4}", kind.label()))
}

// ------------------------------------------------------------------ 6

fn scalar_mix_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layers: Vec<Tensor<f64>> = (0..5).map(|_| param(&mut rng, &[2, 3, 4], -1.0, 1.0)).collect();
    let mix = ScalarMix::<f64>::new(5);
    mix.weights.set_data(&[0.0, 0.0, 0.0, 40.0, 0.0]).map_err(err)?;
    let out = mix.forward(&layers).map_err(err)?.to_vec();
    let dev = out.iter().zip(layers[3].to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev < 1e-4, || format!("one-hot limit off by {dev:e}"))?;

    mix.gamma.set_data(&[0.0]).map_err(err)?;
    ensure(mix.forward(&layers).map_err(err)?.to_vec().iter().all(|&x| x == 0.0), || "gamma = 0 is not zero".into())?;

    for _ in 0..100 {
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-30.0..30.0)).collect();
        mix.weights.set_data(&w).map_err(err)?;
        let s: f64 = mix.normalized_weights().iter().sum();
        ensure((s - 1.0).abs() <= 1e-6, || format!("weights sum to {s}"))?;
    }

    let mix = ScalarMix::<f64>::new(5);
    mix.weights.set_data(&[0.1, -0.2, 0.3, 0.0, 0.5]).map_err(err)?;
    let w = weights(&mut rng, &[2, 3, 4]);
    mix.forward(&layers).map_err(err)?.mul(&w).map_err(err)?.sum_all().backward().map_err(err)?;
    let gw = mix.weights.grad().ok_or("no gradient on the weights")?;
    let gg = mix.gamma.grad().ok_or("no gradient on gamma")?;
    ensure(gw.iter().all(|&g| g != 0.0) && gg[0] != 0.0, || format!("zero gradient: w {gw:?}, gamma {gg:?}"))?;
    Ok(format!("one-hot deviation {dev:.1e}; gradients reach gamma and all 5 weights"))
}

// ------------------------------------------------------------------ 7

fn grid_harness() -> Check {
    let train = lexicon_task(40, 3);
    let test = lexicon_task(10, 4);
    let vocab = task_vocab(&train).map_err(err)?;
    let data = ConllDataset::new(train.clone(), TagSet::from_sentences(&train, Scheme::Pos).map_err(err)?).map_err(err)?;
    let config = GridConfig {
        columns: vec![GridColumn {
            name: "desk".into(),
            source: EncoderSource::Fresh(EncoderConfig::with_shape(vocab.len(), 1, 16, 2), vocab),
        }],
        heads: HeadKind::ALL.to_vec(),
        head: HeadConfig {
            rnn_hidden: 16,
            ..HeadConfig::new(HeadKind::FineTune, 0)
        },
        finetune: FinetuneConfig {
            epochs: 2,
            ..FinetuneConfig::default()
        },
        seed: 7,
        parallel: false,
    };
    let a = run_grid(&config, &data, &test).map_err(err)?;
    let b = run_grid(&config, &data, &test).map_err(err)?;
    let table = a.to_table();
    let labels: Vec<&str> = table.lines().skip(2).map(|l| l.split(" | ").next().unwrap().trim_start_matches("| ")).collect();
    let want = ["+Fine-Tune", "+BiLSTM", "+BiGRU", "+BiLSTM_Attn", "+BiGRU_Attn"];
    ensure(labels == want, || format!("row labels {labels:?}"))?;
    ensure(a == b && table == b.to_table(), || "reruns differ".into())?;
    ensure(a.cells.iter().all(|r| r[0].is_ok()), || "a cell failed".into())?;
    Ok("5 rows with verbatim labels, bit-identical rerun".into())
}

// ------------------------------------------------------------------ 8

fn benchmark_fixture() -> Check {
    let sentences = bench_sentences();
    let tagged: Vec<_> = lexicon_task(50, 5);
    let mut all = tagged.clone();
    all.extend(sentences.iter().map(|w| seqtag::conll::TaggedSentence::new(w.clone(), vec!["N"; w.len()])));
    let vocab = task_vocab(&all).map_err(err)?;
    let tags = TagSet::from_sentences(&tagged, Scheme::Pos).map_err(err)?;
    let n = tags.len();
    let model = TaggerModel::new(EncoderConfig::desk(vocab.len()), HeadConfig::new(HeadKind::BiLstm, n), tags, vocab, &mut ChaCha8Rng::seed_from_u64(8))
        .map_err(err)?;
    let r = bench_decode(&model, &sentences, 2, 5).map_err(err)?;
    ensure((r.avg_words_per_sentence - 22.55).abs() <= 0.01, || format!("average {}", r.avg_words_per_sentence))?;
    ensure(r.ms_per_sentence.is_finite() && r.ms_per_sentence > 0.0, || format!("ms/sentence {}", r.ms_per_sentence))?;
    let kv = r.to_kv();
    let keys: Vec<&str> = kv.lines().filter_map(|l| l.split_once('=').map(|(k, _)| k)).collect();
    ensure(keys == ["sentences", "warmup", "repeats", "avg_words_per_sentence", "ms_per_sentence"], || format!("keys {keys:?}"))?;
    ensure(kv.contains("\navg_words_per_sentence=22.55\n"), || kv.clone())?;
    Ok(format!("{:.2} words/sentence, {:.3} ms/sentence", r.avg_words_per_sentence, r.ms_per_sentence))
}

// ------------------------------------------------------------------ 9

fn persistence_and_determinism() -> Check {
    let train = lexicon_task(30, 9);
    let vocab = task_vocab(&train).map_err(err)?;
    let tags = TagSet::from_sentences(&train, Scheme::Pos).map_err(err)?;
    let n = tags.len();
    let model = TaggerModel::<f32>::new(
        EncoderConfig::with_shape(vocab.len(), 2, 16, 2),
        HeadConfig::new(HeadKind::BiGruAttn, n),
        tags,
        vocab,
        &mut ChaCha8Rng::seed_from_u64(10),
    )
    .map_err(err)?;
    let ckpt = model.to_checkpoint();
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).map_err(err)?;
    let back = Checkpoint::load(&path).map_err(err)?;
    let bits = |c: &Checkpoint| -> Vec<(String, Vec<usize>, Vec<u32>)> {
        c.tensors.iter().map(|t| (t.name.clone(), t.shape.clone(), t.data.iter().map(|x| x.to_bits()).collect())).collect()
    };
    ensure(bits(&back) == bits(&ckpt), || "tensors differ after a round trip".into())?;
    ensure(back.config == ckpt.config && back.metadata == ckpt.metadata && back.vocab == ckpt.vocab, || "config differs after a round trip".into())?;

    let bytes = ckpt.to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut positions: Vec<usize> = (0..400).map(|_| rng.gen_range(0..bytes.len())).collect();
    positions.extend(0..64);
    for &pos in &positions {
        let mut b = bytes.clone();
        b[pos] ^= 1 << rng.gen_range(0..8);
        ensure(Checkpoint::from_bytes(&b).is_err(), || format!("flip at byte {pos} undetected"))?;
    }

    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let mut out_a = common::run_pipeline(a.path(), "7");
    let mut out_b = common::run_pipeline(b.path(), "7");
    for out in [&mut out_a, &mut out_b] {
        let bench = out.get_mut("bench").unwrap();
        *bench = common::without_timing(bench);
    }
    ensure(out_a == out_b, || "CLI stdout differs between identical seeded runs".into())?;
    let (fa, fb) = (common::artifacts(a.path()), common::artifacts(b.path()));
    ensure(fa == fb, || "CLI output files differ between identical seeded runs".into())?;
    Ok(format!(
        "bit-exact round trip, {} corrupted copies rejected, {} subcommands and {} files byte-identical under --seed 7",
        positions.len(),
        out_a.len(),
        fa.len()
    ))
}

// ------------------------------------------------------------------ 10

fn corpus_cleaning() -> Check {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let docs = read_documents(fixtures.join("corpus10")).map_err(err)?;
    let charset = Charset::vietnamese();
    let (out, stats) = clean_corpus(&docs, &charset);
    let expected = CleanStats {
        docs_in: 10,
        docs_deduped: 2,
        sentences_in: 17,
        sentences_dropped_short: 3,
        sentences_dropped_charset: 1,
        sentences_out: 13,
    };
    ensure(stats == expected, || format!("stats {stats:?}"))?;
    let bad = out.iter().filter(|s| s.split_whitespace().count() < 4 || !charset.accepts(s)).count();
    ensure(bad == 0, || format!("{bad} surviving sentences break a rule"))?;
    Ok(format!("{} of {} sentences kept, exact counts", stats.sentences_out, stats.sentences_in))
}

// ------------------------------------------------------------------ harness

type Criterion = Box<dyn Fn() -> Check>;

#[test]
fn acceptance_criteria() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let secs = Duration::from_secs;
    let mut criteria: Vec<(String, Duration, Criterion)> = vec![
        ("1 gradient correctness".into(), secs(60), Box::new(gradient_correctness)),
        ("2 masking policy statistics".into(), secs(30), Box::new(masking_statistics)),
        ("3 replaced-token labeling".into(), secs(30), Box::new(electra_labeling)),
        ("4 metric equivalence".into(), secs(30), Box::new(metric_equivalence)),
        ("5a MLM desk-scale learning".into(), mins(5), Box::new(mlm_learning)),
        ("5b ELECTRA desk-scale learning".into(), mins(10), Box::new(electra_learning)),
    ];
    for kind in HeadKind::ALL {
        criteria.push((format!("5c fine-tuning {}", kind.label()), mins(3), Box::new(move || head_learning(kind))));
    }
    criteria.extend::<Vec<(String, Duration, Box<dyn Fn() -> Check>)>>(vec![
        ("6 scalar-mix contract".into(), secs(10), Box::new(scalar_mix_contract)),
        ("7 grid harness".into(), mins(2), Box::new(grid_harness)),
        ("8 benchmark fixture".into(), secs(60), Box::new(benchmark_fixture)),
        ("9 persistence and determinism".into(), mins(3), Box::new(persistence_and_determinism)),
        ("10 corpus cleaning".into(), secs(10), Box::new(corpus_cleaning)),
    ]);
    let mut failed = Vec::new();
    for (name, budget, check) in &criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; over the {:.0} s budget", budget.as_secs_f64())),
            other => other,
        };
        match outcome {
            Ok(detail) => report(&format!(
                "PASS criterion {name}: {detail} [{:.1} s of {:.0} s]",
                elapsed.as_secs_f64(),
                budget.as_secs_f64()
            )),
            Err(why) => {
                report(&format!("FAIL criterion {name}: {why} [{:.1} s]", elapsed.as_secs_f64()));
                failed.push(name.clone());
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
