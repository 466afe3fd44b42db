use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqtag::batch::Batch;
use seqtag::checkpoint::Checkpoint;
use seqtag::conll::{ConllDataset, TaggedSentence};
use seqtag::encoder::EncoderConfig;
use seqtag::heads::{
    argmax, finetune, optimizer, split_dev, tag_loss, word_targets, BiRnn, CellKind, EncoderInit, FinetuneConfig,
    Head, HeadConfig, HeadKind, ScalarMix, Scheme, TagSet, TaggerModel,
};
use seqtag::nn::{Mode, Params};
use seqtag::synthetic::{lexicon_task, suffix_task, suffix_vocab, task_vocab};
use seqtag::tokenizer::{encode_sentence, Vocab};
use seqtag::Error;
use seqtag_tensor::gradcheck::check_gradients;
use seqtag_tensor::{Tensor, TensorError};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn small_vocab() -> Vocab {
    Vocab::with_specials(["Đ", "##ông", "gi", "##ới", "th", "##iệ", "##u", "đi", "về"]).unwrap()
}

fn tiny_encoder(v: &Vocab) -> EncoderConfig {
    let mut c = EncoderConfig::with_shape(v.len(), 2, 8, 2);
    c.max_positions = 32;
    c
}

fn small_head(kind: HeadKind, tags: usize) -> HeadConfig {
    HeadConfig {
        rnn_hidden: 4,
        attn_dim: 3,
        attn_heads: 2,
        ..HeadConfig::new(kind, tags)
    }
}

fn batch(words: &[&[&str]], v: &Vocab) -> Batch {
    let seqs: Vec<_> = words.iter().map(|w| encode_sentence(w, v, 32).unwrap()).collect();
    Batch::from_sequences(&seqs, v.pad_id()).unwrap()
}

// ------------------------------------------------------------------ scalar mix

#[test]
fn scalar_mix_one_hot_limit_selects_layer() {
    let mut r = rng(1);
    let layers: Vec<_> = (0..4).map(|_| random_tensor(&mut r, &[2, 3, 5])).collect();
    let mix = ScalarMix::<f64>::new(4);
    mix.weights.set_data(&[0.0, 0.0, 40.0, 0.0]).unwrap();
    let out = mix.forward(&layers).unwrap().to_vec();
    for (a, b) in out.iter().zip(layers[2].to_vec()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn scalar_mix_zero_gamma_is_zero() {
    let mut r = rng(2);
    let layers: Vec<_> = (0..3).map(|_| random_tensor(&mut r, &[1, 2, 4])).collect();
    let mix = ScalarMix::<f64>::new(3);
    mix.gamma.set_data(&[0.0]).unwrap();
    mix.weights.set_data(&[0.3, -1.0, 2.0]).unwrap();
    assert!(mix.forward(&layers).unwrap().to_vec().iter().all(|&x| x == 0.0));
}

#[test]
fn scalar_mix_equal_weights_hand_example() {
    // layers [[1,2],[3,4]], [[5,6],[7,8]], [[0,3],[6,0]]; γ = 1.5
    // mean = [[2,11/3],[16/3,4]], times 1.5 = [[3,5.5],[8,6]]
    let l = |v: [f64; 4]| Tensor::from_vec(v.to_vec(), &[2, 2]).unwrap();
    let layers = [l([1., 2., 3., 4.]), l([5., 6., 7., 8.]), l([0., 3., 6., 0.])];
    let mix = ScalarMix::<f64>::new(3);
    mix.gamma.set_data(&[1.5]).unwrap();
    let out = mix.forward(&layers).unwrap().to_vec();
    for (a, b) in out.iter().zip([3.0, 5.5, 8.0, 6.0]) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn scalar_mix_length_mismatch() {
    let mix = ScalarMix::<f64>::new(3);
    let layers = vec![Tensor::zeros(&[1, 2]).unwrap(); 2];
    assert!(matches!(mix.forward(&layers), Err(Error::Contract(_))));
}

#[test]
fn scalar_mix_gradients_reach_gamma_and_every_weight() {
    let mut r = rng(3);
    let layers: Vec<_> = (0..3).map(|_| random_tensor(&mut r, &[2, 2, 3])).collect();
    let mix = ScalarMix::<f64>::new(3);
    mix.weights.set_data(&[0.2, -0.4, 0.9]).unwrap();
    mix.gamma.set_data(&[0.7]).unwrap();
    let proj = random_tensor(&mut r, &[2, 2, 3]);
    let loss = || -> seqtag_tensor::Result<Tensor<f64>> {
        let out = mix.forward(&layers).map_err(|e| TensorError::Contract(e.to_string()))?;
        Ok(out.mul(&proj)?.sum_all())
    };
    loss().unwrap().backward().unwrap();
    assert!(mix.weights.grad().unwrap().iter().all(|g| g.abs() > 1e-8));
    assert!(mix.gamma.grad().unwrap()[0].abs() > 1e-8);
    let check = check_gradients(&[mix.weights.clone(), mix.gamma.clone()], 1e-4, loss).unwrap();
    assert!(check.max_relative_error() < 1e-4, "{check:?}");
}

proptest! {
    #[test]
    fn scalar_mix_weights_are_a_distribution(w in prop::collection::vec(-30.0f64..30.0, 1..14)) {
        let mix = ScalarMix::<f64>::new(w.len());
        mix.weights.set_data(&w).unwrap();
        let s = mix.normalized_weights();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(s.iter().all(|&x| x >= 0.0));
    }
}

// ------------------------------------------------------------------ heads

#[test]
fn fine_tune_head_parameter_count() {
    let head = Head::<f32>::new(HeadConfig::new(HeadKind::FineTune, 5), 64, &mut rng(0)).unwrap();
    assert_eq!(head.num_parameters(), 64 * 5 + 5);
}

#[test]
fn bilstm_feature_width() {
    let head = Head::<f32>::new(HeadConfig::new(HeadKind::BiLstm, 5), 64, &mut rng(0)).unwrap();
    assert_eq!(head.feature_dim(), 512);
    let attn = Head::<f32>::new(HeadConfig::new(HeadKind::BiGruAttn, 5), 64, &mut rng(0)).unwrap();
    assert_eq!(attn.feature_dim(), 512);
}

#[test]
fn default_head_config() {
    let c = HeadConfig::new(HeadKind::BiGru, 9);
    assert_eq!((c.rnn_hidden, c.rnn_layers, c.attn_dim, c.attn_heads, c.dropout), (256, 1, 64, 3, 0.5));
    assert!(HeadConfig::new(HeadKind::BiGru, 0).validate().is_err());
}

#[test]
fn all_kinds_share_the_logit_shape() {
    let v = small_vocab();
    let b = batch(&[&["Đông", "giới", "thiệu"], &["đi", "về"]], &v);
    let mut r = rng(4);
    let x = Tensor::<f32>::from_vec((0..2 * b.seq_len * 6).map(|_| r.gen_range(-1.0..1.0)).collect(), &[2, b.seq_len, 6])
        .unwrap();
    for kind in HeadKind::ALL {
        let head = Head::<f32>::new(small_head(kind, 7), 6, &mut r).unwrap();
        let out = head.forward(&x, &b, &mut Mode::Eval).unwrap();
        assert_eq!(out.shape(), [2, b.seq_len, 7], "{}", kind.label());
    }
}

#[test]
fn birnn_directions_are_independent() {
    let mut r = rng(5);
    let rnn = BiRnn::<f64>::new(&mut r, CellKind::Lstm, 3, 4, 1);
    let x = random_tensor(&mut r, &[1, 5, 3]);
    let out = rnn.forward(&x, &[5]).unwrap().to_vec();
    let reversed_rows: Vec<f64> = x.to_vec().chunks(3).rev().flatten().copied().collect();
    let xr = Tensor::from_vec(reversed_rows, &[1, 5, 3]).unwrap();
    let out_r = rnn.forward(&xr, &[5]).unwrap().to_vec();
    let back: Vec<f64> = out_r.chunks(8).rev().flatten().copied().collect();
    let gap = out.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "reversing the input only reversed the output");
}

#[test]
fn birnn_ignores_padding() {
    let mut r = rng(6);
    let rnn = BiRnn::<f64>::new(&mut r, CellKind::Gru, 2, 3, 2);
    let x = random_tensor(&mut r, &[1, 4, 2]);
    let mut padded = x.to_vec();
    padded.extend([9.0, -9.0, 5.0, 5.0]);
    let xp = Tensor::from_vec(padded, &[1, 6, 2]).unwrap();
    let a = rnn.forward(&x, &[4]).unwrap().to_vec();
    let b = rnn.forward(&xp, &[4]).unwrap().to_vec();
    for (p, q) in a.iter().zip(&b[..a.len()]) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn tagger_gradients_match_finite_differences() {
    let v = small_vocab();
    let tags = TagSet::new(["Np", "V", "N"], Scheme::Pos).unwrap();
    let b = batch(&[&["Đông", "giới", "thiệu"], &["về", "đi"]], &v);
    let gold = vec![vec![0, 1, 2], vec![1, 1]];
    for kind in [HeadKind::BiLstmAttn, HeadKind::BiGru] {
        let model = TaggerModel::<f64>::new(tiny_encoder(&v), small_head(kind, 3), tags.clone(), v.clone(), &mut rng(7))
            .unwrap();
        let params: Vec<Tensor<f64>> = model.head_params().into_iter().map(|(_, t)| t).collect();
        let check = check_gradients(&params, 1e-4, || {
            let logits = model.logits(&b, &mut Mode::Eval).map_err(|e| TensorError::Contract(e.to_string()))?;
            tag_loss(&logits, &b, &gold).map_err(|e| TensorError::Contract(e.to_string()))
        })
        .unwrap();
        assert!(check.max_relative_error() < 1e-3, "{}: {check:?}", kind.label());
    }
}

// ------------------------------------------------------------------ loss and decoding

fn figure_batch() -> (Vocab, Batch) {
    let v = small_vocab();
    let b = batch(&[&["Đông", "giới", "thiệu"]], &v);
    (v, b)
}

/// Logits strongly favouring `gold` at each word start.
fn perfect_logits(b: &Batch, gold: &[usize], tags: usize) -> Vec<f64> {
    let mut data = vec![0.0; b.seq_len * tags];
    for pos in 0..b.seq_len {
        if b.is_word_start[pos] {
            data[pos * tags + gold[b.word_index[pos] as usize]] = 20.0;
        }
    }
    data
}

#[test]
fn perfect_logits_have_tiny_loss() {
    let (_, b) = figure_batch();
    let data = perfect_logits(&b, &[0, 1, 1], 3);
    let logits = Tensor::from_vec(data, &[1, b.seq_len, 3]).unwrap();
    assert!(tag_loss(&logits, &b, &[vec![0, 1, 1]]).unwrap().item() < 1e-3);
}

#[test]
fn continuation_positions_are_ignored() {
    let (_, b) = figure_batch();
    let mut data = perfect_logits(&b, &[0, 1, 1], 3);
    let before = tag_loss(&Tensor::from_vec(data.clone(), &[1, b.seq_len, 3]).unwrap(), &b, &[vec![0, 1, 1]])
        .unwrap()
        .item();
    // position 2 is "##ông"
    assert!(!b.is_word_start[2]);
    data[2 * 3..3 * 3].copy_from_slice(&[-7.0, 13.0, 2.5]);
    let after = tag_loss(&Tensor::from_vec(data, &[1, b.seq_len, 3]).unwrap(), &b, &[vec![0, 1, 1]])
        .unwrap()
        .item();
    assert_eq!(before, after);
}

#[test]
fn uniform_single_word_loss_is_ln_t() {
    let v = small_vocab();
    let b = batch(&[&["đi"]], &v);
    let logits = Tensor::<f64>::zeros(&[1, b.seq_len, 6]).unwrap();
    let loss = tag_loss(&logits, &b, &[vec![4]]).unwrap().item();
    assert!((loss - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn out_of_range_tag_is_a_contract_error() {
    let (_, b) = figure_batch();
    assert!(matches!(word_targets(&b, &[vec![0, 3, 1]], 3), Err(Error::Contract(_))));
    let t = word_targets(&b, &[vec![0, 2, 1]], 3).unwrap();
    assert_eq!(t, [-1, 0, -1, 2, -1, 1, -1, -1, -1]);
}

#[test]
fn argmax_ties_go_to_the_lowest_id() {
    let t = Tensor::<f32>::from_vec(vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0], &[2, 3]).unwrap();
    assert_eq!(argmax(&t).unwrap(), [1, 0]);
}

proptest! {
    #[test]
    fn argmax_is_scale_invariant(row in prop::collection::vec(-50.0f64..50.0, 1..12), c in 0.01f64..100.0) {
        let n = row.len();
        let a = argmax(&Tensor::from_vec(row.clone(), &[1, n]).unwrap()).unwrap();
        let scaled: Vec<f64> = row.iter().map(|x| x * c).collect();
        let b = argmax(&Tensor::from_vec(scaled, &[1, n]).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn np_model() -> TaggerModel<f32> {
    let v = small_vocab();
    let tags = TagSet::new(["X", "Np", "V"], Scheme::Pos).unwrap();
    TaggerModel::new(tiny_encoder(&v), small_head(HeadKind::FineTune, 3), tags, v, &mut rng(8)).unwrap()
}

#[test]
fn large_bias_forces_the_tag() {
    let model = np_model();
    model.head.output.bias.as_ref().unwrap().set_data(&[0.0, 1e4, 0.0]).unwrap();
    let out = model.tag_sentence(&["Đông", "giới", "thiệu", "về"]).unwrap();
    assert_eq!(out, ["Np"; 4]);
}

#[test]
fn one_tag_per_word() {
    let model = np_model();
    for words in [&["đi"][..], &["Đông", "giới"], &["thiệu", "về", "Đông", "xyz", "đi"]] {
        assert_eq!(model.tag_sentence(words).unwrap().len(), words.len());
    }
    assert!(matches!(model.tag_sentence(&[] as &[&str]), Err(Error::Contract(_))));
}

#[test]
fn truncated_words_get_the_fallback_tag() {
    let mut model = np_model();
    model.head.output.bias.as_ref().unwrap().set_data(&[0.0, 1e4, 0.0]).unwrap();
    model.max_len = 5;
    let out = model.tag_sentence(&["đi", "về", "đi", "về", "đi"]).unwrap();
    assert_eq!(out, ["Np", "Np", "Np", "X", "X"]);
}

#[test]
fn eval_mode_is_deterministic() {
    let v = small_vocab();
    let tags = TagSet::new(["A", "B"], Scheme::Pos).unwrap();
    let model = TaggerModel::<f32>::new(tiny_encoder(&v), small_head(HeadKind::BiGruAttn, 2), tags, v.clone(), &mut rng(9))
        .unwrap();
    let b = batch(&[&["Đông", "giới"], &["đi"]], &v);
    let a = model.logits(&b, &mut Mode::Eval).unwrap().to_vec();
    let c = model.logits(&b, &mut Mode::Eval).unwrap().to_vec();
    assert_eq!(a, c);
    let mut r = rng(1);
    let d = model.logits(&b, &mut Mode::Train(&mut r)).unwrap().to_vec();
    assert_ne!(a, d, "dropout should be active in training mode");
}

#[test]
fn tagger_checkpoint_round_trip() {
    let v = small_vocab();
    let tags = TagSet::new(["O", "B-PER", "I-PER"], Scheme::Ner).unwrap();
    let model = TaggerModel::<f32>::new(tiny_encoder(&v), small_head(HeadKind::BiLstmAttn, 3), tags, v, &mut rng(10)).unwrap();
    let bytes = model.to_checkpoint().to_bytes();
    let back = TaggerModel::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.tagset, model.tagset);
    assert_eq!(back.head.config, model.head.config);
    let words = ["Đông", "giới", "thiệu", "về"];
    assert_eq!(back.tag_sentence(&words).unwrap(), model.tag_sentence(&words).unwrap());
    for ((n, a), (_, b)) in model.parameters().iter().zip(back.parameters()) {
        assert_eq!(a.to_vec(), b.to_vec(), "{n}");
    }
}

// ------------------------------------------------------------------ tag sets

#[test]
fn ner_tagset_order_and_iob2_rule() {
    let s = [TaggedSentence::new(["a", "b", "c"], ["B-PER", "O", "I-LOC"])];
    let t = TagSet::from_sentences(&s, Scheme::Ner).unwrap();
    assert_eq!(t.labels(), ["O", "B-LOC", "I-LOC", "B-PER", "I-PER"]);
    assert!(TagSet::new(["O", "I-PER"], Scheme::Ner).is_err());
    assert!(TagSet::new(["N", "N"], Scheme::Pos).is_err());
    assert_eq!(TagSet::from_text(&t.to_text(), Scheme::Ner).unwrap(), t);
    for (i, l) in t.labels().iter().enumerate() {
        assert_eq!(t.id(l), Some(i));
    }
}

// ------------------------------------------------------------------ fine-tuning

fn lexicon_data(n: usize, seed: u64) -> (ConllDataset, Vocab) {
    let s = lexicon_task(n, seed);
    let v = task_vocab(&s).unwrap();
    let tags = TagSet::from_sentences(&s, Scheme::Pos).unwrap();
    (ConllDataset::new(s, tags).unwrap(), v)
}

#[test]
fn empty_training_data_is_a_config_error() {
    let (data, v) = lexicon_data(5, 0);
    let empty = ConllDataset {
        sentences: Vec::new(),
        tagset: data.tagset.clone(),
    };
    let enc = EncoderConfig::with_shape(v.len(), 1, 8, 2);
    let r = finetune(
        EncoderInit::Fresh(&enc, &v),
        &empty,
        None,
        &HeadConfig::new(HeadKind::FineTune, 1),
        &FinetuneConfig::default(),
        0,
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn dev_tags_must_belong_to_the_training_set() {
    let (data, v) = lexicon_data(10, 0);
    let enc = EncoderConfig::with_shape(v.len(), 1, 8, 2);
    let dev = [TaggedSentence::new(["nhà"], ["ZZ"])];
    let r = finetune(
        EncoderInit::Fresh(&enc, &v),
        &data,
        Some(&dev),
        &HeadConfig::new(HeadKind::FineTune, 1),
        &FinetuneConfig::default(),
        0,
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn dev_split_is_seeded_and_ten_percent() {
    let s = lexicon_task(200, 0);
    let (train, dev) = split_dev(&s, 0.1, 11);
    assert_eq!((train.len(), dev.len()), (180, 20));
    assert_eq!(split_dev(&s, 0.1, 11).1, dev);
    assert_ne!(split_dev(&s, 0.1, 12).1, dev);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (data, v) = lexicon_data(40, 1);
    let enc = EncoderConfig::with_shape(v.len(), 1, 16, 2);
    let cfg = FinetuneConfig {
        epochs: 2,
        ..FinetuneConfig::default()
    };
    let head = small_head(HeadKind::BiGru, 0);
    let run = || finetune(EncoderInit::Fresh(&enc, &v), &data, None, &head, &cfg, 5).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint(5).to_bytes(), b.checkpoint(5).to_bytes());
    assert_eq!(a.dev_size, 4);
}

#[test]
fn fine_tune_head_overfits_the_lexicon_task() {
    let (data, v) = lexicon_data(200, 2);
    let enc = EncoderConfig::desk(v.len());
    let cfg = FinetuneConfig {
        epochs: 100,
        patience: Some(20),
        ..FinetuneConfig::default()
    };
    let run = finetune(
        EncoderInit::Fresh(&enc, &v),
        &data,
        Some(&data.sentences),
        &HeadConfig::new(HeadKind::FineTune, 0),
        &cfg,
        3,
    )
    .unwrap();
    assert_eq!(run.best_dev_accuracy, 1.0, "{}", run.log_text());
    let right = data
        .sentences
        .iter()
        .all(|s| run.model.tag_sentence(&s.words).unwrap() == s.tags);
    assert!(right);
}

#[test]
fn head_learning_rate_is_fifty_times_the_encoder_rate() {
    let (data, v) = lexicon_data(4, 0);
    let enc = EncoderConfig::with_shape(v.len(), 1, 8, 2);
    let model = TaggerModel::<f32>::new(enc, small_head(HeadKind::FineTune, data.tagset.len()), data.tagset.clone(), v, &mut rng(0))
        .unwrap();
    let mut adam = optimizer(&model, &FinetuneConfig::default()).unwrap();
    let params = model.parameters();
    let before: Vec<Vec<f32>> = params.iter().map(|(_, t)| t.to_vec()).collect();
    // the same unit gradient on every entry
    let mut loss: Option<Tensor<f32>> = None;
    for (_, t) in &params {
        let s = t.sum_all();
        loss = Some(match loss {
            None => s,
            Some(l) => l.add(&s).unwrap(),
        });
    }
    loss.unwrap().backward().unwrap();
    adam.step().unwrap();
    let mean_step = |prefix: &str| {
        let (mut sum, mut n) = (0.0f64, 0usize);
        for ((name, t), b) in params.iter().zip(&before) {
            if name.starts_with(prefix) {
                for (x, y) in t.to_vec().iter().zip(b) {
                    sum += f64::from((x - y).abs());
                    n += 1;
                }
            }
        }
        sum / n as f64
    };
    let (enc_step, head_step) = (mean_step("encoder."), mean_step("head."));
    assert!((head_step / enc_step - 50.0).abs() < 0.5, "{head_step} / {enc_step}");
}

#[test]
fn suffix_rule_generalizes_to_held_out_words() {
    let train = suffix_task(200, 21);
    let tags = TagSet::new(["TagA", "TagB"], Scheme::Pos).unwrap();
    let data = ConllDataset::new(train, tags).unwrap();
    let v = suffix_vocab();
    let enc = EncoderConfig::desk(v.len());
    let head = HeadConfig {
        rnn_hidden: 64,
        ..HeadConfig::new(HeadKind::BiLstm, 2)
    };
    let cfg = FinetuneConfig {
        epochs: 8,
        ..FinetuneConfig::default()
    };
    let run = finetune(EncoderInit::Fresh(&enc, &v), &data, None, &head, &cfg, 4).unwrap();
    let mut held_out = Vec::new();
    for s in suffix_task(30, 99) {
        held_out.extend(s.words.into_iter().zip(s.tags));
    }
    held_out.truncate(50);
    let mut right = 0;
    for (word, tag) in &held_out {
        let pred = run.model.tag_sentence(&[word]).unwrap();
        right += usize::from(&pred[0] == tag);
    }
    assert!(right >= 49, "{right}/50 held-out words\n{}", run.log_text());
}
