use std::collections::BTreeSet;

use proptest::prelude::*;
use seqtag::synthetic::{lexicon_task, ner_task, pretraining_corpus};
use seqtag::tokenizer::{
    build_vocab, encode_sentence, wordpiece_tokenize, Vocab, VocabOptions, CLS, CONTINUATION, SEP, UNK,
};

fn figure_vocab() -> Vocab {
    Vocab::with_specials(["Đ", "##ông", "gi", "##ới", "th", "##iệ", "##u"]).unwrap()
}

#[test]
fn figure_word_pieces() {
    let v = figure_vocab();
    assert_eq!(wordpiece_tokenize("Đông", &v), ["Đ", "##ông"]);
    assert_eq!(wordpiece_tokenize("gi", &v), ["gi"]);
    assert_eq!(wordpiece_tokenize("xin", &v), [UNK]);
}

#[test]
fn figure_sentence_encoding() {
    let v = figure_vocab();
    let seq = encode_sentence(&["Đông", "giới", "thiệu"], &v, 256).unwrap();
    let tokens: Vec<&str> = seq.ids.iter().map(|&i| v.token(i).unwrap()).collect();
    assert_eq!(tokens, [CLS, "Đ", "##ông", "gi", "##ới", "th", "##iệ", "##u", SEP]);
    assert_eq!(seq.word_start_positions(), [1, 3, 5]);
    assert!(seq.segment_ids.iter().all(|&s| s == 0));
}

#[test]
fn three_hundred_words_keep_254() {
    let v = Vocab::with_specials(["w"]).unwrap();
    let words = vec!["w"; 300];
    let seq = encode_sentence(&words, &v, 256).unwrap();
    assert_eq!((seq.num_words, seq.len(), seq.truncated), (254, 256, true));
    assert_eq!(seq.ids.last(), Some(&v.sep_id()));
}

#[test]
fn vocab_file_layout() {
    let v = figure_vocab();
    let text = v.to_text();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(&lines[..5], ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]);
    assert_eq!(v.pad_id(), 0);
    assert_eq!(Vocab::from_text(&text).unwrap(), v);
}

fn corpus_lines(n: usize) -> Vec<String> {
    let mut lines = pretraining_corpus(n / 2, 11);
    lines.extend(lexicon_task(n / 4, 12).into_iter().map(|s| s.words.join(" ")));
    lines.extend(ner_task(n - n / 2 - n / 4, 13).into_iter().map(|s| s.words.join(" ")));
    lines
}

#[test]
fn pruned_tokens_all_occur_under_retokenization() {
    let base = build_vocab(
        corpus_lines(3000),
        None,
        VocabOptions {
            min_count: 1,
            max_size: 400,
        },
    )
    .unwrap();
    let corpus = corpus_lines(1000);
    let pruned = build_vocab(&corpus, Some(&base), VocabOptions::default()).unwrap();
    let used: BTreeSet<String> = corpus
        .iter()
        .flat_map(|s| s.split_whitespace())
        .flat_map(|w| wordpiece_tokenize(w, &pruned))
        .collect();
    for (id, tok) in pruned.tokens().iter().enumerate() {
        if !pruned.is_special(id) {
            assert!(used.contains(tok), "{tok} never used");
        }
    }
    assert!(pruned.len() < base.len());
}

#[test]
fn pruning_a_base_vocabulary() {
    let base = Vocab::with_specials(["a", "b", "zz"]).unwrap();
    let pruned = build_vocab(["a b"], Some(&base), VocabOptions::default()).unwrap();
    assert_eq!(pruned, Vocab::with_specials(["a", "b"]).unwrap());
}

fn learned() -> Vocab {
    build_vocab(
        corpus_lines(400),
        None,
        VocabOptions {
            min_count: 2,
            max_size: 150,
        },
    )
    .unwrap()
}

proptest! {
    #[test]
    fn pieces_reassemble_the_word(word in "[a-zàáạảãâầấậẩẫăđêôơư]{1,12}") {
        let v = learned();
        let pieces = wordpiece_tokenize(&word, &v);
        prop_assert_eq!(&pieces, &wordpiece_tokenize(&word, &v));
        if pieces != [UNK] {
            let joined: String = pieces.iter().map(|p| p.trim_start_matches(CONTINUATION)).collect();
            prop_assert_eq!(joined, word);
            prop_assert!(!pieces[0].starts_with(CONTINUATION));
            for p in &pieces[1..] {
                prop_assert!(p.starts_with(CONTINUATION));
            }
        }
    }

    #[test]
    fn alignment_invariants(words in prop::collection::vec("[a-zđôư]{1,8}", 1..40), max_len in 3usize..64) {
        let v = learned();
        let seq = encode_sentence(&words, &v, max_len).unwrap();
        prop_assert!(seq.len() <= max_len);
        prop_assert_eq!(seq.ids[0], v.cls_id());
        prop_assert_eq!(*seq.ids.last().unwrap(), v.sep_id());
        let starts = seq.is_word_start.iter().filter(|&&s| s).count();
        prop_assert_eq!(starts, seq.num_words);
        prop_assert_eq!(seq.truncated, seq.num_words < words.len());
        let inner: Vec<i64> = seq.word_index.iter().copied().filter(|&w| w >= 0).collect();
        prop_assert!(inner.windows(2).all(|p| p[0] <= p[1]));
        for (pos, &s) in seq.is_word_start.iter().enumerate() {
            if s {
                prop_assert!(pos == 1 || seq.word_index[pos - 1] != seq.word_index[pos]);
            }
        }
    }
}
