//! Rule-generated corpora for desk-scale training runs and benchmarks.
//!
//! Every generator is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conll::TaggedSentence;
use crate::error::Result;
use crate::tokenizer::{build_vocab, Vocab, VocabOptions};

/// Subject, verb, object, modifier and place of each topic. All content
/// words of a pretraining sentence come from one topic, so any masked word
/// is recoverable from the others.
const TOPICS: [[&str; 5]; 8] = [
    ["phi_công", "lái", "máy_bay", "cẩn_thận", "sân_bay"],
    ["bác_sĩ", "khám", "bệnh_nhân", "tận_tình", "bệnh_viện"],
    ["giáo_viên", "dạy", "học_sinh", "kiên_nhẫn", "trường_học"],
    ["nông_dân", "trồng", "lúa_gạo", "chăm_chỉ", "cánh_đồng"],
    ["đầu_bếp", "nấu", "món_ăn", "khéo_léo", "nhà_hàng"],
    ["ngư_dân", "đánh", "cá_biển", "dũng_cảm", "bến_cảng"],
    ["thợ_may", "may", "áo_dài", "tỉ_mỉ", "cửa_hiệu"],
    ["kỹ_sư", "xây", "cây_cầu", "vững_chắc", "công_trường"],
];

/// Word orders over slots 0..5 with fixed function words.
const TEMPLATES: [&str; 4] = [
    "{0} {1} {2} rất {3} ở {4} .",
    "ở {4} {0} {1} {2} {3} .",
    "{0} đang {1} {2} tại {4} .",
    "hôm_nay {0} {3} {1} {2} ở {4} .",
];

fn fill(template: &str, words: &[&str; 5]) -> String {
    let mut s = template.to_string();
    for (i, w) in words.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), w);
    }
    s
}

/// `n` pretraining sentences.
pub fn pretraining_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| fill(TEMPLATES.choose(&mut rng).unwrap(), TOPICS.choose(&mut rng).unwrap()))
        .collect()
}

/// Part-of-speech lexicon: each word has exactly one tag.
const LEXICON: [(&str, &[&str]); 5] = [
    ("N", &["nhà", "xe", "sách", "mèo", "chó", "cây", "bàn", "ghế"]),
    ("V", &["đi", "ăn", "đọc", "chạy", "mua", "bán", "xem"]),
    ("A", &["đẹp", "cao", "nhanh", "mới", "cũ", "xanh"]),
    ("E", &["ở", "trong", "trên", "với"]),
    ("CH", &[".", ",", "?"]),
];

const POS_PATTERNS: [&[&str]; 4] = [
    &["N", "V", "N", "CH"],
    &["N", "A", "V", "E", "N", "CH"],
    &["N", "V", "N", "A", "CH"],
    &["E", "N", "CH", "N", "V", "N", "A", "CH"],
];

fn lexicon_words(tag: &str) -> &'static [&'static str] {
    LEXICON.iter().find(|(t, _)| *t == tag).unwrap().1
}

/// `n` sentences tagged by word identity.
pub fn lexicon_task(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let pattern = POS_PATTERNS.choose(&mut rng).unwrap();
            let words: Vec<&str> = pattern
                .iter()
                .map(|t| *lexicon_words(t).choose(&mut rng).unwrap())
                .collect();
            TaggedSentence::new(words, pattern.iter().copied())
        })
        .collect()
}

const SUFFIX_STEMS: [&str; 12] = ["bam", "kit", "dol", "lun", "mek", "nip", "pos", "rul", "sag", "tem", "vin", "hob"];
const SUFFIX_ENDINGS: [&str; 5] = ["a", "o", "i", "e", "u"];

/// A vocabulary in which every suffix-task word is one stem piece plus one
/// `##` ending piece.
pub fn suffix_vocab() -> Vocab {
    let pieces = SUFFIX_STEMS
        .iter()
        .map(|s| s.to_string())
        .chain(SUFFIX_ENDINGS.iter().map(|e| format!("##{e}")));
    Vocab::with_specials(pieces).expect("distinct pieces")
}

/// Words ending in `a` are tagged `TagA`, all others `TagB`. Endings are
/// drawn so both tags are equally likely.
pub fn suffix_task(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..=7);
            let mut words = Vec::with_capacity(len);
            let mut tags = Vec::with_capacity(len);
            for _ in 0..len {
                let stem = SUFFIX_STEMS.choose(&mut rng).unwrap();
                let ending = if rng.gen_bool(0.5) {
                    "a"
                } else {
                    SUFFIX_ENDINGS[rng.gen_range(1..SUFFIX_ENDINGS.len())]
                };
                words.push(format!("{stem}{ending}"));
                tags.push(if ending == "a" { "TagA" } else { "TagB" });
            }
            TaggedSentence::new(words, tags)
        })
        .collect()
}

const PERSONS: [&[&str]; 4] = [&["Nguyễn", "Văn", "An"], &["Trần", "Thị", "Bình"], &["Lê", "Minh"], &["Phạm", "Hùng"]];
const LOCATIONS: [&[&str]; 4] = [&["Hà_Nội"], &["Đà", "Nẵng"], &["Huế"], &["Cần", "Thơ"]];
const ORGANIZATIONS: [&[&str]; 3] = [&["Bộ", "Y_tế"], &["Vietnam", "Airlines"], &["Đại_học", "Bách_khoa"]];
const NER_PATTERNS: [&[&str]; 4] = [
    &["PER", "đến", "LOC", "hôm_qua", "."],
    &["PER", "làm_việc", "tại", "ORG", "ở", "LOC", "."],
    &["ORG", "mở", "văn_phòng", "ở", "LOC", "."],
    &["ông", "PER", "gặp", "PER", "."],
];

/// `n` IOB2-tagged sentences over fixed name lists for PER, LOC and ORG.
pub fn ner_task(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut s = TaggedSentence::new(Vec::<String>::new(), Vec::<String>::new());
            for slot in *NER_PATTERNS.choose(&mut rng).unwrap() {
                let entity: Option<&[&str]> = match *slot {
                    "PER" => Some(PERSONS.choose(&mut rng).unwrap()),
                    "LOC" => Some(LOCATIONS.choose(&mut rng).unwrap()),
                    "ORG" => Some(ORGANIZATIONS.choose(&mut rng).unwrap()),
                    _ => None,
                };
                match entity {
                    Some(words) => {
                        for (i, w) in words.iter().enumerate() {
                            s.words.push(w.to_string());
                            s.tags.push(format!("{}-{slot}", if i == 0 { "B" } else { "I" }));
                        }
                    }
                    None => {
                        s.words.push(slot.to_string());
                        s.tags.push("O".into());
                    }
                }
            }
            s
        })
        .collect()
}

/// A vocabulary covering every word of `sentences`, learned with merges down
/// to a count of one so frequent words become single pieces.
pub fn task_vocab(sentences: &[TaggedSentence]) -> Result<Vocab> {
    let lines: Vec<String> = sentences.iter().map(|s| s.words.join(" ")).collect();
    build_vocab(
        &lines,
        None,
        VocabOptions {
            min_count: 1,
            ..VocabOptions::default()
        },
    )
}

/// Twenty sentences, eleven of 23 words and nine of 22, so the mean length
/// is 451 / 20 = 22.55 words.
pub fn bench_sentences() -> Vec<Vec<String>> {
    let pool: Vec<&str> = LEXICON.iter().flat_map(|(_, w)| w.iter().copied()).collect();
    (0..20)
        .map(|i| {
            let len = if i < 11 { 23 } else { 22 };
            (0..len).map(|j| pool[(i * 7 + j * 3) % pool.len()].to_string()).collect()
        })
        .collect()
}
