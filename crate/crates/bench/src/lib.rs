//! Seeded synthetic inputs for the criterion benches.

use gramrac_core::corpus::Paragraph;
use gramrac_core::metrics::{JudgedRanking, Predicted, PredictionSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "verb",
    "subject",
    "object",
    "clause",
    "order",
    "case",
    "marker",
    "suffix",
    "prefix",
    "particle",
    "question",
    "negation",
    "noun",
    "phrase",
    "tone",
    "stress",
    "vowel",
    "agreement",
    "person",
    "number",
    "plural",
    "ergative",
    "absolutive",
    "dative",
    "locative",
    "the",
    "of",
    "in",
    "is",
    "a",
];

/// `n` paragraphs of 20-80 words drawn from a small linguistic vocabulary.
pub fn synthetic_paragraphs(n: usize, seed: u64) -> Vec<Paragraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|index| {
            let len = rng.gen_range(20..=80);
            let words: Vec<&str> = (0..len)
                .map(|_| *WORDS.choose(&mut rng).expect("non-empty"))
                .collect();
            Paragraph {
                doc_id: "bench".into(),
                index,
                text: words.join(" "),
            }
        })
        .collect()
}

/// `n` rankings of `len` grades in 0..=5.
pub fn synthetic_rankings(n: usize, len: usize, seed: u64) -> Vec<JudgedRanking> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let rels = (0..len).map(|_| rng.gen_range(0..=5u8)).collect();
            JudgedRanking::new(format!("g{i}"), rels).expect("grades in range")
        })
        .collect()
}

/// `n` single-label predictions over `k` labels with about 60% accuracy.
pub fn synthetic_predictions(n: usize, k: usize, seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
    let mut set = PredictionSet::new(domain.clone());
    for _ in 0..n {
        let gold = domain[rng.gen_range(0..k)].clone();
        let pred = if rng.gen_bool(0.6) {
            Predicted::Label(gold.clone())
        } else if rng.gen_bool(0.1) {
            Predicted::Error
        } else {
            Predicted::Label(domain[rng.gen_range(0..k)].clone())
        };
        set.push(gold, pred);
    }
    set
}
