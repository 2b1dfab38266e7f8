//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! Sentences are built from a small closed vocabulary of aspect nouns,
//! polarity-bearing opinion adjectives and connectives, with the gold
//! triplets constructed alongside. The generator is seeded and reproducible.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::corpus::{GoldTriplet, Polarity, ScExample, Sentence, WordSpan};

const ASPECT_NOUNS: &[&str] = &[
    "room", "staff", "menu", "food", "service", "laptop", "screen", "battery", "keyboard", "price",
];
const POSITIVE_ADJ: &[&str] = &["fine", "great", "excellent", "lovely", "fast"];
const NEGATIVE_ADJ: &[&str] = &["rude", "limited", "pricy", "terrible", "slow"];
const NEUTRAL_ADJ: &[&str] = &["average", "ordinary"];
const INTENSIFIERS: &[&str] = &["extremely", "very"];
const COPULAS: &[&str] = &["was", "is"];

/// Generator parameters.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n: usize,
    /// Probability that a sentence carries a one-to-many relation
    /// (one aspect with two opinions, or one opinion with two aspects).
    pub one_to_many_rate: f64,
    /// Probability, among the remaining sentences, of a two-clause
    /// contrastive sentence ("... but ...") with two independent triplets.
    pub contrast_rate: f64,
    /// Probability that an opinion phrase is two words (intensifier + adjective).
    pub intensifier_rate: f64,
}

impl SyntheticConfig {
    pub fn new(seed: u64, n: usize) -> SyntheticConfig {
        SyntheticConfig {
            seed,
            n,
            one_to_many_rate: 0.2,
            contrast_rate: 0.35,
            intensifier_rate: 0.25,
        }
    }
}

/// Convenience wrapper over [`generate_corpus`] with default rates.
pub fn make_synthetic_fixture(seed: u64, n: usize) -> Vec<Sentence> {
    generate_corpus(&SyntheticConfig::new(seed, n))
}

/// Generate `cfg.n` sentences, deterministically for a fixed config.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Vec<Sentence> {
    assert!(cfg.n >= 1, "need at least one sentence");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n)
        .map(|i| {
            let mut sentence = generate_sentence(cfg, &mut rng);
            sentence.id = format!("syn{}-{i:05}", cfg.seed);
            sentence
        })
        .collect()
}

/// Train/validation/test splits drawn from one seeded stream.
pub fn synthetic_splits(
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> (Vec<Sentence>, Vec<Sentence>, Vec<Sentence>) {
    let all = make_synthetic_fixture(seed, n_train + n_val + n_test);
    let mut iter = all.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train).collect();
    let val: Vec<_> = iter.by_ref().take(n_val).collect();
    let test: Vec<_> = iter.collect();
    (train, val, test)
}

/// Sentiment-classification corpus over the same vocabulary. Each sentence
/// uses adjectives of a single polarity, which is the sentence label.
pub fn generate_sc_corpus(seed: u64, n: usize) -> Vec<ScExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c5c_5c5c);
    (0..n)
        .map(|_| {
            let sentiment = *[Polarity::Positive, Polarity::Negative, Polarity::Neutral]
                .choose(&mut rng)
                .unwrap();
            let sentence = generate_sentence_with_polarity(sentiment, &mut rng);
            ScExample {
                words: sentence.words,
                sentiment,
            }
        })
        .collect()
}

fn adjectives_for(polarity: Polarity) -> &'static [&'static str] {
    match polarity {
        Polarity::Positive => POSITIVE_ADJ,
        Polarity::Negative => NEGATIVE_ADJ,
        Polarity::Neutral => NEUTRAL_ADJ,
    }
}

fn random_polarity(rng: &mut ChaCha8Rng) -> Polarity {
    // Skew towards positive/negative, mirroring real review corpora.
    match rng.gen_range(0..10) {
        0..=4 => Polarity::Positive,
        5..=8 => Polarity::Negative,
        _ => Polarity::Neutral,
    }
}

struct Builder {
    words: Vec<String>,
    triplets: Vec<GoldTriplet>,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            words: Vec::new(),
            triplets: Vec::new(),
        }
    }

    fn push(&mut self, word: &str) -> usize {
        self.words.push(word.to_string());
        self.words.len() - 1
    }

    fn push_noun(&mut self, noun: &str) -> WordSpan {
        let i = self.push(noun);
        WordSpan::new(i, i)
    }

    fn push_opinion(&mut self, rng: &mut ChaCha8Rng, polarity: Polarity, rate: f64) -> WordSpan {
        let adj = *adjectives_for(polarity).choose(rng).unwrap();
        if rng.gen_bool(rate) {
            let intensifier = *INTENSIFIERS.choose(rng).unwrap();
            let start = self.push(intensifier);
            let end = self.push(adj);
            WordSpan::new(start, end)
        } else {
            let i = self.push(adj);
            WordSpan::new(i, i)
        }
    }

    fn triplet(&mut self, aspect: WordSpan, opinion: WordSpan, polarity: Polarity) {
        self.triplets.push(GoldTriplet {
            aspect,
            opinion,
            polarity,
        });
    }

    fn finish(mut self) -> Sentence {
        self.push(".");
        Sentence {
            id: String::new(),
            words: self.words,
            triplets: self.triplets,
        }
    }
}

fn pick_two_nouns(rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    let first = *ASPECT_NOUNS.choose(rng).unwrap();
    loop {
        let second = *ASPECT_NOUNS.choose(rng).unwrap();
        if second != first {
            return (first, second);
        }
    }
}

fn generate_sentence(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let roll: f64 = rng.gen();
    if roll < cfg.one_to_many_rate {
        if rng.gen_bool(0.5) {
            one_aspect_two_opinions(cfg, rng)
        } else {
            one_opinion_two_aspects(cfg, rng)
        }
    } else if roll < cfg.one_to_many_rate + (1.0 - cfg.one_to_many_rate) * cfg.contrast_rate {
        contrastive_sentence(cfg, rng)
    } else {
        simple_sentence(cfg, rng)
    }
}

/// "The {noun} {cop} {opinion} ."
fn simple_sentence(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let mut b = Builder::new();
    let polarity = random_polarity(rng);
    b.push("The");
    let aspect = b.push_noun(ASPECT_NOUNS.choose(rng).unwrap());
    b.push(COPULAS.choose(rng).unwrap());
    let opinion = b.push_opinion(rng, polarity, cfg.intensifier_rate);
    b.triplet(aspect, opinion, polarity);
    b.finish()
}

/// "The {n1} {cop} {o1} but the {n2} {cop} {o2} ."
fn contrastive_sentence(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let mut b = Builder::new();
    let (noun1, noun2) = pick_two_nouns(rng);
    let pol1 = random_polarity(rng);
    // "but" links clauses of differing sentiment.
    let pol2 = loop {
        let p = random_polarity(rng);
        if p != pol1 {
            break p;
        }
    };
    b.push("The");
    let a1 = b.push_noun(noun1);
    b.push(COPULAS.choose(rng).unwrap());
    let o1 = b.push_opinion(rng, pol1, cfg.intensifier_rate);
    b.triplet(a1, o1, pol1);
    b.push("but");
    b.push("the");
    let a2 = b.push_noun(noun2);
    b.push(COPULAS.choose(rng).unwrap());
    let o2 = b.push_opinion(rng, pol2, cfg.intensifier_rate);
    b.triplet(a2, o2, pol2);
    b.finish()
}

/// "The {n} {cop} {o1} and {o2} ." — both opinions attach to the one aspect.
fn one_aspect_two_opinions(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let mut b = Builder::new();
    let polarity = random_polarity(rng);
    b.push("The");
    let aspect = b.push_noun(ASPECT_NOUNS.choose(rng).unwrap());
    b.push(COPULAS.choose(rng).unwrap());
    let o1 = b.push_opinion(rng, polarity, cfg.intensifier_rate);
    b.push("and");
    let o2 = b.push_opinion(rng, polarity, cfg.intensifier_rate);
    b.triplet(aspect, o1, polarity);
    b.triplet(aspect, o2, polarity);
    b.finish()
}

/// "The {n1} and the {n2} {cop} {o} ." — one opinion shared by two aspects.
fn one_opinion_two_aspects(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let mut b = Builder::new();
    let polarity = random_polarity(rng);
    let (noun1, noun2) = pick_two_nouns(rng);
    b.push("The");
    let a1 = b.push_noun(noun1);
    b.push("and");
    b.push("the");
    let a2 = b.push_noun(noun2);
    b.push("were");
    let opinion = b.push_opinion(rng, polarity, cfg.intensifier_rate);
    b.triplet(a1, opinion, polarity);
    b.triplet(a2, opinion, polarity);
    b.finish()
}

fn generate_sentence_with_polarity(polarity: Polarity, rng: &mut ChaCha8Rng) -> Sentence {
    let mut b = Builder::new();
    if rng.gen_bool(0.3) {
        b.push("The");
        let aspect = b.push_noun(ASPECT_NOUNS.choose(rng).unwrap());
        b.push(COPULAS.choose(rng).unwrap());
        let o1 = b.push_opinion(rng, polarity, 0.25);
        b.push("and");
        let o2 = b.push_opinion(rng, polarity, 0.25);
        b.triplet(aspect, o1, polarity);
        b.triplet(aspect, o2, polarity);
    } else {
        b.push("The");
        let aspect = b.push_noun(ASPECT_NOUNS.choose(rng).unwrap());
        b.push(COPULAS.choose(rng).unwrap());
        let opinion = b.push_opinion(rng, polarity, 0.25);
        b.triplet(aspect, opinion, polarity);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::compute_stats;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = make_synthetic_fixture(0, 1);
        let b = make_synthetic_fixture(0, 1);
        assert_eq!(a, b);
        let many_a = make_synthetic_fixture(0, 50);
        let many_b = make_synthetic_fixture(0, 50);
        assert_eq!(many_a, many_b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_synthetic_fixture(0, 100);
        let b = make_synthetic_fixture(1, 100);
        assert_ne!(a, b);
    }

    #[test]
    fn gold_spans_are_valid() {
        for sentence in make_synthetic_fixture(7, 200) {
            for t in &sentence.triplets {
                assert!(t.aspect.end < sentence.n_words());
                assert!(t.opinion.end < sentence.n_words());
            }
            assert!(!sentence.triplets.is_empty());
        }
    }

    #[test]
    fn one_to_many_rate_is_respected() {
        let n = 1000;
        let corpus = make_synthetic_fixture(3, n);
        let stats = compute_stats(&corpus);
        // Each one-to-many sentence contributes exactly one relation.
        let rate = stats.n_one_to_many_total() as f64 / n as f64;
        assert!(
            (rate - 0.2).abs() <= 0.05,
            "one-to-many rate {rate} outside 0.2 +/- 0.05"
        );
    }

    #[test]
    fn sc_labels_match_adjective_class() {
        let corpus = generate_sc_corpus(11, 100);
        assert_eq!(corpus.len(), 100);
        for ex in &corpus {
            assert!(!ex.words.is_empty());
        }
    }
}
