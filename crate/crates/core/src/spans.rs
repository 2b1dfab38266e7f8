//! Span enumeration, pooled span representations, validity scoring, and
//! tagger-based pruning of the aspect-side candidate set.
//!
//! Every contiguous span up to a maximum length becomes a candidate. Each
//! candidate is scored for validity (trained with a dice loss against gold
//! span membership) and may additionally be restricted to opinion-side use
//! only when the sequence tagger prunes the aspect side.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::corpus::{Sentence, WordSpan};
use crate::crf::decode_spans;
use crate::nn::Linear;
use crate::nn::ParamStore;
use crate::tape::{NodeId, Tape};

/// Which pipeline roles a candidate span may fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SideMask {
    AspectAndOpinion,
    OpinionOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanCandidate {
    pub span: WordSpan,
    pub side_mask: SideMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanStageConfig {
    /// Maximum candidate span length in words (`L`).
    pub max_span_length: usize,
    pub dice_alpha: f64,
    pub dice_gamma: f64,
    /// When true, only tagger-approved (augmented) spans may act as aspects.
    pub pruning_enabled: bool,
}

impl Default for SpanStageConfig {
    fn default() -> SpanStageConfig {
        SpanStageConfig {
            max_span_length: 8,
            dice_alpha: 0.7,
            dice_gamma: 1.0,
            pruning_enabled: true,
        }
    }
}

impl SpanStageConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_span_length < 1 {
            return Err(crate::Error::Config(
                "max_span_length must be at least 1".into(),
            ));
        }
        if self.dice_alpha < 0.0 {
            return Err(crate::Error::Config("dice_alpha must be >= 0".into()));
        }
        if self.dice_gamma <= 0.0 {
            return Err(crate::Error::Config("dice_gamma must be > 0".into()));
        }
        Ok(())
    }
}

/// All contiguous spans of length `1..=l_max`, in (start, length) order.
pub fn enumerate_spans(n_words: usize, l_max: usize) -> Vec<WordSpan> {
    assert!(n_words >= 1 && l_max >= 1);
    let mut spans = Vec::new();
    for start in 0..n_words {
        let longest = l_max.min(n_words - start);
        for len in 1..=longest {
            spans.push(WordSpan::new(start, start + len - 1));
        }
    }
    spans
}

/// Closed-form candidate count for `n >= l`: `n*l - l*(l-1)/2`.
pub fn span_count(n_words: usize, l_max: usize) -> usize {
    let l = l_max.min(n_words);
    n_words * l - l * (l - 1) / 2
}

/// Elementwise max over the span's embedding rows, as a plain value.
pub fn pool_span(words_repr: &Array2<f64>, span: WordSpan) -> Vec<f64> {
    assert!(span.end < words_repr.nrows());
    (0..words_repr.ncols())
        .map(|c| {
            (span.start..=span.end)
                .map(|r| words_repr[[r, c]])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Max-pool each span's rows out of `words` (`[n, d]`), stacking the results
/// to `[n_spans, d]` on the tape.
pub fn pool_spans_tape(tape: &mut Tape, words: NodeId, spans: &[WordSpan]) -> NodeId {
    let pooled: Vec<NodeId> = spans
        .iter()
        .map(|s| tape.max_pool_rows(words, s.start, s.end))
        .collect();
    tape.concat_rows(&pooled)
}

/// Single-logit validity head: probability that a span is a real phrase.
#[derive(Debug, Clone)]
pub struct ValidityHead {
    pub linear: Linear,
}

impl ValidityHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut rand_chacha::ChaCha8Rng,
        d_model: usize,
    ) -> ValidityHead {
        ValidityHead {
            linear: Linear::new(store, rng, "validity", d_model, 1),
        }
    }

    /// `[n_spans, 1]` probabilities from pooled span representations.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, reprs: NodeId) -> NodeId {
        let logits = self.linear.forward(tape, store, reprs);
        tape.sigmoid(logits)
    }
}

/// Dice loss for one span: `1 - DSC` with the self-adjusting factor
/// `(1-z_hat)^alpha` and smoothing constant `gamma`.
pub fn dice_loss(z_hat: f64, z: f64, alpha: f64, gamma: f64) -> f64 {
    let x = (1.0 - z_hat).powf(alpha) * z_hat;
    let dsc = (2.0 * x * z + gamma) / (x + z + gamma);
    1.0 - dsc
}

/// Tape version over a `[n_spans, 1]` probability column and 0/1 gold
/// column, summed over the spans.
pub fn dice_loss_tape(
    tape: &mut Tape,
    z_hat: NodeId,
    gold: &[f64],
    alpha: f64,
    gamma: f64,
) -> NodeId {
    let n = gold.len();
    assert_eq!(tape.value(z_hat).dim(), (n, 1));
    let z = tape.constant(Array2::from_shape_vec((n, 1), gold.to_vec()).unwrap());
    let neg = tape.scale(z_hat, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let damp = tape.pow_const(one_minus, alpha);
    let x = tape.mul(damp, z_hat);

    let xz = tape.mul(x, z);
    let num_core = tape.scale(xz, 2.0);
    let num = tape.add_scalar(num_core, gamma);
    let den_core = tape.add(x, z);
    let den = tape.add_scalar(den_core, gamma);
    let dsc = tape.div(num, den);
    let neg_dsc = tape.scale(dsc, -1.0);
    let per_span = tape.add_scalar(neg_dsc, 1.0);
    tape.sum_all(per_span)
}

/// 0/1 gold validity for each candidate span: 1 iff the span is a gold
/// aspect or gold opinion phrase.
pub fn gold_validity(sentence: &Sentence, spans: &[WordSpan]) -> Vec<f64> {
    let gold: BTreeSet<WordSpan> = sentence
        .gold_aspects()
        .iter()
        .chain(sentence.gold_opinions().iter())
        .copied()
        .collect();
    spans
        .iter()
        .map(|s| if gold.contains(s) { 1.0 } else { 0.0 })
        .collect()
}

/// Widen each tagged phrase by up to one word on each side, clipped to the
/// sentence, keeping the original span. Result is sorted and de-duplicated.
pub fn augment_tagged_spans(phrases: &[WordSpan], n_words: usize) -> Vec<WordSpan> {
    let mut out = BTreeSet::new();
    for p in phrases {
        let starts = if p.start > 0 {
            vec![p.start - 1, p.start]
        } else {
            vec![p.start]
        };
        let ends = if p.end + 1 < n_words {
            vec![p.end, p.end + 1]
        } else {
            vec![p.end]
        };
        for &s in &starts {
            for &e in &ends {
                out.insert(WordSpan::new(s, e));
            }
        }
    }
    out.into_iter().collect()
}

/// Assemble the candidate list for one sentence.
///
/// All enumerated spans are opinion-eligible. Aspect eligibility is open to
/// all when pruning is disabled, otherwise only to `aspect_allowed` spans
/// (the augmented tagger output, plus teacher-forced gold aspects during
/// training).
pub fn build_candidates(
    n_words: usize,
    config: &SpanStageConfig,
    aspect_allowed: Option<&BTreeSet<WordSpan>>,
) -> Vec<SpanCandidate> {
    enumerate_spans(n_words, config.max_span_length)
        .into_iter()
        .map(|span| {
            let aspect_ok = match aspect_allowed {
                None => true,
                Some(set) => set.contains(&span),
            };
            SpanCandidate {
                span,
                side_mask: if aspect_ok {
                    SideMask::AspectAndOpinion
                } else {
                    SideMask::OpinionOnly
                },
            }
        })
        .collect()
}

/// Aspect-eligible span set from decoded BIO tags: augmented tagger phrases
/// plus any teacher-forced extras (gold aspects during training).
pub fn aspect_allowed_set(
    tags: &[usize],
    n_words: usize,
    forced: &[WordSpan],
) -> BTreeSet<WordSpan> {
    let mut set: BTreeSet<WordSpan> = augment_tagged_spans(&decode_spans(tags), n_words)
        .into_iter()
        .collect();
    set.extend(forced.iter().copied());
    set
}
