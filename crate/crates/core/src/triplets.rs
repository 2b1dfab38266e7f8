//! Pair embedding assembly, order-invariant contextualization over the
//! sentence's pair set, 4-way classification, and the focal training loss.
//!
//! Each surviving (aspect, opinion) pair becomes one embedding built from
//! its two projected span vectors, the sentence summary, and a learned
//! bucketed span-distance embedding. A transformer without positional
//! encoding lets every pair see the others before classification into
//! {invalid, Positive, Negative, Neutral}.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Polarity, Sentence, WordSpan};
use crate::nn::{FfnBlock, FwdCtx, Linear, ParamId, ParamStore, TransformerLayer};
use crate::tape::{NodeId, Tape};

/// Output classes of the triplet head. `Invalid` rejects the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TripletClass {
    Invalid,
    Positive,
    Negative,
    Neutral,
}

pub const N_CLASSES: usize = 4;

impl TripletClass {
    pub const ALL: [TripletClass; 4] = [
        TripletClass::Invalid,
        TripletClass::Positive,
        TripletClass::Negative,
        TripletClass::Neutral,
    ];

    pub fn index(self) -> usize {
        match self {
            TripletClass::Invalid => 0,
            TripletClass::Positive => 1,
            TripletClass::Negative => 2,
            TripletClass::Neutral => 3,
        }
    }

    pub fn from_index(i: usize) -> TripletClass {
        Self::ALL[i]
    }

    pub fn from_polarity(p: Polarity) -> TripletClass {
        match p {
            Polarity::Positive => TripletClass::Positive,
            Polarity::Negative => TripletClass::Negative,
            Polarity::Neutral => TripletClass::Neutral,
        }
    }

    pub fn polarity(self) -> Option<Polarity> {
        match self {
            TripletClass::Invalid => None,
            TripletClass::Positive => Some(Polarity::Positive),
            TripletClass::Negative => Some(Polarity::Negative),
            TripletClass::Neutral => Some(Polarity::Neutral),
        }
    }
}

/// Signed word gap between an aspect and the opinion paired with it:
/// 0 when the opinion starts right after the aspect ends, negative when the
/// opinion starts at or before the aspect's end.
pub fn distance_gap(aspect: WordSpan, opinion: WordSpan) -> i64 {
    opinion.start as i64 - aspect.end as i64 - 1
}

pub const N_DISTANCE_BUCKETS: usize = 7;

/// Bucket boundaries: `<=-8, -7..-4, -3..-1, 0, 1..3, 4..7, >=8`.
pub fn distance_bucket(gap: i64) -> usize {
    match gap {
        i64::MIN..=-8 => 0,
        -7..=-4 => 1,
        -3..=-1 => 2,
        0 => 3,
        1..=3 => 4,
        4..=7 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletStageConfig {
    pub n_heads: usize,
    pub n_layers: usize,
    pub focal_gamma: f64,
    /// When false, pairs are classified independently by a feed-forward
    /// block (the ablation of the cross-pair transformer).
    pub use_pair_transformer: bool,
}

impl Default for TripletStageConfig {
    fn default() -> TripletStageConfig {
        TripletStageConfig {
            n_heads: 4,
            n_layers: 1,
            focal_gamma: 2.0,
            use_pair_transformer: true,
        }
    }
}

/// A classified pair, ready to be emitted as a triple unless invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletPrediction {
    pub aspect_span: WordSpan,
    pub opinion_span: WordSpan,
    pub class_probs: [f64; N_CLASSES],
    pub predicted_class: TripletClass,
}

impl TripletPrediction {
    pub fn max_prob(&self) -> f64 {
        self.class_probs[self.predicted_class.index()]
    }
}

/// Cross-pair context: full attention or the per-pair ablation.
#[derive(Debug, Clone)]
pub enum PairContext {
    Transformer(Vec<TransformerLayer>),
    PerPair(FfnBlock),
}

/// Parameters of the triplet stage.
#[derive(Debug, Clone)]
pub struct TripletStage {
    pub d_in: usize,
    pub d_t: usize,
    pub dist_emb: ParamId,
    pub reduce: Linear,
    pub context: PairContext,
    pub class_head: Linear,
}

impl TripletStage {
    /// `d_model` is the encoder width, `d_p` the projection width. The
    /// assembled width is `2*d_p + d_model + d_dist` with `d_dist = d_p`,
    /// reduced four-fold before contextualization.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        d_model: usize,
        d_p: usize,
        config: &TripletStageConfig,
    ) -> crate::Result<TripletStage> {
        let d_dist = d_p;
        let d_in = 2 * d_p + d_model + d_dist;
        if d_in % 4 != 0 {
            return Err(crate::Error::Config(format!(
                "assembled pair width {d_in} must be divisible by 4"
            )));
        }
        let d_t = d_in / 4;
        if config.use_pair_transformer && d_t % config.n_heads != 0 {
            return Err(crate::Error::Config(format!(
                "pair width {d_t} not divisible by {} attention heads",
                config.n_heads
            )));
        }
        let dist_emb = store.add(
            "trip.dist_emb",
            crate::nn::xavier_init(rng, N_DISTANCE_BUCKETS, d_dist),
        );
        let reduce = Linear::new(store, rng, "trip.reduce", d_in, d_t);
        let context = if config.use_pair_transformer {
            PairContext::Transformer(
                (0..config.n_layers)
                    .map(|i| {
                        TransformerLayer::new(
                            store,
                            rng,
                            &format!("trip.layer{i}"),
                            d_t,
                            config.n_heads,
                            4 * d_t,
                        )
                    })
                    .collect(),
            )
        } else {
            PairContext::PerPair(FfnBlock::new(store, rng, "trip.ffn", d_t, d_t))
        };
        let class_head = Linear::new(store, rng, "trip.class", d_t, N_CLASSES);
        Ok(TripletStage {
            d_in,
            d_t,
            dist_emb,
            reduce,
            context,
            class_head,
        })
    }

    /// Build `[n_pairs, d_t]` pair embeddings.
    ///
    /// `pairs` lists (row into `aspect_vecs`, row into `opinion_vecs`,
    /// distance bucket) per pair; `summary` is the `[1, d]` sentence
    /// embedding.
    pub fn assemble(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        aspect_vecs: NodeId,
        opinion_vecs: NodeId,
        summary: NodeId,
        pairs: &[(usize, usize, usize)],
    ) -> NodeId {
        assert!(!pairs.is_empty());
        let a_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let o_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let buckets: Vec<usize> = pairs.iter().map(|p| p.2).collect();
        let a = tape.gather_rows(aspect_vecs, &a_rows);
        let o = tape.gather_rows(opinion_vecs, &o_rows);
        let s = tape.repeat_row(summary, pairs.len());
        let table = tape.param(store, self.dist_emb);
        let d = tape.gather_rows(table, &buckets);
        let cat = tape.concat_cols(&[a, o, s, d]);
        self.reduce.forward(tape, store, cat)
    }

    /// Let pairs attend to each other (or apply the per-pair ablation).
    pub fn contextualize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut FwdCtx,
        pair_embs: NodeId,
    ) -> NodeId {
        match &self.context {
            PairContext::Transformer(layers) => {
                let mut x = pair_embs;
                for layer in layers {
                    x = layer.forward(tape, store, ctx, x);
                }
                x
            }
            PairContext::PerPair(block) => block.forward(tape, store, ctx, pair_embs),
        }
    }

    /// `[n_pairs, 4]` class logits.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, contextualized: NodeId) -> NodeId {
        self.class_head.forward(tape, store, contextualized)
    }
}

/// Softmax class probabilities from a logits matrix row.
pub fn probs_from_logits(logits: &Array2<f64>, row: usize) -> [f64; N_CLASSES] {
    let m = (0..N_CLASSES)
        .map(|c| logits[[row, c]])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for c in 0..N_CLASSES {
        exps[c] = (logits[[row, c]] - m).exp();
        sum += exps[c];
    }
    for e in &mut exps {
        *e /= sum;
    }
    exps
}

/// The class a training pair should be assigned: its gold polarity when the
/// span pair exactly matches a gold triplet, otherwise invalid.
pub fn gold_class_for_pair(
    sentence: &Sentence,
    aspect: WordSpan,
    opinion: WordSpan,
) -> TripletClass {
    sentence
        .triplets
        .iter()
        .find(|t| t.aspect == aspect && t.opinion == opinion)
        .map(|t| TripletClass::from_polarity(t.polarity))
        .unwrap_or(TripletClass::Invalid)
}

/// Focal loss for one pair: `-(1-p_c)^gamma * ln(p_c)`, with `p_c` clamped
/// at 1e-12.
pub fn focal_loss(p_gold: f64, gamma: f64) -> f64 {
    let p = p_gold.max(1e-12);
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Differentiable focal loss over a logits matrix, mean-reduced over pairs.
pub fn focal_loss_tape(
    tape: &mut Tape,
    logits: NodeId,
    gold: &[TripletClass],
    gamma: f64,
) -> NodeId {
    let n = gold.len();
    assert_eq!(tape.value(logits).nrows(), n);
    let logp = tape.log_softmax_rows(logits);
    let elems: Vec<(usize, usize)> = gold.iter().enumerate().map(|(i, c)| (i, c.index())).collect();
    let logp_gold = tape.gather_elems(logp, &elems);
    let p = tape.exp(logp_gold);
    let neg_p = tape.scale(p, -1.0);
    let one_minus = tape.add_scalar(neg_p, 1.0);
    let weight = tape.pow_const(one_minus, gamma);
    let nll = tape.scale(logp_gold, -1.0);
    let weighted = tape.mul(weight, nll);
    tape.mean_all(weighted)
}
