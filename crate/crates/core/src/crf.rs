//! Linear-chain CRF tagger used to prune span candidates.
//!
//! Words are tagged with a single merged BIO alphabet covering both aspect
//! and opinion phrases. Decoded spans gate which candidates survive to the
//! pair stage; the tagger trains jointly with the rest of the model through
//! its negative log-likelihood.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, WordSpan};
use crate::nn::{Linear, ParamId, ParamStore};
use crate::tape::{log_sum_exp, NodeId, Tape};

pub const N_TAGS: usize = 3;
pub const TAG_B: usize = 0;
pub const TAG_I: usize = 1;
pub const TAG_O: usize = 2;

/// Additive penalty that rules out structurally invalid transitions
/// (`O -> I` and starting on `I`) without hard `-inf` arithmetic.
const FORBIDDEN: f64 = -1e4;

/// Emission head plus learned transition/start/end scores.
#[derive(Debug, Clone)]
pub struct CrfHead {
    pub emit: Linear,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl CrfHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_model: usize) -> CrfHead {
        CrfHead {
            emit: Linear::new(store, rng, &format!("{name}.emit"), d_model, N_TAGS),
            transitions: store.add(&format!("{name}.trans"), Array2::zeros((N_TAGS, N_TAGS))),
            start: store.add(&format!("{name}.start"), Array2::zeros((1, N_TAGS))),
            end: store.add(&format!("{name}.end"), Array2::zeros((1, N_TAGS))),
        }
    }

    fn constraint_mask() -> (Array2<f64>, Array2<f64>) {
        let mut trans_mask = Array2::zeros((N_TAGS, N_TAGS));
        trans_mask[[TAG_O, TAG_I]] = FORBIDDEN;
        let mut start_mask = Array2::zeros((1, N_TAGS));
        start_mask[[0, TAG_I]] = FORBIDDEN;
        (trans_mask, start_mask)
    }

    /// Transition/start scores with the structural constraints applied,
    /// as plain values (for decoding).
    pub fn masked_scores(&self, store: &ParamStore) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (trans_mask, start_mask) = Self::constraint_mask();
        let trans = store.value(self.transitions) + &trans_mask;
        let start = store.value(self.start) + &start_mask;
        let end = store.value(self.end).clone();
        (trans, start, end)
    }

    /// Most likely tag sequence for word representations already mapped to
    /// emission scores `[n, 3]`.
    pub fn decode(&self, store: &ParamStore, emissions: &Array2<f64>) -> Vec<usize> {
        let (trans, start, end) = self.masked_scores(store);
        viterbi(emissions, &trans, &start, &end)
    }

    /// Emission scores for word representations `[n, d]`, on the tape.
    pub fn emissions(&self, tape: &mut Tape, store: &ParamStore, words: NodeId) -> NodeId {
        self.emit.forward(tape, store, words)
    }

    /// Negative log-likelihood of `gold_tags` given emissions `[n, 3]`.
    pub fn nll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emissions: NodeId,
        gold_tags: &[usize],
    ) -> NodeId {
        let n = gold_tags.len();
        assert_eq!(tape.value(emissions).nrows(), n);
        let (trans_mask, start_mask) = Self::constraint_mask();

        let trans_param = tape.param(store, self.transitions);
        let mask_node = tape.constant(trans_mask);
        let trans = tape.add(trans_param, mask_node);

        let start_param = tape.param(store, self.start);
        let smask_node = tape.constant(start_mask);
        let start = tape.add(start_param, smask_node);

        let end = tape.param(store, self.end);

        let log_z = tape.crf_log_partition(emissions, trans, start, end);

        // gold path score
        let em_elems: Vec<(usize, usize)> = gold_tags.iter().enumerate().map(|(t, &y)| (t, y)).collect();
        let em_gold = tape.gather_elems(emissions, &em_elems);
        let mut parts = vec![tape.sum_all(em_gold)];

        let st = tape.gather_elems(start, &[(0, gold_tags[0])]);
        parts.push(st);
        let en = tape.gather_elems(end, &[(0, gold_tags[n - 1])]);
        parts.push(en);

        if n > 1 {
            let tr_elems: Vec<(usize, usize)> =
                gold_tags.windows(2).map(|w| (w[0], w[1])).collect();
            let tr_gold = tape.gather_elems(trans, &tr_elems);
            parts.push(tape.sum_all(tr_gold));
        }

        let stacked = tape.concat_rows(&parts);
        let gold_score = tape.sum_all(stacked);
        tape.sub(log_z, gold_score)
    }
}

/// Exact max-score decoding by dynamic programming.
pub fn viterbi(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    start: &Array2<f64>,
    end: &Array2<f64>,
) -> Vec<usize> {
    let (n, k) = emissions.dim();
    assert!(n >= 1);
    let mut score = vec![vec![0.0f64; k]; n];
    let mut back = vec![vec![0usize; k]; n];
    for j in 0..k {
        score[0][j] = start[[0, j]] + emissions[[0, j]];
    }
    for t in 1..n {
        for j in 0..k {
            let mut best_i = 0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..k {
                let s = score[t - 1][i] + transitions[[i, j]];
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            score[t][j] = best + emissions[[t, j]];
            back[t][j] = best_i;
        }
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for j in 0..k {
        let s = score[n - 1][j] + end[[0, j]];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut tags = vec![0usize; n];
    tags[n - 1] = last;
    for t in (1..n).rev() {
        tags[t - 1] = back[t][tags[t]];
    }
    tags
}

/// Score of one tag sequence under the given potentials (for oracles).
pub fn sequence_score(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    start: &Array2<f64>,
    end: &Array2<f64>,
    tags: &[usize],
) -> f64 {
    let n = tags.len();
    let mut s = start[[0, tags[0]]] + end[[0, tags[n - 1]]];
    for (t, &y) in tags.iter().enumerate() {
        s += emissions[[t, y]];
        if t > 0 {
            s += transitions[[tags[t - 1], y]];
        }
    }
    s
}

/// Log-partition as a plain value (for oracles and diagnostics).
pub fn log_partition(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    start: &Array2<f64>,
    end: &Array2<f64>,
) -> f64 {
    let (n, k) = emissions.dim();
    let mut alpha: Vec<f64> = (0..k).map(|j| start[[0, j]] + emissions[[0, j]]).collect();
    for t in 1..n {
        let prev = alpha.clone();
        for (j, slot) in alpha.iter_mut().enumerate() {
            *slot = emissions[[t, j]]
                + log_sum_exp((0..k).map(|i| prev[i] + transitions[[i, j]]));
        }
    }
    log_sum_exp((0..k).map(|j| alpha[j] + end[[0, j]]))
}

/// Merged gold BIO tags for a sentence. Opinion spans are painted first and
/// aspect spans second, so a word inside both keeps the aspect tag. Any `I`
/// left dangling by an overlap is promoted to `B` to keep the sequence valid.
pub fn gold_bio_tags(sentence: &Sentence) -> Vec<usize> {
    let mut tags = vec![TAG_O; sentence.n_words()];
    for span in sentence
        .gold_opinions()
        .iter()
        .chain(sentence.gold_aspects().iter())
    {
        tags[span.start] = TAG_B;
        for t in span.start + 1..=span.end {
            tags[t] = TAG_I;
        }
    }
    for t in 0..tags.len() {
        if tags[t] == TAG_I && (t == 0 || tags[t - 1] == TAG_O) {
            tags[t] = TAG_B;
        }
    }
    tags
}

/// Contiguous phrases recovered from a BIO tag sequence.
pub fn decode_spans(tags: &[usize]) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &tag) in tags.iter().enumerate() {
        match tag {
            TAG_B => {
                if let Some(start) = open.take() {
                    spans.push(WordSpan::new(start, t - 1));
                }
                open = Some(t);
            }
            TAG_I => {
                if open.is_none() {
                    // tolerate malformed input from a free decoder
                    open = Some(t);
                }
            }
            _ => {
                if let Some(start) = open.take() {
                    spans.push(WordSpan::new(start, t - 1));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push(WordSpan::new(start, tags.len() - 1));
    }
    spans
}
