//! Dual aspect/opinion projection, thresholded pair matching, and the
//! contrastive matching loss with hard negative mining.
//!
//! Candidates are projected into two embedding spaces; a pair (i, j)
//! survives when the inner product of aspect-projected i and
//! opinion-projected j strictly exceeds a threshold. Training pulls gold
//! (aspect, opinion) pairs together and pushes each anchor away from its
//! most similar incorrect partners.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::corpus::{Sentence, WordSpan};
use crate::error::Result;
use crate::nn::{FfnBlock, FwdCtx, ParamStore};
use crate::pca;
use crate::tape::{log_sum_exp, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStageConfig {
    /// Pass-many training threshold.
    pub tau_train: f64,
    /// Stricter inference threshold.
    pub tau_test: f64,
    pub n_hard_negatives: usize,
    /// Numerator constant for anchors without a gold partner.
    pub lambda_const: f64,
    /// Cap on non-gold pairs entering the triplet stage per sentence during
    /// training, keeping early epochs (when similarities are untrained and
    /// many pairs clear tau) from exploding. Gold pairs are never dropped.
    pub max_train_pairs: usize,
}

impl Default for PairStageConfig {
    fn default() -> PairStageConfig {
        PairStageConfig {
            tau_train: 0.4,
            tau_test: 0.6,
            n_hard_negatives: 4,
            lambda_const: 0.0,
            max_train_pairs: 192,
        }
    }
}

impl PairStageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_test < self.tau_train {
            return Err(crate::Error::Config(format!(
                "tau_test ({}) must be >= tau_train ({})",
                self.tau_test, self.tau_train
            )));
        }
        if self.n_hard_negatives < 1 {
            return Err(crate::Error::Config(
                "n_hard_negatives must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Projection heads
// ---------------------------------------------------------------------------

/// Three-block projection `d -> d/2 -> d/4 -> d/2`, each block
/// LayerNorm -> Linear -> ReLU -> Dropout.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub blocks: Vec<FfnBlock>,
    pub d_out: usize,
}

impl ProjectionHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
    ) -> ProjectionHead {
        let widths = [d_model, d_model / 2, d_model / 4, d_model / 2];
        let mut blocks = Vec::new();
        for i in 0..3 {
            blocks.push(FfnBlock::new(
                store,
                rng,
                &format!("{name}.block{i}"),
                widths[i],
                widths[i + 1],
            ));
        }
        // positive output bias keeps rectified units revivable early in
        // training; without it the two projection sides tend to segregate
        // onto disjoint supports, freezing every inner product at zero
        store.value_mut(blocks[2].linear.b).fill(0.5);
        ProjectionHead {
            blocks,
            d_out: d_model / 2,
        }
    }

    /// Project the selected `rows` of `reprs` (`[n_spans, d]`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut FwdCtx,
        reprs: NodeId,
        rows: &[usize],
    ) -> NodeId {
        let mut x = tape.gather_rows(reprs, rows);
        for b in &self.blocks {
            x = b.forward(tape, store, ctx, x);
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

/// Projected candidate set of one sentence, in plain values.
#[derive(Debug, Clone)]
pub struct ProjectedSpans {
    /// All candidate spans, index-aligned with the span stage.
    pub spans: Vec<WordSpan>,
    /// Candidate indices eligible as aspects / opinions.
    pub aspect_rows: Vec<usize>,
    pub opinion_rows: Vec<usize>,
    /// `[len(aspect_rows), d_p]` / `[len(opinion_rows), d_p]`.
    pub aspect_vecs: Array2<f64>,
    pub opinion_vecs: Array2<f64>,
}

impl ProjectedSpans {
    /// Inner-product similarity matrix, aspect rows by opinion columns.
    pub fn similarities(&self) -> Array2<f64> {
        self.aspect_vecs.dot(&self.opinion_vecs.t())
    }
}

/// One surviving (aspect, opinion) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCandidate {
    /// Candidate indices into `ProjectedSpans::spans`.
    pub aspect_idx: usize,
    pub opinion_idx: usize,
    pub aspect_span: WordSpan,
    pub opinion_span: WordSpan,
    pub similarity: f64,
}

/// All pairs with similarity strictly above `tau`, ordered by matrix
/// position. A candidate never pairs with itself.
pub fn match_pairs(p: &ProjectedSpans, tau: f64) -> Vec<PairCandidate> {
    let sims = p.similarities();
    match_pairs_from(&sims, p, tau)
}

/// As [`match_pairs`] but over a precomputed similarity matrix.
pub fn match_pairs_from(sims: &Array2<f64>, p: &ProjectedSpans, tau: f64) -> Vec<PairCandidate> {
    let mut out = Vec::new();
    for (r, &ai) in p.aspect_rows.iter().enumerate() {
        for (c, &oj) in p.opinion_rows.iter().enumerate() {
            if ai == oj {
                continue;
            }
            let s = sims[[r, c]];
            if s > tau {
                out.push(PairCandidate {
                    aspect_idx: ai,
                    opinion_idx: oj,
                    aspect_span: p.spans[ai],
                    opinion_span: p.spans[oj],
                    similarity: s,
                });
            }
        }
    }
    out
}

/// Indices of the up-to-`n` most similar entries of `sims`, skipping
/// `exclude`. Ties break by (span start, span length) for determinism.
pub fn hard_negatives(
    sims: &[f64],
    spans: &[WordSpan],
    exclude: &BTreeSet<usize>,
    n: usize,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).filter(|i| !exclude.contains(i)).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap()
            .then(spans[a].start.cmp(&spans[b].start))
            .then(spans[a].len().cmp(&spans[b].len()))
    });
    order.truncate(n);
    order
}

// ---------------------------------------------------------------------------
// Contrastive loss
// ---------------------------------------------------------------------------

/// One anchor term of the contrastive loss, as entries into the similarity
/// matrix: `max(0, logsumexp(negatives) - positive)`, where anchors without
/// a gold partner use the configured constant as the positive score.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveTerm {
    pub positive: Option<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

/// Enumerate the loss terms for one sentence: every aspect-side candidate
/// and every opinion-side candidate anchors once per gold partner (or once
/// with the constant numerator if it has none).
pub fn contrastive_terms(
    sims: &Array2<f64>,
    p: &ProjectedSpans,
    gold_pairs: &[(WordSpan, WordSpan)],
    cfg: &PairStageConfig,
) -> Vec<ContrastiveTerm> {
    let gold: BTreeSet<(WordSpan, WordSpan)> = gold_pairs.iter().copied().collect();
    let mut terms = Vec::new();

    // aspect anchors mine negatives among opinion columns
    for (r, &ai) in p.aspect_rows.iter().enumerate() {
        let a_span = p.spans[ai];
        let partner_cols: Vec<usize> = p
            .opinion_rows
            .iter()
            .enumerate()
            .filter(|(_, &oj)| gold.contains(&(a_span, p.spans[oj])))
            .map(|(c, _)| c)
            .collect();
        let mut exclude: BTreeSet<usize> = partner_cols.iter().copied().collect();
        if let Some(self_col) = p.opinion_rows.iter().position(|&oj| oj == ai) {
            exclude.insert(self_col);
        }
        let row: Vec<f64> = sims.row(r).to_vec();
        let col_spans: Vec<WordSpan> = p.opinion_rows.iter().map(|&oj| p.spans[oj]).collect();
        let negatives: Vec<(usize, usize)> =
            hard_negatives(&row, &col_spans, &exclude, cfg.n_hard_negatives)
                .into_iter()
                .map(|c| (r, c))
                .collect();
        if negatives.is_empty() {
            continue;
        }
        if partner_cols.is_empty() {
            terms.push(ContrastiveTerm {
                positive: None,
                negatives,
            });
        } else {
            for c in partner_cols {
                terms.push(ContrastiveTerm {
                    positive: Some((r, c)),
                    negatives: negatives.clone(),
                });
            }
        }
    }

    // opinion anchors mine negatives among aspect rows
    for (c, &oj) in p.opinion_rows.iter().enumerate() {
        let o_span = p.spans[oj];
        let partner_rows: Vec<usize> = p
            .aspect_rows
            .iter()
            .enumerate()
            .filter(|(_, &ai)| gold.contains(&(p.spans[ai], o_span)))
            .map(|(r, _)| r)
            .collect();
        let mut exclude: BTreeSet<usize> = partner_rows.iter().copied().collect();
        if let Some(self_row) = p.aspect_rows.iter().position(|&ai| ai == oj) {
            exclude.insert(self_row);
        }
        let col: Vec<f64> = sims.column(c).to_vec();
        let row_spans: Vec<WordSpan> = p.aspect_rows.iter().map(|&ai| p.spans[ai]).collect();
        let negatives: Vec<(usize, usize)> =
            hard_negatives(&col, &row_spans, &exclude, cfg.n_hard_negatives)
                .into_iter()
                .map(|r| (r, c))
                .collect();
        if negatives.is_empty() {
            continue;
        }
        if partner_rows.is_empty() {
            terms.push(ContrastiveTerm {
                positive: None,
                negatives,
            });
        } else {
            for r in partner_rows {
                terms.push(ContrastiveTerm {
                    positive: Some((r, c)),
                    negatives: negatives.clone(),
                });
            }
        }
    }
    terms
}

/// Plain-value contrastive loss (oracle and diagnostics path).
pub fn contrastive_loss_value(
    sims: &Array2<f64>,
    terms: &[ContrastiveTerm],
    lambda_const: f64,
) -> f64 {
    terms
        .iter()
        .map(|t| {
            let neg_lse = log_sum_exp(t.negatives.iter().map(|&(r, c)| sims[[r, c]]));
            let pos = match t.positive {
                Some((r, c)) => sims[[r, c]],
                None => lambda_const,
            };
            (neg_lse - pos).max(0.0)
        })
        .sum()
}

/// Differentiable contrastive loss over a similarity-matrix node.
pub fn contrastive_loss_tape(
    tape: &mut Tape,
    sims: NodeId,
    terms: &[ContrastiveTerm],
    lambda_const: f64,
) -> NodeId {
    if terms.is_empty() {
        return tape.scalar_const(0.0);
    }
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        let negs = tape.gather_elems(sims, &t.negatives);
        let neg_lse = tape.log_sum_exp_all(negs);
        let raw = match t.positive {
            Some(entry) => {
                let pos = tape.gather_elems(sims, &[entry]);
                tape.sub(neg_lse, pos)
            }
            None => tape.add_scalar(neg_lse, -lambda_const),
        };
        parts.push(tape.relu(raw));
    }
    let stacked = tape.concat_rows(&parts);
    tape.sum_all(stacked)
}

// ---------------------------------------------------------------------------
// Embedding-space export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Aspect,
    Opinion,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Aspect => write!(f, "aspect"),
            Role::Opinion => write!(f, "opinion"),
        }
    }
}

/// One plotted vector from the induced embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpacePoint {
    pub x: f64,
    pub y: f64,
    pub role: Role,
    pub gold_valid: bool,
    pub span_text: String,
}

/// 2-D principal-component projection of all aspect and opinion vectors of
/// a sentence, labeled by role and gold validity, for plotting.
pub fn export_search_space(
    p: &ProjectedSpans,
    sentence: &Sentence,
) -> Result<Vec<SearchSpacePoint>> {
    let n_a = p.aspect_rows.len();
    let n_o = p.opinion_rows.len();
    let d = p.aspect_vecs.ncols().max(p.opinion_vecs.ncols());
    let mut all = Array2::zeros((n_a + n_o, d));
    for (i, row) in p.aspect_vecs.rows().into_iter().enumerate() {
        all.row_mut(i).assign(&row);
    }
    for (i, row) in p.opinion_vecs.rows().into_iter().enumerate() {
        all.row_mut(n_a + i).assign(&row);
    }
    let coords = pca::project_2d(&all)?;

    let gold_aspects: BTreeSet<WordSpan> = sentence.gold_aspects().into_iter().collect();
    let gold_opinions: BTreeSet<WordSpan> = sentence.gold_opinions().into_iter().collect();
    let mut points = Vec::with_capacity(n_a + n_o);
    for (i, &ci) in p.aspect_rows.iter().enumerate() {
        let span = p.spans[ci];
        points.push(SearchSpacePoint {
            x: coords[[i, 0]],
            y: coords[[i, 1]],
            role: Role::Aspect,
            gold_valid: gold_aspects.contains(&span),
            span_text: span.text(&sentence.words),
        });
    }
    for (i, &cj) in p.opinion_rows.iter().enumerate() {
        let span = p.spans[cj];
        points.push(SearchSpacePoint {
            x: coords[[n_a + i, 0]],
            y: coords[[n_a + i, 1]],
            role: Role::Opinion,
            gold_valid: gold_opinions.contains(&span),
            span_text: span.text(&sentence.words),
        });
    }
    Ok(points)
}
