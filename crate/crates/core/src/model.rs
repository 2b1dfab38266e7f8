//! The assembled pipeline: encoder, span stage, pair stage, and triplet
//! stage sharing one parameter store, with a training forward that yields
//! the composite loss parts and an evaluation forward that yields
//! predictions plus every intermediate needed for diagnostics.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::corpus::{Sentence, WordSpan};
use crate::crf::{gold_bio_tags, CrfHead};
use crate::encoder::{build_encoder, EncoderSpec, TinyConfig, TinyEncoder, Vocab};
use crate::error::Result;
use crate::nn::{FwdCtx, ParamStore};
use crate::pairs::{
    contrastive_loss_tape, contrastive_terms, match_pairs_from, PairCandidate, PairStageConfig,
    ProjectedSpans, ProjectionHead,
};
use crate::spans::{
    aspect_allowed_set, build_candidates, dice_loss_tape, gold_validity, pool_spans_tape,
    SideMask, SpanCandidate, SpanStageConfig, ValidityHead,
};
use crate::tape::{NodeId, Tape};
use crate::triplets::{
    distance_bucket, distance_gap, focal_loss_tape, gold_class_for_pair, probs_from_logits,
    TripletClass, TripletPrediction, TripletStage, TripletStageConfig,
};

/// Complete configuration of the pipeline's shape and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub encoder: EncoderSpec,
    pub span: SpanStageConfig,
    pub pair: PairStageConfig,
    pub triplet: TripletStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            encoder: EncoderSpec::tiny(TinyConfig::default()),
            span: SpanStageConfig::default(),
            pair: PairStageConfig::default(),
            triplet: TripletStageConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.span.validate()?;
        self.pair.validate()?;
        Ok(())
    }
}

/// Loss nodes produced by one sentence's training forward.
pub struct SentenceLosses {
    /// Focal classification loss; absent when the sentence yields no pairs.
    pub aste: Option<NodeId>,
    pub span_sel: NodeId,
    pub ao: NodeId,
    /// Tagger NLL; present only when pruning is enabled.
    pub crf: Option<NodeId>,
    pub n_pairs: usize,
}

/// Everything the evaluation forward computes for one sentence.
#[derive(Debug, Clone)]
pub struct EvalTrace {
    pub candidates: Vec<SpanCandidate>,
    /// Validity probability per candidate.
    pub validity: Vec<f64>,
    /// Tagger phrases before augmentation (empty when pruning is off).
    pub tagged_spans: Vec<WordSpan>,
    pub projected: ProjectedSpans,
    /// Pairs whose similarity cleared the threshold.
    pub matched: Vec<PairCandidate>,
    /// One classified prediction per matched pair (including invalid ones).
    pub classified: Vec<TripletPrediction>,
}

impl EvalTrace {
    /// Non-invalid predictions, before overlap filtering.
    pub fn raw_predictions(&self) -> Vec<TripletPrediction> {
        self.classified
            .iter()
            .filter(|p| p.predicted_class != TripletClass::Invalid)
            .cloned()
            .collect()
    }
}

/// The full model: configuration, vocabulary, and all parameters.
pub struct Model {
    pub config: PipelineConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub init_seed: u64,
    pub encoder: TinyEncoder,
    pub validity: ValidityHead,
    pub crf: CrfHead,
    pub aspect_proj: ProjectionHead,
    pub opinion_proj: ProjectionHead,
    pub triplet: TripletStage,
}

impl Model {
    /// Build a freshly initialized model. All parameter initialization draws
    /// from one generator seeded with `seed`.
    pub fn new(config: PipelineConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = build_encoder(&config.encoder, &mut store, &vocab, seed)?;
        let d = encoder.config.width;
        // downstream heads continue the same seed lineage, offset so they do
        // not replay the encoder's draws
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
        let validity = ValidityHead::new(&mut store, &mut rng, d);
        let crf = CrfHead::new(&mut store, &mut rng, "crf", d);
        let aspect_proj = ProjectionHead::new(&mut store, &mut rng, "proj.aspect", d);
        let opinion_proj = ProjectionHead::new(&mut store, &mut rng, "proj.opinion", d);
        let d_p = aspect_proj.d_out;
        let triplet = TripletStage::new(&mut store, &mut rng, d, d_p, &config.triplet)?;
        Ok(Model {
            config,
            vocab,
            store,
            init_seed: seed,
            encoder,
            validity,
            crf,
            aspect_proj,
            opinion_proj,
            triplet,
        })
    }

    pub fn d_model(&self) -> usize {
        self.encoder.config.width
    }

    /// Training forward for one sentence, accumulating onto `tape`.
    ///
    /// Teacher forcing is always on here: gold aspects enter the candidate
    /// set regardless of the tagger, and gold pairs enter the triplet stage
    /// regardless of the similarity threshold.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        rng: &mut ChaCha8Rng,
        dropout: f64,
        sentence: &Sentence,
    ) -> Result<SentenceLosses> {
        let n = sentence.n_words();
        let mut ctx = FwdCtx::Train { rng, dropout };
        let (summary, words) =
            self.encoder
                .encode_tape(tape, &self.store, &mut ctx, &self.vocab, &sentence.words)?;

        // tagger loss + decoded pruning set
        let span_cfg = &self.config.span;
        let (crf_loss, aspect_allowed) = if span_cfg.pruning_enabled {
            let emissions = self.crf.emissions(tape, &self.store, words);
            let gold_tags = gold_bio_tags(sentence);
            let nll = self.crf.nll(tape, &self.store, emissions, &gold_tags);
            let decoded = self.crf.decode(&self.store, tape.value(emissions));
            let gold_aspects: Vec<WordSpan> = sentence
                .gold_aspects()
                .into_iter()
                .filter(|s| s.len() <= span_cfg.max_span_length)
                .collect();
            (
                Some(nll),
                Some(aspect_allowed_set(&decoded, n, &gold_aspects)),
            )
        } else {
            (None, None)
        };

        let candidates = build_candidates(n, span_cfg, aspect_allowed.as_ref());
        let spans: Vec<WordSpan> = candidates.iter().map(|c| c.span).collect();
        let reprs = pool_spans_tape(tape, words, &spans);

        // span validity with dice loss over all candidates
        let probs = self.validity.forward(tape, &self.store, reprs);
        let gold_z = gold_validity(sentence, &spans);
        let span_sel = dice_loss_tape(tape, probs, &gold_z, span_cfg.dice_alpha, span_cfg.dice_gamma);

        // dual projection
        let aspect_rows: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.side_mask == SideMask::AspectAndOpinion)
            .map(|(i, _)| i)
            .collect();
        let opinion_rows: Vec<usize> = (0..candidates.len()).collect();
        let a_vecs = self
            .aspect_proj
            .forward(tape, &self.store, &mut ctx, reprs, &aspect_rows);
        let o_vecs = self
            .opinion_proj
            .forward(tape, &self.store, &mut ctx, reprs, &opinion_rows);
        let o_t = tape.transpose(o_vecs);
        let sims = tape.matmul(a_vecs, o_t);

        let projected = ProjectedSpans {
            spans: spans.clone(),
            aspect_rows: aspect_rows.clone(),
            opinion_rows: opinion_rows.clone(),
            aspect_vecs: tape.value(a_vecs).clone(),
            opinion_vecs: tape.value(o_vecs).clone(),
        };
        let gold_pairs = sentence.gold_pairs();
        let pair_cfg = &self.config.pair;
        let terms = contrastive_terms(tape.value(sims), &projected, &gold_pairs, pair_cfg);
        let ao = contrastive_loss_tape(tape, sims, &terms, pair_cfg.lambda_const);

        // pair selection: thresholded matches plus teacher-forced gold pairs
        let selected = self.select_training_pairs(&projected, tape.value(sims), sentence);
        let aste = if selected.is_empty() {
            None
        } else {
            let pair_index: Vec<(usize, usize, usize)> = selected
                .iter()
                .map(|&(r, c)| {
                    let a_span = projected.spans[projected.aspect_rows[r]];
                    let o_span = projected.spans[projected.opinion_rows[c]];
                    (r, c, distance_bucket(distance_gap(a_span, o_span)))
                })
                .collect();
            let gold_classes: Vec<TripletClass> = selected
                .iter()
                .map(|&(r, c)| {
                    gold_class_for_pair(
                        sentence,
                        projected.spans[projected.aspect_rows[r]],
                        projected.spans[projected.opinion_rows[c]],
                    )
                })
                .collect();
            let emb = self
                .triplet
                .assemble(tape, &self.store, a_vecs, o_vecs, summary, &pair_index);
            let ctxd = self.triplet.contextualize(tape, &self.store, &mut ctx, emb);
            let logits = self.triplet.logits(tape, &self.store, ctxd);
            Some(focal_loss_tape(
                tape,
                logits,
                &gold_classes,
                self.config.triplet.focal_gamma,
            ))
        };

        Ok(SentenceLosses {
            aste,
            span_sel,
            ao,
            crf: crf_loss,
            n_pairs: selected.len(),
        })
    }

    /// (row, col) pairs entering the triplet stage during training: matches
    /// above `tau_train` plus all representable gold pairs, capped (gold
    /// pairs are exempt from the cap).
    fn select_training_pairs(
        &self,
        projected: &ProjectedSpans,
        sims: &Array2<f64>,
        sentence: &Sentence,
    ) -> Vec<(usize, usize)> {
        let pair_cfg = &self.config.pair;
        let gold: BTreeSet<(WordSpan, WordSpan)> = sentence.gold_pairs().into_iter().collect();

        let mut gold_rc = Vec::new();
        let mut other_rc = Vec::new();
        for r in 0..projected.aspect_rows.len() {
            let a_span = projected.spans[projected.aspect_rows[r]];
            for c in 0..projected.opinion_rows.len() {
                if projected.aspect_rows[r] == projected.opinion_rows[c] {
                    continue;
                }
                let o_span = projected.spans[projected.opinion_rows[c]];
                if gold.contains(&(a_span, o_span)) {
                    gold_rc.push((r, c));
                } else if sims[[r, c]] > pair_cfg.tau_train {
                    other_rc.push((r, c));
                }
            }
        }
        let budget = pair_cfg.max_train_pairs.saturating_sub(gold_rc.len());
        if other_rc.len() > budget {
            other_rc.sort_by(|&(r1, c1), &(r2, c2)| {
                sims[[r2, c2]]
                    .partial_cmp(&sims[[r1, c1]])
                    .unwrap()
                    .then((r1, c1).cmp(&(r2, c2)))
            });
            other_rc.truncate(budget);
        }
        let mut all = gold_rc;
        all.extend(other_rc);
        all.sort_unstable();
        all
    }

    /// Deterministic evaluation forward (dropout off, no teacher forcing
    /// unless `force_gold_aspects` is set, which the threshold-curve tooling
    /// uses to make every gold pair reachable).
    pub fn forward_eval(
        &self,
        sentence: &Sentence,
        tau: f64,
        force_gold_aspects: bool,
    ) -> Result<EvalTrace> {
        let (trace, tape, nodes) = self.project_spans(sentence, force_gold_aspects)?;
        let (mut tape, summary, a_vecs, o_vecs) = (tape, nodes.0, nodes.1, nodes.2);

        let matched = match_pairs_from(&trace.projected.similarities(), &trace.projected, tau);
        let classified = if matched.is_empty() {
            Vec::new()
        } else {
            let row_of: std::collections::BTreeMap<usize, usize> = trace
                .projected
                .aspect_rows
                .iter()
                .enumerate()
                .map(|(r, &ci)| (ci, r))
                .collect();
            let col_of: std::collections::BTreeMap<usize, usize> = trace
                .projected
                .opinion_rows
                .iter()
                .enumerate()
                .map(|(c, &cj)| (cj, c))
                .collect();
            let pair_index: Vec<(usize, usize, usize)> = matched
                .iter()
                .map(|m| {
                    (
                        row_of[&m.aspect_idx],
                        col_of[&m.opinion_idx],
                        distance_bucket(distance_gap(m.aspect_span, m.opinion_span)),
                    )
                })
                .collect();
            let emb = self
                .triplet
                .assemble(&mut tape, &self.store, a_vecs, o_vecs, summary, &pair_index);
            let ctxd = self
                .triplet
                .contextualize(&mut tape, &self.store, &mut FwdCtx::Eval, emb);
            let logits_node = self.triplet.logits(&mut tape, &self.store, ctxd);
            let logits = tape.value(logits_node);
            matched
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let class_probs = probs_from_logits(logits, i);
                    let best = (0..4)
                        .max_by(|&a, &b| class_probs[a].partial_cmp(&class_probs[b]).unwrap())
                        .unwrap();
                    TripletPrediction {
                        aspect_span: m.aspect_span,
                        opinion_span: m.opinion_span,
                        class_probs,
                        predicted_class: TripletClass::from_index(best),
                    }
                })
                .collect()
        };

        Ok(EvalTrace {
            matched,
            classified,
            ..trace
        })
    }

    /// Classify an explicit list of (aspect, opinion) span pairs, bypassing
    /// span selection and similarity gating. Useful for probing what the
    /// classifier would say about any given pairing.
    pub fn classify_pairs(
        &self,
        sentence: &Sentence,
        pairs: &[(WordSpan, WordSpan)],
    ) -> Result<Vec<TripletPrediction>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let n = sentence.n_words();
        for (a, o) in pairs {
            if a.end >= n || o.end >= n {
                return Err(crate::error::Error::Validation(format!(
                    "pair ({a:?}, {o:?}) exceeds sentence length {n}"
                )));
            }
        }
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::Eval;
        let (summary, words) = self.encoder.encode_tape(
            &mut tape,
            &self.store,
            &mut ctx,
            &self.vocab,
            &sentence.words,
        )?;
        let a_spans: Vec<WordSpan> = pairs.iter().map(|p| p.0).collect();
        let o_spans: Vec<WordSpan> = pairs.iter().map(|p| p.1).collect();
        let a_reprs = pool_spans_tape(&mut tape, words, &a_spans);
        let o_reprs = pool_spans_tape(&mut tape, words, &o_spans);
        let rows: Vec<usize> = (0..pairs.len()).collect();
        let a_vecs = self
            .aspect_proj
            .forward(&mut tape, &self.store, &mut ctx, a_reprs, &rows);
        let o_vecs = self
            .opinion_proj
            .forward(&mut tape, &self.store, &mut ctx, o_reprs, &rows);
        let pair_index: Vec<(usize, usize, usize)> = pairs
            .iter()
            .enumerate()
            .map(|(i, (a, o))| (i, i, distance_bucket(distance_gap(*a, *o))))
            .collect();
        let emb = self
            .triplet
            .assemble(&mut tape, &self.store, a_vecs, o_vecs, summary, &pair_index);
        let ctxd = self
            .triplet
            .contextualize(&mut tape, &self.store, &mut FwdCtx::Eval, emb);
        let logits_node = self.triplet.logits(&mut tape, &self.store, ctxd);
        let logits = tape.value(logits_node);
        Ok(pairs
            .iter()
            .enumerate()
            .map(|(i, (a, o))| {
                let class_probs = probs_from_logits(logits, i);
                let best = (0..4)
                    .max_by(|&x, &y| class_probs[x].partial_cmp(&class_probs[y]).unwrap())
                    .unwrap();
                TripletPrediction {
                    aspect_span: *a,
                    opinion_span: *o,
                    class_probs,
                    predicted_class: TripletClass::from_index(best),
                }
            })
            .collect())
    }

    /// Evaluation-mode forward up to the projections (no pair
    /// classification). Cheap enough to sweep thresholds against.
    pub fn project_spans_eval(
        &self,
        sentence: &Sentence,
        force_gold_aspects: bool,
    ) -> Result<EvalTrace> {
        Ok(self.project_spans(sentence, force_gold_aspects)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn project_spans(
        &self,
        sentence: &Sentence,
        force_gold_aspects: bool,
    ) -> Result<(EvalTrace, Tape, (NodeId, NodeId, NodeId))> {
        let n = sentence.n_words();
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::Eval;
        let (summary, words) = self.encoder.encode_tape(
            &mut tape,
            &self.store,
            &mut ctx,
            &self.vocab,
            &sentence.words,
        )?;

        let span_cfg = &self.config.span;
        let (tagged_spans, aspect_allowed) = if span_cfg.pruning_enabled {
            let emissions = self.crf.emissions(&mut tape, &self.store, words);
            let decoded = self.crf.decode(&self.store, tape.value(emissions));
            let forced: Vec<WordSpan> = if force_gold_aspects {
                sentence
                    .gold_aspects()
                    .into_iter()
                    .filter(|s| s.len() <= span_cfg.max_span_length)
                    .collect()
            } else {
                Vec::new()
            };
            let phrases = crate::crf::decode_spans(&decoded);
            (phrases, Some(aspect_allowed_set(&decoded, n, &forced)))
        } else {
            (Vec::new(), None)
        };

        let candidates = build_candidates(n, span_cfg, aspect_allowed.as_ref());
        let spans: Vec<WordSpan> = candidates.iter().map(|c| c.span).collect();
        let reprs = pool_spans_tape(&mut tape, words, &spans);

        let probs = self.validity.forward(&mut tape, &self.store, reprs);
        let validity: Vec<f64> = tape.value(probs).column(0).to_vec();

        let aspect_rows: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.side_mask == SideMask::AspectAndOpinion)
            .map(|(i, _)| i)
            .collect();
        let opinion_rows: Vec<usize> = (0..candidates.len()).collect();
        let a_vecs = self
            .aspect_proj
            .forward(&mut tape, &self.store, &mut ctx, reprs, &aspect_rows);
        let o_vecs = self
            .opinion_proj
            .forward(&mut tape, &self.store, &mut ctx, reprs, &opinion_rows);

        let projected = ProjectedSpans {
            spans,
            aspect_rows,
            opinion_rows,
            aspect_vecs: tape.value(a_vecs).clone(),
            opinion_vecs: tape.value(o_vecs).clone(),
        };
        let trace = EvalTrace {
            candidates,
            validity,
            tagged_spans,
            projected,
            matched: Vec::new(),
            classified: Vec::new(),
        };
        Ok((trace, tape, (summary, a_vecs, o_vecs)))
    }
}
