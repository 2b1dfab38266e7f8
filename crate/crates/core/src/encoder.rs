//! Word-level encoding on top of a pluggable sentence backbone.
//!
//! The pipeline consumes one contextual embedding per *word* plus a sentence
//! summary embedding. Backbones work in subword pieces, so this module owns
//! the piece-to-word bridge (first-piece or mean pooling) and the summary
//! position (a prepended learned token).
//!
//! Pretrained checkpoints are referenced by name but none are bundled;
//! resolving one always reports which id was requested. The shipped backbone
//! is a small from-scratch transformer trained jointly with the rest of the
//! pipeline.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{layer_norm, FwdCtx, ParamId, ParamStore, TransformerLayer};
use crate::tape::{NodeId, Tape};

/// How subword piece embeddings become one word embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Take the word's first piece (cheap, the default).
    #[default]
    FirstSubword,
    /// Average all of the word's pieces.
    MeanSubword,
}

/// Which backbone produces piece embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// A named pretrained checkpoint. None are bundled with this crate, so
    /// resolving one fails with [`Error::UnknownBackbone`]; the variant
    /// exists so configs can name an external checkpoint once one is
    /// installed.
    Pretrained { backbone_id: String },
    /// Desk-scale transformer trained from scratch with the pipeline.
    Tiny(TinyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backbone: Backbone,
    #[serde(default)]
    pub pooling: Pooling,
}

impl EncoderSpec {
    pub fn tiny(config: TinyConfig) -> EncoderSpec {
        EncoderSpec {
            backbone: Backbone::Tiny(config),
            pooling: Pooling::FirstSubword,
        }
    }

    /// Stable identifier recorded in archives and compared on load.
    pub fn backbone_label(&self) -> String {
        match &self.backbone {
            Backbone::Pretrained { backbone_id } => format!("pretrained:{backbone_id}"),
            Backbone::Tiny(cfg) => format!(
                "tiny:w{}-l{}-h{}",
                cfg.width, cfg.n_layers, cfg.n_heads
            ),
        }
    }
}

/// Size knobs for the from-scratch backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub width: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hard cap on pieces per sentence (including the summary token).
    pub max_pieces: usize,
}

impl Default for TinyConfig {
    fn default() -> TinyConfig {
        TinyConfig {
            width: 32,
            n_layers: 2,
            n_heads: 2,
            max_pieces: 160,
        }
    }
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

pub const SUM_TOKEN: &str = "[SUM]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const SUM_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Deterministic closed vocabulary: the two specials, then every character
/// seen in training words (the subword fallback), then every full word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    entries: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(words: impl Iterator<Item = &'a str>) -> Vocab {
        let mut chars = std::collections::BTreeSet::new();
        let mut full = std::collections::BTreeSet::new();
        for w in words {
            full.insert(w.to_string());
            for c in w.chars() {
                chars.insert(c.to_string());
            }
        }
        let mut entries = vec![SUM_TOKEN.to_string(), UNK_TOKEN.to_string()];
        entries.extend(chars);
        for w in full {
            if !entries.contains(&w) {
                entries.push(w);
            }
        }
        Vocab::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<String>) -> Vocab {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Vocab { entries, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Piece ids for one word: the word itself when known, otherwise its
    /// characters (unknown characters map to `[UNK]`).
    pub fn pieces(&self, word: &str) -> Vec<usize> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        word.chars()
            .map(|c| self.id(&c.to_string()).unwrap_or(UNK_ID))
            .collect()
    }

    /// Fraction of words that fall back to character pieces.
    pub fn oov_rate<'a>(&self, words: impl Iterator<Item = &'a str>) -> f64 {
        let mut total = 0usize;
        let mut oov = 0usize;
        for w in words {
            total += 1;
            if self.id(w).is_none() {
                oov += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            oov as f64 / total as f64
        }
    }
}

// ---------------------------------------------------------------------------
// Tiny backbone
// ---------------------------------------------------------------------------

/// Contextual embeddings for one sentence, in plain values.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[n_words, d]`, one row per input word.
    pub word_embeddings: Array2<f64>,
    /// `[1, d]` summary (classification-position) embedding.
    pub sentence_embedding: Array2<f64>,
}

/// From-scratch pre-norm transformer over subword pieces with learned
/// positional embeddings and a prepended summary token.
#[derive(Debug, Clone)]
pub struct TinyEncoder {
    pub config: TinyConfig,
    pub pooling: Pooling,
    pub token_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub final_gamma: ParamId,
    pub final_beta: ParamId,
}

impl TinyEncoder {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        vocab: &Vocab,
        config: &TinyConfig,
        pooling: Pooling,
    ) -> Result<TinyEncoder> {
        if config.width == 0 || config.n_heads == 0 || config.width % config.n_heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} must be a positive multiple of n_heads {}",
                config.width, config.n_heads
            )));
        }
        let d = config.width;
        let scale = 1.0 / (d as f64).sqrt();
        let token_emb = store.add(
            "enc.token_emb",
            crate::nn::xavier_init(rng, vocab.len(), d) * (scale * (d as f64).sqrt()),
        );
        let pos_emb = store.add(
            "enc.pos_emb",
            crate::nn::xavier_init(rng, config.max_pieces, d),
        );
        let layers = (0..config.n_layers)
            .map(|i| {
                TransformerLayer::new(store, rng, &format!("enc.layer{i}"), d, config.n_heads, 4 * d)
            })
            .collect();
        Ok(TinyEncoder {
            config: config.clone(),
            pooling,
            token_emb,
            pos_emb,
            layers,
            final_gamma: store.add("enc.final_ln.gamma", Array2::ones((1, d))),
            final_beta: store.add("enc.final_ln.beta", Array2::zeros((1, d))),
        })
    }

    /// Encode on the tape. Returns `(sentence_summary [1,d], words [n,d])`.
    pub fn encode_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut FwdCtx,
        vocab: &Vocab,
        words: &[String],
    ) -> Result<(NodeId, NodeId)> {
        assert!(!words.is_empty(), "cannot encode an empty sentence");
        let mut flat = vec![SUM_ID];
        let mut word_slices: Vec<(usize, usize)> = Vec::with_capacity(words.len());
        for w in words {
            let pieces = vocab.pieces(w);
            let start = flat.len();
            flat.extend(&pieces);
            word_slices.push((start, flat.len()));
        }
        if flat.len() > self.config.max_pieces {
            return Err(Error::SequenceTooLong {
                len: flat.len(),
                max: self.config.max_pieces,
            });
        }

        let emb_table = tape.param(store, self.token_emb);
        let tok = tape.gather_rows(emb_table, &flat);
        let pos_table = tape.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..flat.len()).collect();
        let pos = tape.gather_rows(pos_table, &positions);
        let mut x = tape.add(tok, pos);

        for layer in &self.layers {
            x = layer.forward(tape, store, ctx, x);
        }
        x = layer_norm(tape, store, x, self.final_gamma, self.final_beta);

        let summary = tape.gather_rows(x, &[0]);
        let words_node = match self.pooling {
            Pooling::FirstSubword => {
                let firsts: Vec<usize> = word_slices.iter().map(|&(s, _)| s).collect();
                tape.gather_rows(x, &firsts)
            }
            Pooling::MeanSubword => {
                // constant averaging matrix: row w holds 1/k over word w's pieces
                let mut avg = Array2::zeros((words.len(), flat.len()));
                for (w, &(s, e)) in word_slices.iter().enumerate() {
                    let k = (e - s) as f64;
                    for p in s..e {
                        avg[[w, p]] = 1.0 / k;
                    }
                }
                let avg_node = tape.constant(avg);
                tape.matmul(avg_node, x)
            }
        };
        Ok((summary, words_node))
    }

    /// Evaluation-mode encoding to plain values.
    pub fn encode(
        &self,
        store: &ParamStore,
        vocab: &Vocab,
        words: &[String],
    ) -> Result<EncoderOutput> {
        let mut tape = Tape::new();
        let (summary, word_rows) =
            self.encode_tape(&mut tape, store, &mut FwdCtx::Eval, vocab, words)?;
        Ok(EncoderOutput {
            word_embeddings: tape.value(word_rows).clone(),
            sentence_embedding: tape.value(summary).clone(),
        })
    }
}

/// Resolve an [`EncoderSpec`] into a live encoder.
///
/// Pretrained ids cannot be resolved in this build (no checkpoints are
/// bundled) and fail with [`Error::UnknownBackbone`].
pub fn build_encoder(
    spec: &EncoderSpec,
    store: &mut ParamStore,
    vocab: &Vocab,
    seed: u64,
) -> Result<TinyEncoder> {
    match &spec.backbone {
        Backbone::Pretrained { backbone_id } => {
            Err(Error::UnknownBackbone(backbone_id.clone()))
        }
        Backbone::Tiny(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            TinyEncoder::build(store, &mut rng, vocab, cfg, spec.pooling)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word_vec(text: &str) -> Vec<String> {
        text.split_whitespace().map(String::from).collect()
    }

    fn fixture_vocab() -> Vocab {
        Vocab::build(
            "the room was fine but staff rude menu had a limited selection ."
                .split_whitespace(),
        )
    }

    fn build_fixture(pooling: Pooling) -> (ParamStore, TinyEncoder, Vocab) {
        let vocab = fixture_vocab();
        let mut store = ParamStore::new();
        let spec = EncoderSpec {
            backbone: Backbone::Tiny(TinyConfig::default()),
            pooling,
        };
        let enc = match &spec.backbone {
            Backbone::Tiny(cfg) => {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                TinyEncoder::build(&mut store, &mut rng, &vocab, cfg, spec.pooling).unwrap()
            }
            _ => unreachable!(),
        };
        (store, enc, vocab)
    }

    #[test]
    fn single_word_sentence_yields_one_finite_row() {
        let (store, enc, vocab) = build_fixture(Pooling::FirstSubword);
        let out = enc.encode(&store, &vocab, &word_vec("fine")).unwrap();
        assert_eq!(out.word_embeddings.dim(), (1, 32));
        assert_eq!(out.sentence_embedding.dim(), (1, 32));
        assert!(out.word_embeddings.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn row_count_equals_word_count_under_subword_fanout() {
        for pooling in [Pooling::FirstSubword, Pooling::MeanSubword] {
            let (store, enc, vocab) = build_fixture(pooling);
            // "splendid" is out of vocabulary and splits into characters
            let words = word_vec("the room was splendid .");
            assert!(vocab.id("splendid").is_none());
            assert!(vocab.pieces("splendid").len() > 1);
            let out = enc.encode(&store, &vocab, &words).unwrap();
            assert_eq!(out.word_embeddings.nrows(), 5, "pooling {pooling:?}");
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (store, enc, vocab) = build_fixture(Pooling::FirstSubword);
        let words = word_vec("the staff was rude .");
        let a = enc.encode(&store, &vocab, &words).unwrap();
        let b = enc.encode(&store, &vocab, &words).unwrap();
        assert_eq!(a.word_embeddings, b.word_embeddings);
        assert_eq!(a.sentence_embedding, b.sentence_embedding);
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let vocab = fixture_vocab();
        let spec = EncoderSpec::tiny(TinyConfig::default());
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        build_encoder(&spec, &mut s1, &vocab, 123).unwrap();
        build_encoder(&spec, &mut s2, &vocab, 123).unwrap();
        for (a, b) in s1.export_values().iter().zip(s2.export_values()) {
            assert_eq!(a.2, b.2, "parameter {} differs across same-seed builds", a.0);
        }
    }

    #[test]
    fn swapping_distant_words_changes_some_row() {
        let (store, enc, vocab) = build_fixture(Pooling::FirstSubword);
        let a = enc
            .encode(&store, &vocab, &word_vec("the room was fine ."))
            .unwrap();
        let b = enc
            .encode(&store, &vocab, &word_vec("the fine was room ."))
            .unwrap();
        let max_diff = (&a.word_embeddings - &b.word_embeddings)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_diff > 1e-6, "encoder must be word-order sensitive");
    }

    #[test]
    fn context_affects_unchanged_positions() {
        let (store, enc, vocab) = build_fixture(Pooling::FirstSubword);
        let a = enc
            .encode(&store, &vocab, &word_vec("the room was fine ."))
            .unwrap();
        let b = enc
            .encode(&store, &vocab, &word_vec("the room was rude ."))
            .unwrap();
        // row 1 ("room") must differ even though the word itself is unchanged
        let diff = (&a.word_embeddings.row(1) - &b.word_embeddings.row(1))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 1e-9, "embeddings must be contextual");
    }

    #[test]
    fn over_long_sentences_error_instead_of_truncating() {
        let vocab = fixture_vocab();
        let mut store = ParamStore::new();
        let cfg = TinyConfig {
            max_pieces: 8,
            ..TinyConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc =
            TinyEncoder::build(&mut store, &mut rng, &vocab, &cfg, Pooling::FirstSubword).unwrap();
        let words = word_vec("the room was fine but the staff was rude .");
        let err = enc.encode(&store, &vocab, &words).unwrap_err();
        match err {
            Error::SequenceTooLong { len, max } => {
                assert!(len > max);
                assert_eq!(max, 8);
            }
            other => panic!("expected SequenceTooLong, got {other:?}"),
        }
    }

    #[test]
    fn pretrained_backbones_are_reported_unknown() {
        let vocab = fixture_vocab();
        let mut store = ParamStore::new();
        let spec = EncoderSpec {
            backbone: Backbone::Pretrained {
                backbone_id: "mlm-base-uncased".into(),
            },
            pooling: Pooling::FirstSubword,
        };
        let err = build_encoder(&spec, &mut store, &vocab, 0).unwrap_err();
        assert!(matches!(err, Error::UnknownBackbone(id) if id == "mlm-base-uncased"));
    }

    #[test]
    fn indivisible_head_width_is_rejected() {
        let vocab = fixture_vocab();
        let mut store = ParamStore::new();
        let cfg = TinyConfig {
            width: 30,
            n_heads: 4,
            ..TinyConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = TinyEncoder::build(&mut store, &mut rng, &vocab, &cfg, Pooling::FirstSubword)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gradient_reaches_token_embeddings() {
        let (mut store, enc, vocab) = build_fixture(Pooling::MeanSubword);
        let mut tape = Tape::new();
        let (summary, words) = enc
            .encode_tape(
                &mut tape,
                &store,
                &mut FwdCtx::Eval,
                &vocab,
                &word_vec("the room was fine ."),
            )
            .unwrap();
        let both = tape.concat_rows(&[summary, words]);
        let sq = tape.pow_const(both, 2.0);
        let loss = tape.sum_all(sq);
        store.zero_grad();
        tape.backward(loss).accumulate_into(&tape, &mut store);
        let g = store.grad(enc.token_emb);
        assert!(g.iter().any(|&v| v != 0.0), "no gradient on token embeddings");
        let gp = store.grad(enc.pos_emb);
        assert!(gp.iter().any(|&v| v != 0.0), "no gradient on positions");
    }

    #[test]
    fn vocab_round_trip_and_specials() {
        let vocab = fixture_vocab();
        assert_eq!(vocab.id(SUM_TOKEN), Some(SUM_ID));
        assert_eq!(vocab.id(UNK_TOKEN), Some(UNK_ID));
        assert_eq!(vocab.pieces("room"), vec![vocab.id("room").unwrap()]);

        let json = serde_json::to_string(&vocab).unwrap();
        let mut back: Vocab = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, vocab);
        assert_eq!(back.id("room"), vocab.id("room"));
    }

    #[test]
    fn oov_rate_counts_fallback_words() {
        let vocab = fixture_vocab();
        let rate = vocab.oov_rate("the room was splendid today".split_whitespace());
        assert!((rate - 0.4).abs() < 1e-12);
    }
}
