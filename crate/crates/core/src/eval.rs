//! Prediction and scoring: overlap-filtered triple extraction, micro
//! precision/recall/F1 over exact matches, per-stage diagnostics, and the
//! threshold curve with its knee-based selection rule.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::corpus::{Polarity, Sentence, WordSpan};
use crate::error::Result;
use crate::model::Model;
use crate::triplets::{gold_class_for_pair, TripletClass, TripletPrediction};

/// An extracted triple in comparison form.
pub type Triple = (WordSpan, WordSpan, Polarity);

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Micro-averaged precision/recall/F1 with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_gold: usize,
    pub n_pred: usize,
    pub n_correct: usize,
}

impl MetricReport {
    /// Zero-denominator conventions: no predictions gives precision 0, no
    /// gold gives recall 0, and F1 is 0 whenever P + R is 0.
    pub fn from_counts(n_gold: usize, n_pred: usize, n_correct: usize) -> MetricReport {
        let precision = if n_pred == 0 {
            0.0
        } else {
            n_correct as f64 / n_pred as f64
        };
        let recall = if n_gold == 0 {
            0.0
        } else {
            n_correct as f64 / n_gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricReport {
            precision,
            recall,
            f1,
            n_gold,
            n_pred,
            n_correct,
        }
    }
}

/// Micro P/R/F1 over per-sentence (gold, predicted) triple sets.
pub fn micro_prf(per_sentence: &[(BTreeSet<Triple>, BTreeSet<Triple>)]) -> MetricReport {
    let mut n_gold = 0;
    let mut n_pred = 0;
    let mut n_correct = 0;
    for (gold, pred) in per_sentence {
        n_gold += gold.len();
        n_pred += pred.len();
        n_correct += gold.intersection(pred).count();
    }
    MetricReport::from_counts(n_gold, n_pred, n_correct)
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

/// Keep the highest-probability prediction among same-role overlaps:
/// predictions are taken in descending confidence, and one is dropped when
/// its aspect overlaps a kept aspect or its opinion overlaps a kept opinion.
pub fn overlap_filter(mut preds: Vec<TripletPrediction>) -> Vec<TripletPrediction> {
    preds.sort_by(|a, b| {
        b.max_prob()
            .partial_cmp(&a.max_prob())
            .unwrap()
            .then((a.aspect_span, a.opinion_span).cmp(&(b.aspect_span, b.opinion_span)))
    });
    let mut kept: Vec<TripletPrediction> = Vec::new();
    for p in preds {
        let clashes = kept.iter().any(|k| {
            p.aspect_span.overlaps(&k.aspect_span) || p.opinion_span.overlaps(&k.opinion_span)
        });
        if !clashes {
            kept.push(p);
        }
    }
    kept
}

/// Extract triples for one sentence: evaluation forward, drop pairs
/// classified invalid, then resolve same-role overlaps.
pub fn predict(model: &Model, sentence: &Sentence, tau: f64) -> Result<Vec<TripletPrediction>> {
    let trace = model.forward_eval(sentence, tau, false)?;
    Ok(overlap_filter(trace.raw_predictions()))
}

fn prediction_triples(preds: &[TripletPrediction]) -> BTreeSet<Triple> {
    preds
        .iter()
        .filter_map(|p| {
            p.predicted_class
                .polarity()
                .map(|pol| (p.aspect_span, p.opinion_span, pol))
        })
        .collect()
}

fn gold_triples(sentence: &Sentence) -> BTreeSet<Triple> {
    sentence
        .triplets
        .iter()
        .map(|t| (t.aspect, t.opinion, t.polarity))
        .collect()
}

/// Exact-match triple P/R/F1 of the full pipeline over a dataset.
pub fn evaluate_model(model: &Model, dataset: &[Sentence], tau: f64) -> Result<MetricReport> {
    let mut per_sentence = Vec::with_capacity(dataset.len());
    for s in dataset {
        let preds = predict(model, s, tau)?;
        per_sentence.push((gold_triples(s), prediction_triples(&preds)));
    }
    Ok(micro_prf(&per_sentence))
}

/// One prediction as written to the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sentence_id: String,
    pub aspect: Vec<usize>,
    pub opinion: Vec<usize>,
    pub polarity: String,
    pub probability: f64,
}

pub fn prediction_records(sentence: &Sentence, preds: &[TripletPrediction]) -> Vec<PredictionRecord> {
    preds
        .iter()
        .filter_map(|p| {
            p.predicted_class.polarity().map(|pol| PredictionRecord {
                sentence_id: sentence.id.clone(),
                aspect: p.aspect_span.indices(),
                opinion: p.opinion_span.indices(),
                polarity: pol.tag().to_string(),
                probability: p.max_prob(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Stage-by-stage metrics isolating where the pipeline loses triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Span validity at 0.5 against gold phrases (aspects and opinions).
    pub span_binary: MetricReport,
    /// Thresholded pair matches against gold pairs.
    pub pair_layer: MetricReport,
    /// Four-way classification accuracy over gated pairs (P = R = F1).
    pub final_4class: MetricReport,
    /// Valid-versus-invalid agreement over gated pairs.
    pub final_binary: MetricReport,
    /// End-to-end exact-match triples.
    pub overall: MetricReport,
}

pub fn diagnostics(model: &Model, dataset: &[Sentence], tau: f64) -> Result<DiagnosticsReport> {
    let mut span_counts = (0usize, 0usize, 0usize);
    let mut pair_counts = (0usize, 0usize, 0usize);
    let mut n_pairs = 0usize;
    let mut n_class_agree = 0usize;
    let mut bin_counts = (0usize, 0usize, 0usize);
    let mut per_sentence = Vec::with_capacity(dataset.len());

    for s in dataset {
        let trace = model.forward_eval(s, tau, false)?;

        let gold_spans: BTreeSet<WordSpan> = s
            .gold_aspects()
            .into_iter()
            .chain(s.gold_opinions())
            .collect();
        let pred_spans: BTreeSet<WordSpan> = trace
            .candidates
            .iter()
            .zip(&trace.validity)
            .filter(|(_, &v)| v >= 0.5)
            .map(|(c, _)| c.span)
            .collect();
        span_counts.0 += gold_spans.len();
        span_counts.1 += pred_spans.len();
        span_counts.2 += gold_spans.intersection(&pred_spans).count();

        let gold_pairs: BTreeSet<(WordSpan, WordSpan)> = s.gold_pairs().into_iter().collect();
        let matched_pairs: BTreeSet<(WordSpan, WordSpan)> = trace
            .matched
            .iter()
            .map(|m| (m.aspect_span, m.opinion_span))
            .collect();
        pair_counts.0 += gold_pairs.len();
        pair_counts.1 += matched_pairs.len();
        pair_counts.2 += gold_pairs.intersection(&matched_pairs).count();

        for p in &trace.classified {
            let gold_class = gold_class_for_pair(s, p.aspect_span, p.opinion_span);
            n_pairs += 1;
            if gold_class == p.predicted_class {
                n_class_agree += 1;
            }
            let gold_valid = gold_class != TripletClass::Invalid;
            let pred_valid = p.predicted_class != TripletClass::Invalid;
            bin_counts.0 += gold_valid as usize;
            bin_counts.1 += pred_valid as usize;
            bin_counts.2 += (gold_valid && pred_valid) as usize;
        }

        let filtered = overlap_filter(trace.raw_predictions());
        per_sentence.push((gold_triples(s), prediction_triples(&filtered)));
    }

    Ok(DiagnosticsReport {
        span_binary: MetricReport::from_counts(span_counts.0, span_counts.1, span_counts.2),
        pair_layer: MetricReport::from_counts(pair_counts.0, pair_counts.1, pair_counts.2),
        final_4class: MetricReport::from_counts(n_pairs, n_pairs, n_class_agree),
        final_binary: MetricReport::from_counts(bin_counts.0, bin_counts.1, bin_counts.2),
        overall: micro_prf(&per_sentence),
    })
}

// ---------------------------------------------------------------------------
// threshold curve
// ---------------------------------------------------------------------------

/// Pair-level precision and recall at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn tau_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Sweep pair-level precision/recall over a threshold grid.
///
/// Candidates are teacher-forced to include gold aspect spans so every
/// representable gold pair is reachable; at a threshold below every
/// similarity, recall is exactly 1. With no predictions at a threshold,
/// precision is reported as 1 (the curve's top end claims nothing falsely).
pub fn tau_curve(model: &Model, dataset: &[Sentence], grid: &[f64]) -> Result<Vec<TauSample>> {
    let mut sims: Vec<(f64, bool)> = Vec::new();
    let mut n_gold = 0usize;
    for s in dataset {
        let trace = model.project_spans_eval(s, true)?;
        let p = &trace.projected;
        let gold: BTreeSet<(WordSpan, WordSpan)> = s.gold_pairs().into_iter().collect();
        n_gold += gold.len();
        let matrix = p.similarities();
        for r in 0..p.aspect_rows.len() {
            for c in 0..p.opinion_rows.len() {
                if p.aspect_rows[r] == p.opinion_rows[c] {
                    continue;
                }
                let key = (p.spans[p.aspect_rows[r]], p.spans[p.opinion_rows[c]]);
                sims.push((matrix[[r, c]], gold.contains(&key)));
            }
        }
    }

    let mut samples: Vec<TauSample> = grid
        .iter()
        .map(|&tau| {
            let n_pred = sims.iter().filter(|&&(v, _)| v > tau).count();
            let n_correct = sims.iter().filter(|&&(v, g)| g && v > tau).count();
            let precision = if n_pred == 0 {
                1.0
            } else {
                n_correct as f64 / n_pred as f64
            };
            let recall = if n_gold == 0 {
                1.0
            } else {
                n_correct as f64 / n_gold as f64
            };
            TauSample {
                tau,
                precision,
                recall,
            }
        })
        .collect();
    samples.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    Ok(samples)
}

/// Pick an operating threshold from a curve: start where precision and
/// recall are closest (highest such threshold on ties), then lower the
/// threshold step by step while each step costs less than `knee_drop` of
/// precision; stop just above the first abrupt drop.
pub fn select_tau(samples: &[TauSample], knee_drop: f64) -> f64 {
    assert!(!samples.is_empty());
    let mut best = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let gap = (s.precision - s.recall).abs();
        let best_gap = (samples[best].precision - samples[best].recall).abs();
        if gap < best_gap - 1e-12 || (gap <= best_gap + 1e-12 && s.tau > samples[best].tau) {
            best = i;
        }
    }
    let mut k = best;
    while k > 0 {
        let drop = samples[k].precision - samples[k - 1].precision;
        if drop >= knee_drop {
            return samples[k].tau;
        }
        k -= 1;
    }
    samples[0].tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_aste_str;
    use crate::encoder::Vocab;
    use crate::model::PipelineConfig;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn span(a: usize, b: usize) -> WordSpan {
        WordSpan::new(a, b)
    }

    fn pred(a: WordSpan, o: WordSpan, class: TripletClass, prob: f64) -> TripletPrediction {
        let mut class_probs = [(1.0 - prob) / 3.0; 4];
        class_probs[class.index()] = prob;
        TripletPrediction {
            aspect_span: a,
            opinion_span: o,
            class_probs,
            predicted_class: class,
        }
    }

    #[test]
    fn from_counts_matches_hand_value() {
        // the reference pair: P = 67.58, R = 62.48 gives F1 = 64.93
        let p: f64 = 0.6758;
        let r: f64 = 0.6248;
        let f1 = 2.0 * p * r / (p + r);
        assert!((f1 - 0.6493).abs() < 5e-5, "f1 {f1}");
        // degenerate denominators
        let zero = MetricReport::from_counts(0, 0, 0);
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_prf_agrees_with_direct_counting_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n_sent = rng.gen_range(1..6);
            let mut per_sentence = Vec::new();
            let (mut tg, mut tp, mut tc) = (0usize, 0usize, 0usize);
            for _ in 0..n_sent {
                let mut gold = BTreeSet::new();
                let mut pred = BTreeSet::new();
                for _ in 0..rng.gen_range(0..5) {
                    let t = (
                        span(rng.gen_range(0..4), rng.gen_range(4..6)),
                        span(rng.gen_range(6..9), rng.gen_range(9..11)),
                        [Polarity::Positive, Polarity::Negative, Polarity::Neutral]
                            [rng.gen_range(0..3)],
                    );
                    if rng.gen_bool(0.6) {
                        gold.insert(t);
                    }
                    if rng.gen_bool(0.6) {
                        pred.insert(t);
                    }
                }
                tg += gold.len();
                tp += pred.len();
                tc += gold.intersection(&pred).count();
                per_sentence.push((gold, pred));
            }
            let report = micro_prf(&per_sentence);
            let expect = MetricReport::from_counts(tg, tp, tc);
            assert_eq!(report, expect);
        }
    }

    #[test]
    fn overlap_filter_keeps_highest_probability_and_is_idempotent() {
        let preds = vec![
            pred(span(0, 1), span(3, 3), TripletClass::Positive, 0.7),
            // same aspect region, lower confidence: dropped
            pred(span(1, 2), span(5, 5), TripletClass::Negative, 0.6),
            // disjoint roles: kept
            pred(span(4, 4), span(6, 6), TripletClass::Neutral, 0.5),
            // opinion overlaps the kept neutral one: dropped
            pred(span(8, 8), span(6, 7), TripletClass::Positive, 0.4),
        ];
        let kept = overlap_filter(preds);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].aspect_span, span(0, 1));
        assert_eq!(kept[1].aspect_span, span(4, 4));
        let again = overlap_filter(kept.clone());
        assert_eq!(again, kept);
    }

    #[test]
    fn overlap_filter_allows_shared_spans_across_roles() {
        // one aspect to two disjoint opinions survives; aspect reuse is not
        // same-role overlap between a kept aspect and a new opinion
        let preds = vec![
            pred(span(0, 0), span(2, 2), TripletClass::Positive, 0.9),
            pred(span(0, 0), span(2, 2), TripletClass::Negative, 0.8),
        ];
        let kept = overlap_filter(preds);
        assert_eq!(kept.len(), 1, "identical spans clash in both roles");
        assert_eq!(kept[0].predicted_class, TripletClass::Positive);
    }

    fn tiny_model() -> (Model, Vec<Sentence>) {
        let sentences = parse_aste_str(
            "The room was fine but the staff was rude .####\
             [([1], [3], 'POS'), ([6], [8], 'NEG')]",
        )
        .unwrap();
        let vocab = Vocab::build(
            sentences
                .iter()
                .flat_map(|s| s.words.iter().map(|w| w.as_str())),
        );
        let model = Model::new(PipelineConfig::default(), vocab, 5).unwrap();
        (model, sentences)
    }

    #[test]
    fn tau_curve_recall_is_monotone_and_one_at_bottom() {
        let (model, sentences) = tiny_model();
        let grid = tau_grid(-30.0, 30.0, 50);
        let curve = tau_curve(&model, &sentences, &grid).unwrap();
        assert_eq!(curve.len(), 50);
        assert!((curve[0].recall - 1.0).abs() < 1e-12, "recall at the floor");
        for w in curve.windows(2) {
            assert!(w[1].recall <= w[0].recall + 1e-12, "recall must not rise");
        }
        // far above every similarity nothing is predicted
        let top = curve.last().unwrap();
        assert_eq!(top.precision, 1.0);
        assert_eq!(top.recall, 0.0);
    }

    #[test]
    fn select_tau_finds_the_knee_one_step_above_an_abrupt_drop() {
        // intersection at tau = 0.5; precision collapses by 0.2 one step
        // below it
        let samples: Vec<TauSample> = [
            (0.2, 0.30, 0.95),
            (0.3, 0.55, 0.90),
            (0.4, 0.75, 0.85),
            (0.5, 0.80, 0.80),
            (0.6, 0.85, 0.60),
            (0.7, 0.90, 0.40),
        ]
        .iter()
        .map(|&(tau, precision, recall)| TauSample {
            tau,
            precision,
            recall,
        })
        .collect();
        assert_eq!(select_tau(&samples, 0.02), 0.5);

        // gentle slope everywhere: full scan reaches the grid minimum
        let gentle: Vec<TauSample> = (0..10)
            .map(|i| TauSample {
                tau: i as f64 / 10.0,
                precision: 0.5 + 0.01 * i as f64,
                recall: 0.5 + 0.01 * i as f64,
            })
            .collect();
        assert_eq!(select_tau(&gentle, 0.02), 0.0);

        // constant equal curves tie everywhere: intersection resolves to the
        // top, the scan finds no drop, and the grid minimum comes back
        let flat: Vec<TauSample> = (0..5)
            .map(|i| TauSample {
                tau: i as f64,
                precision: 0.5,
                recall: 0.5,
            })
            .collect();
        assert_eq!(select_tau(&flat, 0.02), 0.0);
    }

    #[test]
    fn predict_is_deterministic_and_diagnostics_are_consistent() {
        let (model, sentences) = tiny_model();
        let a = predict(&model, &sentences[0], 0.0).unwrap();
        let b = predict(&model, &sentences[0], 0.0).unwrap();
        assert_eq!(a, b);
        let d = diagnostics(&model, &sentences, 0.0).unwrap();
        assert_eq!(d.final_4class.n_gold, d.final_4class.n_pred);
        assert!(d.final_4class.precision <= 1.0);
        assert_eq!(d.final_4class.precision, d.final_4class.recall);
        assert_eq!(d.final_4class.precision, d.final_4class.f1);
        // overall uses the filtered predictions
        let report = evaluate_model(&model, &sentences, 0.0).unwrap();
        assert_eq!(d.overall, report);
    }
}
