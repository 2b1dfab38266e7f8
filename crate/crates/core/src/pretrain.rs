//! Pseudo-label pretraining: a trained teacher extracts triples from a
//! sentiment-classification corpus, polarities are overwritten with the
//! corpus's sentence labels, and a student trains in three phases —
//! pseudo-only, mixed, then gold with early stopping.

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldTriplet, ScExample, Sentence};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::model::{Model, PipelineConfig};
use crate::train::{Fitter, TrainConfig, TrainOutcome};

/// A teacher vocabulary missing more than this fraction of corpus words is
/// treated as a language/domain mismatch rather than labeled garbage.
pub const OOV_MISMATCH_THRESHOLD: f64 = 0.5;

/// Epoch budget per phase. `gold_epochs` is the phase-three maximum; early
/// stopping applies inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub pseudo_epochs: usize,
    pub mixed_epochs: usize,
    pub gold_epochs: usize,
}

impl Default for PhasePlan {
    fn default() -> PhasePlan {
        PhasePlan {
            pseudo_epochs: 20,
            mixed_epochs: 20,
            gold_epochs: 130,
        }
    }
}

impl PhasePlan {
    pub fn validate(&self) -> Result<()> {
        if self.pseudo_epochs + self.mixed_epochs + self.gold_epochs == 0 {
            return Err(Error::Config(
                "staged training needs at least one non-empty phase".into(),
            ));
        }
        Ok(())
    }
}

/// Where a pseudo-labeled corpus came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoProvenance {
    pub teacher_archive_id: String,
    pub source_corpus: String,
    pub n_input: usize,
    pub n_labeled: usize,
}

/// Teacher-extracted training sentences plus their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoCorpus {
    pub sentences: Vec<Sentence>,
    pub provenance: PseudoProvenance,
}

/// Run the teacher over a sentiment-classification corpus. Every extracted
/// triple keeps its spans but takes the sentence's gold sentiment as its
/// polarity; sentences where the teacher extracts nothing are dropped.
pub fn pseudo_label(
    teacher: &Model,
    teacher_archive_id: &str,
    examples: &[ScExample],
    source_corpus: &str,
) -> Result<PseudoCorpus> {
    let oov = teacher.vocab.oov_rate(
        examples
            .iter()
            .flat_map(|e| e.words.iter().map(|w| w.as_str())),
    );
    if oov > OOV_MISMATCH_THRESHOLD {
        return Err(Error::CorpusMismatch(format!(
            "teacher vocabulary misses {:.0}% of corpus words; the corpus \
             likely comes from a different language or domain",
            100.0 * oov
        )));
    }

    let tau = teacher.config.pair.tau_test;
    let mut sentences = Vec::new();
    for (i, example) in examples.iter().enumerate() {
        let probe = Sentence {
            id: format!("pseudo-{i}"),
            words: example.words.clone(),
            triplets: Vec::new(),
        };
        let preds = predict(teacher, &probe, tau)?;
        if preds.is_empty() {
            continue;
        }
        let triplets: Vec<GoldTriplet> = preds
            .iter()
            .map(|p| GoldTriplet {
                aspect: p.aspect_span,
                opinion: p.opinion_span,
                polarity: example.sentiment,
            })
            .collect();
        sentences.push(Sentence {
            id: probe.id,
            words: probe.words,
            triplets,
        });
    }
    let provenance = PseudoProvenance {
        teacher_archive_id: teacher_archive_id.to_string(),
        source_corpus: source_corpus.to_string(),
        n_input: examples.len(),
        n_labeled: sentences.len(),
    };
    Ok(PseudoCorpus {
        sentences,
        provenance,
    })
}

/// Three-phase training: pseudo-labeled data only, pseudo plus gold, then
/// gold alone with early stopping. A plan of (0, 0, E) reduces exactly to
/// plain training with `max_epochs` E. The vocabulary always comes from the
/// gold training split; pseudo-corpus words outside it fall back to
/// character pieces.
pub fn staged_train(
    config: &PipelineConfig,
    tcfg: &TrainConfig,
    plan: &PhasePlan,
    pseudo: &[Sentence],
    gold_train: &[Sentence],
    val_set: &[Sentence],
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    plan.validate()?;
    if plan.pseudo_epochs + plan.mixed_epochs > 0 && pseudo.is_empty() {
        return Err(Error::EmptySplit("pseudo-labeled".into()));
    }

    let vocab = Vocab::build(
        gold_train
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.as_str())),
    );
    let mut model = Model::new(config.clone(), vocab, tcfg.seed)?;
    let mut fitter = Fitter::new(tcfg);

    if plan.pseudo_epochs > 0 {
        fitter.run_phase(
            &mut model,
            pseudo,
            val_set,
            tcfg,
            "pseudo",
            plan.pseudo_epochs,
            false,
        )?;
    }
    if plan.mixed_epochs > 0 {
        let mixed: Vec<Sentence> = pseudo.iter().chain(gold_train).cloned().collect();
        fitter.run_phase(
            &mut model,
            &mixed,
            val_set,
            tcfg,
            "mixed",
            plan.mixed_epochs,
            false,
        )?;
    }
    let (best_epoch, best_val) = if plan.gold_epochs > 0 {
        fitter.run_phase(
            &mut model,
            gold_train,
            val_set,
            tcfg,
            "gold",
            plan.gold_epochs,
            true,
        )?
    } else {
        let val = crate::eval::evaluate_model(&model, val_set, model.config.pair.tau_test)?;
        (fitter.history.len(), val)
    };
    Ok(TrainOutcome {
        model,
        history: fitter.history,
        best_epoch,
        best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;
    use crate::synthetic::{generate_sc_corpus, make_synthetic_fixture};
    use crate::train::train;

    fn loose_teacher() -> Model {
        // an untrained model with a very permissive test threshold, so it
        // emits predictions on most sentences
        let corpus = make_synthetic_fixture(2, 12);
        let vocab = Vocab::build(
            corpus
                .iter()
                .flat_map(|s| s.words.iter().map(|w| w.as_str())),
        );
        let mut config = PipelineConfig::default();
        config.pair.tau_train = -5.0;
        config.pair.tau_test = -5.0;
        Model::new(config, vocab, 4).unwrap()
    }

    #[test]
    fn pseudo_labels_carry_the_corpus_sentiment_and_empties_drop() {
        let teacher = loose_teacher();
        let examples = generate_sc_corpus(9, 25);
        let out = pseudo_label(&teacher, "teacher-id", &examples, "sc-fixture").unwrap();
        assert!(!out.sentences.is_empty(), "loose threshold must label some");
        assert_eq!(out.provenance.n_input, 25);
        assert_eq!(out.provenance.n_labeled, out.sentences.len());
        assert_eq!(out.provenance.teacher_archive_id, "teacher-id");
        let by_id: std::collections::BTreeMap<&str, &ScExample> = examples
            .iter()
            .enumerate()
            .map(|(i, e)| (Box::leak(format!("pseudo-{i}").into_boxed_str()) as &str, e))
            .collect();
        for s in &out.sentences {
            let example = by_id[s.id.as_str()];
            assert!(!s.triplets.is_empty(), "empty extractions must be dropped");
            for t in &s.triplets {
                assert_eq!(
                    t.polarity, example.sentiment,
                    "every pseudo triple takes the sentence sentiment"
                );
            }
            for t in &s.triplets {
                assert!(t.aspect.end < s.n_words() && t.opinion.end < s.n_words());
            }
        }
    }

    #[test]
    fn foreign_corpus_is_rejected_by_the_oov_heuristic() {
        let teacher = loose_teacher();
        let examples: Vec<ScExample> = (0..10)
            .map(|i| ScExample {
                words: vec![
                    format!("zzq{i}"),
                    "xxjvw".to_string(),
                    "qqpln".to_string(),
                ],
                sentiment: Polarity::Positive,
            })
            .collect();
        match pseudo_label(&teacher, "t", &examples, "foreign") {
            Err(Error::CorpusMismatch(msg)) => {
                assert!(msg.contains("language") || msg.contains("domain"));
            }
            other => panic!("expected corpus mismatch, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn empty_phase_plans_are_rejected() {
        let plan = PhasePlan {
            pseudo_epochs: 0,
            mixed_epochs: 0,
            gold_epochs: 0,
        };
        assert!(matches!(plan.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_pseudo_phases_reduce_to_plain_training() {
        let corpus = make_synthetic_fixture(31, 10);
        let (train_set, val_set) = corpus.split_at(8);
        let pipeline = PipelineConfig::default();
        let tcfg = TrainConfig {
            min_epochs: 2,
            max_epochs: 3,
            patience: 2,
            seed: 17,
            ..TrainConfig::default()
        };
        let plain = train(&pipeline, &tcfg, train_set, val_set).unwrap();
        let plan = PhasePlan {
            pseudo_epochs: 0,
            mixed_epochs: 0,
            gold_epochs: tcfg.max_epochs,
        };
        let staged = staged_train(&pipeline, &tcfg, &plan, &[], train_set, val_set).unwrap();
        assert_eq!(
            plain.to_archive().archive_id,
            staged.to_archive().archive_id,
            "a (0, 0, E) plan must reproduce plain training bit for bit"
        );
        assert_eq!(plain.history, staged.history);
    }

    #[test]
    fn staged_phases_append_to_one_history() {
        let corpus = make_synthetic_fixture(41, 10);
        let (train_set, val_set) = corpus.split_at(8);
        let pseudo = make_synthetic_fixture(43, 6);
        let pipeline = PipelineConfig::default();
        let tcfg = TrainConfig {
            min_epochs: 1,
            max_epochs: 2,
            patience: 1,
            seed: 2,
            ..TrainConfig::default()
        };
        let plan = PhasePlan {
            pseudo_epochs: 2,
            mixed_epochs: 2,
            gold_epochs: 2,
        };
        let out = staged_train(&pipeline, &tcfg, &plan, &pseudo, train_set, val_set).unwrap();
        let phases: Vec<&str> = out.history.iter().map(|r| r.phase.as_str()).collect();
        assert_eq!(
            phases,
            vec!["pseudo", "pseudo", "mixed", "mixed", "gold", "gold"]
        );
        let epochs: Vec<usize> = out.history.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3, 4, 5, 6], "epochs number globally");
    }
}
