//! Mini-batch training: composite loss assembly, Adam with global-norm
//! clipping, per-epoch validation, and early stopping that restores the
//! best-scoring parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{EpochRecord, ModelArchive};
use crate::corpus::Sentence;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, MetricReport};
use crate::model::{Model, PipelineConfig};
use crate::nn::Adam;
use crate::tape::{NodeId, Tape};

/// Optimization schedule and regularization knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Early stopping may not trigger before this many epochs.
    pub min_epochs: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-F1 improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling applied before each step.
    pub grad_clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            min_epochs: 30,
            max_epochs: 130,
            patience: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            grad_clip_norm: 0.8,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Mean loss components of one batch, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub aste: f64,
    pub span_sel: f64,
    pub ao: f64,
    pub crf: f64,
}

impl LossParts {
    fn add_scaled(&mut self, other: &LossParts, w: f64) {
        self.total += w * other.total;
        self.aste += w * other.aste;
        self.span_sel += w * other.span_sel;
        self.ao += w * other.ao;
        self.crf += w * other.crf;
    }
}

/// Build the batch loss on `tape`: each sentence contributes the unweighted
/// sum of its loss parts, and the batch reduces to the mean over sentences.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    rng: &mut ChaCha8Rng,
    dropout: f64,
    batch: &[&Sentence],
) -> Result<(NodeId, LossParts)> {
    assert!(!batch.is_empty());
    let mut sentence_totals = Vec::with_capacity(batch.len());
    let mut parts = LossParts::default();
    let w = 1.0 / batch.len() as f64;
    for sentence in batch {
        let losses = model.forward_train(tape, rng, dropout, sentence)?;
        let nodes: Vec<NodeId> = [losses.aste, Some(losses.span_sel), Some(losses.ao), losses.crf]
            .into_iter()
            .flatten()
            .collect();
        let stacked = tape.concat_rows(&nodes);
        let total = tape.sum_all(stacked);
        sentence_totals.push(total);
        parts.add_scaled(
            &LossParts {
                total: tape.scalar(total),
                aste: losses.aste.map_or(0.0, |n| tape.scalar(n)),
                span_sel: tape.scalar(losses.span_sel),
                ao: tape.scalar(losses.ao),
                crf: losses.crf.map_or(0.0, |n| tape.scalar(n)),
            },
            w,
        );
    }
    let stacked = tape.concat_rows(&sentence_totals);
    let mean = tape.mean_all(stacked);
    Ok((mean, parts))
}

/// A trained model with its full epoch log.
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: MetricReport,
}

impl TrainOutcome {
    pub fn to_archive(&self) -> ModelArchive {
        ModelArchive::from_model(&self.model, self.history.clone())
    }
}

/// Mutable optimization state shared across training phases.
pub struct Fitter {
    pub rng: ChaCha8Rng,
    pub adam: Adam,
    pub history: Vec<EpochRecord>,
}

impl Fitter {
    pub fn new(tcfg: &TrainConfig) -> Fitter {
        Fitter {
            rng: ChaCha8Rng::seed_from_u64(tcfg.seed),
            adam: Adam::new(tcfg.learning_rate),
            history: Vec::new(),
        }
    }

    /// Run one training phase. With `early_stop`, epochs stop `patience`
    /// epochs after the best validation F1 (never before `min_epochs`) and
    /// the best-scoring parameters are restored; otherwise exactly
    /// `max_epochs` run and the final parameters stand.
    #[allow(clippy::too_many_arguments)]
    pub fn run_phase(
        &mut self,
        model: &mut Model,
        train_set: &[Sentence],
        val_set: &[Sentence],
        tcfg: &TrainConfig,
        phase: &str,
        max_epochs: usize,
        early_stop: bool,
    ) -> Result<(usize, MetricReport)> {
        if train_set.is_empty() {
            return Err(Error::EmptySplit("training".into()));
        }
        if val_set.is_empty() {
            return Err(Error::EmptySplit("validation".into()));
        }
        let tau_val = model.config.pair.tau_test;
        let mut best_f1 = f64::NEG_INFINITY;
        let mut best_epoch = 0usize;
        let mut best_val = MetricReport::from_counts(0, 0, 0);
        let mut best_params: Option<Vec<ndarray::Array2<f64>>> = None;
        let epoch_base = self.history.len();

        let mut indices: Vec<usize> = (0..train_set.len()).collect();
        for epoch in 1..=max_epochs {
            indices.shuffle(&mut self.rng);
            let mut epoch_parts = LossParts::default();
            let mut grad_norm_max = 0.0f64;
            let n_batches = indices.len().div_ceil(tcfg.batch_size);
            for (b, chunk) in indices.chunks(tcfg.batch_size).enumerate() {
                let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train_set[i]).collect();
                let mut tape = Tape::new();
                let (loss, parts) =
                    batch_loss(model, &mut tape, &mut self.rng, tcfg.dropout, &batch)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {value} in phase {phase}, epoch {epoch}, batch {b}"
                    )));
                }
                epoch_parts.add_scaled(&parts, 1.0 / n_batches as f64);
                model.store.zero_grad();
                tape.backward(loss).accumulate_into(&tape, &mut model.store);
                let pre_norm = model.store.clip_grad_norm(tcfg.grad_clip_norm);
                if !pre_norm.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite gradient norm in phase {phase}, epoch {epoch}, batch {b}"
                    )));
                }
                grad_norm_max = grad_norm_max.max(pre_norm);
                self.adam.step(&mut model.store);
            }

            let val = evaluate_model(model, val_set, tau_val)?;
            let global_epoch = epoch_base + epoch;
            log::info!(
                "epoch {global_epoch} [{phase}] loss {:.4} (aste {:.4} span {:.4} ao {:.4} crf {:.4}) val F1 {:.4}",
                epoch_parts.total, epoch_parts.aste, epoch_parts.span_sel, epoch_parts.ao,
                epoch_parts.crf, val.f1
            );
            self.history.push(EpochRecord {
                epoch: global_epoch,
                phase: phase.to_string(),
                train_total: epoch_parts.total,
                train_aste: epoch_parts.aste,
                train_span: epoch_parts.span_sel,
                train_ao: epoch_parts.ao,
                train_crf: epoch_parts.crf,
                grad_norm_max,
                val_precision: val.precision,
                val_recall: val.recall,
                val_f1: val.f1,
            });

            if val.f1 > best_f1 {
                best_f1 = val.f1;
                best_epoch = epoch;
                best_val = val;
                if early_stop {
                    best_params = Some(model.store.snapshot());
                }
            }
            if early_stop && epoch >= tcfg.min_epochs.min(max_epochs) && epoch - best_epoch >= tcfg.patience {
                break;
            }
        }

        if let Some(params) = best_params {
            model.store.restore(&params);
        }
        Ok((epoch_base + best_epoch, best_val))
    }
}

/// Train a fresh model on gold data. The vocabulary comes from the training
/// split; unseen words elsewhere fall back to character pieces.
pub fn train(
    config: &PipelineConfig,
    tcfg: &TrainConfig,
    train_set: &[Sentence],
    val_set: &[Sentence],
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let vocab = Vocab::build(
        train_set
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.as_str())),
    );
    let mut model = Model::new(config.clone(), vocab, tcfg.seed)?;
    let mut fitter = Fitter::new(tcfg);
    let (best_epoch, best_val) = fitter.run_phase(
        &mut model,
        train_set,
        val_set,
        tcfg,
        "gold",
        tcfg.max_epochs,
        true,
    )?;
    Ok(TrainOutcome {
        model,
        history: fitter.history,
        best_epoch,
        best_val,
    })
}
