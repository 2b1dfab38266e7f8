//! Layered run configuration: built-in defaults, then a flat key-value
//! config file, then `--set key=value` flags, each layer overriding the one
//! below. Unknown keys fail fast so typos cannot silently fall back to
//! defaults.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use aste_core::encoder::Backbone;
use aste_core::model::PipelineConfig;
use aste_core::pretrain::PhasePlan;
use aste_core::train::TrainConfig;

/// Everything a run can be configured with, resolved to concrete values.
#[derive(Debug, Clone, Serialize, Default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub phases: PhasePlan,
}

impl Settings {
    /// Apply a config file: one `key = value` per line, `#` comments and
    /// blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                );
            };
            self.apply(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Apply one `--set key=value` pair.
    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let Some((key, value)) = pair.split_once('=') else {
            bail!("--set expects key=value, got `{pair}`");
        };
        self.apply(key.trim(), value.trim())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
        }
        match key {
            "encoder.width" => self.tiny_mut(key)?.width = num(key, value)?,
            "encoder.layers" => self.tiny_mut(key)?.n_layers = num(key, value)?,
            "encoder.heads" => self.tiny_mut(key)?.n_heads = num(key, value)?,
            "span.max_len" => self.pipeline.span.max_span_length = num(key, value)?,
            "span.dice_alpha" => self.pipeline.span.dice_alpha = num(key, value)?,
            "span.dice_gamma" => self.pipeline.span.dice_gamma = num(key, value)?,
            "span.pruning" => self.pipeline.span.pruning_enabled = num(key, value)?,
            "pair.tau_train" => self.pipeline.pair.tau_train = num(key, value)?,
            "pair.tau_test" => self.pipeline.pair.tau_test = num(key, value)?,
            "pair.hard_negatives" => self.pipeline.pair.n_hard_negatives = num(key, value)?,
            "pair.lambda" => self.pipeline.pair.lambda_const = num(key, value)?,
            "pair.max_train_pairs" => self.pipeline.pair.max_train_pairs = num(key, value)?,
            "triplet.heads" => self.pipeline.triplet.n_heads = num(key, value)?,
            "triplet.layers" => self.pipeline.triplet.n_layers = num(key, value)?,
            "triplet.focal_gamma" => self.pipeline.triplet.focal_gamma = num(key, value)?,
            "triplet.pair_transformer" => {
                self.pipeline.triplet.use_pair_transformer = num(key, value)?
            }
            "train.min_epochs" => self.train.min_epochs = num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = num(key, value)?,
            "train.patience" => self.train.patience = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.grad_clip" => self.train.grad_clip_norm = num(key, value)?,
            "train.dropout" => self.train.dropout = num(key, value)?,
            "phases.pseudo" => self.phases.pseudo_epochs = num(key, value)?,
            "phases.mixed" => self.phases.mixed_epochs = num(key, value)?,
            "phases.gold" => self.phases.gold_epochs = num(key, value)?,
            _ => bail!("unknown configuration key `{key}` (run with --help for the key list)"),
        }
        Ok(())
    }

    fn tiny_mut(&mut self, key: &str) -> Result<&mut aste_core::encoder::TinyConfig> {
        match &mut self.pipeline.encoder.backbone {
            Backbone::Tiny(t) => Ok(t),
            Backbone::Pretrained { .. } => {
                bail!("`{key}` only applies to the built-in tiny backbone")
            }
        }
    }
}

/// Resolve the three layers in precedence order.
pub fn resolve(config_file: Option<&Path>, sets: &[String]) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(path) = config_file {
        settings.apply_file(path)?;
    }
    for pair in sets {
        settings.apply_pair(pair)?;
    }
    Ok(settings)
}

/// Key list appended to `--help` output.
pub fn key_help() -> String {
    let mut s = String::from("Config keys (config-file lines or --set key=value):\n");
    for k in [
        "encoder.width", "encoder.layers", "encoder.heads",
        "span.max_len", "span.dice_alpha", "span.dice_gamma", "span.pruning",
        "pair.tau_train", "pair.tau_test", "pair.hard_negatives", "pair.lambda",
        "pair.max_train_pairs",
        "triplet.heads", "triplet.layers", "triplet.focal_gamma", "triplet.pair_transformer",
        "train.min_epochs", "train.max_epochs", "train.patience", "train.batch_size",
        "train.learning_rate", "train.grad_clip", "train.dropout",
        "phases.pseudo", "phases.mixed", "phases.gold",
    ] {
        let _ = writeln!(s, "  {k}");
    }
    s
}
