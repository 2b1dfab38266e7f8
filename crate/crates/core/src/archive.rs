//! Model persistence: a single JSON archive holding configuration,
//! vocabulary, parameters, and training history, with a content hash as its
//! identity and explicit version / backbone compatibility checks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, PipelineConfig};

/// Current on-disk format. Bump on any incompatible layout change.
pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

/// Summary metrics recorded with each training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training phase label: "gold", "pseudo", or "mixed".
    pub phase: String,
    pub train_total: f64,
    pub train_aste: f64,
    pub train_span: f64,
    pub train_ao: f64,
    pub train_crf: f64,
    /// Largest pre-clip gradient norm seen in the epoch.
    pub grad_norm_max: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

/// Serialized model plus provenance of how it was trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format_version: u32,
    /// Hex digest over parameters + configuration; stable across
    /// save/load cycles of the same model.
    pub archive_id: String,
    /// Label of the encoder backbone this model was trained with.
    pub backbone: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub vocab_entries: Vec<String>,
    /// (name, shape, row-major values) per parameter, in creation order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub history: Vec<EpochRecord>,
}

impl ModelArchive {
    /// Snapshot a model (with its training history) into archive form.
    pub fn from_model(model: &Model, history: Vec<EpochRecord>) -> ModelArchive {
        let params = model.store.export_values();
        let config = model.config.clone();
        let backbone = config.encoder.backbone_label();
        let archive_id = compute_archive_id(&backbone, &config, &params);
        ModelArchive {
            format_version: ARCHIVE_FORMAT_VERSION,
            archive_id,
            backbone,
            seed: model.init_seed,
            config,
            vocab_entries: model.vocab.entries().to_vec(),
            params,
            history,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelArchive> {
        let json = std::fs::read_to_string(path)?;
        let archive: ModelArchive = serde_json::from_str(&json)?;
        if archive.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::ArchiveVersion {
                found: archive.format_version,
                expected: ARCHIVE_FORMAT_VERSION,
            });
        }
        Ok(archive)
    }

    /// Rebuild the model. When `expected_backbone` is given, a label
    /// mismatch is an error rather than a silent reinterpretation.
    pub fn instantiate(&self, expected_backbone: Option<&str>) -> Result<Model> {
        if let Some(expected) = expected_backbone {
            if expected != self.backbone {
                return Err(Error::BackboneMismatch {
                    archived: self.backbone.clone(),
                    requested: expected.to_string(),
                });
            }
        }
        let vocab = Vocab::from_entries(self.vocab_entries.clone());
        let mut model = Model::new(self.config.clone(), vocab, self.seed)?;
        model.store.import_values(&self.params)?;
        Ok(model)
    }

    pub fn final_val_f1(&self) -> Option<f64> {
        self.history.last().map(|r| r.val_f1)
    }
}

/// Content hash of parameters and configuration. Bit-exact parameters give
/// a bit-exact id.
fn compute_archive_id(
    backbone: &str,
    config: &PipelineConfig,
    params: &[(String, Vec<usize>, Vec<f64>)],
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backbone.as_bytes());
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    for (name, shape, values) in params {
        hasher.update(name.as_bytes());
        for &s in shape {
            hasher.update((s as u64).to_le_bytes());
        }
        for &v in values {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_aste_str;
    use crate::model::Model;

    fn small_model() -> Model {
        let sentences =
            parse_aste_str("The room was fine .####[([1], [3], 'POS')]").unwrap();
        let vocab = Vocab::build(
            sentences
                .iter()
                .flat_map(|s| s.words.iter().map(|w| w.as_str())),
        );
        Model::new(PipelineConfig::default(), vocab, 11).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_parameter_bit() {
        let model = small_model();
        let archive = ModelArchive::from_model(&model, Vec::new());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.archive");
        archive.save(&path).unwrap();
        let loaded = ModelArchive::load(&path).unwrap();
        assert_eq!(loaded.archive_id, archive.archive_id);
        let rebuilt = loaded.instantiate(None).unwrap();
        for (a, b) in model
            .store
            .export_values()
            .iter()
            .zip(rebuilt.store.export_values())
        {
            assert_eq!(a.0, b.0);
            assert_eq!(a.2, b.2, "parameter {} changed across save/load", a.0);
        }
        // and the rebuilt model predicts identically
        let s = &parse_aste_str("The room was fine .####[([1], [3], 'POS')]").unwrap()[0];
        let t1 = model.forward_eval(s, -5.0, false).unwrap();
        let t2 = rebuilt.forward_eval(s, -5.0, false).unwrap();
        assert_eq!(t1.classified, t2.classified);
    }

    #[test]
    fn archive_id_tracks_parameter_content() {
        let model = small_model();
        let id1 = ModelArchive::from_model(&model, Vec::new()).archive_id;
        let mut perturbed = small_model();
        let first = perturbed.store.ids().next().unwrap();
        perturbed.store.value_mut(first)[[0, 0]] += 1e-9;
        let id2 = ModelArchive::from_model(&perturbed, Vec::new()).archive_id;
        assert_ne!(id1, id2, "id must change when any parameter bit changes");
        let id3 = ModelArchive::from_model(&small_model(), Vec::new()).archive_id;
        assert_eq!(id1, id3, "same build, same id");
    }

    #[test]
    fn version_and_backbone_mismatches_are_rejected() {
        let model = small_model();
        let mut archive = ModelArchive::from_model(&model, Vec::new());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.archive");
        archive.format_version = ARCHIVE_FORMAT_VERSION + 1;
        archive.save(&path).unwrap();
        match ModelArchive::load(&path) {
            Err(Error::ArchiveVersion { found, expected }) => {
                assert_eq!(found, ARCHIVE_FORMAT_VERSION + 1);
                assert_eq!(expected, ARCHIVE_FORMAT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }

        let archive = ModelArchive::from_model(&model, Vec::new());
        match archive.instantiate(Some("pretrained:bert-base-uncased")) {
            Err(Error::BackboneMismatch { archived, requested }) => {
                assert!(archived.starts_with("tiny:"));
                assert_eq!(requested, "pretrained:bert-base-uncased");
            }
            other => panic!("expected backbone mismatch, got {:?}", other.map(|_| ())),
        }
    }
}
