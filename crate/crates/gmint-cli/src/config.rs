//! Experiment configuration: one JSON file describes the whole pipeline.
//!
//! Schema (schema_version 1):
//! ```json
//! {
//!   "schema_version": 1,
//!   "corpus": {"kind": "synthetic", "name": "main", "spec": {...}}
//!             | {"kind": "file", "path": "corpus.jsonl", "format": "jsonl"},
//!   "external_corpora": [ ...same shape... ],
//!   "model_spec": {"kind": "mlp", "vocab_size": 500, ...},
//!   "train_config": {"epochs": 50, "batch_size": 512, "learning_rate": 0.001, "seed": 0},
//!   "auditor_config": {"hidden_layers": [256,128,64], "epochs": 100, ...},
//!   "selector": "first:2",
//!   "feature_kind": "gradient",
//!   "protocol": "intra",
//!   "sweep_plan": {"size_pairs": [[2500,2500], ...], "repetitions": 1},
//!   "seed": 42
//! }
//! ```
//! `train_config`, `auditor_config`, and `sweep_plan` may be omitted and
//! default as above. The SHA-256 of the effective (post-override) config is
//! embedded in every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gmint::auditor::AuditorConfig;
use gmint::eval::SweepPlan;
use gmint::models::{AuditedModelSpec, TrainConfig};
use gmint::text::{CorpusFormat, SynthSpec};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic { name: String, spec: SynthSpec },
    File { path: PathBuf, format: String },
}

impl CorpusSource {
    pub fn name(&self) -> String {
        match self {
            CorpusSource::Synthetic { name, .. } => name.clone(),
            CorpusSource::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "corpus".to_string()),
        }
    }

    pub fn load(&self, config_dir: &Path) -> Result<gmint::text::Corpus, CliError> {
        match self {
            CorpusSource::Synthetic { name, spec } => {
                let mut corpus = gmint::text::synth_corpus(spec)
                    .map_err(|e| CliError::Usage(format!("synthetic corpus: {e}")))?;
                corpus.name = name.clone();
                corpus.meta.name = name.clone();
                Ok(corpus)
            }
            CorpusSource::File { path, format } => {
                let format: CorpusFormat = format
                    .parse()
                    .map_err(|e| CliError::Usage(format!("corpus format: {e}")))?;
                let resolved =
                    if path.is_absolute() { path.clone() } else { config_dir.join(path) };
                gmint::text::ingest(&resolved, format).map_err(|e| {
                    CliError::Dependency(format!("corpus file {}: {e}", resolved.display()))
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub external_corpora: Vec<CorpusSource>,
    pub model_spec: AuditedModelSpec,
    #[serde(default)]
    pub train_config: TrainConfig,
    #[serde(default = "AuditorConfig::default")]
    pub auditor_config: AuditorConfig,
    pub selector: String,
    pub feature_kind: String,
    pub protocol: String,
    #[serde(default)]
    pub sweep_plan: SweepPlan,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        gmint::probe::LayerSelector::parse(&self.selector)
            .map_err(|e| CliError::Usage(format!("selector: {e}")))?;
        self.parsed_feature_kind()?;
        if self.protocol != "intra" && self.protocol != "mixed" {
            return Err(CliError::Usage(format!(
                "protocol {:?} is not one of intra, mixed",
                self.protocol
            )));
        }
        if self.protocol == "mixed" && self.external_corpora.is_empty() {
            return Err(CliError::Usage(
                "protocol mixed requires at least one entry in external_corpora".to_string(),
            ));
        }
        Ok(())
    }

    pub fn parsed_selector(&self) -> gmint::probe::LayerSelector {
        gmint::probe::LayerSelector::parse(&self.selector).expect("validated at load")
    }

    pub fn parsed_feature_kind(&self) -> Result<gmint::probe::FeatureKind, CliError> {
        self.feature_kind
            .parse()
            .map_err(|e| CliError::Usage(format!("feature kind: {e}")))
    }

    /// Hash of the canonical JSON serialization of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
