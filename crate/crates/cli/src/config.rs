use std::path::Path;

use equicpi::datasplit::SplitConfig;
use equicpi::difftrain::train::TrainConfig;
use equicpi::equinet::ModelConfig;
use equicpi::fingerprint::{DEFAULT_NBITS, DEFAULT_RADIUS};
use equicpi::metrics::SimulationConfig;
use equicpi::physscore::{RerankConfig, VinaWeights};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    pub radius: usize,
    pub nbits: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            radius: DEFAULT_RADIUS,
            nbits: DEFAULT_NBITS,
        }
    }
}

/// Everything a run depends on. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fingerprint: FingerprintConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vina: VinaWeights,
    pub rerank: RerankConfig,
    pub split: SplitConfig,
    pub screen: SimulationConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: equicpi::Result<()>| r.map_err(CliError::from);
        if self.fingerprint.nbits == 0 {
            return Err(CliError::Invalid("fingerprint.nbits must be positive".into()));
        }
        v(self.model.validate())?;
        v(self.train.validate())?;
        v(self.vina.validate())?;
        if !(self.rerank.lambda.is_finite() && self.rerank.alpha.is_finite()) {
            return Err(CliError::Invalid("rerank.lambda and rerank.alpha must be finite".into()));
        }
        if self.split.folds < 2 {
            return Err(CliError::Invalid("split.folds must be at least 2".into()));
        }
        for t in [self.split.compound_threshold, self.split.protein_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Invalid("split thresholds must lie in (0, 1)".into()));
            }
        }
        v(self.screen.validate())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
