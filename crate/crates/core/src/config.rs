//! Run configuration shared by the CLI and the acceptance suite. Every report
//! embeds the `RunConfig` that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eki::EkiConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::noise_net::{NetworkConfig, TrainConfig};
use crate::phantom::PhantomSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network training, SMOTE and the validation split.
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub features: FeatureConfig,
    pub gate: NetworkConfig,
    pub baseline: NetworkConfig,
    pub training: TrainConfig,
    pub eki: EkiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phantom: PhantomSpec::default(),
            features: FeatureConfig::default(),
            gate: NetworkConfig::compact(),
            baseline: NetworkConfig::compact().multiclass(),
            training: TrainConfig {
                max_epochs: 8,
                patience: 2,
                ..TrainConfig::default()
            },
            eki: EkiConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::load(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.features.validate()?;
        self.gate.validate()?;
        self.baseline.validate()?;
        self.training.validate()?;
        if self.gate.outputs != 1 {
            return Err(Error::arg("gate network must have a single sigmoid output"));
        }
        if self.baseline.outputs != 3 {
            return Err(Error::arg("baseline network must have three softmax outputs"));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    /// Expert-model settings with the run seed applied.
    pub fn eki_config(&self) -> EkiConfig {
        EkiConfig {
            seed: self.seed,
            ..self.eki
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 9, "eki": {"smote": false}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(!cfg.eki.smote);
        assert_eq!(cfg.eki.smote_k, 5);
        assert_eq!(cfg.gate, NetworkConfig::compact());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn seed_propagates() {
        let cfg = RunConfig {
            seed: 42,
            ..RunConfig::default()
        };
        assert_eq!(cfg.train_config().seed, 42);
        assert_eq!(cfg.eki_config().seed, 42);
    }
}
