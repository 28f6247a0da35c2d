//! Hashed n-gram features feeding a linear softmax classifier.

mod features;
mod linear;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{featurize, FeatureVector};
pub use linear::{forward, init_model, loss_and_grad, predict, predict_proba, BIAS, WEIGHTS};
pub use train::{encode, train, EncodedCorpus, EpochRecord, Metric, TrainHistory};

/// Meta key holding the JSON-encoded [`ModelConfig`] of a checkpoint.
pub const META_MODEL_CONFIG: &str = "model_config";
/// Meta key holding the JSON-encoded label vocabulary of a checkpoint.
pub const META_LABEL_NAMES: &str = "label_names";

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hash_dim: usize,
    pub num_classes: usize,
    pub ngram_orders: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hash_dim: 4096,
            num_classes: 2,
            ngram_orders: vec![1, 2],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.hash_dim < self.num_classes || self.hash_dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "hash_dim {} must be in [num_classes, 2^32)",
                self.hash_dim
            )));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "ngram_orders {:?} must be non-empty and positive",
                self.ngram_orders
            )));
        }
        Ok(())
    }
}

/// Optimisation settings. Adam and cross-entropy are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Seeds the per-epoch minibatch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-5,
            max_epochs: 200,
            patience: 3,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta {} must be non-negative", self.min_delta));
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        // max_epochs = 0 is a valid "no updates" run.
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return bad(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let t = TrainConfig::default();
        assert_eq!((t.batch_size, t.learning_rate), (16, 1e-5));
        t.validate().unwrap();
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let m = ModelConfig {
            num_classes: 1,
            ..Default::default()
        };
        assert!(m.validate().is_err());
        let m = ModelConfig {
            hash_dim: 2,
            num_classes: 3,
            ..Default::default()
        };
        assert!(m.validate().is_err());
        let t = TrainConfig {
            patience: 5,
            max_epochs: 5,
            ..Default::default()
        };
        assert!(t.validate().is_err());
        let t = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        t.validate().unwrap();
    }

    #[test]
    fn partial_json_uses_defaults() {
        let t: TrainConfig = serde_json::from_str(r#"{"learning_rate": 0.05}"#).unwrap();
        assert_eq!(t.learning_rate, 0.05);
        assert_eq!(t.patience, 3);
    }
}
