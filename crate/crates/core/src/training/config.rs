use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capsules::RoutingKind;
use crate::corpus::DatasetMeta;
use crate::error::{CarpError, Result};
use crate::model::ModelConfig;

/// Multi-task loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the rating loss; `1 − λ` goes to the sentiment loss.
    pub lambda: f64,
    /// Capsule-length margin.
    pub epsilon: f64,
    /// Adds the `max(0, ‖o_¬s‖ − 1 + ε)` term.
    pub mutual_exclusion: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            epsilon: 0.8,
            mutual_exclusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `d`
    pub embed_dim: usize,
    /// `n`
    pub filters: usize,
    /// `c`, odd.
    pub window: usize,
    /// `k`
    pub latent: usize,
    /// `M`
    pub slots: usize,
    /// `τ`
    pub iterations: usize,
    pub routing: RoutingKind,
    pub keep_prob: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 300,
            filters: 50,
            window: 3,
            latent: 25,
            slots: 5,
            iterations: 3,
            routing: RoutingKind::BiAgreement,
            keep_prob: 0.9,
            learning_rate: 0.001,
            batch_size: 100,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CarpError::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CarpError::Config(msg));
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("filters", self.filters),
            ("window", self.window),
            ("latent", self.latent),
            ("slots", self.slots),
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.window.is_multiple_of(2) {
            return bad(format!("window must be odd, got {}", self.window));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep_prob must be in (0, 1], got {}", self.keep_prob));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_decay must be in [0, 1) and rmsprop_epsilon positive".into());
        }
        if !(0.0..=1.0).contains(&self.loss.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.loss.lambda));
        }
        if !(self.loss.epsilon > 0.0 && self.loss.epsilon < 1.0) {
            return bad(format!("epsilon must be in (0, 1), got {}", self.loss.epsilon));
        }
        Ok(())
    }

    /// Architecture for a prepared dataset.
    pub fn model_config(&self, meta: &DatasetMeta) -> ModelConfig {
        ModelConfig {
            vocab_size: meta.vocab_size,
            users: meta.users,
            items: meta.items,
            embed_dim: self.embed_dim,
            filters: self.filters,
            window: self.window,
            latent: self.latent,
            slots: self.slots,
            iterations: self.iterations,
            routing: self.routing,
            keep_prob: self.keep_prob,
            rating_max: meta.preprocess.rating_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"slots": 3, "routing": "ra", "loss": {"lambda": 1.0}}"#).unwrap();
        assert_eq!(cfg.slots, 3);
        assert_eq!(cfg.routing, RoutingKind::Agreement);
        assert_eq!(cfg.loss.lambda, 1.0);
        assert_eq!(cfg.loss.epsilon, 0.8);
        assert_eq!(cfg.latent, 25);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"slotz": 3}"#).is_err());
        let even = TrainConfig { window: 4, ..Default::default() };
        assert!(even.validate().is_err());
        let mut eps = TrainConfig::default();
        eps.loss.epsilon = 1.0;
        assert!(eps.validate().is_err());
    }
}
