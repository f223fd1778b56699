use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EQUAL_OUTCOME_WEIGHTS, N_OUTCOMES};

/// Optimisation settings shared by every paradigm and algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Client (local) learning rate η.
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Federated rounds, or epochs for local and central training.
    pub rounds: usize,
    /// Server learning rate η_g (SCAFFOLD).
    pub server_lr: f64,
    /// Proximal coefficient μ (FedProx).
    pub mu: f64,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub outcome_weights: [f64; N_OUTCOMES],
    /// Optional per-outcome weight on positive rows. Off by default.
    pub pos_weight: Option<[f64; N_OUTCOMES]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            local_epochs: 1,
            batch_size: 64,
            rounds: 100,
            server_lr: 1.0,
            mu: 0.01,
            patience: 10,
            seed: 0,
            outcome_weights: EQUAL_OUTCOME_WEIGHTS,
            pos_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::Config(format!("server_lr must be positive, got {}", self.server_lr)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::Config("batch_size and local_epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}
