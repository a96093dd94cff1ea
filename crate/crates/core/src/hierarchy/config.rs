use serde::{Deserialize, Serialize};

use crate::error::{HemlError, Result};
use crate::metric::{LossKind, MarginMode, MetricLoss, MinerKind, NtXentLoss, SnrContrastiveLoss, TripletMarginLoss};
use crate::numerics::Architecture;

pub const DEFAULT_SEED: u64 = 0x4845_4d4c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub margin_mode: MarginMode,
    pub loss: LossKind,
    pub miner: MinerKind,
    pub seed: u64,
    pub embed_dim: usize,
    /// NT-Xent only.
    pub temperature: f64,
    /// Weight of the semantic term in `sem_guided_loss`.
    pub alpha: f64,
    /// Weight of dissimilar pairs in the SNR-contrastive objective.
    pub negative_weight: f64,
    pub trunk_widths: Vec<usize>,
    pub embedder_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            margin: 0.1,
            margin_mode: MarginMode::Abs,
            loss: LossKind::Triplet,
            miner: MinerKind::SemiHard,
            seed: DEFAULT_SEED,
            embed_dim: 8,
            temperature: 0.1,
            alpha: 0.0,
            negative_weight: 1.0,
            trunk_widths: vec![64, 32],
            embedder_hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HemlError::Usage(m.to_string()));
        if self.batch_size < 2 {
            return fail("batch size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail("margin must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if self.alpha.is_nan() || self.alpha < 0.0 || self.negative_weight.is_nan() || self.negative_weight < 0.0 {
            return fail("alpha and negative weight must be non-negative");
        }
        if self.embed_dim < 2 {
            return fail("embedding dimension must be at least 2");
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            trunk_widths: self.trunk_widths.clone(),
            embedder_hidden: self.embedder_hidden,
            embed_dim: self.embed_dim,
        }
    }

    pub fn build_loss(&self) -> Box<dyn MetricLoss> {
        match self.loss {
            LossKind::Triplet => Box::new(TripletMarginLoss {
                margin: self.margin,
                mode: self.margin_mode,
                miner: self.miner,
            }),
            LossKind::Snr => Box::new(SnrContrastiveLoss {
                margin: self.margin,
                negative_weight: self.negative_weight,
            }),
            LossKind::Ntxent => Box::new(NtXentLoss {
                temperature: self.temperature,
            }),
        }
    }
}
