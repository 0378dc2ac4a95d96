//! Losses, optimizer, learning-rate schedule, the two-stage training loop
//! and checkpoints.

mod checkpoint;
mod loss;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointHeader, ParamEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{
    bce_loss, bce_loss_grad, combined_loss, combined_loss_grad, combined_loss_on_tape, focal_loss,
    focal_loss_grad,
};
pub use optim::{adamw_step, cosine_lr, OptimState, ADAM_EPS, BETA1, BETA2};
pub use trainer::{
    evaluate, predict_scores, run_training, run_training_with, sample_gradients, EpochLog,
    ParamGrads, TrainOutcome, LOG_HEADER,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs with the backbone frozen.
    pub stage1_epochs: usize,
    /// Epochs with every group trainable.
    pub stage2_epochs: usize,
    pub lr_new: f64,
    pub lr_backbone: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Focal loss focusing parameter.
    pub gamma: f64,
    pub bce_weight: f64,
    pub focal_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 5,
            stage2_epochs: 15,
            lr_new: 1e-3,
            lr_backbone: 1e-4,
            lr_min: 1e-6,
            weight_decay: 1e-2,
            gamma: 2.0,
            bce_weight: 0.7,
            focal_weight: 0.3,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Five frozen epochs, then fifteen joint ones.
    pub fn cifake() -> Self {
        Self::default()
    }

    /// Ten frozen epochs, then fifteen joint ones.
    pub fn dffd() -> Self {
        Self {
            stage1_epochs: 10,
            ..Self::default()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_new, self.lr_backbone, self.lr_min];
        let ok = positive.iter().all(|&lr| lr > 0.0 && lr.is_finite())
            && self.weight_decay >= 0.0
            && self.gamma >= 0.0
            && self.bce_weight >= 0.0
            && self.focal_weight >= 0.0
            && self.batch_size > 0
            && self.total_epochs() > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid training config {self:?}"
            )))
        }
    }
}
