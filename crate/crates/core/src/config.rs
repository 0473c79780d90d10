//! Model-size presets and the training configuration shared by the teacher,
//! the student and the baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::OptimizerConfig;

/// Layer widths for every network in the pipeline. The last tower width is
/// the vector dimension served to retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_experts: usize,
    pub expert_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
}

impl ModelShape {
    /// Small sizes for laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            num_experts: 2,
            expert_hidden: vec![64, 32],
            head_hidden: vec![16],
            tower_hidden: vec![64, 32],
        }
    }

    /// Production-scale sizes; constructible, but impractical to train on a
    /// single core.
    pub fn paper() -> Self {
        Self {
            num_experts: 2,
            expert_hidden: vec![1024, 512, 256],
            head_hidden: vec![256],
            tower_hidden: vec![512, 256, 128],
        }
    }

    pub fn expert_output_dim(&self) -> usize {
        *self.expert_hidden.last().expect("expert_hidden non-empty")
    }

    pub fn tower_output_dim(&self) -> usize {
        *self.tower_hidden.last().expect("tower_hidden non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::InvalidConfig {
                key: "num_experts".into(),
                reason: "must be >= 1".into(),
            });
        }
        for (key, dims) in [
            ("expert_hidden", &self.expert_hidden),
            ("head_hidden", &self.head_hidden),
            ("tower_hidden", &self.tower_hidden),
        ] {
            if dims.is_empty() || dims.contains(&0) {
                return Err(Error::InvalidConfig {
                    key: key.into(),
                    reason: "layer widths must be non-empty and positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePreset {
    Desk,
    Paper,
}

impl SizePreset {
    pub fn shape(&self) -> ModelShape {
        match self {
            SizePreset::Desk => ModelShape::desk(),
            SizePreset::Paper => ModelShape::paper(),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the duration-task loss.
    pub w1: f64,
    /// Weight of the auxiliary click-task loss.
    pub w2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer shared by the student and every baseline.
    pub optimizer: OptimizerConfig,
    /// Teacher-side optimizer; defaults to `optimizer` when absent. The
    /// teacher is internal to the distillation setup, not one of the
    /// compared candidate-generation models, so it may converge faster.
    pub teacher_optimizer: Option<OptimizerConfig>,
    /// Threshold (seconds) above which a read counts as long.
    pub duration_threshold: f64,
    pub seed: u64,
    /// Reproduce the printed form of the auxiliary click loss, which uses the
    /// duration label; the default fits the click label.
    pub paper_literal_click_label: bool,
    /// Use the printed distillation expression (no logarithms) instead of the
    /// KL divergence. Never used by acceptance runs.
    pub literal_printed_distill: bool,
    /// Distillation temperature hook; 1.0 leaves targets untouched.
    pub distill_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            batch_size: 256,
            epochs: 1,
            optimizer: OptimizerConfig::default(),
            teacher_optimizer: None,
            duration_threshold: 50.0,
            seed: 0,
            paper_literal_click_label: false,
            literal_printed_distill: false,
            distill_temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return Err(Error::InvalidConfig {
                key: "w1/w2".into(),
                reason: "loss weights must be >= 0".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                key: "batch_size".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.distill_temperature <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "distill_temperature".into(),
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }
}
