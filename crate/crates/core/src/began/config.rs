use serde::{Deserialize, Serialize};

use crate::diffcore::DType;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;

/// Hyperparameters and architecture of a BEGAN run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeganConfig {
    /// Pixels per image side.
    pub image_size: usize,
    /// Image channels (3 for RGB).
    pub image_channels: usize,
    /// Width of the first encoder stage and of every decoder stage.
    pub base_channels: usize,
    /// Number of resolution levels; the encoder pools between levels.
    pub stages: usize,
    /// 3×3 convolutions per resolution level.
    pub convs_per_stage: usize,
    pub n_z: usize,
    pub gamma: f64,
    pub lambda_k: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub precision: DType,
}

impl Default for BeganConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BeganConfig {
    /// 32×32 toy-scale configuration.
    pub fn desk() -> Self {
        BeganConfig {
            image_size: 32,
            image_channels: 3,
            base_channels: 16,
            stages: 4,
            convs_per_stage: 2,
            n_z: 16,
            gamma: 0.5,
            lambda_k: 0.001,
            batch_size: 16,
            total_steps: 5000,
            seed: 0,
            adam: AdamConfig::BEGAN,
            precision: DType::F32,
        }
    }

    /// 128×128 configuration with 64 latent dimensions and a 64→256
    /// encoder channel schedule.
    pub fn full_scale() -> Self {
        BeganConfig {
            image_size: 128,
            base_channels: 64,
            n_z: 64,
            ..Self::desk()
        }
    }

    /// Side length of the smallest feature map.
    pub fn min_resolution(&self) -> usize {
        self.image_size >> (self.stages - 1)
    }

    /// Encoder channel count at each resolution level: base·[1, 2, 3, …].
    pub fn encoder_schedule(&self) -> Vec<usize> {
        (1..=self.stages).map(|i| self.base_channels * i).collect()
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.image_channels, self.image_size, self.image_size]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stages == 0 || self.stages > 16 {
            return fail(format!("stages must be in 1..=16, got {}", self.stages));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << (self.stages - 1)) {
            return fail(format!(
                "image_size {} is not divisible by 2^{} (one halving per stage)",
                self.image_size,
                self.stages - 1
            ));
        }
        if self.base_channels == 0 || self.image_channels == 0 || self.convs_per_stage == 0 {
            return fail("channel counts and convs_per_stage must be positive".into());
        }
        if self.n_z == 0 {
            return fail("n_z must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda_k >= 0.0 && self.lambda_k.is_finite()) {
            return fail(format!(
                "lambda_k must be finite and >= 0, got {}",
                self.lambda_k
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        self.adam.validate()
    }
}
