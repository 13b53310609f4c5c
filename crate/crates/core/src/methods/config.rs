use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::fourier::FourierConfig;
use crate::error::{Error, Result};
use crate::losses::SEGMENTATION_WEIGHTS;
use crate::models::{ArchConfig, SecondStageSpec, TrainConfig, TINY_IRV2};
use crate::transfer::InflateStrategy;
use crate::voxcore::Dims3;

/// How a network's weights start before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// The shipped pretext-trained 2D weights (inflated for 3D models).
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Classify2dConfig {
    /// Ensemble tile edge lengths; the smallest sets the output resolution.
    pub tile_sizes: Vec<usize>,
    pub init: Init,
    pub train: TrainConfig,
}

impl Default for Classify2dConfig {
    fn default() -> Self {
        Self {
            tile_sizes: vec![64, 128, 256],
            init: Init::Pretrained,
            train: TrainConfig {
                epochs: 6,
                batch_size: 16,
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Segment2dConfig {
    /// Average-pooling window (= stride) after the backbone.
    pub pool: usize,
    pub init: Init,
    pub train: TrainConfig,
}

impl Default for Segment2dConfig {
    fn default() -> Self {
        Self {
            pool: 5,
            init: Init::Pretrained,
            train: TrainConfig {
                epochs: 12,
                batch_size: 4,
                learning_rate: 0.01,
                class_weights: SEGMENTATION_WEIGHTS.to_vec(),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Combine3dConfig {
    /// Number of consecutive slices averaged into one output cell.
    pub window: usize,
}

impl Default for Combine3dConfig {
    fn default() -> Self {
        Self { window: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Classify3dConfig {
    /// Block shape (x, y, z).
    pub block: Dims3,
    pub init: Init,
    pub strategy: InflateStrategy,
    pub train: TrainConfig,
}

impl Default for Classify3dConfig {
    fn default() -> Self {
        Self {
            block: [128, 128, 64],
            init: Init::Pretrained,
            strategy: InflateStrategy::Stack,
            train: TrainConfig {
                epochs: 10,
                batch_size: 4,
                learning_rate: 0.01,
                gamma: 2.0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Twostage3dConfig {
    /// Block shape (x, y, z) of the frozen feature extractor.
    pub block: Dims3,
    pub strategy: InflateStrategy,
    /// Feature cache directory; `FIBERSEG_CACHE` is used when unset.
    pub cache_dir: Option<PathBuf>,
    pub second_stage: SecondStageSpec,
    pub train: TrainConfig,
}

impl Default for Twostage3dConfig {
    fn default() -> Self {
        Self {
            block: [64, 64, 16],
            strategy: InflateStrategy::Stack,
            cache_dir: None,
            second_stage: SecondStageSpec::default(),
            train: TrainConfig {
                epochs: 150,
                batch_size: 2,
                learning_rate: 0.01,
                class_weights: SEGMENTATION_WEIGHTS.to_vec(),
                ..TrainConfig::default()
            },
        }
    }
}

/// Every hyperparameter of the six pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub seed: u64,
    pub backbone: String,
    /// 2D weight archive for pretrained initialization; the shipped
    /// pretext weights are used for `tiny-irv2` when unset.
    pub backbone_weights: Option<PathBuf>,
    pub fourier: FourierConfig,
    pub classify2d: Classify2dConfig,
    pub segment2d: Segment2dConfig,
    pub combine3d: Combine3dConfig,
    pub classify3d: Classify3dConfig,
    pub twostage3d: Twostage3dConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backbone: TINY_IRV2.to_string(),
            backbone_weights: None,
            fourier: FourierConfig::default(),
            classify2d: Classify2dConfig::default(),
            segment2d: Segment2dConfig::default(),
            combine3d: Combine3dConfig::default(),
            classify3d: Classify3dConfig::default(),
            twostage3d: Twostage3dConfig::default(),
        }
    }
}

impl MethodConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("method config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ArchConfig::by_name(&self.backbone)?;
        self.fourier.validate()?;
        let trains = [
            ("classify2d", &self.classify2d.train),
            ("segment2d", &self.segment2d.train),
            ("classify3d", &self.classify3d.train),
            ("twostage3d", &self.twostage3d.train),
        ];
        for (name, t) in trains {
            t.validate().map_err(|e| Error::Config(format!("{name}.train: {e}")))?;
        }
        if self.classify2d.tile_sizes.is_empty() || self.classify2d.tile_sizes.contains(&0) {
            return Err(Error::Config("classify2d.tile_sizes must be non-empty and positive".into()));
        }
        let finest = *self.classify2d.tile_sizes.iter().min().expect("non-empty");
        if let Some(t) = self.classify2d.tile_sizes.iter().find(|t| *t % finest != 0) {
            return Err(Error::Config(format!(
                "classify2d tile size {t} is not a multiple of the finest size {finest}"
            )));
        }
        if self.segment2d.pool == 0 || self.combine3d.window == 0 {
            return Err(Error::Config("segment2d.pool and combine3d.window must be positive".into()));
        }
        for b in [self.classify3d.block, self.twostage3d.block] {
            if b.contains(&0) {
                return Err(Error::Config(format!("block {b:?} must be positive")));
            }
        }
        Ok(())
    }

    /// Output resolution (x, y, z voxels per cell) of a method under this config.
    pub fn resolution(&self, method: super::MethodId) -> Result<Dims3> {
        use super::MethodId::*;
        let stride_2d = ArchConfig::by_name(&self.backbone)?.total_stride();
        let finest = self.classify2d.tile_sizes.iter().copied().min().unwrap_or(64);
        Ok(match method {
            Fourier2d => [self.fourier.patch[0], self.fourier.patch[1], 1],
            Classify2d => [finest, finest, 1],
            Segment2d => {
                let s = stride_2d * self.segment2d.pool;
                [s, s, 1]
            }
            Combine3d => [finest, finest, self.combine3d.window],
            Classify3d => self.classify3d.block,
            Twostage3d => self.twostage3d.block,
        })
    }
}
