//! Backbones, heads and training loops.

mod backbone;
mod heads;
mod pretext;
mod train;

pub use backbone::{
    build_backbone_2d, build_backbone_3d, build_segmentation_head_2d, cubic_depth_spec, stem_depth_strides,
    ArchConfig, Backbone, BackboneDescriptor, BranchConv, HeadKind, LayerInfo, Stage, StemOp, WeightSource,
    FULL_IRV2, TINY_IRV2,
};
pub use heads::{build_second_stage, extract_features, SecondStageSpec};
pub use pretext::{pretext_samples, pretext_tile, pretrain_tiny_2d, pretrained_tiny_2d, PRETEXT_TILE};
pub use train::{evaluate, train, EpochRecord, TrainConfig, TrainHistory};
