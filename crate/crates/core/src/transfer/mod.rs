//! 2D to 3D convolution weight inflation and the weight archive format.

mod archive;
mod inflate;

pub use archive::{DType, NamedTensor, TensorKind, WeightArchive};
pub use inflate::{
    inflate_center, inflate_stack, transfer_backbone, DepthRule, DepthSpec, InflateStrategy,
};
