//! Minimal differentiable tensor substrate: convolution and pooling layers,
//! softmax heads, reverse-mode gradients and momentum SGD.

mod layer;
mod network;
mod ops;
mod tensor;

pub use layer::{Cache, Grads, Layer, LayerBuilder, Param, ParamKind, ParamStore};
pub use network::{cosine_lr, Dimensionality, Network, Sample, Sgd};
pub use ops::{conv_forward, Window};
pub use tensor::{input_tensor, normalize_intensity, Tensor, INPUT_MEAN, INPUT_SCALE};
