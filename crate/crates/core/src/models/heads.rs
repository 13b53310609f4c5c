use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use crate::error::{Error, Result};
use crate::nn::{input_tensor, Dimensionality, Layer, LayerBuilder, Network, ParamStore, Window};
use crate::voxcore::NUM_CLASSES;

/// Layout of the second-stage network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondStageSpec {
    /// Output channels of each convolution + pooling pair.
    pub widths: Vec<usize>,
    /// Odd convolution window (cubic).
    pub kernel: usize,
    /// Odd average-pooling window (cubic, stride 1).
    pub pool: usize,
}

impl Default for SecondStageSpec {
    fn default() -> Self {
        Self {
            widths: vec![64, 32],
            kernel: 1,
            pool: 1,
        }
    }
}

/// Small 3D network over a grid (d, h, w) of per-block feature vectors:
/// convolution + average pooling pairs ("same" padding, stride 1) and a
/// 1x1x1 convolution to class logits at every grid position.
pub fn build_second_stage(in_channels: usize, grid: [usize; 3], spec: &SecondStageSpec, seed: u64) -> Result<Network> {
    if in_channels == 0 || spec.widths.contains(&0) {
        return Err(Error::Construction("second stage needs positive channel counts".into()));
    }
    if spec.kernel % 2 == 0 || spec.pool % 2 == 0 {
        return Err(Error::Construction(format!(
            "second-stage windows must be odd, got kernel {} and pool {}",
            spec.kernel, spec.pool
        )));
    }
    let mut store = ParamStore::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = LayerBuilder {
        store: &mut store,
        rng: &mut rng,
    };
    let (k, p) = (spec.kernel, spec.pool);
    let conv = Window::same([k, k, k], [1, 1, 1]);
    let mut layers = Vec::new();
    let mut ch = in_channels;
    for (i, &w) in spec.widths.iter().enumerate() {
        layers.push(b.conv(&format!("stage2.conv{i}"), ch, w, conv));
        layers.push(Layer::Relu);
        if p > 1 {
            layers.push(Layer::AvgPool(Window::same([p, p, p], [1, 1, 1])));
        }
        ch = w;
    }
    let features = Layer::Seq(layers);
    let head = b.conv_with_std("stage2.fc", ch, NUM_CLASSES, Window::valid([1, 1, 1], [1, 1, 1]), 0.01);
    let net = Network {
        params: store,
        features,
        head,
        input_shape: [in_channels, grid[0], grid[1], grid[2]],
        dimensionality: Dimensionality::ThreeD,
    };
    net.output_shape()?;
    Ok(net)
}

/// Globally pooled trunk features of one (z, y, x) voxel block.
pub fn extract_features(backbone: &Backbone, block: &[u8]) -> Result<Vec<f32>> {
    let [_, d, h, w] = backbone.network.input_shape;
    if block.len() != d * h * w {
        return Err(Error::Dimension(format!(
            "block has {} voxels, backbone expects {d}x{h}x{w}",
            block.len()
        )));
    }
    let x = input_tensor(block, [d, h, w])?;
    backbone.network.pooled_features(&x)
}
