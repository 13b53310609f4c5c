use crate::error::{Error, Result};

/// Single-sample activation tensor laid out as (channels, depth, height, width).
///
/// 2D feature maps use depth 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Spatial extent (depth, height, width).
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn plane(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// Softmax over the channel axis at every spatial position.
    pub fn softmax_channels(&self) -> Tensor {
        let p = self.plane();
        let c = self.channels();
        let mut out = self.clone();
        for pos in 0..p {
            let mut max = f32::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(self.data[ch * p + pos]);
            }
            let mut sum = 0.0f32;
            for ch in 0..c {
                let e = (self.data[ch * p + pos] - max).exp();
                out.data[ch * p + pos] = e;
                sum += e;
            }
            for ch in 0..c {
                out.data[ch * p + pos] /= sum;
            }
        }
        out
    }

    /// Probability vector at spatial position `pos` (flattened d, h, w).
    pub fn column(&self, pos: usize) -> Vec<f32> {
        let p = self.plane();
        (0..self.channels()).map(|c| self.data[c * p + pos]).collect()
    }
}

/// Maps 8-bit intensities to network input values.
pub fn normalize_intensity(v: u8) -> f32 {
    (v as f32 - INPUT_MEAN) / INPUT_SCALE
}

pub const INPUT_MEAN: f32 = 40.0;
pub const INPUT_SCALE: f32 = 60.0;

/// Single-channel input tensor from a (z, y, x) voxel block.
pub fn input_tensor(voxels: &[u8], spatial: [usize; 3]) -> Result<Tensor> {
    Tensor::from_vec(
        [1, spatial[0], spatial[1], spatial[2]],
        voxels.iter().map(|&v| normalize_intensity(v)).collect(),
    )
}
