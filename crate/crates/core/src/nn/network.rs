use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::layer::{check_shape, Grads, Layer, ParamKind, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::losses::{focal_loss_softmax, FocalLossConfig};
use crate::transfer::{NamedTensor, TensorKind, WeightArchive};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimensionality {
    TwoD,
    ThreeD,
}

/// A feature trunk followed by a class head producing per-position logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: ParamStore,
    pub features: Layer,
    pub head: Layer,
    pub input_shape: [usize; 4],
    pub dimensionality: Dimensionality,
}

/// One training example: an input tensor and a class target per output
/// position (`None` positions do not contribute to the loss).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub targets: Vec<Option<u8>>,
}

impl Network {
    pub fn feature_shape(&self) -> Result<[usize; 4]> {
        check_shape(&self.features, self.input_shape, "feature trunk")
    }

    pub fn output_shape_for(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let f = check_shape(&self.features, input, "feature trunk")?;
        check_shape(&self.head, f, "head")
    }

    pub fn output_shape(&self) -> Result<[usize; 4]> {
        self.output_shape_for(self.input_shape)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.input_shape[0] {
            return Err(Error::Argument(format!(
                "input has {} channels, network expects {}",
                x.channels(),
                self.input_shape[0]
            )));
        }
        self.output_shape_for(x.shape).map(|_| ())
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (f, _) = self.features.forward(&self.params, x.clone(), false);
        let (y, _) = self.head.forward(&self.params, f, false);
        Ok(y)
    }

    /// Class probabilities (softmax over channels) per output position.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.logits(x)?.softmax_channels())
    }

    /// Trunk output reduced by global average pooling to one vector.
    pub fn pooled_features(&self, x: &Tensor) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let (f, _) = self.features.forward(&self.params, x.clone(), false);
        let (g, _) = Layer::GlobalAvgPool.forward(&self.params, f, false);
        Ok(g.data)
    }

    /// Mean focal loss over all labelled positions of a batch and its gradient.
    pub fn loss_and_grads(&self, batch: &[&Sample], cfg: &FocalLossConfig) -> Result<(f64, Grads)> {
        let mut grads = self.params.zero_grads();
        let labelled: usize = batch
            .iter()
            .map(|s| s.targets.iter().filter(|t| t.is_some()).count())
            .sum();
        if labelled == 0 {
            return Ok((0.0, grads));
        }
        let norm = 1.0 / labelled as f32;
        let mut total = 0.0;
        for sample in batch {
            self.check_input(&sample.input)?;
            let (f, fc) = self.features.forward(&self.params, sample.input.clone(), true);
            let (logits, hc) = self.head.forward(&self.params, f, true);
            let probs = logits.softmax_channels();
            let plane = probs.plane();
            if sample.targets.len() != plane {
                return Err(Error::Argument(format!(
                    "sample has {} targets for {plane} output positions",
                    sample.targets.len()
                )));
            }
            let mut g = Tensor::zeros(logits.shape);
            for (pos, t) in sample.targets.iter().enumerate() {
                let Some(t) = t else { continue };
                let (loss, dz) = focal_loss_softmax(&probs.column(pos), *t as usize, cfg);
                total += loss;
                for (c, v) in dz.iter().enumerate() {
                    g.data[c * plane + pos] = v * norm;
                }
            }
            let gf = self
                .head
                .backward(&self.params, hc.expect("train cache"), g, &mut grads, true)
                .expect("head input gradient");
            self.features
                .backward(&self.params, fc.expect("train cache"), gf, &mut grads, false);
        }
        Ok((total / labelled as f64, grads))
    }

    fn kernel_kind(&self) -> TensorKind {
        match self.dimensionality {
            Dimensionality::TwoD => TensorKind::Kernel2d,
            Dimensionality::ThreeD => TensorKind::Kernel3d,
        }
    }

    /// Exports every parameter. 2D networks store kernels without the depth axis.
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        for p in &self.params.params {
            let (kind, shape) = match p.kind {
                ParamKind::Bias => (TensorKind::Param, p.shape.clone()),
                ParamKind::Kernel => match self.kernel_kind() {
                    TensorKind::Kernel2d => (
                        TensorKind::Kernel2d,
                        vec![p.shape[0], p.shape[1], p.shape[3], p.shape[4]],
                    ),
                    _ => (TensorKind::Kernel3d, p.shape.clone()),
                },
            };
            let t = NamedTensor::from_f32(p.name.clone(), kind, shape, &p.value)
                .expect("network parameters are finite and well-shaped");
            a.insert(t).expect("unique parameter names");
        }
        a
    }

    /// Installs weights by name. Only parameters whose names start with one of
    /// `prefixes` are loaded (all when empty); every such parameter must exist
    /// in the archive with a matching shape.
    pub fn load_archive(&mut self, archive: &WeightArchive, prefixes: &[&str]) -> Result<usize> {
        let mut missing = Vec::new();
        let mut loaded = 0;
        for p in &mut self.params.params {
            if !prefixes.is_empty() && !prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                continue;
            }
            let Some(t) = archive.get(&p.name) else {
                missing.push(p.name.clone());
                continue;
            };
            let compatible = match (p.kind, t.kind) {
                (ParamKind::Bias, TensorKind::Param) => t.shape == p.shape,
                (ParamKind::Kernel, TensorKind::Kernel3d) => t.shape == p.shape,
                (ParamKind::Kernel, TensorKind::Kernel2d) => {
                    p.shape[2] == 1 && t.shape == [p.shape[0], p.shape[1], p.shape[3], p.shape[4]]
                }
                _ => false,
            };
            if !compatible {
                return Err(Error::Dimension(format!(
                    "{}: archive shape {:?} ({:?}) incompatible with {:?}",
                    p.name, t.shape, t.kind, p.shape
                )));
            }
            p.value = t.to_f32();
            loaded += 1;
        }
        if !missing.is_empty() {
            return Err(Error::Mapping(missing));
        }
        Ok(loaded)
    }

    pub fn kernel_names(&self) -> BTreeSet<String> {
        self.params
            .params
            .iter()
            .filter(|p| p.kind == ParamKind::Kernel)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params.params {
            h.update(p.name.as_bytes());
            for v in &p.value {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Momentum SGD with decoupled weight decay on kernels.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamStore, momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f32) {
        for ((p, g), v) in params.params.iter_mut().zip(&grads.0).zip(&mut self.velocity) {
            let wd = if p.kind == ParamKind::Kernel { self.weight_decay } else { 0.0 };
            for ((w, gi), vi) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
    }
}

/// Cosine decay from `base` to `base * floor` over `total` steps.
pub fn cosine_lr(base: f32, step: usize, total: usize, floor: f32) -> f32 {
    if total <= 1 {
        return base;
    }
    let t = (step as f32 / (total - 1) as f32).min(1.0);
    let min = base * floor;
    min + 0.5 * (base - min) * (1.0 + (std::f32::consts::PI * t).cos())
}
