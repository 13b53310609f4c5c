use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::archive::{NamedTensor, TensorKind, WeightArchive};
use crate::error::{Error, Result};

/// How a 2D kernel is lifted along the new depth axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflateStrategy {
    /// Replicate the kernel `d` times, scaled by `1/d`.
    #[default]
    Stack,
    /// Place the kernel at the central depth slice, zeros elsewhere (odd `d`).
    Center,
}

impl FromStr for InflateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stack" => Ok(InflateStrategy::Stack),
            "center" => Ok(InflateStrategy::Center),
            other => Err(Error::Argument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Per-layer kernel depths plus the inflation strategy.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DepthSpec {
    pub depths: BTreeMap<String, usize>,
    pub strategy: InflateStrategy,
}

/// Rule for deriving per-layer depths from a 2D archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthRule {
    /// Depth equals the kernel's spatial extent (3x3 -> 3, 1x1 -> 1); for
    /// non-square kernels the smaller extent.
    Cubic,
    Fixed(usize),
}

impl FromStr for DepthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cubic" {
            return Ok(DepthRule::Cubic);
        }
        if let Some(d) = s.strip_prefix("fixed:") {
            let d = d
                .parse()
                .map_err(|_| Error::Argument(format!("invalid fixed depth {d:?}")))?;
            return Ok(DepthRule::Fixed(d));
        }
        Err(Error::Argument(format!("unknown depth rule {s:?}")))
    }
}

impl DepthSpec {
    pub fn new(strategy: InflateStrategy) -> Self {
        Self {
            depths: BTreeMap::new(),
            strategy,
        }
    }

    pub fn with_layer(mut self, name: impl Into<String>, depth: usize) -> Self {
        self.depths.insert(name.into(), depth);
        self
    }

    /// Depths for every 2D kernel in `weights` according to `rule`.
    pub fn from_rule(weights: &WeightArchive, rule: DepthRule, strategy: InflateStrategy) -> Self {
        let depths = weights
            .kernels()
            .filter(|t| t.kind == TensorKind::Kernel2d)
            .map(|t| {
                let d = match rule {
                    DepthRule::Cubic => t.shape[2].min(t.shape[3]),
                    DepthRule::Fixed(d) => d,
                };
                (t.name.clone(), d)
            })
            .collect();
        Self { depths, strategy }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, &d) in &self.depths {
            if d == 0 {
                return Err(Error::Argument(format!("{name}: depth must be >= 1")));
            }
            if self.strategy == InflateStrategy::Center && d % 2 == 0 {
                return Err(Error::Argument(format!(
                    "{name}: center strategy needs an odd depth, got {d}"
                )));
            }
        }
        Ok(())
    }
}

fn check_kernel2d(k: &NamedTensor) -> Result<[usize; 4]> {
    if k.kind != TensorKind::Kernel2d {
        return Err(Error::Argument(format!("{} is not a 2D kernel", k.name)));
    }
    Ok([k.shape[0], k.shape[1], k.shape[2], k.shape[3]])
}

/// Depth-replicates a 2D kernel, dividing every copy by `depth`.
pub fn inflate_stack(kernel: &NamedTensor, depth: usize) -> Result<NamedTensor> {
    let [o, i, h, w] = check_kernel2d(kernel)?;
    if depth == 0 {
        return Err(Error::Argument("inflation depth must be >= 1".into()));
    }
    let plane = h * w;
    let scale = depth as f64;
    let mut data = Vec::with_capacity(kernel.data.len() * depth);
    for src in kernel.data.chunks_exact(plane) {
        for _ in 0..depth {
            data.extend(src.iter().map(|v| v / scale));
        }
    }
    NamedTensor::new(
        kernel.name.clone(),
        TensorKind::Kernel3d,
        kernel.dtype,
        vec![o, i, depth, h, w],
        data,
    )
}

/// Inserts a 2D kernel at the central slice of an odd-depth zero kernel.
pub fn inflate_center(kernel: &NamedTensor, depth: usize) -> Result<NamedTensor> {
    let [o, i, h, w] = check_kernel2d(kernel)?;
    if depth == 0 || depth % 2 == 0 {
        return Err(Error::Argument(format!(
            "center inflation needs an odd depth, got {depth}"
        )));
    }
    let center = (depth - 1) / 2;
    let plane = h * w;
    let mut data = vec![0.0; kernel.data.len() * depth];
    for (pair, src) in kernel.data.chunks_exact(plane).enumerate() {
        let dst = (pair * depth + center) * plane;
        data[dst..dst + plane].copy_from_slice(src);
    }
    NamedTensor::new(
        kernel.name.clone(),
        TensorKind::Kernel3d,
        kernel.dtype,
        vec![o, i, depth, h, w],
        data,
    )
}

fn inflate(kernel: &NamedTensor, depth: usize, strategy: InflateStrategy) -> Result<NamedTensor> {
    match strategy {
        InflateStrategy::Stack => inflate_stack(kernel, depth),
        InflateStrategy::Center => inflate_center(kernel, depth),
    }
}

/// Inflates every kernel of a 2D weight collection.
///
/// Kernels named in `spec` get the requested depth; other kernels get depth 1.
/// Non-kernel parameters and kernels that are already 3D pass through.
pub fn transfer_backbone(weights: &WeightArchive, spec: &DepthSpec) -> Result<WeightArchive> {
    spec.validate()?;
    let unknown: Vec<String> = spec
        .depths
        .keys()
        .filter(|name| {
            !weights
                .get(name)
                .is_some_and(|t| t.kind == TensorKind::Kernel2d)
        })
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Mapping(unknown));
    }
    let mut out = WeightArchive::new();
    for t in weights.tensors() {
        let lifted = match t.kind {
            TensorKind::Kernel2d => {
                let d = spec.depths.get(&t.name).copied().unwrap_or(1);
                inflate(t, d, spec.strategy)?
            }
            TensorKind::Kernel3d | TensorKind::Param => t.clone(),
        };
        out.insert(lifted)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::DType;

    fn kernel(name: &str, shape: [usize; 4], seed: u64) -> NamedTensor {
        let n = shape.iter().product();
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        NamedTensor::new(name, TensorKind::Kernel2d, DType::F64, shape.to_vec(), data).unwrap()
    }

    #[test]
    fn stack_scalar_example() {
        let k = NamedTensor::new("k", TensorKind::Kernel2d, DType::F64, vec![1, 1, 1, 1], vec![0.6]).unwrap();
        let s = inflate_stack(&k, 3).unwrap();
        assert_eq!(s.shape, vec![1, 1, 3, 1, 1]);
        for v in &s.data {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_one_is_identity_for_both_strategies() {
        let k = kernel("k", [2, 3, 3, 3], 1);
        for s in [inflate_stack(&k, 1).unwrap(), inflate_center(&k, 1).unwrap()] {
            assert_eq!(s.shape, vec![2, 3, 1, 3, 3]);
            assert_eq!(s.data, k.data);
        }
    }

    #[test]
    fn stack_preserves_depth_sum() {
        let k = kernel("k", [1, 1, 3, 3], 7);
        let s = inflate_stack(&k, 5).unwrap();
        for p in 0..9 {
            let sum: f64 = (0..5).map(|z| s.data[z * 9 + p]).sum();
            assert!((sum - k.data[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_places_single_slice() {
        let k = kernel("k", [1, 1, 3, 3], 3);
        let c = inflate_center(&k, 3).unwrap();
        assert!(c.data[..9].iter().all(|&v| v == 0.0));
        assert_eq!(&c.data[9..18], &k.data[..]);
        assert!(c.data[18..].iter().all(|&v| v == 0.0));

        let c5 = inflate_center(&k, 5).unwrap();
        let nonzero: Vec<usize> = (0..5)
            .filter(|z| c5.data[z * 9..(z + 1) * 9].iter().any(|&v| v != 0.0))
            .collect();
        // third slice, 1-based
        assert_eq!(nonzero, vec![2]);
        assert!(inflate_center(&k, 4).is_err());
        assert!(inflate_stack(&k, 0).is_err());
    }

    #[test]
    fn center_keeps_every_weight() {
        let k = kernel("k", [3, 2, 3, 3], 11);
        let c = inflate_center(&k, 3).unwrap();
        let mut a: Vec<u64> = k.data.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = c.data.iter().filter(|&&v| v != 0.0).map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    fn two_layer() -> WeightArchive {
        let mut w = WeightArchive::new();
        w.insert(kernel("layerA", [2, 1, 3, 3], 1)).unwrap();
        w.insert(NamedTensor::new("layerA.bias", TensorKind::Param, DType::F64, vec![2], vec![0.5, -0.5]).unwrap())
            .unwrap();
        w.insert(kernel("layerB", [2, 2, 1, 1], 2)).unwrap();
        w
    }

    #[test]
    fn backbone_transfer_per_layer() {
        let w = two_layer();
        let empty = transfer_backbone(&w, &DepthSpec::default()).unwrap();
        for t in empty.kernels() {
            assert_eq!(t.kind, TensorKind::Kernel3d);
            assert_eq!(t.shape[2], 1);
        }
        let spec = DepthSpec::new(InflateStrategy::Stack).with_layer("layerA", 3);
        let out = transfer_backbone(&w, &spec).unwrap();
        assert_eq!(out.get("layerA").unwrap().shape, vec![2, 1, 3, 3, 3]);
        assert_eq!(out.get("layerB").unwrap().shape, vec![2, 2, 1, 1, 1]);
        assert_eq!(out.get("layerA.bias").unwrap(), w.get("layerA.bias").unwrap());

        let even = DepthSpec::new(InflateStrategy::Center).with_layer("layerA", 4);
        assert!(matches!(transfer_backbone(&w, &even), Err(Error::Argument(_))));
        let unknown = DepthSpec::new(InflateStrategy::Stack).with_layer("nope", 3);
        match transfer_backbone(&w, &unknown) {
            Err(Error::Mapping(names)) => assert_eq!(names, vec!["nope".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transfer_is_identity_on_depth_one_3d() {
        let w = transfer_backbone(&two_layer(), &DepthSpec::default()).unwrap();
        assert_eq!(transfer_backbone(&w, &DepthSpec::default()).unwrap(), w);
    }

    #[test]
    fn cubic_rule_uses_spatial_extent() {
        let spec = DepthSpec::from_rule(&two_layer(), DepthRule::Cubic, InflateStrategy::Stack);
        assert_eq!(spec.depths["layerA"], 3);
        assert_eq!(spec.depths["layerB"], 1);
        assert_eq!("fixed:5".parse::<DepthRule>().unwrap(), DepthRule::Fixed(5));
        assert!("fixed:x".parse::<DepthRule>().is_err());
    }
}
