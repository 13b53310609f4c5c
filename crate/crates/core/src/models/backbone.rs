use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Dimensionality, Layer, LayerBuilder, Network, ParamStore, Window};
use crate::transfer::{transfer_backbone, DepthSpec, InflateStrategy, WeightArchive};
use crate::voxcore::NUM_CLASSES;

pub const TINY_IRV2: &str = "tiny-irv2";
pub const FULL_IRV2: &str = "full-inception-resnet-v2";

/// A stem operation; stride-2 operations are the downsampling points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemOp {
    Conv { out: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
}

/// One convolution inside an inception branch: output channels and (kh, kw).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchConv {
    pub out: usize,
    pub kernel: [usize; 2],
}

const fn bc(out: usize, kh: usize, kw: usize) -> BranchConv {
    BranchConv {
        out,
        kernel: [kh, kw],
    }
}

/// A run of inception-residual blocks at constant width.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// Halve the resolution on entry (max pool concatenated with a strided conv).
    pub downsample: bool,
    pub width: usize,
    pub blocks: usize,
    pub branches: Vec<Vec<BranchConv>>,
    pub residual_scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub stem: Vec<StemOp>,
    pub stages: Vec<Stage>,
    /// Optional 1x1 convolution closing the trunk.
    pub final_conv: Option<usize>,
}

impl ArchConfig {
    /// Small inception-residual network: three stride-2 stem convolutions
    /// (total stride 8) followed by four inception-residual blocks.
    pub fn tiny() -> Self {
        Self {
            stem: vec![
                StemOp::Conv { out: 8, kernel: 3, stride: 2 },
                StemOp::Conv { out: 16, kernel: 3, stride: 2 },
                StemOp::Conv { out: 32, kernel: 3, stride: 2 },
            ],
            stages: vec![Stage {
                downsample: false,
                width: 32,
                blocks: 4,
                branches: vec![vec![bc(8, 1, 1)], vec![bc(8, 1, 1), bc(8, 3, 3)]],
                residual_scale: 0.3,
            }],
            final_conv: None,
        }
    }

    /// Inception-ResNet-v2 layout: stem to stride 8, then 10 / 20 / 10 blocks
    /// separated by two reductions, closed by a 1536-channel 1x1 convolution.
    pub fn full() -> Self {
        Self {
            stem: vec![
                StemOp::Conv { out: 32, kernel: 3, stride: 2 },
                StemOp::Conv { out: 32, kernel: 3, stride: 1 },
                StemOp::Conv { out: 64, kernel: 3, stride: 1 },
                StemOp::MaxPool { kernel: 3, stride: 2 },
                StemOp::Conv { out: 80, kernel: 1, stride: 1 },
                StemOp::Conv { out: 192, kernel: 3, stride: 1 },
                StemOp::MaxPool { kernel: 3, stride: 2 },
            ],
            stages: vec![
                Stage {
                    downsample: false,
                    width: 320,
                    blocks: 10,
                    branches: vec![
                        vec![bc(32, 1, 1)],
                        vec![bc(32, 1, 1), bc(32, 3, 3)],
                        vec![bc(32, 1, 1), bc(48, 3, 3), bc(64, 3, 3)],
                    ],
                    residual_scale: 0.17,
                },
                Stage {
                    downsample: true,
                    width: 1088,
                    blocks: 20,
                    branches: vec![vec![bc(192, 1, 1)], vec![bc(128, 1, 1), bc(160, 1, 7), bc(192, 7, 1)]],
                    residual_scale: 0.1,
                },
                Stage {
                    downsample: true,
                    width: 2080,
                    blocks: 10,
                    branches: vec![vec![bc(192, 1, 1)], vec![bc(192, 1, 1), bc(224, 1, 3), bc(256, 3, 1)]],
                    residual_scale: 0.2,
                },
            ],
            final_conv: Some(1536),
        }
    }

    pub fn stem_downsamplings(&self) -> usize {
        self.stem
            .iter()
            .filter(|op| match op {
                StemOp::Conv { stride, .. } | StemOp::MaxPool { stride, .. } => *stride > 1,
            })
            .count()
    }

    pub fn total_stride(&self) -> usize {
        let stem = 1usize << self.stem_downsamplings();
        let stages = 1usize << self.stages.iter().filter(|s| s.downsample).count();
        stem * stages
    }

    pub fn feature_channels(&self) -> usize {
        self.final_conv
            .unwrap_or_else(|| self.stages.last().map(|s| s.width).unwrap_or(0))
    }
}

/// Where classification happens after the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Global average pooling, then a 1x1 convolution to class logits.
    Classifier,
    /// Average pooling with window = stride = `pool`, then the same 1x1 convolution.
    Segmentation { pool: usize },
}

/// Human-readable layer summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneDescriptor {
    pub name: String,
    pub three_d: bool,
    /// (channels, depth, height, width)
    pub input_shape: [usize; 4],
    pub feature_shape: [usize; 4],
    pub output_shape: [usize; 4],
    pub feature_channels: usize,
    pub parameters: usize,
    pub layers: Vec<LayerInfo>,
    pub weights_hash: String,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub name: String,
    pub arch: ArchConfig,
    pub network: Network,
}

impl Backbone {
    pub fn descriptor(&self) -> Result<BackboneDescriptor> {
        let net = &self.network;
        let mut layers = Vec::new();
        describe(&net.features, &net.params, &mut layers);
        describe(&net.head, &net.params, &mut layers);
        Ok(BackboneDescriptor {
            name: self.name.clone(),
            three_d: net.dimensionality == Dimensionality::ThreeD,
            input_shape: net.input_shape,
            feature_shape: net.feature_shape()?,
            output_shape: net.output_shape()?,
            feature_channels: self.arch.feature_channels(),
            parameters: net.parameter_count(),
            layers,
            weights_hash: net.weight_hash(),
        })
    }
}

fn describe(layer: &Layer, ps: &ParamStore, out: &mut Vec<LayerInfo>) {
    match layer {
        Layer::Conv { weight, win, .. } => out.push(LayerInfo {
            name: ps.params[*weight].name.trim_end_matches(".weight").to_string(),
            kind: "conv".into(),
            kernel: win.kernel,
            stride: win.stride,
            activation: "linear".into(),
        }),
        Layer::Relu => {
            if let Some(last) = out.last_mut() {
                last.activation = "relu".into();
            }
        }
        Layer::AvgPool(win) | Layer::MaxPool(win) => out.push(LayerInfo {
            name: String::new(),
            kind: if matches!(layer, Layer::AvgPool(_)) { "avgpool" } else { "maxpool" }.into(),
            kernel: win.kernel,
            stride: win.stride,
            activation: "linear".into(),
        }),
        Layer::GlobalAvgPool => out.push(LayerInfo {
            name: String::new(),
            kind: "global-avgpool".into(),
            kernel: [0; 3],
            stride: [1; 3],
            activation: "linear".into(),
        }),
        Layer::Seq(ls) | Layer::Concat(ls) => ls.iter().for_each(|l| describe(l, ps, out)),
        Layer::Residual { body, .. } => {
            describe(body, ps, out);
            if let Some(last) = out.last_mut() {
                last.activation = "residual-relu".into();
            }
        }
    }
}

/// Per-layer geometry decisions for building a trunk in 2D or 3D.
struct Lift<'a> {
    three_d: bool,
    depth_spec: Option<&'a DepthSpec>,
    /// Depth stride of each stride-2 stem op, in order.
    stem_depth_strides: Vec<usize>,
}

impl Lift<'_> {
    fn depth(&self, name: &str, kh: usize, kw: usize) -> usize {
        if !self.three_d {
            return 1;
        }
        self.depth_spec
            .and_then(|s| s.depths.get(&format!("{name}.weight")).copied())
            .unwrap_or_else(|| kh.min(kw))
    }

    fn conv_window(&self, name: &str, kh: usize, kw: usize, stride: usize, depth_stride: usize) -> Window {
        let kd = self.depth(name, kh, kw);
        let sd = if self.three_d { depth_stride } else { 1 };
        Window::same([kd, kh, kw], [sd, stride, stride])
    }

    fn pool_window(&self, k: usize, stride: usize, depth_stride: usize) -> Window {
        if self.three_d {
            Window::same([k, k, k], [depth_stride, stride, stride])
        } else {
            Window::same([1, k, k], [1, stride, stride])
        }
    }
}

fn build_trunk(
    arch: &ArchConfig,
    lift: &Lift<'_>,
    b: &mut LayerBuilder<'_, ChaCha8Rng>,
) -> Layer {
    let mut layers = Vec::new();
    let mut ch = 1;
    let mut down = 0;
    for (i, op) in arch.stem.iter().enumerate() {
        match *op {
            StemOp::Conv { out, kernel, stride } => {
                let sd = if stride > 1 { lift.stem_depth_strides[down] } else { 1 };
                if stride > 1 {
                    down += 1;
                }
                let name = format!("stem.{i}");
                let win = lift.conv_window(&name, kernel, kernel, stride, sd);
                layers.push(b.conv(&name, ch, out, win));
                layers.push(Layer::Relu);
                ch = out;
            }
            StemOp::MaxPool { kernel, stride } => {
                let sd = if stride > 1 { lift.stem_depth_strides[down] } else { 1 };
                if stride > 1 {
                    down += 1;
                }
                layers.push(Layer::MaxPool(lift.pool_window(kernel, stride, sd)));
            }
        }
    }
    for (s, stage) in arch.stages.iter().enumerate() {
        if stage.downsample {
            let name = format!("stage{s}.reduce");
            let extra = stage.width.saturating_sub(ch).max(1);
            let win = lift.conv_window(&name, 3, 3, 2, 2);
            layers.push(Layer::Concat(vec![
                Layer::MaxPool(lift.pool_window(3, 2, 2)),
                Layer::Seq(vec![b.conv(&name, ch, extra, win), Layer::Relu]),
            ]));
            ch += extra;
        }
        if ch != stage.width {
            let name = format!("stage{s}.entry");
            let win = lift.conv_window(&name, 1, 1, 1, 1);
            layers.push(b.conv(&name, ch, stage.width, win));
            layers.push(Layer::Relu);
            ch = stage.width;
        }
        for blk in 0..stage.blocks {
            let prefix = format!("stage{s}.block{blk}");
            let mut branches = Vec::new();
            let mut concat_ch = 0;
            for (bi, branch) in stage.branches.iter().enumerate() {
                let mut seq = Vec::new();
                let mut bch = ch;
                for (ci, conv) in branch.iter().enumerate() {
                    let name = format!("{prefix}.br{bi}.{ci}");
                    let win = lift.conv_window(&name, conv.kernel[0], conv.kernel[1], 1, 1);
                    seq.push(b.conv(&name, bch, conv.out, win));
                    seq.push(Layer::Relu);
                    bch = conv.out;
                }
                concat_ch += bch;
                branches.push(Layer::Seq(seq));
            }
            let name = format!("{prefix}.proj");
            let win = lift.conv_window(&name, 1, 1, 1, 1);
            let proj = b.conv(&name, concat_ch, ch, win);
            layers.push(Layer::Residual {
                body: Box::new(Layer::Seq(vec![Layer::Concat(branches), proj])),
                scale: stage.residual_scale,
            });
        }
    }
    if let Some(out) = arch.final_conv {
        let win = lift.conv_window("final", 1, 1, 1, 1);
        layers.push(b.conv("final", ch, out, win));
        layers.push(Layer::Relu);
    }
    Layer::Seq(layers)
}

fn head_layer(kind: HeadKind, three_d: bool, fc: Layer) -> Layer {
    match kind {
        HeadKind::Classifier => Layer::Seq(vec![Layer::GlobalAvgPool, fc]),
        HeadKind::Segmentation { pool } => {
            let win = if three_d {
                Window::valid([pool, pool, pool], [pool, pool, pool])
            } else {
                Window::valid([1, pool, pool], [1, pool, pool])
            };
            Layer::Seq(vec![Layer::AvgPool(win), fc])
        }
    }
}

fn arch_for(name: &str) -> Result<ArchConfig> {
    ArchConfig::by_name(name)
}

impl ArchConfig {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            TINY_IRV2 => Ok(ArchConfig::tiny()),
            FULL_IRV2 => Ok(ArchConfig::full()),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?}; expected {TINY_IRV2} or {FULL_IRV2}"
            ))),
        }
    }
}

/// Where a 2D backbone gets its initial weights.
#[derive(Debug, Clone)]
pub enum WeightSource {
    /// Seeded random initialization.
    Random { seed: u64 },
    /// Weights from an archive on disk.
    Archive(PathBuf),
    /// Weights already in memory.
    Loaded(WeightArchive),
}

fn assemble(
    name: &str,
    arch: ArchConfig,
    lift: Lift<'_>,
    input_shape: [usize; 4],
    seed: u64,
) -> Result<Backbone> {
    let mut store = ParamStore::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = LayerBuilder {
        store: &mut store,
        rng: &mut rng,
    };
    let features = build_trunk(&arch, &lift, &mut b);
    let fc_win = Window::valid([1, 1, 1], [1, 1, 1]);
    let fc = b.conv_with_std("head.fc", arch.feature_channels(), NUM_CLASSES, fc_win, 0.01);
    let head = head_layer(HeadKind::Classifier, lift.three_d, fc);
    let network = Network {
        params: store,
        features,
        head,
        input_shape,
        dimensionality: if lift.three_d {
            Dimensionality::ThreeD
        } else {
            Dimensionality::TwoD
        },
    };
    network.output_shape()?;
    Ok(Backbone {
        name: name.to_string(),
        arch,
        network,
    })
}

/// 2D tile classifier producing a 3-way softmax for a `tile x tile` input.
pub fn build_backbone_2d(name: &str, weights: WeightSource, tile: [usize; 2]) -> Result<Backbone> {
    let arch = arch_for(name)?;
    let seed = match &weights {
        WeightSource::Random { seed } => *seed,
        _ => 0,
    };
    if name == FULL_IRV2 {
        if let WeightSource::Random { .. } = weights {
            return Err(Error::Config(format!(
                "{FULL_IRV2} requires a pretrained weight archive"
            )));
        }
    }
    let lift = Lift {
        three_d: false,
        depth_spec: None,
        stem_depth_strides: vec![1; arch.stem_downsamplings()],
    };
    let mut backbone = assemble(name, arch, lift, [1, 1, tile[1], tile[0]], seed)?;
    match weights {
        WeightSource::Random { .. } => {}
        WeightSource::Archive(path) => {
            let archive = WeightArchive::load(&path).map_err(|e| {
                Error::Config(format!("cannot load weight archive {}: {e}", path.display()))
            })?;
            backbone.network.load_archive(&archive, &[])?;
        }
        WeightSource::Loaded(archive) => {
            backbone.network.load_archive(&archive, &[])?;
        }
    }
    Ok(backbone)
}

/// Depth strides of the stem's downsampling points for an input of
/// (width, height, depth); the last `log2(width / depth)` of them keep depth.
pub fn stem_depth_strides(arch: &ArchConfig, input: [usize; 3]) -> Result<Vec<usize>> {
    let [w, h, d] = input;
    if w != h {
        return Err(Error::Construction(format!(
            "3D backbone needs equal width and height, got {w} x {h}"
        )));
    }
    let n = arch.stem_downsamplings();
    let mut ratio_log = None;
    for m in 0..=n {
        if d << m == w {
            ratio_log = Some(m);
            break;
        }
    }
    let Some(m) = ratio_log else {
        let options: Vec<String> = (0..=n).map(|m| (w >> m).to_string()).collect();
        return Err(Error::Construction(format!(
            "depth {d} cannot be equalized with width {w} by {n} stem downsamplings; depth must be one of {}",
            options.join(", ")
        )));
    };
    Ok((0..n).map(|i| if i >= n - m { 1 } else { 2 }).collect())
}

/// 3D counterpart of the 2D backbone for an input of (width, height, depth).
///
/// Kernel depths come from `depth_spec` (keyed by `<layer>.weight`), falling
/// back to the cubic rule. If `weights_2d` is given it is inflated with the
/// spec's strategy and installed.
pub fn build_backbone_3d(
    name: &str,
    depth_spec: &DepthSpec,
    input: [usize; 3],
    weights_2d: Option<&WeightArchive>,
    seed: u64,
) -> Result<Backbone> {
    let arch = arch_for(name)?;
    depth_spec.validate()?;
    let strides = stem_depth_strides(&arch, input)?;
    let lift = Lift {
        three_d: true,
        depth_spec: Some(depth_spec),
        stem_depth_strides: strides,
    };
    let mut backbone = assemble(name, arch, lift, [1, input[2], input[1], input[0]], seed)?;
    if let Some(w2) = weights_2d {
        let mut spec = depth_spec.clone();
        for p in &backbone.network.params.params {
            if p.shape.len() == 5 {
                spec.depths.entry(p.name.clone()).or_insert(p.shape[2]);
            }
        }
        let w3 = transfer_backbone(w2, &spec)?;
        backbone.network.load_archive(&w3, &[])?;
    }
    Ok(backbone)
}

/// Depth spec that lifts every kernel of `arch` with the cubic rule.
pub fn cubic_depth_spec(strategy: InflateStrategy) -> DepthSpec {
    DepthSpec::new(strategy)
}

/// Replaces the classifier head by average pooling (window and stride `pool`)
/// followed by the same 1x1 convolution, giving a grid of class vectors.
pub fn build_segmentation_head_2d(backbone: &Backbone, pool: usize, input: [usize; 2]) -> Result<Network> {
    let mut net = backbone.network.clone();
    let fc = match &net.head {
        Layer::Seq(ls) => ls.last().cloned(),
        _ => None,
    }
    .ok_or_else(|| Error::Construction("backbone head has no output convolution".into()))?;
    if pool == 0 {
        return Err(Error::Construction("pool window must be positive".into()));
    }
    net.input_shape = [1, 1, input[1], input[0]];
    let fshape = net.feature_shape()?;
    if fshape[2] < pool || fshape[3] < pool {
        return Err(Error::Construction(format!(
            "feature map {:?} has no room for a {pool}x{pool} pooling window",
            &fshape[2..]
        )));
    }
    net.head = head_layer(
        HeadKind::Segmentation { pool },
        net.dimensionality == Dimensionality::ThreeD,
        fc,
    );
    net.output_shape()?;
    Ok(net)
}
