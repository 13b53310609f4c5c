use crate::error::{Error, Result};
use crate::models::{
    build_backbone_2d, build_backbone_3d, build_segmentation_head_2d, pretrained_tiny_2d, train, ArchConfig, Backbone,
    TrainConfig, TrainHistory, WeightSource, TINY_IRV2,
};
use crate::nn::{input_tensor, Network, Sample};
use crate::synthgen::LabeledScan;
use crate::transfer::{DepthSpec, WeightArchive};
use crate::voxcore::{
    coarsen_labels, enforce_balance, majority_vote, stitch, tile_iter, CoarsenRule, Dims3, GridGeometry,
    LabelGrid, OrientationClass, PredictionGrid, ProbVector, ScanVolume, TileSpec,
};

use super::config::{Init, MethodConfig};
use super::derive_seed;

/// 2D weights for a backbone under the configured initialization.
pub(crate) fn weights_2d(cfg: &MethodConfig, init: Init) -> Result<Option<WeightArchive>> {
    match init {
        Init::Random => Ok(None),
        Init::Pretrained => match &cfg.backbone_weights {
            Some(path) => WeightArchive::load(path)
                .map(Some)
                .map_err(|e| Error::Config(format!("cannot load {}: {e}", path.display()))),
            None if cfg.backbone == TINY_IRV2 => pretrained_tiny_2d().map(Some),
            None => Err(Error::Config(format!(
                "backbone {} needs backbone_weights for pretrained initialization",
                cfg.backbone
            ))),
        },
    }
}

fn backbone_2d(cfg: &MethodConfig, init: Init, tile: [usize; 2], tag: &str) -> Result<Backbone> {
    let source = match weights_2d(cfg, init)? {
        Some(a) => WeightSource::Loaded(a),
        None => WeightSource::Random {
            seed: derive_seed(cfg.seed, tag),
        },
    };
    build_backbone_2d(&cfg.backbone, source, tile)
}

fn seeded(train: &TrainConfig, master: u64, tag: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(master ^ train.seed, tag),
        ..train.clone()
    }
}

fn probs(p: &[f32]) -> ProbVector {
    let mut v = [p[0] as f64, p[1] as f64, p[2] as f64];
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

/// Tiles of a scan with their presence labels at the tile resolution.
fn labelled_tiles(scan: &LabeledScan, spec: TileSpec) -> Result<Vec<(Sample, OrientationClass)>> {
    let truth = coarsen_labels(&scan.labels, spec.tile_shape, CoarsenRule::Presence)?;
    let [tx, ty, tz] = spec.tile_shape;
    tile_iter(&scan.volume, spec)?
        .map(|t| {
            let label = truth.get(t.index[0], t.index[1], t.index[2]);
            let input = input_tensor(&t.data, [tz, ty, tx])?;
            Ok((
                Sample {
                    input,
                    targets: vec![Some(label.code())],
                },
                label,
            ))
        })
        .collect()
}

/// Per-tile softmax of a classifier stitched to the tile grid.
fn classify_tiles(net: &Network, volume: &ScanVolume, spec: TileSpec) -> Result<PredictionGrid> {
    let geometry = spec.cell_geometry(volume.dims())?;
    let [tx, ty, tz] = spec.tile_shape;
    let mut out = Vec::with_capacity(geometry.len());
    for t in tile_iter(volume, spec)? {
        let p = net.predict(&input_tensor(&t.data, [tz, ty, tx])?)?;
        out.push((probs(&p.data), t.index));
    }
    stitch(out, geometry)
}

pub struct Classify2dModel {
    pub members: Vec<(usize, Network)>,
}

pub fn fit_classify2d(
    cfg: &MethodConfig,
    train_scans: &[&LabeledScan],
    val_scans: &[&LabeledScan],
) -> Result<(Classify2dModel, Vec<(String, TrainHistory)>)> {
    let c = &cfg.classify2d;
    let mut members = Vec::new();
    let mut histories = Vec::new();
    let finest = c.tile_sizes.iter().copied().min().unwrap_or(1);
    for &t in &c.tile_sizes {
        let spec = TileSpec::exact([t, t, 1]);
        let mut pool = Vec::new();
        for s in train_scans {
            pool.extend(labelled_tiles(s, spec)?);
        }
        let balanced = match enforce_balance(&pool, derive_seed(cfg.seed, &format!("balance{t}"))) {
            Ok(b) => b,
            // coarse members may see no tile of some class; the finest one must train
            Err(Error::Balance { class }) if t != finest => {
                log::warn!("classify2d: skipping tile size {t}, no training tile of class {class}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let train_set: Vec<Sample> = balanced.into_iter().map(|(s, _)| s).collect();
        let mut val_set = Vec::new();
        for s in val_scans {
            val_set.extend(labelled_tiles(s, spec)?.into_iter().map(|(s, _)| s));
        }
        let mut bb = backbone_2d(cfg, c.init, [t, t], &format!("classify2d{t}"))?;
        let h = train(
            &mut bb.network,
            &train_set,
            &val_set,
            &seeded(&c.train, cfg.seed, &format!("classify2d{t}")),
        )?;
        histories.push((format!("classify2d_{t}"), h));
        members.push((t, bb.network));
    }
    Ok((Classify2dModel { members }, histories))
}

impl Classify2dModel {
    pub fn finest(&self) -> usize {
        self.members.iter().map(|m| m.0).min().unwrap_or(1)
    }

    /// Ensemble prediction at the finest tile size, one cell per slice in depth.
    pub fn predict(&self, volume: &ScanVolume) -> Result<PredictionGrid> {
        let grids = self
            .members
            .iter()
            .map(|(t, net)| classify_tiles(net, volume, TileSpec::exact([*t, *t, 1])))
            .collect::<Result<Vec<_>>>()?;
        let f = self.finest();
        Ok(majority_vote(&grids, [f, f, 1])?.to_prediction())
    }
}

pub struct Segment2dModel {
    pub network: Network,
    /// Input voxels per output cell along x and y.
    pub cell: usize,
}

fn padded(len: usize, cell: usize) -> usize {
    len.div_ceil(cell) * cell
}

fn slice_sample(volume: &ScanVolume, z: usize, cell: usize, truth: Option<&LabelGrid>) -> Result<Sample> {
    let [w, h, _] = volume.dims();
    let (pw, ph) = (padded(w, cell), padded(h, cell));
    let data = volume.extract_block([0, 0, z], [pw, ph, 1]);
    let input = input_tensor(&data, [1, ph, pw])?;
    let (gw, gh) = (pw / cell, ph / cell);
    let targets = match truth {
        Some(t) => {
            let mut v = Vec::with_capacity(gw * gh);
            for j in 0..gh {
                for i in 0..gw {
                    v.push(Some(t.get(i, j, z).code()));
                }
            }
            v
        }
        None => vec![None; gw * gh],
    };
    Ok(Sample { input, targets })
}

pub fn fit_segment2d(
    cfg: &MethodConfig,
    train_scans: &[&LabeledScan],
    val_scans: &[&LabeledScan],
) -> Result<(Segment2dModel, TrainHistory)> {
    let c = &cfg.segment2d;
    let first = train_scans
        .first()
        .ok_or_else(|| Error::Pipeline("segment2d needs training scans".into()))?;
    let cell = ArchConfig::by_name(&cfg.backbone)?.total_stride() * c.pool;
    let [w, h, _] = first.volume.dims();
    let bb = backbone_2d(cfg, c.init, [padded(w, cell), padded(h, cell)], "segment2d")?;
    let mut network = build_segmentation_head_2d(&bb, c.pool, [padded(w, cell), padded(h, cell)])?;
    let samples = |scans: &[&LabeledScan]| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for s in scans {
            let truth = coarsen_labels(&s.labels, [cell, cell, 1], CoarsenRule::Presence)?;
            for z in 0..s.volume.depth() {
                out.push(slice_sample(&s.volume, z, cell, Some(&truth))?);
            }
        }
        Ok(out)
    };
    let train_set = samples(train_scans)?;
    let val_set = samples(val_scans)?;
    let history = train(&mut network, &train_set, &val_set, &seeded(&c.train, cfg.seed, "segment2d"))?;
    Ok((Segment2dModel { network, cell }, history))
}

impl Segment2dModel {
    /// One forward pass per slice; output cells of `cell x cell x 1` voxels.
    pub fn predict(&self, volume: &ScanVolume) -> Result<PredictionGrid> {
        let geometry = GridGeometry::new([self.cell, self.cell, 1], volume.dims())?;
        let [gw, gh, _] = geometry.dims;
        let mut cells = vec![[0.0; 3]; geometry.len()];
        for z in 0..volume.depth() {
            let s = slice_sample(volume, z, self.cell, None)?;
            let p = self.network.predict(&s.input)?;
            let [_, _, oh, ow] = p.shape;
            if (ow, oh) != (gw, gh) {
                return Err(Error::Pipeline(format!(
                    "segmentation output {ow}x{oh} does not match grid {gw}x{gh}"
                )));
            }
            for j in 0..gh {
                for i in 0..gw {
                    cells[geometry.index(i, j, z)] = probs(&p.column(j * ow + i));
                }
            }
        }
        PredictionGrid::from_cells(geometry, cells)
    }
}

pub struct Classify3dModel {
    pub network: Network,
    pub block: Dims3,
}

pub fn build_classify3d_network(cfg: &MethodConfig) -> Result<Network> {
    let c = &cfg.classify3d;
    let w2 = weights_2d(cfg, c.init)?;
    let spec = DepthSpec::new(c.strategy);
    let bb = build_backbone_3d(
        &cfg.backbone,
        &spec,
        c.block,
        w2.as_ref(),
        derive_seed(cfg.seed, "classify3d-init"),
    )?;
    Ok(bb.network)
}

pub fn fit_classify3d(
    cfg: &MethodConfig,
    train_scans: &[&LabeledScan],
    val_scans: &[&LabeledScan],
) -> Result<(Classify3dModel, TrainHistory)> {
    let c = &cfg.classify3d;
    let mut network = build_classify3d_network(cfg)?;
    let spec = TileSpec::exact(c.block);
    let samples = |scans: &[&LabeledScan]| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for s in scans {
            out.extend(labelled_tiles(s, spec)?.into_iter().map(|(s, _)| s));
        }
        Ok(out)
    };
    let train_set = samples(train_scans)?;
    let val_set = samples(val_scans)?;
    let history = train(&mut network, &train_set, &val_set, &seeded(&c.train, cfg.seed, "classify3d"))?;
    Ok((
        Classify3dModel {
            network,
            block: c.block,
        },
        history,
    ))
}

impl Classify3dModel {
    pub fn predict(&self, volume: &ScanVolume) -> Result<PredictionGrid> {
        classify_tiles(&self.network, volume, TileSpec::exact(self.block))
    }
}
