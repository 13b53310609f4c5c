use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{build_backbone_3d, build_second_stage, train, Backbone, TrainConfig, TrainHistory};
use crate::nn::{input_tensor, Network, Sample, Tensor};
use crate::synthgen::LabeledScan;
use crate::transfer::DepthSpec;
use crate::voxcore::{
    coarsen_labels, tile_iter, CoarsenRule, Dims3, GridGeometry, PredictionGrid, ScanVolume, TileSpec,
};

use super::config::{Init, MethodConfig};
use super::deep::weights_2d;
use super::derive_seed;

pub const CACHE_ENV: &str = "FIBERSEG_CACHE";
const CACHE_MAGIC: &[u8; 4] = b"FSFC";

/// One feature vector per block, laid out channel-major as a (c, z, y, x) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    /// Block grid extent (x, y, z).
    pub dims: Dims3,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn get(&self, x: usize, y: usize, z: usize) -> Vec<f32> {
        let plane = self.dims.iter().product::<usize>();
        let pos = (z * self.dims[1] + y) * self.dims[0] + x;
        (0..self.channels).map(|c| self.data[c * plane + pos]).collect()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec([self.channels, self.dims[2], self.dims[1], self.dims[0]], self.data.clone())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = CACHE_MAGIC.to_vec();
        for v in self.dims.iter().chain(std::iter::once(&self.channels)) {
            out.extend_from_slice(&(*v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
            return None;
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let dims = [u(0), u(1), u(2)];
        let channels = u(3);
        let n = dims.iter().product::<usize>() * channels;
        let body = &bytes[20..];
        if body.len() != 4 * n {
            return None;
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Self { dims, channels, data })
    }
}

/// Globally pooled features of every block of a scan.
pub fn extract_feature_grid(extractor: &Backbone, volume: &ScanVolume, spec: TileSpec) -> Result<FeatureGrid> {
    let [_, d, h, w] = extractor.network.input_shape;
    if spec.tile_shape != [w, h, d] {
        return Err(Error::Argument(format!(
            "tile shape {:?} does not match extractor input {:?}",
            spec.tile_shape,
            [w, h, d]
        )));
    }
    let dims = spec.grid_dims(volume.dims())?;
    let plane = dims.iter().product::<usize>();
    let mut per_block = Vec::with_capacity(plane);
    for t in tile_iter(volume, spec)? {
        let x = input_tensor(&t.data, [d, h, w])?;
        per_block.push(extractor.network.pooled_features(&x)?);
    }
    let channels = per_block.first().map_or(0, Vec::len);
    let mut data = vec![0.0; channels * plane];
    // tile order is row-major (z, y, x), matching the grid plane order
    for (pos, f) in per_block.iter().enumerate() {
        for (c, v) in f.iter().enumerate() {
            data[c * plane + pos] = *v;
        }
    }
    Ok(FeatureGrid { dims, channels, data })
}

/// Feature grids keyed by scan, voxel content, extractor weights and tiling,
/// held in memory and optionally mirrored to a directory.
#[derive(Debug, Default)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, FeatureGrid>,
    pub hits: usize,
    pub misses: usize,
}

impl FeatureCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            ..Self::default()
        }
    }

    /// Uses `dir` if given, else the `FIBERSEG_CACHE` directory if set.
    pub fn from_config(dir: Option<&Path>) -> Self {
        let dir = dir
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from));
        Self::new(dir)
    }

    pub fn key(volume: &ScanVolume, weight_hash: &str, spec: &TileSpec) -> String {
        let mut h = Sha256::new();
        h.update(volume.scan_id.as_bytes());
        h.update([0]);
        h.update(Sha256::digest(volume.voxels()));
        h.update(weight_hash.as_bytes());
        h.update(format!("{spec:?}").as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    pub fn clear_memory(&mut self) {
        self.memory.clear();
    }

    pub fn get_or_compute(&mut self, extractor: &Backbone, volume: &ScanVolume, spec: TileSpec) -> Result<FeatureGrid> {
        let key = Self::key(volume, &extractor.network.weight_hash(), &spec);
        let expected_dims = spec.grid_dims(volume.dims())?;
        let check = |g: &FeatureGrid| -> Result<()> {
            if g.dims != expected_dims {
                return Err(Error::Pipeline(format!(
                    "cached features for {} have grid {:?}, expected {expected_dims:?}",
                    volume.scan_id, g.dims
                )));
            }
            Ok(())
        };
        if let Some(g) = self.memory.get(&key) {
            check(g)?;
            self.hits += 1;
            return Ok(g.clone());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.fsfc"));
            if let Ok(bytes) = fs::read(&path) {
                let g = FeatureGrid::decode(&bytes)
                    .ok_or_else(|| Error::Pipeline(format!("corrupt feature cache entry {}", path.display())))?;
                check(&g)?;
                self.hits += 1;
                self.memory.insert(key, g.clone());
                return Ok(g);
            }
        }
        self.misses += 1;
        let g = extract_feature_grid(extractor, volume, spec)?;
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{key}.fsfc"));
            fs::write(&path, g.encode()).map_err(|e| Error::io(&path, e))?;
        }
        self.memory.insert(key, g.clone());
        Ok(g)
    }
}

pub struct TwostageModel {
    pub extractor: Backbone,
    pub stage2: Network,
    pub block: Dims3,
    mean: Vec<f32>,
    std: Vec<f32>,
    pub cache: FeatureCache,
}

fn standardize(t: &mut Tensor, mean: &[f32], std: &[f32]) {
    let plane = t.plane();
    for (c, chunk) in t.data.chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v - mean[c]) / std[c];
        }
    }
}

pub fn build_extractor(cfg: &MethodConfig) -> Result<Backbone> {
    let c = &cfg.twostage3d;
    let w2 = weights_2d(cfg, Init::Pretrained)?;
    build_backbone_3d(
        &cfg.backbone,
        &DepthSpec::new(c.strategy),
        c.block,
        w2.as_ref(),
        derive_seed(cfg.seed, "twostage3d-extractor"),
    )
}

pub fn fit_twostage3d(
    cfg: &MethodConfig,
    train_scans: &[&LabeledScan],
    val_scans: &[&LabeledScan],
    mut cache: FeatureCache,
) -> Result<(TwostageModel, TrainHistory)> {
    let c = &cfg.twostage3d;
    let extractor = build_extractor(cfg)?;
    let spec = TileSpec::exact(c.block);
    let mut samples = |scans: &[&LabeledScan]| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for s in scans {
            let grid = cache.get_or_compute(&extractor, &s.volume, spec)?;
            let truth = coarsen_labels(&s.labels, c.block, CoarsenRule::Presence)?;
            if truth.dims() != grid.dims {
                return Err(Error::Pipeline(format!(
                    "feature grid {:?} does not match label grid {:?}",
                    grid.dims,
                    truth.dims()
                )));
            }
            out.push(Sample {
                input: grid.to_tensor()?,
                targets: truth.cells().iter().map(|l| Some(l.code())).collect(),
            });
        }
        Ok(out)
    };
    let mut train_set = samples(train_scans)?;
    let mut val_set = samples(val_scans)?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::Pipeline("twostage3d needs training scans".into()))?;
    let channels = first.input.channels();
    let mut sum = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    let mut n = 0usize;
    for s in &train_set {
        let plane = s.input.plane();
        for (ch, chunk) in s.input.data.chunks(plane).enumerate() {
            for &v in chunk {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        n += plane;
    }
    let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
    let std: Vec<f32> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n as f64 - (*m as f64).powi(2)).max(0.0).sqrt() as f32).max(1e-3))
        .collect();
    for s in train_set.iter_mut().chain(val_set.iter_mut()) {
        standardize(&mut s.input, &mean, &std);
    }
    let [_, d, h, w] = train_set[0].input.shape;
    let mut stage2 = build_second_stage(channels, [d, h, w], &c.second_stage, derive_seed(cfg.seed, "twostage3d-stage2"))?;
    let tcfg = TrainConfig {
        seed: derive_seed(cfg.seed ^ c.train.seed, "twostage3d"),
        ..c.train.clone()
    };
    let history = train(&mut stage2, &train_set, &val_set, &tcfg)?;
    Ok((
        TwostageModel {
            extractor,
            stage2,
            block: c.block,
            mean,
            std,
            cache,
        },
        history,
    ))
}

impl TwostageModel {
    pub fn predict(&mut self, volume: &ScanVolume) -> Result<PredictionGrid> {
        let spec = TileSpec::exact(self.block);
        let grid = self.cache.get_or_compute(&self.extractor, volume, spec)?;
        if grid.channels != self.mean.len() {
            return Err(Error::Pipeline(format!(
                "feature grid has {} channels, second stage expects {}",
                grid.channels,
                self.mean.len()
            )));
        }
        let mut x = grid.to_tensor()?;
        standardize(&mut x, &self.mean, &self.std);
        let p = self.stage2.predict(&x)?;
        let geometry = GridGeometry::new(self.block, volume.dims())?;
        let cells = (0..geometry.len())
            .map(|pos| {
                let col = p.column(pos);
                let s: f64 = col.iter().map(|v| *v as f64).sum();
                [col[0] as f64 / s, col[1] as f64 / s, col[2] as f64 / s]
            })
            .collect();
        PredictionGrid::from_cells(geometry, cells)
    }
}
