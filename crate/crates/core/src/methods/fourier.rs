use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::synthgen::LabeledScan;
use crate::voxcore::{
    coarsen_labels, stitch, tile_iter, CoarsenRule, LabelGrid, OrientationClass, PredictionGrid, ScanVolume,
    TileSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    /// Patch size (x, y) in voxels.
    pub patch: [usize; 2],
    /// Patches whose mean lies below this level are dark (N).
    pub dark_threshold: f64,
    /// Patches with a coherence score at or above this are anisotropic (S), else isotropic (D).
    pub anisotropy_threshold: f64,
    /// Measure darkness relative to the median grey value of the slice.
    pub relative_to_slice_median: bool,
    /// Re-fit both thresholds on the validation scans before testing.
    pub calibrate: bool,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            patch: [16, 16],
            dark_threshold: 25.0,
            anisotropy_threshold: 0.5,
            relative_to_slice_median: true,
            calibrate: true,
        }
    }
}

impl FourierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch.iter().any(|&p| p < 2) {
            return Err(Error::Config(format!("fourier patch {:?} too small", self.patch)));
        }
        if !(self.anisotropy_threshold >= 0.0 && self.anisotropy_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "anisotropy threshold {} outside [0, 1]",
                self.anisotropy_threshold
            )));
        }
        if !self.dark_threshold.is_finite() || (!self.relative_to_slice_median && self.dark_threshold < 0.0) {
            return Err(Error::Config(format!("invalid dark threshold {}", self.dark_threshold)));
        }
        Ok(())
    }
}

/// Reusable FFT plans for one patch size.
pub struct SpectrumPlan {
    w: usize,
    h: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
}

impl SpectrumPlan {
    pub fn new(w: usize, h: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            w,
            h,
            row: planner.plan_fft_forward(w),
            col: planner.plan_fft_forward(h),
        }
    }

    /// Eigenvalue gap over trace of the power-weighted second-moment matrix
    /// of the spectrum (DC excluded): 1 for a single orientation, near 0 for
    /// isotropic content. A flat patch scores 0.
    pub fn coherence(&self, patch: &[u8]) -> f64 {
        let (w, h) = (self.w, self.h);
        let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / patch.len() as f64;
        let mut buf: Vec<Complex<f64>> = patch.iter().map(|&v| Complex::new(v as f64 - mean, 0.0)).collect();
        for r in buf.chunks_mut(w) {
            self.row.process(r);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            self.col.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for ky in 0..h {
            let fy = if ky > h / 2 { ky as f64 - h as f64 } else { ky as f64 } / h as f64;
            for kx in 0..w {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let fx = if kx > w / 2 { kx as f64 - w as f64 } else { kx as f64 } / w as f64;
                let p = buf[ky * w + kx].norm_sqr();
                a += p * fx * fx;
                b += p * fx * fy;
                c += p * fy * fy;
            }
        }
        let trace = a + c;
        if trace <= 0.0 {
            return 0.0;
        }
        (((a - c).powi(2) + 4.0 * b * b).sqrt() / trace).clamp(0.0, 1.0)
    }
}

fn check_patch(patch: &[u8], dims: [usize; 2], cfg: &FourierConfig) -> Result<()> {
    if dims != cfg.patch || patch.len() != dims[0] * dims[1] {
        return Err(Error::Argument(format!(
            "patch of {} voxels with dims {dims:?} does not match configured {:?}",
            patch.len(),
            cfg.patch
        )));
    }
    Ok(())
}

fn decide(mean: f64, coherence: f64, level: f64, cfg: &FourierConfig) -> OrientationClass {
    if mean - level < cfg.dark_threshold {
        OrientationClass::N
    } else if coherence >= cfg.anisotropy_threshold {
        OrientationClass::S
    } else {
        OrientationClass::D
    }
}

/// Classifies one 2D patch (row-major, `dims` = (x, y)); darkness is judged
/// against `level` (0 for absolute grey values).
pub fn fourier_classify_patch(patch: &[u8], dims: [usize; 2], cfg: &FourierConfig, level: f64) -> Result<OrientationClass> {
    check_patch(patch, dims, cfg)?;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / patch.len() as f64;
    if mean - level < cfg.dark_threshold {
        return Ok(OrientationClass::N);
    }
    let plan = SpectrumPlan::new(dims[0], dims[1]);
    Ok(decide(mean, plan.coherence(patch), level, cfg))
}

fn slice_median(slice: &[u8]) -> f64 {
    let mut hist = [0usize; 256];
    for &v in slice {
        hist[v as usize] += 1;
    }
    let half = slice.len().div_ceil(2);
    let mut acc = 0;
    for (v, n) in hist.iter().enumerate() {
        acc += n;
        if acc >= half {
            return v as f64;
        }
    }
    255.0
}

/// Mean, coherence and darkness reference level of every patch of a scan,
/// in tile order.
struct PatchStats {
    spec: TileSpec,
    stats: Vec<(f64, f64, f64)>,
    indices: Vec<[usize; 3]>,
}

fn patch_stats(volume: &ScanVolume, cfg: &FourierConfig, plan: &SpectrumPlan) -> Result<PatchStats> {
    let spec = TileSpec::exact([cfg.patch[0], cfg.patch[1], 1]);
    let levels: Vec<f64> = (0..volume.depth())
        .map(|z| {
            if cfg.relative_to_slice_median {
                slice_median(volume.slice(z))
            } else {
                0.0
            }
        })
        .collect();
    let mut stats = Vec::new();
    let mut indices = Vec::new();
    for t in tile_iter(volume, spec)? {
        let mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / t.data.len() as f64;
        stats.push((mean, plan.coherence(&t.data), levels[t.origin[2]]));
        indices.push(t.index);
    }
    Ok(PatchStats { spec, stats, indices })
}

pub fn fourier_predict(volume: &ScanVolume, cfg: &FourierConfig) -> Result<PredictionGrid> {
    cfg.validate()?;
    let plan = SpectrumPlan::new(cfg.patch[0], cfg.patch[1]);
    let ps = patch_stats(volume, cfg, &plan)?;
    let geometry = ps.spec.cell_geometry(volume.dims())?;
    stitch(
        ps.stats
            .iter()
            .zip(&ps.indices)
            .map(|(&(m, c, l), &i)| (decide(m, c, l, cfg).one_hot(), i)),
        geometry,
    )
}

/// Grid search of both thresholds maximizing mean class accuracy on `scans`.
pub fn calibrate_fourier(scans: &[&LabeledScan], cfg: &FourierConfig) -> Result<FourierConfig> {
    cfg.validate()?;
    let plan = SpectrumPlan::new(cfg.patch[0], cfg.patch[1]);
    let mut rows: Vec<(f64, f64, usize)> = Vec::new();
    for scan in scans {
        let ps = patch_stats(&scan.volume, cfg, &plan)?;
        let truth: LabelGrid = coarsen_labels(&scan.labels, [cfg.patch[0], cfg.patch[1], 1], CoarsenRule::Presence)?;
        let geo = *truth.geometry();
        for (&(m, c, l), idx) in ps.stats.iter().zip(&ps.indices) {
            rows.push((m - l, c, truth.cells()[geo.index(idx[0], idx[1], idx[2])].index()));
        }
    }
    if rows.is_empty() {
        return Err(Error::Pipeline("no patches to calibrate the Fourier thresholds on".into()));
    }
    let mut darks: Vec<f64> = rows.iter().map(|r| r.0).collect();
    darks.sort_by(f64::total_cmp);
    let candidates_dark: Vec<f64> = (1..60).map(|q| darks[q * (darks.len() - 1) / 60]).collect();
    let candidates_aniso: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
    let mut best = (f64::NEG_INFINITY, cfg.dark_threshold, cfg.anisotropy_threshold);
    for &dt in &candidates_dark {
        for &at in &candidates_aniso {
            let mut hit = [0usize; 3];
            let mut tot = [0usize; 3];
            for &(rel, c, t) in &rows {
                let p = if rel < dt {
                    2
                } else if c >= at {
                    0
                } else {
                    1
                };
                tot[t] += 1;
                if p == t {
                    hit[t] += 1;
                }
            }
            let present: Vec<f64> = (0..3)
                .filter(|&k| tot[k] > 0)
                .map(|k| hit[k] as f64 / tot[k] as f64)
                .collect();
            let acc = present.iter().sum::<f64>() / present.len() as f64;
            if acc > best.0 {
                best = (acc, dt, at);
            }
        }
    }
    log::debug!("fourier calibration: meanacc {:.4} at dark {} / anisotropy {}", best.0, best.1, best.2);
    Ok(FourierConfig {
        dark_threshold: best.1,
        anisotropy_threshold: best.2,
        ..cfg.clone()
    })
}
