//! Synthetic 2D tile-classification pretext task standing in for large-scale
//! pretraining of the 2D backbone.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::backbone::{build_backbone_2d, WeightSource, TINY_IRV2};
use super::train::{train, TrainConfig};
use crate::error::Result;
use crate::nn::{input_tensor, Sample};
use crate::transfer::WeightArchive;

pub const PRETEXT_TILE: usize = 64;

const FIXTURE: &[u8] = include_bytes!("../../fixtures/tiny-irv2-pretext.fswa");

/// The shipped 2D weights of `tiny-irv2` trained on [`pretext_samples`].
pub fn pretrained_tiny_2d() -> Result<WeightArchive> {
    WeightArchive::decode(FIXTURE)
}

fn stripes(x: f64, y: f64, theta: f64, period: f64, phase: f64) -> f64 {
    let u = x * theta.cos() + y * theta.sin();
    0.5 + 0.5 * (2.0 * PI * u / period + phase).cos()
}

/// One pretext tile: class 0 = one stripe orientation, 1 = two orientations
/// at least 30 degrees apart, 2 = no stripes. Stripes may cover only part of
/// the tile.
pub fn pretext_tile(class: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = PRETEXT_TILE;
    let offset = rng.gen_range(0.0..45.0);
    let noise = Normal::new(9.0, rng.gen_range(2.0..11.0)).expect("valid std");
    let blob = [rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64), rng.gen_range(8.0..40.0)];
    let blob_amp = rng.gen_range(0.0..40.0);
    let t1 = rng.gen_range(0.0..PI);
    let t2 = t1 + rng.gen_range(30f64.to_radians()..=90f64.to_radians());
    let periods = [rng.gen_range(6.0..16.0), rng.gen_range(6.0..16.0)];
    let phases = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
    let mix = rng.gen_range(0.3..0.7);
    let contrast = rng.gen_range(35.0..110.0);
    let level = rng.gen_range(15.0..40.0);
    // region carrying the texture: full tile or a random rectangle of at least a quarter
    let (x0, y0, x1, y1) = if rng.gen_bool(0.5) {
        (0, 0, n, n)
    } else {
        let w = rng.gen_range(n / 2..=n);
        let h = rng.gen_range(n / 2..=n);
        let x0 = rng.gen_range(0..=n - w);
        let y0 = rng.gen_range(0..=n - h);
        (x0, y0, x0 + w, y0 + h)
    };
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64, y as f64);
            let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
            let content = match class {
                0 if inside => level + contrast * stripes(fx, fy, t1, periods[0], phases[0]),
                1 if inside => {
                    level
                        + contrast
                            * (mix * stripes(fx, fy, t1, periods[0], phases[0])
                                + (1.0 - mix) * stripes(fx, fy, t2, periods[1], phases[1]))
                }
                _ => {
                    let r2 = (fx - blob[0]).powi(2) + (fy - blob[1]).powi(2);
                    blob_amp * (-r2 / (2.0 * blob[2] * blob[2])).exp()
                }
            };
            let v = offset + content + noise.sample(rng);
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Balanced set of labelled pretext tiles.
pub fn pretext_samples(per_class: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 3);
    for i in 0..per_class * 3 {
        let class = (i % 3) as u8;
        let tile = pretext_tile(class, &mut rng);
        out.push(Sample {
            input: input_tensor(&tile, [1, PRETEXT_TILE, PRETEXT_TILE])?,
            targets: vec![Some(class)],
        });
    }
    Ok(out)
}

/// Trains `tiny-irv2` on the pretext task from a random initialization.
pub fn pretrain_tiny_2d(per_class: usize, epochs: usize, seed: u64) -> Result<(WeightArchive, f64)> {
    let mut backbone = build_backbone_2d(TINY_IRV2, WeightSource::Random { seed }, [PRETEXT_TILE, PRETEXT_TILE])?;
    let train_set = pretext_samples(per_class, seed.wrapping_add(1))?;
    let val_set = pretext_samples(per_class / 4 + 1, seed.wrapping_add(2))?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.05,
        seed,
        ..TrainConfig::default()
    };
    let history = train(&mut backbone.network, &train_set, &val_set, &cfg)?;
    let best = history
        .records
        .iter()
        .filter_map(|r| r.val_meanacc)
        .fold(0.0, f64::max);
    Ok((backbone.network.to_archive(), best))
}
