use serde::{Deserialize, Serialize};

use super::class::{OrientationClass, NUM_CLASSES};
use super::grid::{GridGeometry, LabelGrid};
use super::volume::Dims3;
use crate::error::{Error, Result};

/// How a coarse cell's reference label is derived from finer labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoarsenRule {
    /// Any S or D voxel makes the cell a region of interest; the larger of the
    /// two wins (ties to S). Cells without either are N.
    #[default]
    Presence,
    /// Voxel-weighted mode, ties to the lowest class code.
    Majority,
}

/// Per-class voxel coverage of each cell of `target` by the labels in `fine`.
pub fn class_coverage(fine: &LabelGrid, target: &GridGeometry) -> Result<Vec<[usize; NUM_CLASSES]>> {
    let fg = fine.geometry();
    if fg.volume_dims != target.volume_dims {
        return Err(Error::Resolution(format!(
            "label grid covers {:?}, target covers {:?}",
            fg.volume_dims, target.volume_dims
        )));
    }
    // For every target index along an axis: overlapping fine indices and overlap lengths.
    let overlaps: Vec<Vec<Vec<(usize, usize)>>> = (0..3)
        .map(|a| {
            (0..target.dims[a])
                .map(|t| {
                    let start = t * target.cell_shape[a];
                    let end = ((t + 1) * target.cell_shape[a]).min(target.volume_dims[a]);
                    let mut v = Vec::new();
                    let mut f = start / fg.cell_shape[a];
                    while f * fg.cell_shape[a] < end {
                        let fs = (f * fg.cell_shape[a]).max(start);
                        let fe = ((f + 1) * fg.cell_shape[a]).min(end);
                        v.push((f, fe - fs));
                        f += 1;
                    }
                    v
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(target.len());
    for idx in 0..target.len() {
        let [i, j, k] = target.position(idx);
        let mut counts = [0usize; NUM_CLASSES];
        for &(fk, lk) in &overlaps[2][k] {
            for &(fj, lj) in &overlaps[1][j] {
                for &(fi, li) in &overlaps[0][i] {
                    counts[fine.get(fi, fj, fk).index()] += li * lj * lk;
                }
            }
        }
        out.push(counts);
    }
    Ok(out)
}

/// Reference labels at a coarser (or just different) cell shape.
pub fn coarsen_labels(fine: &LabelGrid, target_cell: Dims3, rule: CoarsenRule) -> Result<LabelGrid> {
    let target = GridGeometry::new(target_cell, fine.geometry().volume_dims)?;
    let coverage = class_coverage(fine, &target)?;
    let cells = coverage.iter().map(|c| apply_rule(c, rule)).collect();
    LabelGrid::from_cells(target, cells)
}

fn apply_rule(counts: &[usize; NUM_CLASSES], rule: CoarsenRule) -> OrientationClass {
    let (s, d) = (counts[0], counts[1]);
    match rule {
        CoarsenRule::Presence => {
            if s == 0 && d == 0 {
                OrientationClass::N
            } else if s >= d {
                OrientationClass::S
            } else {
                OrientationClass::D
            }
        }
        CoarsenRule::Majority => {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if counts[c] > counts[best] {
                    best = c;
                }
            }
            OrientationClass::ALL[best]
        }
    }
}
