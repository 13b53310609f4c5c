use super::class::{OrientationClass, NUM_CLASSES};
use super::grid::{GridGeometry, LabelGrid, PredictionGrid, ProbVector};
use super::volume::Dims3;
use crate::error::{Error, Result};

/// Combines ensemble members of different resolutions on a common finer grid.
///
/// Each member's hardened label is broadcast to every target cell it covers;
/// the modal label across members wins, ties going to the lowest class code.
pub fn majority_vote(grids: &[PredictionGrid], target_cell: Dims3) -> Result<LabelGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Argument("majority vote needs at least one grid".into()))?;
    let volume_dims = first.geometry().volume_dims;
    let target = GridGeometry::new(target_cell, volume_dims)?;
    let mut hardened = Vec::with_capacity(grids.len());
    for g in grids {
        if g.geometry().volume_dims != volume_dims {
            return Err(Error::Resolution(format!(
                "ensemble member covers {:?}, expected {volume_dims:?}",
                g.geometry().volume_dims
            )));
        }
        let cs = g.cell_shape();
        if (0..3).any(|a| cs[a] % target_cell[a] != 0) {
            return Err(Error::Resolution(format!(
                "cell shape {cs:?} is not a multiple of target {target_cell:?}"
            )));
        }
        hardened.push(g.hardened());
    }

    let mut cells = Vec::with_capacity(target.len());
    for idx in 0..target.len() {
        let pos = target.position(idx);
        let mut votes = [0usize; NUM_CLASSES];
        for h in &hardened {
            let ratio = [
                h.cell_shape()[0] / target_cell[0],
                h.cell_shape()[1] / target_cell[1],
                h.cell_shape()[2] / target_cell[2],
            ];
            let label = h.get(pos[0] / ratio[0], pos[1] / ratio[1], pos[2] / ratio[2]);
            votes[label.index()] += 1;
        }
        cells.push(modal_class(&votes));
    }
    LabelGrid::from_cells(target, cells)
}

fn modal_class(votes: &[usize; NUM_CLASSES]) -> OrientationClass {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if votes[i] > votes[best] {
            best = i;
        }
    }
    OrientationClass::ALL[best]
}

/// Averages per-slice predictions over disjoint windows of `window` slices.
///
/// Every input must be a single-slice grid (depth one cell) with identical
/// x/y geometry. A trailing partial window averages the slices it has.
pub fn depth_average(per_slice: &[PredictionGrid], window: usize) -> Result<PredictionGrid> {
    let first = per_slice
        .first()
        .ok_or_else(|| Error::Argument("depth average needs at least one slice".into()))?;
    if window == 0 || window > per_slice.len() {
        return Err(Error::Argument(format!(
            "window {window} must be in 1..={}",
            per_slice.len()
        )));
    }
    let g0 = *first.geometry();
    for g in per_slice {
        let geo = g.geometry();
        if geo.dims[0] != g0.dims[0] || geo.dims[1] != g0.dims[1] || geo.dims[2] != 1 {
            return Err(Error::Dimension(format!(
                "slice grid dims {:?} incompatible with {:?}",
                geo.dims, g0.dims
            )));
        }
        if geo.cell_shape != g0.cell_shape {
            return Err(Error::Dimension("slice grids differ in cell shape".into()));
        }
    }
    let depth_voxels = per_slice.len() * g0.cell_shape[2];
    let geometry = GridGeometry::new(
        [g0.cell_shape[0], g0.cell_shape[1], g0.cell_shape[2] * window],
        [g0.volume_dims[0], g0.volume_dims[1], depth_voxels],
    )?;
    let plane = g0.dims[0] * g0.dims[1];
    let mut cells = Vec::with_capacity(geometry.len());
    for chunk in per_slice.chunks(window) {
        for c in 0..plane {
            let mut acc = [0.0; NUM_CLASSES];
            for g in chunk {
                for (a, p) in acc.iter_mut().zip(g.cells()[c].iter()) {
                    *a += p;
                }
            }
            let n = chunk.len() as f64;
            cells.push(normalize(acc.map(|a| a / n)));
        }
    }
    PredictionGrid::from_cells(geometry, cells)
}

/// Splits a volume-wide grid with single-voxel-deep cells into per-slice grids.
pub fn split_slices(grid: &PredictionGrid) -> Result<Vec<PredictionGrid>> {
    let geo = grid.geometry();
    if geo.cell_shape[2] != 1 {
        return Err(Error::Dimension(format!(
            "cell depth must be 1 to split into slices, got {:?}",
            geo.cell_shape
        )));
    }
    let slice_geo = GridGeometry::new(geo.cell_shape, [geo.volume_dims[0], geo.volume_dims[1], 1])?;
    let plane = geo.dims[0] * geo.dims[1];
    grid.cells()
        .chunks(plane)
        .map(|c| PredictionGrid::from_cells(slice_geo, c.to_vec()))
        .collect()
}

/// Renormalizes away floating-point drift.
pub(crate) fn normalize(mut p: ProbVector) -> ProbVector {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        for v in &mut p {
            *v /= sum;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use OrientationClass::*;

    fn grid_of(cell: Dims3, vol: Dims3, labels: &[OrientationClass]) -> PredictionGrid {
        let g = GridGeometry::new(cell, vol).unwrap();
        PredictionGrid::from_cells(g, labels.iter().map(|c| c.one_hot()).collect()).unwrap()
    }

    /// Exhaustive count oracle for a single target cell.
    fn oracle_mode(labels: &[OrientationClass]) -> OrientationClass {
        let mut best = (0usize, S);
        for c in OrientationClass::ALL.iter().rev() {
            let n = labels.iter().filter(|l| *l == c).count();
            if n >= best.0 {
                best = (n, *c);
            }
        }
        best.1
    }

    #[test]
    fn single_member_broadcasts() {
        let coarse = grid_of([2, 2, 1], [4, 2, 1], &[D, N]);
        let out = majority_vote(&[coarse], [1, 1, 1]).unwrap();
        assert_eq!(out.dims(), [4, 2, 1]);
        assert_eq!(out.cells(), &[D, D, N, N, D, D, N, N]);
    }

    #[test]
    fn three_member_vote_and_tie() {
        let m = |c| grid_of([1, 1, 1], [1, 1, 1], &[c]);
        let out = majority_vote(&[m(S), m(S), m(D)], [1, 1, 1]).unwrap();
        assert_eq!(out.cells()[0], oracle_mode(&[S, S, D]));
        assert_eq!(out.cells()[0], S);
        let out = majority_vote(&[m(S), m(D)], [1, 1, 1]).unwrap();
        assert_eq!(out.cells()[0], oracle_mode(&[S, D]));
        assert_eq!(out.cells()[0], S);
        let out = majority_vote(&[m(N), m(D)], [1, 1, 1]).unwrap();
        assert_eq!(out.cells()[0], D);
    }

    #[test]
    fn non_divisible_cells_rejected() {
        let coarse = grid_of([3, 3, 1], [6, 6, 1], &[N; 4]);
        assert!(matches!(
            majority_vote(&[coarse], [2, 2, 1]),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn depth_average_window_two() {
        let a = grid_of([1, 1, 1], [1, 1, 1], &[S]);
        let b = grid_of([1, 1, 1], [1, 1, 1], &[D]);
        let out = depth_average(&[a.clone(), b], 2).unwrap();
        assert_eq!(out.cells()[0], [0.5, 0.5, 0.0]);
        assert_eq!(out.cell_shape(), [1, 1, 2]);
        let id = depth_average(&[a.clone()], 1).unwrap();
        assert_eq!(id.cells(), a.cells());
    }

    #[test]
    fn depth_average_identical_slices() {
        let g = GridGeometry::new([1, 1, 1], [1, 1, 1]).unwrap();
        let p = [0.2, 0.3, 0.5];
        let slices: Vec<_> = (0..16)
            .map(|_| PredictionGrid::from_cells(g, vec![p]).unwrap())
            .collect();
        let out = depth_average(&slices, 16).unwrap();
        assert_eq!(out.dims(), [1, 1, 1]);
        for (x, y) in out.cells()[0].iter().zip(p.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_average_errors() {
        assert!(depth_average(&[], 1).is_err());
        let a = grid_of([1, 1, 1], [1, 1, 1], &[S]);
        assert!(depth_average(&[a.clone()], 2).is_err());
        assert!(depth_average(&[a], 0).is_err());
    }
}
