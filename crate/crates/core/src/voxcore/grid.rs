use serde::{Deserialize, Serialize};

use super::class::{argmax_class, OrientationClass, NUM_CLASSES};
use super::volume::{cells_to_cover, Dims3};
use crate::error::{Error, Result};

pub type ProbVector = [f64; NUM_CLASSES];

const PROB_TOLERANCE: f64 = 1e-6;

/// Coarse cell layout over a volume.
///
/// `dims` is always `ceil(volume_dims / cell_shape)` per axis; cells are
/// addressed row-major with z outermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridGeometry {
    pub cell_shape: Dims3,
    pub volume_dims: Dims3,
    pub dims: Dims3,
}

impl GridGeometry {
    pub fn new(cell_shape: Dims3, volume_dims: Dims3) -> Result<Self> {
        if cell_shape.iter().any(|&c| c == 0) || volume_dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "cell shape {cell_shape:?} and volume dims {volume_dims:?} must be positive"
            )));
        }
        Ok(Self {
            cell_shape,
            volume_dims,
            dims: cells_to_cover(volume_dims, cell_shape),
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn position(&self, index: usize) -> Dims3 {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        let k = index / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn contains(&self, pos: Dims3) -> bool {
        pos.iter().zip(self.dims.iter()).all(|(p, d)| p < d)
    }

    /// Voxel box `[start, end)` covered by a cell, clipped to the volume.
    pub fn voxel_range(&self, pos: Dims3) -> (Dims3, Dims3) {
        let mut start = [0; 3];
        let mut end = [0; 3];
        for a in 0..3 {
            start[a] = pos[a] * self.cell_shape[a];
            end[a] = ((pos[a] + 1) * self.cell_shape[a]).min(self.volume_dims[a]);
        }
        (start, end)
    }
}

/// Hard class label per coarse cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    geometry: GridGeometry,
    cells: Vec<OrientationClass>,
}

impl LabelGrid {
    pub fn filled(geometry: GridGeometry, class: OrientationClass) -> Self {
        Self {
            geometry,
            cells: vec![class; geometry.len()],
        }
    }

    pub fn from_cells(geometry: GridGeometry, cells: Vec<OrientationClass>) -> Result<Self> {
        if cells.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "label grid needs {} cells, got {}",
                geometry.len(),
                cells.len()
            )));
        }
        Ok(Self { geometry, cells })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> Dims3 {
        self.geometry.dims
    }

    pub fn cell_shape(&self) -> Dims3 {
        self.geometry.cell_shape
    }

    pub fn cells(&self) -> &[OrientationClass] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> OrientationClass {
        self.cells[self.geometry.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, class: OrientationClass) {
        let idx = self.geometry.index(i, j, k);
        self.cells[idx] = class;
    }

    /// Cell counts per class code.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for c in &self.cells {
            h[c.index()] += 1;
        }
        h
    }

    pub fn class_fractions(&self) -> [f64; NUM_CLASSES] {
        let h = self.histogram();
        let n = self.cells.len() as f64;
        [h[0] as f64 / n, h[1] as f64 / n, h[2] as f64 / n]
    }

    /// One-hot prediction grid with the same layout.
    pub fn to_prediction(&self) -> PredictionGrid {
        PredictionGrid {
            geometry: self.geometry,
            cells: self.cells.iter().map(|c| c.one_hot()).collect(),
        }
    }
}

/// Per-cell class probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    geometry: GridGeometry,
    cells: Vec<ProbVector>,
}

impl PredictionGrid {
    pub fn from_cells(geometry: GridGeometry, cells: Vec<ProbVector>) -> Result<Self> {
        if cells.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "prediction grid needs {} cells, got {}",
                geometry.len(),
                cells.len()
            )));
        }
        for (idx, p) in cells.iter().enumerate() {
            check_probability(p).map_err(|e| {
                Error::Argument(format!("cell {:?}: {e}", geometry.position(idx)))
            })?;
        }
        Ok(Self { geometry, cells })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> Dims3 {
        self.geometry.dims
    }

    pub fn cell_shape(&self) -> Dims3 {
        self.geometry.cell_shape
    }

    pub fn cells(&self) -> &[ProbVector] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &ProbVector {
        &self.cells[self.geometry.index(i, j, k)]
    }

    /// Argmax per cell, ties to the lowest class code.
    pub fn hardened(&self) -> LabelGrid {
        LabelGrid {
            geometry: self.geometry,
            cells: self.cells.iter().map(|p| argmax_class(p)).collect(),
        }
    }
}

pub(crate) fn check_probability(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Argument(format!("negative or non-finite probability {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::Argument(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_uses_ceiling_division() {
        let g = GridGeometry::new([64, 64, 1], [1000, 1000, 1]).unwrap();
        assert_eq!(g.dims, [16, 16, 1]);
        assert_eq!(g.voxel_range([15, 15, 0]), ([960, 960, 0], [1000, 1000, 1]));
        for idx in 0..g.len() {
            let [i, j, k] = g.position(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn prediction_grid_rejects_unnormalized_cells() {
        let g = GridGeometry::new([1, 1, 1], [1, 1, 1]).unwrap();
        assert!(PredictionGrid::from_cells(g, vec![[0.5, 0.5, 0.1]]).is_err());
        assert!(PredictionGrid::from_cells(g, vec![[-0.1, 0.6, 0.5]]).is_err());
        assert!(PredictionGrid::from_cells(g, vec![[0.2, 0.3, 0.5]]).is_ok());
    }

    #[test]
    fn hardened_breaks_ties_low() {
        let g = GridGeometry::new([1, 1, 1], [2, 1, 1]).unwrap();
        let p = PredictionGrid::from_cells(g, vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]).unwrap();
        assert_eq!(
            p.hardened().cells(),
            &[OrientationClass::S, OrientationClass::D]
        );
    }
}
