use serde::{Deserialize, Serialize};

use super::grid::{check_probability, GridGeometry, PredictionGrid, ProbVector};
use super::volume::{Dims3, ScanVolume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PaddingPolicy {
    /// Tiles overhanging the volume border are filled with zeros.
    ZeroPad,
    /// Only tiles fully inside the volume are emitted.
    DiscardPartial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_shape: Dims3,
    pub stride: Dims3,
    pub padding: PaddingPolicy,
}

impl TileSpec {
    /// Non-overlapping zero-padded tiling.
    pub fn exact(tile_shape: Dims3) -> Self {
        Self {
            tile_shape,
            stride: tile_shape,
            padding: PaddingPolicy::ZeroPad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.tile_shape[a] == 0 || self.stride[a] == 0 {
                return Err(Error::Argument(format!(
                    "tile shape {:?} and stride {:?} must be positive",
                    self.tile_shape, self.stride
                )));
            }
            if self.stride[a] > self.tile_shape[a] {
                return Err(Error::Argument(format!(
                    "stride {:?} exceeds tile shape {:?}",
                    self.stride, self.tile_shape
                )));
            }
        }
        Ok(())
    }

    /// Tile positions per axis for a volume of the given size.
    pub fn grid_dims(&self, volume_dims: Dims3) -> Result<Dims3> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let (dim, t, s) = (volume_dims[a], self.tile_shape[a], self.stride[a]);
            out[a] = match self.padding {
                PaddingPolicy::ZeroPad => {
                    if dim <= t {
                        1
                    } else {
                        (dim - t).div_ceil(s) + 1
                    }
                }
                PaddingPolicy::DiscardPartial => {
                    if dim < t {
                        return Err(Error::Dimension(format!(
                            "tile {:?} larger than volume {volume_dims:?}",
                            self.tile_shape
                        )));
                    }
                    (dim - t) / s + 1
                }
            };
        }
        Ok(out)
    }

    pub fn origin(&self, index: Dims3) -> Dims3 {
        [
            index[0] * self.stride[0],
            index[1] * self.stride[1],
            index[2] * self.stride[2],
        ]
    }

    /// Geometry of the output grid when every tile yields one cell.
    ///
    /// Only meaningful for exact-cover tilings (stride equal to tile shape).
    pub fn cell_geometry(&self, volume_dims: Dims3) -> Result<GridGeometry> {
        if self.stride != self.tile_shape {
            return Err(Error::Layout(
                "cell geometry needs stride equal to tile shape".into(),
            ));
        }
        GridGeometry::new(self.tile_shape, volume_dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub index: Dims3,
    pub origin: Dims3,
    /// Voxels in row-major (z, y, x) order, zero outside the volume.
    pub data: Vec<u8>,
}

/// Streaming tile enumeration in row-major (z, y, x) order.
pub struct TileIter<'a> {
    volume: &'a ScanVolume,
    spec: TileSpec,
    dims: Dims3,
    next: usize,
}

impl<'a> Iterator for TileIter<'a> {
    type Item = Tile;

    fn next(&mut self) -> Option<Tile> {
        let total = self.dims.iter().product::<usize>();
        if self.next >= total {
            return None;
        }
        let n = self.next;
        self.next += 1;
        let index = [
            n % self.dims[0],
            (n / self.dims[0]) % self.dims[1],
            n / (self.dims[0] * self.dims[1]),
        ];
        let origin = self.spec.origin(index);
        Some(Tile {
            index,
            origin,
            data: self.volume.extract_block(origin, self.spec.tile_shape),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.dims.iter().product::<usize>() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for TileIter<'_> {}

pub fn tile_iter(volume: &ScanVolume, spec: TileSpec) -> Result<TileIter<'_>> {
    let dims = spec.grid_dims(volume.dims())?;
    Ok(TileIter {
        volume,
        spec,
        dims,
        next: 0,
    })
}

pub fn tile(volume: &ScanVolume, spec: TileSpec) -> Result<Vec<Tile>> {
    Ok(tile_iter(volume, spec)?.collect())
}

/// Places per-tile classifications into a prediction grid.
pub fn stitch(
    classifications: impl IntoIterator<Item = (ProbVector, Dims3)>,
    geometry: GridGeometry,
) -> Result<PredictionGrid> {
    let mut cells: Vec<Option<ProbVector>> = vec![None; geometry.len()];
    for (probs, index) in classifications {
        if !geometry.contains(index) {
            return Err(Error::Layout(format!(
                "grid index {index:?} outside grid {:?}",
                geometry.dims
            )));
        }
        check_probability(&probs)?;
        let slot = &mut cells[geometry.index(index[0], index[1], index[2])];
        if slot.is_some() {
            return Err(Error::Layout(format!("duplicate grid index {index:?}")));
        }
        *slot = Some(probs);
    }
    let mut out = Vec::with_capacity(cells.len());
    for (idx, cell) in cells.into_iter().enumerate() {
        match cell {
            Some(p) => out.push(p),
            None => {
                return Err(Error::Layout(format!(
                    "missing grid index {:?}",
                    geometry.position(idx)
                )))
            }
        }
    }
    PredictionGrid::from_cells(geometry, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::volume::DEFAULT_PITCH_UM;

    /// Independent enumeration of tile origins along one axis.
    fn oracle_positions(dim: usize, tile: usize, stride: usize) -> usize {
        let mut count = 0;
        let mut start = 0;
        loop {
            count += 1;
            if start + tile >= dim {
                break;
            }
            start += stride;
        }
        count
    }

    #[test]
    fn image_1000_tiled_by_64() {
        let v = ScanVolume::zeros([1000, 1000, 1]).unwrap();
        let tiles = tile(&v, TileSpec::exact([64, 64, 1])).unwrap();
        assert_eq!(tiles.len(), 256);
        assert_eq!(oracle_positions(1000, 64, 64), 16);
        assert_eq!(tiles[17].index, [1, 1, 0]);
        assert_eq!(tiles[17].origin, [64, 64, 0]);
    }

    #[test]
    fn single_tile_volume() {
        let voxels: Vec<u8> = (0..27).collect();
        let v = ScanVolume::new([3, 3, 3], voxels.clone(), DEFAULT_PITCH_UM, "a", "b").unwrap();
        let tiles = tile(&v, TileSpec::exact([3, 3, 3])).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].data, voxels);
    }

    #[test]
    fn block_128_128_64() {
        let v = ScanVolume::zeros([128, 128, 64]).unwrap();
        let tiles = tile(&v, TileSpec::exact([128, 128, 64])).unwrap();
        assert_eq!(tiles.len(), 1);
    }

    #[test]
    fn discard_partial_rejects_oversized_tiles() {
        let v = ScanVolume::zeros([10, 10, 1]).unwrap();
        let spec = TileSpec {
            tile_shape: [16, 16, 1],
            stride: [16, 16, 1],
            padding: PaddingPolicy::DiscardPartial,
        };
        assert!(matches!(tile(&v, spec), Err(Error::Dimension(_))));
        let spec = TileSpec {
            tile_shape: [4, 4, 1],
            stride: [4, 4, 1],
            ..spec
        };
        assert_eq!(spec.grid_dims([10, 10, 1]).unwrap(), [2, 2, 1]);
    }

    #[test]
    fn overlapping_stride_counts() {
        let spec = TileSpec {
            tile_shape: [8, 8, 1],
            stride: [4, 4, 1],
            padding: PaddingPolicy::ZeroPad,
        };
        for dim in 1..40 {
            let g = spec.grid_dims([dim, dim, 1]).unwrap();
            assert_eq!(g[0], oracle_positions(dim, 8, 4), "dim {dim}");
        }
        let bad = TileSpec {
            stride: [9, 8, 1],
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stitch_two_by_two() {
        let g = GridGeometry::new([1, 1, 1], [2, 2, 1]).unwrap();
        let input = vec![
            ([1.0, 0.0, 0.0], [0, 0, 0]),
            ([0.0, 1.0, 0.0], [1, 0, 0]),
            ([0.0, 0.0, 1.0], [0, 1, 0]),
            ([1.0, 0.0, 0.0], [1, 1, 0]),
        ];
        let grid = stitch(input.clone(), g).unwrap();
        let read: Vec<_> = grid.cells().to_vec();
        assert_eq!(read, input.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    }

    #[test]
    fn stitch_rejects_missing_and_duplicate() {
        let g = GridGeometry::new([1, 1, 1], [2, 1, 1]).unwrap();
        let p = [1.0, 0.0, 0.0];
        assert!(matches!(stitch(vec![(p, [0, 0, 0])], g), Err(Error::Layout(_))));
        assert!(matches!(
            stitch(vec![(p, [0, 0, 0]), (p, [0, 0, 0])], g),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn stitch_256_tiles_into_16_by_16() {
        let v = ScanVolume::zeros([1000, 1000, 1]).unwrap();
        let spec = TileSpec::exact([64, 64, 1]);
        let geometry = spec.cell_geometry(v.dims()).unwrap();
        let cls = tile_iter(&v, spec).unwrap().map(|t| ([0.0, 0.0, 1.0], t.index));
        let grid = stitch(cls, geometry).unwrap();
        assert_eq!(grid.dims(), [16, 16, 1]);
    }
}
