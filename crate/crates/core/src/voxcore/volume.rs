use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel extent or cell shape in (x, y, z) order.
pub type Dims3 = [usize; 3];

/// Dense 8-bit grayscale scan, stored row-major with z outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanVolume {
    dims: Dims3,
    voxels: Vec<u8>,
    voxel_pitch_um: [f64; 3],
    pub scan_id: String,
    pub group_id: String,
}

impl ScanVolume {
    pub fn new(
        dims: Dims3,
        voxels: Vec<u8>,
        voxel_pitch_um: [f64; 3],
        scan_id: impl Into<String>,
        group_id: impl Into<String>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("volume dims must be positive, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::Dimension(format!(
                "voxel buffer has {} entries, dims {dims:?} need {expected}",
                voxels.len()
            )));
        }
        if voxel_pitch_um.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Argument(format!(
                "voxel pitch must be strictly positive, got {voxel_pitch_um:?}"
            )));
        }
        Ok(Self {
            dims,
            voxels,
            voxel_pitch_um,
            scan_id: scan_id.into(),
            group_id: group_id.into(),
        })
    }

    /// All-zero volume with the default 0.25 x 0.25 x 0.5 um pitch.
    pub fn zeros(dims: Dims3) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0; n], DEFAULT_PITCH_UM, "scan", "group")
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn depth(&self) -> usize {
        self.dims[2]
    }

    pub fn voxel_pitch_um(&self) -> [f64; 3] {
        self.voxel_pitch_um
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [u8] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.index(x, y, z)]
    }

    /// One z-slice as a row-major (y, x) buffer.
    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Copies the box starting at `origin` with extent `shape`; voxels outside
    /// the volume read as zero.
    pub fn extract_block(&self, origin: Dims3, shape: Dims3) -> Vec<u8> {
        let mut out = vec![0u8; shape[0] * shape[1] * shape[2]];
        let [w, h, d] = self.dims;
        let x_end = (origin[0] + shape[0]).min(w);
        if origin[0] >= w {
            return out;
        }
        let run = x_end - origin[0];
        for dz in 0..shape[2] {
            let z = origin[2] + dz;
            if z >= d {
                break;
            }
            for dy in 0..shape[1] {
                let y = origin[1] + dy;
                if y >= h {
                    break;
                }
                let src = self.index(origin[0], y, z);
                let dst = (dz * shape[1] + dy) * shape[0];
                out[dst..dst + run].copy_from_slice(&self.voxels[src..src + run]);
            }
        }
        out
    }
}

/// x/y pitch 0.25 um (1000 px over 250 um), z pitch 0.5 um.
pub const DEFAULT_PITCH_UM: [f64; 3] = [0.25, 0.25, 0.5];

/// Number of cells of extent `cell` needed to cover `dim` voxels.
pub fn cells_to_cover(dims: Dims3, cell: Dims3) -> Dims3 {
    [
        dims[0].div_ceil(cell[0]),
        dims[1].div_ceil(cell[1]),
        dims[2].div_ceil(cell[2]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(ScanVolume::new([0, 1, 1], vec![], DEFAULT_PITCH_UM, "a", "b").is_err());
        assert!(ScanVolume::new([2, 2, 1], vec![0; 3], DEFAULT_PITCH_UM, "a", "b").is_err());
        assert!(ScanVolume::new([1, 1, 1], vec![0], [0.25, 0.0, 0.5], "a", "b").is_err());
    }

    #[test]
    fn extract_block_zero_pads_outside() {
        let voxels: Vec<u8> = (0..8).collect();
        let v = ScanVolume::new([2, 2, 2], voxels, DEFAULT_PITCH_UM, "a", "b").unwrap();
        let block = v.extract_block([1, 1, 1], [2, 2, 2]);
        assert_eq!(block, vec![7, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(v.extract_block([0, 0, 0], [2, 2, 2]), (0..8).collect::<Vec<u8>>());
    }
}
