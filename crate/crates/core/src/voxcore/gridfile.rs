//! Binary grid file format shared by label and prediction grids.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "FSGRID" followed by u16 version (1)
//! kind         u8        0 = labels, 1 = probabilities
//! n_classes    u8        3
//! classes      n_classes x (code u8, name_len u8, name bytes)
//! grid dims    3 x u32   cells along x, y, z
//! cell shape   3 x u32   voxels per cell along x, y, z
//! volume dims  3 x u32   voxels along x, y, z
//! payload      row-major (z, y, x) cells:
//!              labels: one u8 class code per cell
//!              probabilities: n_classes x f64 per cell, in class-code order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::class::{OrientationClass, NUM_CLASSES};
use super::grid::{GridGeometry, LabelGrid, PredictionGrid, ProbVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"FSGRID";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum GridFile {
    Labels(LabelGrid),
    Probabilities(PredictionGrid),
}

fn write_header(out: &mut Vec<u8>, kind: u8, geo: &GridGeometry) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.push(NUM_CLASSES as u8);
    for c in OrientationClass::ALL {
        out.push(c.code());
        out.push(c.name().len() as u8);
        out.extend_from_slice(c.name().as_bytes());
    }
    for arr in [geo.dims, geo.cell_shape, geo.volume_dims] {
        for v in arr {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
}

pub fn encode_labels(grid: &LabelGrid) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, 0, grid.geometry());
    out.extend(grid.cells().iter().map(|c| c.code()));
    out
}

pub fn encode_predictions(grid: &PredictionGrid) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, 1, grid.geometry());
    for p in grid.cells() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("grid file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dims(&mut self) -> Result<[usize; 3]> {
        Ok([self.u32()? as usize, self.u32()? as usize, self.u32()? as usize])
    }
}

pub fn decode(bytes: &[u8]) -> Result<GridFile> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(6)? != MAGIC {
        return Err(Error::Format("not a grid file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported grid version {version}")));
    }
    let kind = c.u8()?;
    let n = c.u8()? as usize;
    if n != NUM_CLASSES {
        return Err(Error::Format(format!("expected {NUM_CLASSES} classes, found {n}")));
    }
    for expected in OrientationClass::ALL {
        let code = c.u8()?;
        let len = c.u8()? as usize;
        let name = c.take(len)?;
        if code != expected.code() || name != expected.name().as_bytes() {
            return Err(Error::Format(format!(
                "class table mismatch at code {}",
                expected.code()
            )));
        }
    }
    let dims = c.dims()?;
    let cell_shape = c.dims()?;
    let volume_dims = c.dims()?;
    let geometry = GridGeometry::new(cell_shape, volume_dims)?;
    if geometry.dims != dims {
        return Err(Error::Format(format!(
            "grid dims {dims:?} inconsistent with cell shape {cell_shape:?} over {volume_dims:?}"
        )));
    }
    let grid = match kind {
        0 => {
            let cells = c
                .take(geometry.len())?
                .iter()
                .map(|&b| OrientationClass::from_code(b))
                .collect::<Result<Vec<_>>>()?;
            GridFile::Labels(LabelGrid::from_cells(geometry, cells)?)
        }
        1 => {
            let raw = c.take(geometry.len() * NUM_CLASSES * 8)?;
            let cells: Vec<ProbVector> = raw
                .chunks_exact(NUM_CLASSES * 8)
                .map(|cell| {
                    let mut p = [0.0; NUM_CLASSES];
                    for (v, b) in p.iter_mut().zip(cell.chunks_exact(8)) {
                        *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                    }
                    p
                })
                .collect();
            GridFile::Probabilities(PredictionGrid::from_cells(geometry, cells)?)
        }
        other => return Err(Error::Format(format!("unknown grid kind {other}"))),
    };
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after grid payload".into()));
    }
    Ok(grid)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: impl AsRef<Path>, grid: &LabelGrid) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(grid))
}

pub fn write_predictions(path: impl AsRef<Path>, grid: &PredictionGrid) -> Result<()> {
    write_file(path.as_ref(), &encode_predictions(grid))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridFile> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelGrid> {
    match read_grid(path)? {
        GridFile::Labels(g) => Ok(g),
        GridFile::Probabilities(_) => Err(Error::Format("expected a label grid".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_geometry() -> impl Strategy<Value = GridGeometry> {
        (
            proptest::array::uniform3(1usize..5),
            proptest::array::uniform3(1usize..12),
        )
            .prop_map(|(cell, vol)| GridGeometry::new(cell, vol).unwrap())
    }

    proptest! {
        #[test]
        fn label_grids_round_trip(geo in arb_geometry(), seed in any::<u64>()) {
            let cells = (0..geo.len())
                .map(|i| OrientationClass::ALL[((seed >> (i % 60)) as usize + i) % 3])
                .collect();
            let grid = LabelGrid::from_cells(geo, cells).unwrap();
            let bytes = encode_labels(&grid);
            prop_assert_eq!(decode(&bytes).unwrap(), GridFile::Labels(grid.clone()));
            prop_assert_eq!(encode_labels(&grid), bytes);
        }

        #[test]
        fn prediction_grids_round_trip_bit_exact(geo in arb_geometry(), raw in proptest::collection::vec(0.0f64..1.0, 1..200)) {
            let cells: Vec<ProbVector> = (0..geo.len())
                .map(|i| {
                    let a = raw[i % raw.len()];
                    let b = (1.0 - a) * raw[(i + 1) % raw.len()];
                    [a, b, 1.0 - a - b]
                })
                .collect();
            let grid = PredictionGrid::from_cells(geo, cells).unwrap();
            let bytes = encode_predictions(&grid);
            match decode(&bytes).unwrap() {
                GridFile::Probabilities(back) => {
                    for (x, y) in back.cells().iter().zip(grid.cells()) {
                        for (a, b) in x.iter().zip(y) {
                            prop_assert_eq!(a.to_bits(), b.to_bits());
                        }
                    }
                }
                other => prop_assert!(false, "wrong kind {:?}", other),
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let g = GridGeometry::new([1, 1, 1], [2, 1, 1]).unwrap();
        let grid = LabelGrid::filled(g, OrientationClass::N);
        let mut bytes = encode_labels(&grid);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        *bytes.last_mut().unwrap() = 7;
        assert!(decode(&bytes).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
