use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::voxcore::{LabelGrid, ScanVolume};

/// RGB rendering of slice `z`: the grayscale voxel blended half and half with
/// the color of the cell covering it.
pub fn overlay_slice(volume: &ScanVolume, labels: &LabelGrid, z: usize) -> Result<Vec<u8>> {
    if labels.geometry().volume_dims != volume.dims() {
        return Err(Error::Dimension(format!(
            "label grid covers {:?}, volume is {:?}",
            labels.geometry().volume_dims,
            volume.dims()
        )));
    }
    let [w, h, d] = volume.dims();
    if z >= d {
        return Err(Error::Argument(format!("slice {z} out of range 0..{d}")));
    }
    let [cx, cy, cz] = labels.cell_shape();
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = volume.get(x, y, z) as u16;
            let c = labels.get(x / cx, y / cy, z / cz).color();
            out.extend(c.iter().map(|&c| ((v + c as u16) / 2) as u8));
        }
    }
    Ok(out)
}

/// Writes `overlay_NNNN.png` for every slice into `dir`.
pub fn write_overlays(dir: &Path, volume: &ScanVolume, labels: &LabelGrid) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [w, h, d] = volume.dims();
    let mut paths = Vec::with_capacity(d);
    for z in 0..d {
        let rgb = overlay_slice(volume, labels, z)?;
        let path = dir.join(format!("overlay_{z:04}.png"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        enc.write_header().map_err(fmt)?.write_image_data(&rgb).map_err(fmt)?;
        paths.push(path);
    }
    Ok(paths)
}
