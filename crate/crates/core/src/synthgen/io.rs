use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::voxcore::{gridfile, LabelGrid, ScanVolume};

use super::generator::{generate_scan, GeneratorSpec};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LABELS_FILE: &str = "labels.grid";

/// A scan together with its reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub volume: ScanVolume,
    pub labels: LabelGrid,
}

fn write_slice(path: &Path, data: &[u8], w: usize, h: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes `<root>/<scan_id>/slice_NNNN.png`, `manifest.txt` and (if given) `labels.grid`.
pub fn save_scan(root: &Path, volume: &ScanVolume, labels: Option<&LabelGrid>) -> Result<PathBuf> {
    let dir = root.join(&volume.scan_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let [w, h, d] = volume.dims();
    for z in 0..d {
        write_slice(&dir.join(format!("slice_{z:04}.png")), volume.slice(z), w, h)?;
    }
    let p = volume.voxel_pitch_um();
    let manifest = format!(
        "scan_id = {}\ngroup_id = {}\npitch_x_um = {}\npitch_y_um = {}\npitch_z_um = {}\n",
        volume.scan_id, volume.group_id, p[0], p[1], p[2]
    );
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    if let Some(labels) = labels {
        gridfile::write_labels(dir.join(LABELS_FILE), labels)?;
    }
    Ok(dir)
}

struct Manifest {
    scan_id: String,
    group_id: String,
    pitch: [f64; 3],
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut scan_id = None;
    let mut group_id = None;
    let mut pitch = [None; 3];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let v = v.trim();
        let num = || {
            v.parse::<f64>()
                .map_err(|_| Error::Manifest(format!("{}:{}: bad number {v:?}", path.display(), n + 1)))
        };
        match k.trim() {
            "scan_id" => scan_id = Some(v.to_string()),
            "group_id" => group_id = Some(v.to_string()),
            "pitch_x_um" => pitch[0] = Some(num()?),
            "pitch_y_um" => pitch[1] = Some(num()?),
            "pitch_z_um" => pitch[2] = Some(num()?),
            _ => {}
        }
    }
    let missing = |what: &str| Error::Manifest(format!("{}: missing {what}", path.display()));
    Ok(Manifest {
        scan_id: scan_id.ok_or_else(|| missing("scan_id"))?,
        group_id: group_id.ok_or_else(|| missing("group_id"))?,
        pitch: [
            pitch[0].ok_or_else(|| missing("pitch_x_um"))?,
            pitch[1].ok_or_else(|| missing("pitch_y_um"))?,
            pitch[2].ok_or_else(|| missing("pitch_z_um"))?,
        ],
    })
}

fn read_slice(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let fmt = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| fmt(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(fmt(format!(
            "expected 8-bit grayscale, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    if buf.len() != w * h {
        return Err(fmt(format!("decoded {} bytes for {w}x{h}", buf.len())));
    }
    Ok((w, h, buf))
}

/// Reads a directory of PNG slices (lexicographic order = depth order) and its manifest.
pub fn load_scan(dir: impl AsRef<Path>) -> Result<ScanVolume> {
    let dir = dir.as_ref();
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut slices: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    slices.sort();
    if slices.is_empty() {
        return Err(Error::Format(format!("{}: no slice images", dir.display())));
    }
    let mut voxels = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for p in &slices {
        let (w, h, data) = read_slice(p)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::Format(format!(
                    "{}: slice is {w}x{h}, earlier slices are {}x{}",
                    p.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        voxels.extend_from_slice(&data);
    }
    let (w, h) = dims.expect("at least one slice");
    ScanVolume::new([w, h, slices.len()], voxels, manifest.pitch, manifest.scan_id, manifest.group_id)
}

pub fn load_labeled_scan(dir: impl AsRef<Path>) -> Result<LabeledScan> {
    let dir = dir.as_ref();
    let volume = load_scan(dir)?;
    let labels = gridfile::read_labels(dir.join(LABELS_FILE))?;
    if labels.geometry().volume_dims != volume.dims() {
        return Err(Error::Format(format!(
            "{}: labels cover {:?} but the volume is {:?}",
            dir.display(),
            labels.geometry().volume_dims,
            volume.dims()
        )));
    }
    Ok(LabeledScan { volume, labels })
}

/// Every scan directory below `root` (those holding a manifest), sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<LabeledScan>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("{}: no scan directories", root.display())));
    }
    dirs.iter().map(load_labeled_scan).collect()
}

/// Generates one scan per seed in memory.
pub fn generate_dataset(spec: &GeneratorSpec, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<LabeledScan>> {
    seeds
        .into_iter()
        .map(|s| generate_scan(spec, s).map(|(volume, labels)| LabeledScan { volume, labels }))
        .collect()
}

/// Generates and writes one scan directory per seed.
pub fn write_dataset(spec: &GeneratorSpec, seeds: impl IntoIterator<Item = u64>, root: &Path) -> Result<Vec<PathBuf>> {
    seeds
        .into_iter()
        .map(|s| {
            let (volume, labels) = generate_scan(spec, s)?;
            save_scan(root, &volume, Some(&labels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::DEFAULT_PITCH_UM;

    fn volume(dims: [usize; 3]) -> ScanVolume {
        let n = dims.iter().product();
        let data = (0..n).map(|i| (i * 7 % 251) as u8).collect();
        ScanVolume::new(dims, data, DEFAULT_PITCH_UM, "s1", "g1").unwrap()
    }

    #[test]
    fn round_trip_through_png_slices() {
        let dir = tempfile::tempdir().unwrap();
        let v = volume([5, 3, 4]);
        let path = save_scan(dir.path(), &v, None).unwrap();
        assert_eq!(load_scan(&path).unwrap(), v);
    }

    #[test]
    fn single_slice_volume() {
        let dir = tempfile::tempdir().unwrap();
        let v = volume([4, 4, 1]);
        let path = save_scan(dir.path(), &v, None).unwrap();
        assert_eq!(load_scan(&path).unwrap().dims(), [4, 4, 1]);
    }

    #[test]
    fn mixed_slice_sizes_are_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_scan(dir.path(), &volume([8, 8, 3]), None).unwrap();
        write_slice(&path.join("slice_0001.png"), &[0; 16], 4, 4).unwrap();
        assert!(matches!(load_scan(&path), Err(Error::Format(_))));
    }

    #[test]
    fn missing_manifest_is_a_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_scan(dir.path(), &volume([4, 4, 2]), None).unwrap();
        fs::remove_file(path.join(MANIFEST_FILE)).unwrap();
        assert!(matches!(load_scan(&path), Err(Error::Manifest(_))));
    }

    #[test]
    fn sixteen_bit_slices_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_scan(dir.path(), &volume([4, 4, 1]), None).unwrap();
        let file = fs::File::create(path.join("slice_0000.png")).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 4, 4);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        enc.write_header().unwrap().write_image_data(&[0; 32]).unwrap();
        assert!(matches!(load_scan(&path), Err(Error::Format(_))));
    }
}
