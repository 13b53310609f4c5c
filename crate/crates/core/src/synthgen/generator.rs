use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxcore::{Dims3, GridGeometry, LabelGrid, OrientationClass, ScanVolume, DEFAULT_PITCH_UM};

/// Parameters of the synthetic scan generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Volume extent (x, y, z) in voxels.
    pub dims: Dims3,
    /// Label lattice; regions are unions of whole lattice cells.
    pub label_cell: Dims3,
    /// Target fractions of S, D and N voxels.
    pub fractions: [f64; 3],
    /// Range of the fiber-bundle period in voxels.
    pub bundle_width: [f64; 2],
    /// Inclusive range of the number of S regions.
    pub s_regions: [usize; 2],
    /// Inclusive range of the number of D regions.
    pub d_regions: [usize; 2],
    /// Minimum angle between the orientations of a D region, in degrees.
    pub min_orientation_gap_deg: f64,
    /// Maximum drift of an S orientation through the depth of a region, in degrees.
    pub orientation_jitter_deg: f64,
    /// Depth modulation of the relative strength of the two D orientations,
    /// in [0, 0.5]; 0 gives a steady crosshatch.
    pub interleave: f64,
    /// Mean grey level of tissue below the stripe texture.
    pub tissue_level: f64,
    /// Peak-to-peak stripe contrast.
    pub stripe_contrast: f64,
    /// Amplitude of the blurred macroscopic structure in N areas.
    pub macro_amplitude: f64,
    /// Range of the per-scan additive background offset.
    pub offset_range: [f64; 2],
    pub noise_mean: f64,
    pub noise_std: f64,
    pub pitch_um: [f64; 3],
    /// Number of consecutive seeds sharing one group id.
    pub group_size: usize,
    /// Base seed for dataset generation.
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            dims: [256, 256, 32],
            label_cell: [32, 32, 16],
            fractions: [0.03, 0.03, 0.94],
            bundle_width: [8.0, 12.0],
            s_regions: [1, 1],
            d_regions: [1, 2],
            min_orientation_gap_deg: 30.0,
            orientation_jitter_deg: 5.0,
            interleave: 0.35,
            tissue_level: 30.0,
            stripe_contrast: 70.0,
            macro_amplitude: 35.0,
            offset_range: [2.91, 40.2],
            noise_mean: 9.18,
            noise_std: 8.79,
            pitch_um: DEFAULT_PITCH_UM,
            group_size: 1,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    /// High-contrast, low-noise variant with steady D crosshatch.
    pub fn easy() -> Self {
        Self {
            interleave: 0.0,
            stripe_contrast: 110.0,
            macro_amplitude: 0.0,
            noise_std: 3.0,
            offset_range: [5.0, 10.0],
            ..Self::default()
        }
    }

    /// `default`, `easy`, or a path to a TOML file (keys override `default`).
    pub fn from_name_or_file(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Self::default()),
            "easy" => Ok(Self::easy()),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("generator spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims.iter().chain(&self.label_cell).any(|&d| d == 0) {
            return bad("dims and label cell must be positive".into());
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || self.fractions.iter().sum::<f64>() > 1.0 + 1e-9
        {
            return bad(format!("class fractions {:?} must lie in [0,1] and sum to <= 1", self.fractions));
        }
        let nonneg = [
            self.noise_mean,
            self.noise_std,
            self.offset_range[0],
            self.offset_range[1],
            self.tissue_level,
            self.stripe_contrast,
            self.macro_amplitude,
            self.orientation_jitter_deg,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("noise, offset, intensity and jitter parameters must be non-negative".into());
        }
        if self.offset_range[0] > self.offset_range[1] {
            return bad(format!("offset range {:?} is reversed", self.offset_range));
        }
        if !(self.bundle_width[0] >= 2.0 && self.bundle_width[0] <= self.bundle_width[1]) {
            return bad(format!("bundle width range {:?} is invalid", self.bundle_width));
        }
        if self.s_regions[0] > self.s_regions[1] || self.d_regions[0] > self.d_regions[1] {
            return bad("region count ranges must be ordered".into());
        }
        if !(self.min_orientation_gap_deg > 2.0 * self.orientation_jitter_deg && self.min_orientation_gap_deg <= 90.0) {
            return bad(format!(
                "orientation gap {} must exceed twice the jitter {} and be at most 90 degrees",
                self.min_orientation_gap_deg, self.orientation_jitter_deg
            ));
        }
        if !(0.0..=0.5).contains(&self.interleave) {
            return bad(format!("interleave {} outside [0, 0.5]", self.interleave));
        }
        if self.pitch_um.iter().any(|p| !(*p > 0.0)) || self.group_size == 0 {
            return bad("pitch and group size must be positive".into());
        }
        Ok(())
    }

    pub fn scan_id(&self, seed: u64) -> String {
        format!("scan_{seed:04}")
    }

    pub fn group_id(&self, seed: u64) -> String {
        format!("group_{:04}", seed / self.group_size as u64)
    }
}

/// Texture parameters of one region.
#[derive(Debug, Clone)]
enum Texture {
    Similar {
        theta: f64,
        drift: f64,
        period: f64,
        phase: f64,
        contrast: f64,
    },
    Dissimilar {
        thetas: [f64; 2],
        periods: [f64; 2],
        phases: [f64; 2],
        depth_period: f64,
        depth_phase: f64,
        contrast: f64,
    },
}

/// Number of lattice cells for a class, or an error if no whole number of
/// cells lands within +-50% of the target voxel fraction.
fn cell_count(target: f64, total_vox: usize, cell_vox: usize, class: &str, rng: &mut ChaCha8Rng) -> Result<usize> {
    if target == 0.0 {
        return Ok(0);
    }
    let t = target * total_vox as f64 / cell_vox as f64;
    let ok = |n: usize| {
        let f = (n * cell_vox) as f64 / total_vox as f64;
        n > 0 && (f - target).abs() <= 0.5 * target
    };
    let lo = t.floor() as usize;
    let hi = t.ceil() as usize;
    let pick = if rng.gen_bool((t - t.floor()).clamp(0.0, 1.0)) { hi } else { lo };
    for n in [pick, lo, hi] {
        if ok(n) {
            return Ok(n);
        }
    }
    Err(Error::Generation(format!(
        "class {class} fraction {target} cannot be realised with {cell_vox}-voxel cells in a {total_vox}-voxel volume"
    )))
}

/// Splits `n` into `parts` positive sizes.
fn composition(n: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sizes = vec![1; parts];
    for _ in parts..n {
        sizes[rng.gen_range(0..parts)] += 1;
    }
    sizes
}

fn neighbours(pos: Dims3, dims: Dims3) -> impl Iterator<Item = Dims3> {
    let mut out = Vec::with_capacity(6);
    for a in 0..3 {
        if pos[a] > 0 {
            let mut p = pos;
            p[a] -= 1;
            out.push(p);
        }
        if pos[a] + 1 < dims[a] {
            let mut p = pos;
            p[a] += 1;
            out.push(p);
        }
    }
    out.into_iter()
}

/// Places connected regions of S and D cells on the lattice. S and D cells
/// never touch each other face to face.
fn place_regions(
    geo: &GridGeometry,
    plan: &[(OrientationClass, usize)],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<OrientationClass>, Vec<Vec<usize>>)> {
    let mut cells = vec![OrientationClass::N; geo.len()];
    let mut regions = Vec::new();
    let blocked = |cells: &[OrientationClass], pos: Dims3, class: OrientationClass| {
        cells[geo.index(pos[0], pos[1], pos[2])] != OrientationClass::N
            || neighbours(pos, geo.dims).any(|q| {
                let c = cells[geo.index(q[0], q[1], q[2])];
                c != OrientationClass::N && c != class
            })
    };
    for &(class, size) in plan {
        let free: Vec<usize> = (0..geo.len())
            .filter(|&i| !blocked(&cells, geo.position(i), class))
            .collect();
        let &seed = free.choose(rng)?;
        let mut region = vec![seed];
        cells[seed] = class;
        while region.len() < size {
            let mut frontier: Vec<usize> = region
                .iter()
                .flat_map(|&i| neighbours(geo.position(i), geo.dims))
                .filter(|&p| !blocked(&cells, p, class))
                .map(|p| geo.index(p[0], p[1], p[2]))
                .collect();
            frontier.sort_unstable();
            frontier.dedup();
            let &next = frontier.choose(rng)?;
            cells[next] = class;
            region.push(next);
        }
        regions.push(region);
    }
    Some((cells, regions))
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth random field from a coarse lattice of uniform values.
struct MacroField {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
}

impl MacroField {
    fn new(volume: Dims3, rng: &mut ChaCha8Rng) -> Self {
        let spacing = [48.0, 48.0, 16.0];
        let dims = [0, 1, 2].map(|a| (volume[a] as f64 / spacing[a]).ceil() as usize + 2);
        let values = (0..dims.iter().product()).map(|_| rng.gen::<f64>()).collect();
        Self { dims, spacing, values }
    }

    fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = [x as f64 / self.spacing[0], y as f64 / self.spacing[1], z as f64 / self.spacing[2]];
        let i = p.map(|v| v.floor() as usize);
        let f = [0, 1, 2].map(|a| smoothstep(p[a] - i[a] as f64));
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                        * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                        * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                    let idx = ((i[2] + dz) * self.dims[1] + i[1] + dy) * self.dims[0] + i[0] + dx;
                    acc += w * self.values[idx];
                }
            }
        }
        acc
    }
}

fn grating(x: f64, y: f64, theta: f64, period: f64, phase: f64) -> f64 {
    let u = x * theta.cos() + y * theta.sin();
    let v = -x * theta.sin() + y * theta.cos();
    // bundles: bright bands along the fiber direction with slow modulation along them
    let band = 0.5 + 0.5 * (2.0 * PI * u / period + phase).cos();
    band * (0.8 + 0.2 * (2.0 * PI * v / 53.0 + phase * 1.7).cos())
}

impl Texture {
    fn draw(class: OrientationClass, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Self {
        let period = |rng: &mut ChaCha8Rng| {
            if spec.bundle_width[0] == spec.bundle_width[1] {
                spec.bundle_width[0]
            } else {
                rng.gen_range(spec.bundle_width[0]..spec.bundle_width[1])
            }
        };
        let contrast = spec.stripe_contrast * rng.gen_range(0.85..1.15);
        match class {
            OrientationClass::S => Texture::Similar {
                theta: rng.gen_range(0.0..PI),
                drift: rng.gen_range(-1.0..=1.0) * spec.orientation_jitter_deg.to_radians(),
                period: period(rng),
                phase: rng.gen_range(0.0..2.0 * PI),
                contrast,
            },
            _ => {
                let t1 = rng.gen_range(0.0..PI);
                let lo = spec.min_orientation_gap_deg.max(45.0).min(90.0);
                let gap = rng.gen_range(lo..=90.0).to_radians();
                Texture::Dissimilar {
                    thetas: [t1, t1 + gap],
                    periods: [period(rng), period(rng)],
                    phases: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
                    depth_period: rng.gen_range(6.0..12.0),
                    depth_phase: rng.gen_range(0.0..2.0 * PI),
                    contrast,
                }
            }
        }
    }

    /// Texture value at a voxel; `zrel` is the relative depth in the region.
    fn value(&self, x: f64, y: f64, z: f64, zrel: f64, interleave: f64) -> f64 {
        match *self {
            Texture::Similar {
                theta,
                drift,
                period,
                phase,
                contrast,
            } => contrast * grating(x, y, theta + drift * (zrel - 0.5), period, phase),
            Texture::Dissimilar {
                thetas,
                periods,
                phases,
                depth_period,
                depth_phase,
                contrast,
            } => {
                let w = 0.5 + interleave * (2.0 * PI * z / depth_period + depth_phase).sin();
                contrast
                    * (w * grating(x, y, thetas[0], periods[0], phases[0])
                        + (1.0 - w) * grating(x, y, thetas[1], periods[1], phases[1]))
            }
        }
    }
}

/// Generates one synthetic scan and its reference labels on the spec's lattice.
pub fn generate_scan(spec: &GeneratorSpec, seed: u64) -> Result<(ScanVolume, LabelGrid)> {
    spec.validate()?;
    let geo = GridGeometry::new(spec.label_cell, spec.dims)?;
    let total_vox: usize = spec.dims.iter().product();
    let cell_vox: usize = spec.label_cell.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_s = cell_count(spec.fractions[0], total_vox, cell_vox, "S", &mut rng)?;
    let n_d = cell_count(spec.fractions[1], total_vox, cell_vox, "D", &mut rng)?;
    if n_s + n_d > geo.len() {
        return Err(Error::Generation(format!(
            "{} region cells do not fit into {} lattice cells",
            n_s + n_d,
            geo.len()
        )));
    }
    let mut placed = None;
    for _ in 0..100 {
        let mut plan = Vec::new();
        for (class, n, range) in [
            (OrientationClass::S, n_s, spec.s_regions),
            (OrientationClass::D, n_d, spec.d_regions),
        ] {
            if n == 0 {
                continue;
            }
            let parts = rng.gen_range(range[0].max(1)..=range[1].max(1)).min(n);
            for size in composition(n, parts, &mut rng) {
                plan.push((class, size));
            }
        }
        if let Some(p) = place_regions(&geo, &plan, &mut rng) {
            placed = Some(p);
            break;
        }
    }
    let (cells, regions) = placed.ok_or_else(|| {
        Error::Generation(format!("could not place {n_s} S and {n_d} D cells without contact"))
    })?;
    let labels = LabelGrid::from_cells(geo, cells.clone())?;

    let textures: Vec<Texture> = regions
        .iter()
        .map(|r| Texture::draw(cells[r[0]], spec, &mut rng))
        .collect();
    let mut region_of = vec![usize::MAX; geo.len()];
    let mut z_extent = Vec::with_capacity(regions.len());
    for (ri, r) in regions.iter().enumerate() {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for &c in r {
            region_of[c] = ri;
            let (start, end) = geo.voxel_range(geo.position(c));
            lo = lo.min(start[2]);
            hi = hi.max(end[2]);
        }
        z_extent.push((lo, hi));
    }

    let macro_field = MacroField::new(spec.dims, &mut rng);
    let offset = if spec.offset_range[0] == spec.offset_range[1] {
        spec.offset_range[0]
    } else {
        rng.gen_range(spec.offset_range[0]..spec.offset_range[1])
    };
    let noise = Normal::new(spec.noise_mean, spec.noise_std)
        .map_err(|e| Error::Generation(format!("noise model: {e}")))?;

    let [w, h, d] = spec.dims;
    let mut voxels = vec![0u8; total_vox];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let cell = geo.index(x / spec.label_cell[0], y / spec.label_cell[1], z / spec.label_cell[2]);
                let content = match region_of[cell] {
                    usize::MAX => {
                        spec.macro_amplitude * smoothstep((macro_field.at(x, y, z) - 0.55) / 0.3)
                    }
                    ri => {
                        let (lo, hi) = z_extent[ri];
                        let zrel = (z - lo) as f64 / (hi - lo).max(1) as f64;
                        spec.tissue_level
                            + textures[ri].value(x as f64, y as f64, z as f64, zrel, spec.interleave)
                    }
                };
                let v = offset + content + noise.sample(&mut rng);
                voxels[(z * h + y) * w + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let volume = ScanVolume::new(spec.dims, voxels, spec.pitch_um, spec.scan_id(seed), spec.group_id(seed))?;
    Ok((volume, labels))
}

/// Fraction of in-volume voxels per class (S, D, N) of a label grid.
pub fn voxel_fractions(labels: &LabelGrid) -> [f64; 3] {
    let geo = labels.geometry();
    let mut counts = [0usize; 3];
    for (idx, c) in labels.cells().iter().enumerate() {
        let (start, end) = geo.voxel_range(geo.position(idx));
        counts[c.index()] += (0..3).map(|a| end[a] - start[a]).product::<usize>();
    }
    let total: usize = counts.iter().sum();
    counts.map(|c| c as f64 / total as f64)
}

/// Sample mean and (population) standard deviation of the masked voxels.
pub fn measure_background(volume: &ScanVolume, mask: &[bool]) -> Result<(f64, f64)> {
    if mask.len() != volume.voxels().len() {
        return Err(Error::Argument(format!(
            "mask has {} entries for {} voxels",
            mask.len(),
            volume.voxels().len()
        )));
    }
    let vals: Vec<f64> = volume
        .voxels()
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v as f64)
        .collect();
    if vals.is_empty() {
        return Err(Error::Argument("background mask selects no voxels".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            dims: [128, 128, 32],
            fractions: [0.0, 0.0, 1.0],
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = GeneratorSpec::default();
        let a = generate_scan(&spec, 3).unwrap();
        let b = generate_scan(&spec, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_scan(&spec, 4).unwrap();
        assert_ne!(a.0.voxels(), c.0.voxels());
    }

    #[test]
    fn all_n_spec_is_background_plus_noise() {
        let spec = GeneratorSpec {
            fractions: [0.0, 0.0, 1.0],
            macro_amplitude: 0.0,
            offset_range: [30.0, 30.0],
            ..small()
        };
        let (vol, labels) = generate_scan(&spec, 1).unwrap();
        assert!(labels.cells().iter().all(|c| *c == OrientationClass::N));
        let mask = vec![true; vol.voxels().len()];
        let (mean, std) = measure_background(&vol, &mask).unwrap();
        assert!((mean - 30.0 - 9.18).abs() < 0.3, "mean {mean}");
        assert!((std - 8.79).abs() < 0.3, "std {std}");
    }

    #[test]
    fn default_fractions_per_scan() {
        let spec = GeneratorSpec::default();
        for seed in 0..4 {
            let (_, labels) = generate_scan(&spec, seed).unwrap();
            let f = voxel_fractions(&labels);
            assert!((0.90..=0.99).contains(&f[2]), "N fraction {}", f[2]);
            assert!((0.02..=0.035).contains(&f[0]), "S fraction {}", f[0]);
            assert!((0.015..=0.045).contains(&f[1]), "D fraction {}", f[1]);
        }
    }

    #[test]
    fn infeasible_fraction_is_rejected() {
        let spec = GeneratorSpec {
            fractions: [0.001, 0.03, 0.969],
            ..GeneratorSpec::default()
        };
        assert!(matches!(generate_scan(&spec, 0), Err(Error::Generation(_))));
        let crowded = GeneratorSpec {
            fractions: [0.6, 0.4, 0.0],
            ..GeneratorSpec::default()
        };
        assert!(generate_scan(&crowded, 0).is_err());
    }

    #[test]
    fn measure_background_trivial_cases() {
        let vol = ScanVolume::zeros([4, 4, 2]).unwrap();
        assert_eq!(measure_background(&vol, &[true; 32]).unwrap(), (0.0, 0.0));
        assert!(measure_background(&vol, &[false; 32]).is_err());
        let c = ScanVolume::new([2, 2, 1], vec![40; 4], DEFAULT_PITCH_UM, "a", "b").unwrap();
        assert_eq!(measure_background(&c, &[true; 4]).unwrap(), (40.0, 0.0));
    }

    /// Angular power profile (180 one-degree bins, folded to [0, 180)) of
    /// one or more square slices, excluding the lowest frequencies.
    fn angular_power(slices: &[Vec<f64>], n: usize) -> Vec<f64> {
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut bins = vec![0.0; 180];
        for s in slices {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let mut buf: Vec<Complex<f64>> = s.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
            for row in buf.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for x in 0..n {
                for y in 0..n {
                    col[y] = buf[y * n + x];
                }
                fft.process(&mut col);
                for y in 0..n {
                    buf[y * n + x] = col[y];
                }
            }
            for ky in 0..n {
                for kx in 0..n {
                    let fy = if ky > n / 2 { ky as f64 - n as f64 } else { ky as f64 };
                    let fx = if kx > n / 2 { kx as f64 - n as f64 } else { kx as f64 };
                    let r = (fx * fx + fy * fy).sqrt();
                    if r < 1.5 {
                        continue;
                    }
                    let ang = fy.atan2(fx).to_degrees().rem_euclid(180.0);
                    bins[(ang as usize).min(179)] += buf[ky * n + kx].norm_sqr();
                }
            }
        }
        // light circular smoothing
        (0..180)
            .map(|i| (-3i32..=3).map(|o| bins[(i as i32 + o).rem_euclid(180) as usize]).sum())
            .collect()
    }

    /// Local maxima above 30% of the global one, merging maxima closer than
    /// the angular resolution of a 32-point spectrum at the stripe frequency.
    fn peaks(profile: &[f64]) -> Vec<usize> {
        let max = profile.iter().cloned().fold(0.0, f64::max);
        let mut found: Vec<usize> = (0..180)
            .filter(|&i| {
                let p = profile[i];
                p >= 0.3 * max && (1..=10).all(|o| p >= profile[(i + o) % 180] && p >= profile[(i + 180 - o) % 180])
            })
            .collect();
        found.sort_by(|a, b| profile[*b].total_cmp(&profile[*a]));
        let mut kept: Vec<usize> = Vec::new();
        for p in found {
            if kept.iter().all(|&k| circular_gap(k, p) >= 25) {
                kept.push(p);
            }
        }
        kept
    }

    fn region_slices(vol: &ScanVolume, labels: &LabelGrid, class: OrientationClass) -> Vec<Vec<f64>> {
        let geo = labels.geometry();
        let idx = labels.cells().iter().position(|c| *c == class).unwrap();
        let (start, end) = geo.voxel_range(geo.position(idx));
        (start[2]..end[2])
            .map(|z| {
                let mut s = Vec::new();
                for y in start[1]..end[1] {
                    for x in start[0]..end[0] {
                        s.push(vol.get(x, y, z) as f64);
                    }
                }
                s
            })
            .collect()
    }

    fn circular_gap(a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        d.min(180 - d)
    }

    #[test]
    fn s_texture_has_one_orientation_peak_and_d_texture_two() {
        let spec = GeneratorSpec::default();
        for seed in 0..8 {
            let (vol, labels) = generate_scan(&spec, seed).unwrap();
            let s = angular_power(&region_slices(&vol, &labels, OrientationClass::S)[..1], 32);
            assert_eq!(peaks(&s).len(), 1, "S seed {seed}: {:?}", peaks(&s));
            let d = angular_power(&region_slices(&vol, &labels, OrientationClass::D), 32);
            let p = peaks(&d);
            assert!(p.len() >= 2, "D seed {seed}: {p:?}");
            let widest = p
                .iter()
                .flat_map(|&a| p.iter().map(move |&b| circular_gap(a, b)))
                .max()
                .unwrap();
            assert!(widest >= 30, "D seed {seed}: peaks {p:?}");
        }
    }

    #[test]
    fn toml_spec_overrides_defaults() {
        let spec = GeneratorSpec::from_toml("dims = [64, 64, 16]\nnoise_std = 2.0\n").unwrap();
        assert_eq!(spec.dims, [64, 64, 16]);
        assert_eq!(spec.noise_std, 2.0);
        assert_eq!(spec.fractions, GeneratorSpec::default().fractions);
        assert!(GeneratorSpec::from_toml("bogus = 1").is_err());
        assert!(GeneratorSpec::from_toml("fractions = [0.6, 0.6, 0.0]").is_err());
    }
}
