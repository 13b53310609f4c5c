//! Synthetic SHG-like scans with known S/D/N regions, and slice-stack I/O.

mod generator;
mod io;

pub use generator::{generate_scan, measure_background, voxel_fractions, GeneratorSpec};
pub use io::{
    generate_dataset, load_dataset, load_labeled_scan, load_scan, save_scan, write_dataset, LabeledScan,
    LABELS_FILE, MANIFEST_FILE,
};
