//! Volumes, coarse label/prediction grids, tiling and vote aggregation.

mod balance;
mod class;
mod coarsen;
pub mod gridfile;
mod grid;
mod tiling;
mod volume;
mod vote;

pub use balance::{balanced_indices, enforce_balance};
pub use class::{argmax_class, OrientationClass, NUM_CLASSES};
pub use coarsen::{class_coverage, coarsen_labels, CoarsenRule};
pub use grid::{GridGeometry, LabelGrid, PredictionGrid, ProbVector};
pub use tiling::{stitch, tile, tile_iter, PaddingPolicy, Tile, TileIter, TileSpec};
pub use volume::{cells_to_cover, Dims3, ScanVolume, DEFAULT_PITCH_UM};
pub use vote::{depth_average, majority_vote, split_slices};
