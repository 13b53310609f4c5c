//! Rough semantic segmentation of volumetric grayscale scans.

pub mod error;
pub mod evaluation;
pub mod losses;
pub mod methods;
pub mod models;
pub mod nn;
pub mod synthgen;
pub mod transfer;
pub mod voxcore;

pub use error::{Error, Result};
