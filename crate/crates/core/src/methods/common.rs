use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{confusion_matrix, mean_class_accuracy_n};
use crate::synthgen::LabeledScan;
use crate::voxcore::{coarsen_labels, CoarsenRule, Dims3, LabelGrid, PredictionGrid, NUM_CLASSES};

/// The six pipelines, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Fourier2d,
    Classify2d,
    Segment2d,
    Combine3d,
    Classify3d,
    Twostage3d,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Fourier2d,
        MethodId::Classify2d,
        MethodId::Segment2d,
        MethodId::Combine3d,
        MethodId::Classify3d,
        MethodId::Twostage3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::Fourier2d => "fourier2d",
            MethodId::Classify2d => "classify2d",
            MethodId::Segment2d => "segment2d",
            MethodId::Combine3d => "combine3d",
            MethodId::Classify3d => "classify3d",
            MethodId::Twostage3d => "twostage3d",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MethodId::Fourier2d => "2D Fourier analysis",
            MethodId::Classify2d => "2D classification",
            MethodId::Segment2d => "2D segmentation",
            MethodId::Combine3d => "Combined 2D classification",
            MethodId::Classify3d => "3D classification",
            MethodId::Twostage3d => "Two-stage 3D segmentation",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = MethodId::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Scans assigned to the three sets of one split.
#[derive(Debug, Clone)]
pub struct DataSplit<'a> {
    pub train: Vec<&'a LabeledScan>,
    pub val: Vec<&'a LabeledScan>,
    pub test: Vec<&'a LabeledScan>,
}

/// Outcome of one method on the test set of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: MethodId,
    pub meanacc: f64,
    /// Wall-clock seconds to process the test set once.
    pub runtime_s: f64,
    /// Voxels per output cell (x, y, z).
    pub resolution: Dims3,
    pub seed: u64,
    pub config_hash: String,
    /// Rows are reference classes, columns predictions (S, D, N).
    pub confusion: Vec<Vec<usize>>,
    /// Best validation meanacc reached during training, if the method trains.
    pub val_meanacc: Option<f64>,
}

/// Reference labels at the resolution of `grid`.
pub fn reference_labels(grid: &PredictionGrid, labels: &LabelGrid) -> Result<LabelGrid> {
    coarsen_labels(labels, grid.cell_shape(), CoarsenRule::Presence)
}

/// Pooled confusion matrix and mean class accuracy of predictions against
/// the presence-coarsened reference labels.
pub fn score(pairs: &[(&PredictionGrid, &LabelGrid)]) -> Result<(f64, Vec<Vec<usize>>)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (grid, labels) in pairs {
        let reference = reference_labels(grid, labels)?;
        pred.extend(grid.hardened().cells().iter().map(|c| c.index()));
        truth.extend(reference.cells().iter().map(|c| c.index()));
    }
    let meanacc = mean_class_accuracy_n(&pred, &truth, NUM_CLASSES)?;
    let cm = confusion_matrix(&pred, &truth, NUM_CLASSES)?;
    Ok((meanacc, cm.rows()))
}

/// Short stable digest of a serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}
