//! Core data types, the on-disk prediction format, and dataset ingestion.

mod binning;
mod dataset;
mod idx;
mod io;
mod prediction;
mod synthetic;

pub use binning::{BinMode, BinningScheme};
pub use dataset::{FeatureKind, LabeledDataset};
pub use idx::read_idx;
pub use io::{manifest_path, read_predictions, write_predictions};
pub use prediction::{argmax, softmax, PredictionSet, SetMeta, ShiftTag, ROW_SUM_TOL};
pub use synthetic::{make_noise_images, make_synthetic_bars, make_synthetic_tabular};
