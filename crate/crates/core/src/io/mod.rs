//! Persistence: PNG rasters, checkpoints and manifests.

pub mod checkpoint;
pub mod image;
pub mod manifest;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use manifest::{Manifest, ManifestLine, ManifestRecord, SkippedRecord};
