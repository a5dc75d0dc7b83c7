//! Zero-shot cell and subcellular segmentation by recursive self-prompting of
//! a promptable segmentation model, with feature extraction and hit-validation
//! analytics for high-content screens.
//!
//! The pipeline runs in four stages on a [`MultiChannelImage`]:
//!
//! 1. [`nuclei::detect_nuclei`] finds nuclei with automatic mask generation and
//!    drops shape outliers.
//! 2. [`cell::segment_cell`] grows each cell from its nucleus over several
//!    prompting iterations, one mask per iteration.
//! 3. [`integration::integrate_instances`] turns per-cell coverage votes into
//!    one instance label map.
//! 4. [`subcell::segment_subcellular`] finds entities inside every cell.
//!
//! All model access goes through [`SegmentationBackend`]. [`OracleBackend`]
//! is a deterministic stand-in that needs no weights.

pub mod backend;
pub mod cell;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod integration;
pub mod nuclei;
pub mod pipeline;
pub mod rng;
pub mod screen;
pub mod subcell;
pub mod synth;

pub use backend::{
    BackendDescriptor, BackendSpec, NativeGrid, OracleBackend, PromptSet, SegmentationBackend,
    SegmentationResult,
};
pub use error::{Error, Result};
pub use imaging::{
    BinaryMask, BoundingBox, Calibration, Channel, ChannelRole, InstanceLabelMap,
    MultiChannelImage, PointPrompt, Polarity, Raster, ScoreGrid,
};
