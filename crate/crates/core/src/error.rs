use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image has no nucleus channel")]
    NoNucleusChannel,
    #[error("image has no cell marker channel")]
    NoCellMarkerChannel,
    #[error("image has no subcellular marker channel")]
    NoSubcellularChannel,
    #[error("mask is empty")]
    EmptyMask,
    #[error("degenerate box ({x0},{y0})-({x1},{y1})")]
    DegenerateBox {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("segmentation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported opset {0}")]
    UnsupportedOpset(i64),
    #[error("inference failed: {0}")]
    Inference(String),

    #[error("every iteration produced an empty mask for cell {0}")]
    CellLost(u32),

    #[error("no plate layout entry for {0}")]
    LayoutMismatch(String),
    #[error("need at least 4 distinct concentrations, got {0}")]
    NotEnoughPoints(usize),
    #[error("degenerate controls: {0}")]
    DegenerateControls(String),
    #[error("feature not found: {0}")]
    MissingFeature(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
