//! The promptable-segmentation contract.
//!
//! Every foundation-model interaction goes through [`SegmentationBackend`]:
//! prompted segmentation (points plus an optional low-resolution mask prior)
//! and automatic whole-image mask generation. Two implementations ship:
//! [`OracleBackend`], a deterministic flood-fill segmenter used to verify the
//! pipeline without model weights, and (with the `onnx` feature)
//! [`graph::GraphBackend`], which runs an exported inference graph.

#[cfg(feature = "onnx")]
pub mod graph;
mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use oracle::OracleBackend;
pub(crate) use oracle::connected_components;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Channel, PointPrompt, ScoreGrid};

/// Resolution of the logits a backend produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeGrid {
    Fixed { width: usize, height: usize },
    /// Logits are produced at the resolution of the input channel.
    InputResolution,
}

impl NativeGrid {
    pub fn resolve(self, input: (usize, usize)) -> (usize, usize) {
        match self {
            NativeGrid::Fixed { width, height } => (width, height),
            NativeGrid::InputResolution => input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub native_grid: NativeGrid,
    pub logits_threshold: f32,
    /// Role → tensor name, as recorded in the graph metadata.
    pub tensor_names: BTreeMap<String, String>,
}

/// Point prompts plus an optional mask prior.
#[derive(Debug, Clone, Default)]
pub struct PromptSet {
    pub points: Vec<PointPrompt>,
    pub mask_prior: Option<ScoreGrid>,
}

impl PromptSet {
    pub fn new(points: Vec<PointPrompt>, mask_prior: Option<ScoreGrid>) -> Self {
        Self { points, mask_prior }
    }

    pub fn foreground(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.is_foreground())
    }

    pub fn background(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| !p.is_foreground())
    }

    /// Checks bounds and that there is something to segment.
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if let Some(p) = self.points.iter().find(|p| p.x >= dims.0 || p.y >= dims.1) {
            return Err(Error::InvalidPrompt(format!(
                "point ({}, {}) outside {}x{} image",
                p.x, p.y, dims.0, dims.1
            )));
        }
        if self.foreground().next().is_none() && self.mask_prior.is_none() {
            return Err(Error::InvalidPrompt(
                "need a foreground point or a mask prior".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    pub logits: ScoreGrid,
    pub confidence: f32,
}

impl SegmentationResult {
    /// Derives the mask from the logits so the two can never disagree.
    pub fn from_logits(
        logits: ScoreGrid,
        threshold: f32,
        dims: (usize, usize),
        confidence: f32,
    ) -> Result<Self> {
        if !confidence.is_finite() {
            return Err(Error::NonFinite("confidence".into()));
        }
        let mask = logits.threshold_to_mask(threshold, dims)?;
        Ok(Self {
            mask,
            logits,
            confidence: confidence.clamp(0.0, 1.0),
        })
    }
}

/// A promptable segmenter. Implementations are immutable after load and may
/// be shared across threads; results are deterministic for a fixed input.
pub trait SegmentationBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn segment_with_prompts(&self, channel: &Channel, prompts: &PromptSet)
        -> Result<SegmentationResult>;

    /// Candidate masks for everything segmentable in `channel`; may overlap.
    fn generate_masks_auto(&self, channel: &Channel) -> Result<Vec<SegmentationResult>>;
}

/// How to obtain a backend: the synthetic oracle or an exported graph file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Oracle,
    Graph(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            Ok(BackendSpec::Oracle)
        } else if let Some(path) = s.strip_prefix("graph:") {
            if path.is_empty() {
                return Err(Error::Config("graph backend needs a path".into()));
            }
            Ok(BackendSpec::Graph(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!(
                "backend must be `oracle` or `graph:PATH`, got `{s}`"
            )))
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> String {
        match spec {
            BackendSpec::Oracle => "oracle".into(),
            BackendSpec::Graph(p) => format!("graph:{}", p.display()),
        }
    }
}

impl BackendSpec {
    pub fn instantiate(&self) -> Result<Arc<dyn SegmentationBackend>> {
        match self {
            BackendSpec::Oracle => Ok(Arc::new(OracleBackend::default())),
            #[cfg(feature = "onnx")]
            BackendSpec::Graph(path) => Ok(Arc::new(graph::GraphBackend::open(path)?)),
            #[cfg(not(feature = "onnx"))]
            BackendSpec::Graph(path) => Err(Error::BackendUnavailable(format!(
                "built without the `onnx` feature; cannot load {}",
                path.display()
            ))),
        }
    }
}

/// Reads an exported graph's metadata without building an executable plan.
#[cfg(feature = "onnx")]
pub fn load_backend(graph_path: &std::path::Path) -> Result<BackendDescriptor> {
    graph::read_descriptor(graph_path).map(|(d, _)| d)
}
