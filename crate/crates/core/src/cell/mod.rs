//! Cell-body segmentation by recursive self-prompting.
//!
//! Each nucleus seeds a loop of `num_prompts_per_cell` backend calls. The first
//! call uses foreground points near the nucleus. Later calls combine anchors in
//! the nucleus, hotspots just outside the current mask and stabilizing points
//! where the last two masks disagree, with the mean of the last two logit grids
//! as mask prior. Neighbouring nucleus centres act as background points
//! throughout. Every iteration contributes one mask to the cell's history.

mod sampling;

pub use sampling::{
    hotspot_region, hotspot_weight, sample_anchor_points, sample_background_points,
    sample_hotspot_points, sample_initial_points, sample_stabilizing_points,
};

use serde::{Deserialize, Serialize};

use crate::backend::{PromptSet, SegmentationBackend};
use crate::error::{Error, Result};
use crate::imaging::{channel_median, BinaryMask, Channel, ScoreGrid};
use crate::nuclei::NucleusRecord;
use crate::rng::{stream, StreamKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Iterations per cell.
    pub num_prompts_per_cell: usize,
    pub num_hotpoints: usize,
    /// Side scale of the hotspot sampling box around mask ∪ nucleus.
    pub max_bbox_area_to_sample: f64,
    /// Side scale of the nucleus box for the initial points.
    pub init_bbox_scale: f64,
    pub num_initial_foreground: usize,
    pub num_anchor_points: usize,
    pub num_stabilizing_points: usize,
    /// Side scale of the nucleus box within which neighbours repel.
    pub neighbor_bbox_scale: f64,
    pub rng_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_prompts_per_cell: 8,
            num_hotpoints: 4,
            max_bbox_area_to_sample: 1.5,
            init_bbox_scale: 1.25,
            num_initial_foreground: 4,
            num_anchor_points: 2,
            num_stabilizing_points: 2,
            neighbor_bbox_scale: 3.0,
            rng_seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_prompts_per_cell", self.num_prompts_per_cell),
            ("num_hotpoints", self.num_hotpoints),
            ("num_initial_foreground", self.num_initial_foreground),
            ("num_anchor_points", self.num_anchor_points),
            ("num_stabilizing_points", self.num_stabilizing_points),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let scales = [
            ("max_bbox_area_to_sample", self.max_bbox_area_to_sample),
            ("init_bbox_scale", self.init_bbox_scale),
            ("neighbor_bbox_scale", self.neighbor_bbox_scale),
        ];
        for (name, v) in scales {
            if !(v > 1.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be greater than 1, got {v}")));
            }
        }
        Ok(())
    }
}

/// Loop state visible to the samplers after `iteration` backend calls.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub iteration: usize,
    pub current_mask: BinaryMask,
    pub logits_t: ScoreGrid,
    pub logits_t_minus_1: ScoreGrid,
    pub mask_history: Vec<BinaryMask>,
}

/// One cell's per-iteration masks and backend confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSegmentation {
    pub cell_id: u32,
    pub masks: Vec<BinaryMask>,
    pub confidences: Vec<f32>,
}

/// Runs the recursive prompting loop for one nucleus on one cell-marker channel.
pub fn segment_cell(
    channel: &Channel,
    nucleus: &NucleusRecord,
    all_nuclei: &[NucleusRecord],
    backend: &dyn SegmentationBackend,
    cfg: &SamplingConfig,
) -> Result<CellSegmentation> {
    segment_cell_with_median(channel, channel_median(channel), nucleus, all_nuclei, backend, cfg)
}

/// As [`segment_cell`] with the channel median precomputed.
pub fn segment_cell_with_median(
    channel: &Channel,
    median: f32,
    nucleus: &NucleusRecord,
    all_nuclei: &[NucleusRecord],
    backend: &dyn SegmentationBackend,
    cfg: &SamplingConfig,
) -> Result<CellSegmentation> {
    if nucleus.mask.dims() != channel.dims() {
        return Err(Error::DimensionMismatch(format!(
            "nucleus mask {:?} vs channel {:?}",
            nucleus.mask.dims(),
            channel.dims()
        )));
    }
    let background = sample_background_points(nucleus, all_nuclei, cfg)?;
    let key = (cfg.rng_seed, nucleus.id as u64);
    let iterations = cfg.num_prompts_per_cell.max(1);
    let mut masks = Vec::with_capacity(iterations);
    let mut confidences = Vec::with_capacity(iterations);
    let mut state: Option<IterationState> = None;

    for it in 0..iterations {
        let it_key = it as u64;
        let prompts = match &state {
            None => {
                let mut rng = stream(key.0, key.1, it_key, StreamKind::Initial);
                let mut points =
                    sampling::sample_initial_points_above(nucleus, channel, median, cfg, &mut rng)?;
                points.extend(background.iter().copied());
                PromptSet::new(points, None)
            }
            Some(s) => {
                let mut points =
                    sample_anchor_points(nucleus, cfg, &mut stream(key.0, key.1, it_key, StreamKind::Anchor));
                let region = hotspot_region(s, nucleus, cfg)?;
                points.extend(sample_hotspot_points(
                    s,
                    &region,
                    cfg,
                    &mut stream(key.0, key.1, it_key, StreamKind::Hotspot),
                )?);
                points.extend(sample_stabilizing_points(
                    s,
                    cfg,
                    &mut stream(key.0, key.1, it_key, StreamKind::Stabilizing),
                ));
                points.extend(background.iter().copied());
                PromptSet::new(points, Some(s.logits_t.mean(&s.logits_t_minus_1)?))
            }
        };
        let result = backend.segment_with_prompts(channel, &prompts)?;
        masks.push(result.mask.clone());
        confidences.push(result.confidence);
        state = Some(match state.take() {
            None => IterationState {
                iteration: 1,
                current_mask: result.mask,
                logits_t_minus_1: result.logits.clone(),
                logits_t: result.logits,
                mask_history: masks.clone(),
            },
            Some(prev) => IterationState {
                iteration: prev.iteration + 1,
                current_mask: result.mask,
                logits_t_minus_1: prev.logits_t,
                logits_t: result.logits,
                mask_history: masks.clone(),
            },
        });
    }
    if masks.iter().all(|m| m.is_empty()) {
        return Err(Error::CellLost(nucleus.id));
    }
    Ok(CellSegmentation {
        cell_id: nucleus.id,
        masks,
        confidences,
    })
}

/// Confidence-weighted fusion of per-channel iteration masks: a pixel is kept
/// when the weighted vote is at least one half. Zero total confidence falls
/// back to an unweighted vote.
pub fn combine_channels(per_channel: &[CellSegmentation]) -> Result<CellSegmentation> {
    let first = per_channel
        .first()
        .ok_or_else(|| Error::InvalidArgument("no channels to combine".into()))?;
    if per_channel.len() == 1 {
        return Ok(first.clone());
    }
    let iterations = first.masks.len();
    if per_channel
        .iter()
        .any(|c| c.masks.len() != iterations || c.confidences.len() != iterations)
    {
        return Err(Error::DimensionMismatch("channels differ in iteration count".into()));
    }
    let (w, h) = first.masks[0].dims();
    let mut masks = Vec::with_capacity(iterations);
    let mut confidences = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let mut weights: Vec<f64> = per_channel.iter().map(|c| c.confidences[i] as f64).collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let total: f64 = weights.iter().sum();
        for c in per_channel {
            if c.masks[i].dims() != (w, h) {
                return Err(Error::DimensionMismatch("channel masks differ in size".into()));
            }
        }
        let fused = BinaryMask::from_fn(w, h, |x, y| {
            let vote: f64 = per_channel
                .iter()
                .zip(&weights)
                .filter(|(c, _)| c.masks[i].get(x, y))
                .map(|(_, w)| *w)
                .sum();
            2.0 * vote >= total
        });
        masks.push(fused);
        confidences.push((total / per_channel.len() as f64) as f32);
    }
    Ok(CellSegmentation {
        cell_id: first.cell_id,
        masks,
        confidences,
    })
}
