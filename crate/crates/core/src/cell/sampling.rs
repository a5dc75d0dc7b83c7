//! Prompt samplers for the recursive loop.

use rand::seq::index;
use rand::Rng;

use super::{IterationState, SamplingConfig};
use crate::error::Result;
use crate::imaging::{
    channel_median, mask_to_bbox, resample_score_grid, scale_bbox, BoundingBox, Channel,
    PointPrompt,
};
use crate::nuclei::NucleusRecord;

fn pick_uniform<R: Rng + ?Sized>(rng: &mut R, pool: &[(usize, usize)], k: usize) -> Vec<PointPrompt> {
    let k = k.min(pool.len());
    index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| PointPrompt::foreground(pool[i].0, pool[i].1))
        .collect()
}

/// Foreground points inside the enlarged nucleus box, drawn from pixels brighter
/// than the channel median. Falls back to the nucleus centroid.
pub fn sample_initial_points<R: Rng + ?Sized>(
    nucleus: &NucleusRecord,
    channel: &Channel,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<PointPrompt>> {
    sample_initial_points_above(nucleus, channel, channel_median(channel), cfg, rng)
}

pub(crate) fn sample_initial_points_above<R: Rng + ?Sized>(
    nucleus: &NucleusRecord,
    channel: &Channel,
    median: f32,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<PointPrompt>> {
    let region = scale_bbox(&nucleus.bbox(), cfg.init_bbox_scale, channel.dims())?;
    let pool: Vec<(usize, usize)> = region
        .pixels()
        .filter(|(x, y)| *channel.get(*x, *y) > median)
        .collect();
    if pool.is_empty() {
        let (x, y) = nucleus.center_pixel();
        return Ok(vec![PointPrompt::foreground(x, y)]);
    }
    Ok(pick_uniform(rng, &pool, cfg.num_initial_foreground))
}

/// Box in which hotspots may be drawn: the union of the current mask and the
/// nucleus, enlarged by `max_bbox_area_to_sample`.
pub fn hotspot_region(
    state: &IterationState,
    nucleus: &NucleusRecord,
    cfg: &SamplingConfig,
) -> Result<BoundingBox> {
    let nb = nucleus.bbox();
    let base = match mask_to_bbox(&state.current_mask) {
        Ok(b) => b.union(&nb),
        Err(_) => nb,
    };
    scale_bbox(&base, cfg.max_bbox_area_to_sample, state.current_mask.dims())
}

/// Hotspot weight of a calibrated probability: the excess over chance.
#[inline]
pub fn hotspot_weight(probability: f32) -> f64 {
    (probability as f64 - 0.5).max(0.0)
}

/// Foreground points drawn without replacement outside the current mask and
/// inside `region`, weighted by the calibrated mean of the last two logit grids.
pub fn sample_hotspot_points<R: Rng + ?Sized>(
    state: &IterationState,
    region: &BoundingBox,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<PointPrompt>> {
    let dims = state.current_mask.dims();
    let mean = state.logits_t.mean(&state.logits_t_minus_1)?;
    let prob = resample_score_grid(&mean, dims)?;
    let mut pool = Vec::new();
    let mut weights = Vec::new();
    for (x, y) in region.pixels() {
        if state.current_mask.get(x, y) {
            continue;
        }
        let w = hotspot_weight(prob.probability(x, y));
        if w > 0.0 {
            pool.push((x, y));
            weights.push(w);
        }
    }
    let k = cfg.num_hotpoints.min(pool.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let picked = index::sample_weighted(rng, pool.len(), |i| weights[i], k)
        .expect("weights are positive and finite");
    Ok(picked
        .into_iter()
        .map(|i| PointPrompt::foreground(pool[i].0, pool[i].1))
        .collect())
}

/// Foreground points where the last two masks disagree, on the side of the
/// earlier mask.
pub fn sample_stabilizing_points<R: Rng + ?Sized>(
    state: &IterationState,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Vec<PointPrompt> {
    let n = state.mask_history.len();
    if n < 2 {
        return Vec::new();
    }
    let (earlier, latest) = (&state.mask_history[n - 2], &state.mask_history[n - 1]);
    let pool: Vec<(usize, usize)> = earlier.pixels().filter(|(x, y)| !latest.get(*x, *y)).collect();
    pick_uniform(rng, &pool, cfg.num_stabilizing_points)
}

/// Foreground points inside the nucleus mask.
pub fn sample_anchor_points<R: Rng + ?Sized>(
    nucleus: &NucleusRecord,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Vec<PointPrompt> {
    let pool: Vec<(usize, usize)> = nucleus.mask.pixels().collect();
    pick_uniform(rng, &pool, cfg.num_anchor_points)
}

/// Centre pixels of the other nuclei that lie within the nucleus box
/// enlarged by `neighbor_bbox_scale`.
pub fn sample_background_points(
    nucleus: &NucleusRecord,
    all_nuclei: &[NucleusRecord],
    cfg: &SamplingConfig,
) -> Result<Vec<PointPrompt>> {
    let region = scale_bbox(&nucleus.bbox(), cfg.neighbor_bbox_scale, nucleus.mask.dims())?;
    Ok(all_nuclei
        .iter()
        .filter(|n| n.id != nucleus.id)
        .map(|n| n.center_pixel())
        .filter(|(x, y)| region.contains(*x, *y))
        .map(|(x, y)| PointPrompt::background(x, y))
        .collect())
}
