//! Coverage voting across iterations and resolution into one label map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{pixels_on_border, BinaryMask, InstanceLabelMap, Raster};

/// How often each pixel was included across one cell's iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    pub cell_id: u32,
    pub counts: Raster<u16>,
    pub total_iterations: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    /// Minimum fraction of iterations that must include a pixel.
    pub coverage_fraction_min: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            coverage_fraction_min: 0.33,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.coverage_fraction_min;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "coverage_fraction_min must be in (0, 1], got {f}"
            )));
        }
        Ok(())
    }
}

pub fn build_coverage_map(masks: &[BinaryMask], cell_id: u32) -> Result<CoverageMap> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("coverage map needs at least one mask".into()))?;
    let total = u16::try_from(masks.len())
        .map_err(|_| Error::InvalidArgument("too many iterations".into()))?;
    let (w, h) = first.dims();
    let mut counts = Raster::filled(w, h, 0u16);
    for m in masks {
        if m.dims() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "iteration mask {:?} vs {:?}",
                m.dims(),
                (w, h)
            )));
        }
        for (c, b) in counts.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *c += *b as u16;
        }
    }
    Ok(CoverageMap {
        cell_id,
        counts,
        total_iterations: total,
    })
}

/// Assignment before border exclusion: each pixel goes to the qualifying cell
/// with the highest count, ties to the lower cell id. Returns cell ids (0 = none).
fn assign(maps: &[CoverageMap], cfg: &IntegrationConfig, dims: (usize, usize)) -> Result<Raster<u32>> {
    for m in maps {
        if m.counts.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "coverage map of cell {} is {:?}, image is {:?}",
                m.cell_id,
                m.counts.dims(),
                dims
            )));
        }
        if m.total_iterations == 0 {
            return Err(Error::InvalidArgument("coverage map with zero iterations".into()));
        }
    }
    if let Some(t) = maps.first().map(|m| m.total_iterations) {
        if maps.iter().any(|m| m.total_iterations != t) {
            return Err(Error::InvalidArgument("coverage maps differ in iteration count".into()));
        }
    }
    let (w, h) = dims;
    let mut out = vec![0u32; w * h];
    out.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let mut best: Option<(u16, u32)> = None;
            for m in maps {
                let c = m.counts.as_slice()[i];
                if (c as f64 / m.total_iterations as f64) < cfg.coverage_fraction_min {
                    continue;
                }
                best = match best {
                    Some((bc, bid)) if bc > c || (bc == c && bid < m.cell_id) => Some((bc, bid)),
                    _ => Some((c, m.cell_id)),
                };
            }
            *slot = best.map_or(0, |b| b.1);
        }
    });
    Raster::from_vec(w, h, out)
}

/// Resolves coverage maps into a compact label map with border cells removed.
/// Labels follow ascending cell id; `source_ids` records the cell id per label.
pub fn integrate_instances(
    maps: &[CoverageMap],
    cfg: &IntegrationConfig,
    dims: (usize, usize),
) -> Result<InstanceLabelMap> {
    let by_cell = assign(maps, cfg, dims)?;
    let mut ids: Vec<u32> = maps.iter().map(|m| m.cell_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let labels = by_cell.map(|c| match ids.binary_search(c) {
        Ok(i) if *c != 0 => i as u32 + 1,
        _ => 0,
    });
    let map = InstanceLabelMap::with_sources(labels, ids)?;
    Ok(exclude_border_cells(&map))
}

/// Removes every label touching the outermost rows or columns and compacts.
pub fn exclude_border_cells(labels: &InstanceLabelMap) -> InstanceLabelMap {
    let (w, h) = labels.dims();
    let mut touching = std::collections::BTreeSet::new();
    for x in 0..w {
        touching.insert(labels.get(x, 0));
        touching.insert(labels.get(x, h - 1));
    }
    for y in 0..h {
        touching.insert(labels.get(0, y));
        touching.insert(labels.get(w - 1, y));
    }
    touching.remove(&0);
    let drop: Vec<u32> = touching.into_iter().collect();
    debug_assert!(drop
        .iter()
        .all(|l| pixels_on_border(&labels.mask_of(*l))));
    labels.without_labels(&drop)
}

/// Number of 4-connected fragments per label (index `k - 1`), for diagnostics.
pub fn fragments_per_label(labels: &InstanceLabelMap) -> Vec<usize> {
    labels
        .masks()
        .iter()
        .map(|m| crate::backend::connected_components(m.width(), m.height(), m.as_slice()).len())
        .collect()
}
