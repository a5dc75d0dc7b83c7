//! Subcellular entities inside each cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::SegmentationBackend;
use crate::error::{Error, Result};
use crate::imaging::{mask_to_bbox, BinaryMask, Channel, Raster};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcellularEntity {
    /// Label of the parent cell in the instance map.
    pub cell_id: u32,
    /// Full-image coordinates; always a subset of the parent cell mask.
    pub mask: BinaryMask,
    pub area: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubcellConfig {
    /// Entities smaller than this many pixels are dropped as noise.
    pub min_entity_area: usize,
}

impl Default for SubcellConfig {
    fn default() -> Self {
        Self { min_entity_area: 2 }
    }
}

/// Crops the cell's bounding box, zeroes pixels outside the cell, runs
/// automatic mask generation on the crop and maps each result back into the
/// cell.
pub fn segment_subcellular(
    channel: &Channel,
    cell_mask: &BinaryMask,
    cell_id: u32,
    backend: &dyn SegmentationBackend,
    cfg: &SubcellConfig,
) -> Result<Vec<SubcellularEntity>> {
    if channel.dims() != cell_mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "cell mask {:?} vs channel {:?}",
            cell_mask.dims(),
            channel.dims()
        )));
    }
    let b = mask_to_bbox(cell_mask)?;
    let crop = Raster::from_fn(b.width(), b.height(), |x, y| {
        let (gx, gy) = (b.x0 + x, b.y0 + y);
        if cell_mask.get(gx, gy) {
            *channel.get(gx, gy)
        } else {
            0.0
        }
    });
    let (w, h) = channel.dims();
    let mut entities = Vec::new();
    for r in backend.generate_masks_auto(&crop)? {
        let mut full = BinaryMask::empty(w, h);
        for (x, y) in r.mask.pixels() {
            let (gx, gy) = (b.x0 + x, b.y0 + y);
            if cell_mask.get(gx, gy) {
                full.set(gx, gy, true);
            }
        }
        let area = full.area();
        if area > 0 && area >= cfg.min_entity_area {
            entities.push(SubcellularEntity {
                cell_id,
                mask: full,
                area,
            });
        }
    }
    Ok(entities)
}

/// Entity count for every listed cell; cells without entities map to 0.
pub fn entities_per_cell(entities: &[SubcellularEntity], cells: &[u32]) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = cells.iter().map(|c| (*c, 0)).collect();
    for e in entities {
        if let Some(c) = counts.get_mut(&e.cell_id) {
            *c += 1;
        }
    }
    counts
}
