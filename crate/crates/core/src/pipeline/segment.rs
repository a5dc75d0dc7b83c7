use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::backend::{BackendSpec, SegmentationBackend};
use crate::cell::{combine_channels, segment_cell_with_median, SamplingConfig};
use crate::error::{Error, Result};
use crate::imaging::{channel_median, InstanceLabelMap, MultiChannelImage};
use crate::integration::{build_coverage_map, integrate_instances, CoverageMap, IntegrationConfig};
use crate::nuclei::{detect_nuclei, NucleusRecord};
use crate::subcell::{segment_subcellular, SubcellConfig, SubcellularEntity};

/// One backend per stage. Stages with the same spec share one instance.
#[derive(Clone)]
pub struct Backends {
    pub nuclei: Arc<dyn SegmentationBackend>,
    pub cell: Arc<dyn SegmentationBackend>,
    pub subcellular: Arc<dyn SegmentationBackend>,
}

impl Backends {
    pub fn uniform(backend: Arc<dyn SegmentationBackend>) -> Self {
        Self {
            nuclei: backend.clone(),
            cell: backend.clone(),
            subcellular: backend,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let resolve = |s: &BackendSpec| match s {
            BackendSpec::Graph(p) => BackendSpec::Graph(cfg.resolve(p)),
            other => other.clone(),
        };
        let specs = [
            resolve(&cfg.backend.nuclei),
            resolve(&cfg.backend.cell),
            resolve(cfg.subcellular_backend()),
        ];
        let mut built: Vec<(BackendSpec, Arc<dyn SegmentationBackend>)> = Vec::new();
        let mut get = |spec: &BackendSpec| -> Result<Arc<dyn SegmentationBackend>> {
            if let Some((_, b)) = built.iter().find(|(s, _)| s == spec) {
                return Ok(b.clone());
            }
            let b = spec.instantiate()?;
            built.push((spec.clone(), b.clone()));
            Ok(b)
        };
        Ok(Self {
            nuclei: get(&specs[0])?,
            cell: get(&specs[1])?,
            subcellular: get(&specs[2])?,
        })
    }

    /// Stage → backend name, for the manifest.
    pub fn descriptors(&self) -> BTreeMap<String, String> {
        [
            ("nuclei", &self.nuclei),
            ("cell", &self.cell),
            ("subcellular", &self.subcellular),
        ]
        .into_iter()
        .map(|(k, b)| (k.to_string(), b.descriptor().name.clone()))
        .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentSettings {
    pub sampling: SamplingConfig,
    pub integration: IntegrationConfig,
    pub subcell: SubcellConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub nucleus_id: u32,
    /// `ok` or `lost` (every iteration empty).
    pub status: String,
    /// Mask area per iteration after channel fusion.
    pub iteration_areas: Vec<usize>,
    pub confidences: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ImageSegmentation {
    pub nuclei: Vec<NucleusRecord>,
    pub cells: InstanceLabelMap,
    /// Entity `cell_id`s are labels in `cells`.
    pub entities: Vec<SubcellularEntity>,
    pub coverage: Vec<CoverageMap>,
    pub diagnostics: Vec<CellDiagnostics>,
}

/// Full per-image pipeline: nuclei, one prompting loop per nucleus and cell
/// marker, coverage integration and, when a subcellular channel exists,
/// entities inside every cell. Lost cells are recorded, not fatal.
pub fn segment_image(
    image: &MultiChannelImage,
    backends: &Backends,
    settings: &SegmentSettings,
) -> Result<ImageSegmentation> {
    let nuclei = detect_nuclei(image, backends.nuclei.as_ref())?;
    let channels = image.cell_marker_channels();
    if channels.is_empty() {
        return Err(Error::NoCellMarkerChannel);
    }
    let medians: Vec<f32> = channels.iter().map(|c| channel_median(c)).collect();

    let per_cell: Vec<Result<(CellDiagnostics, Option<CoverageMap>)>> = nuclei
        .par_iter()
        .map(|n| {
            let runs: Result<Vec<_>> = channels
                .iter()
                .zip(&medians)
                .map(|(c, m)| {
                    segment_cell_with_median(c, *m, n, &nuclei, backends.cell.as_ref(), &settings.sampling)
                })
                .collect();
            let fused = match runs {
                Ok(r) => combine_channels(&r)?,
                Err(Error::CellLost(_)) => {
                    return Ok((
                        CellDiagnostics {
                            nucleus_id: n.id,
                            status: "lost".into(),
                            iteration_areas: Vec::new(),
                            confidences: Vec::new(),
                        },
                        None,
                    ))
                }
                Err(e) => return Err(e),
            };
            let diag = CellDiagnostics {
                nucleus_id: n.id,
                status: "ok".into(),
                iteration_areas: fused.masks.iter().map(|m| m.area()).collect(),
                confidences: fused.confidences.clone(),
            };
            Ok((diag, Some(build_coverage_map(&fused.masks, n.id)?)))
        })
        .collect();

    let mut diagnostics = Vec::with_capacity(nuclei.len());
    let mut coverage = Vec::new();
    for r in per_cell {
        let (d, c) = r?;
        if d.status == "lost" {
            log::debug!("cell {} lost", d.nucleus_id);
        }
        diagnostics.push(d);
        coverage.extend(c);
    }
    let cells = integrate_instances(&coverage, &settings.integration, image.dims())?;

    let entities = if image.has_subcellular_channel() {
        let channel = image.subcellular_channel()?;
        let masks = cells.masks();
        let nested: Result<Vec<Vec<SubcellularEntity>>> = masks
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                segment_subcellular(channel, m, i as u32 + 1, backends.subcellular.as_ref(), &settings.subcell)
            })
            .collect();
        nested?.into_iter().flatten().collect()
    } else {
        Vec::new()
    };

    Ok(ImageSegmentation {
        nuclei,
        cells,
        entities,
        coverage,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::OracleBackend;
    use crate::synth::{synthetic_plate, touching_pair, PlateSpec};

    fn oracle() -> Backends {
        Backends::uniform(Arc::new(OracleBackend::default()))
    }

    #[test]
    fn every_synthetic_cell_is_found() {
        let plate = synthetic_plate(&PlateSpec {
            images: 2,
            ..Default::default()
        })
        .unwrap();
        for img in &plate.images {
            let seg = segment_image(&img.image, &oracle(), &SegmentSettings::default()).unwrap();
            assert_eq!(seg.nuclei.len(), img.cells.len());
            assert_eq!(seg.cells.num_labels(), img.cells.len());
            assert!(seg.diagnostics.iter().all(|d| d.status == "ok"));
            assert!(!seg.entities.is_empty());
            for e in &seg.entities {
                assert!(e.mask.is_subset_of(&seg.cells.mask_of(e.cell_id)));
            }
        }
    }

    #[test]
    fn touching_cells_get_separate_labels() {
        let img = touching_pair(3).unwrap();
        let seg = segment_image(&img.image, &oracle(), &SegmentSettings::default()).unwrap();
        assert_eq!(seg.cells.num_labels(), 2);
    }

    #[test]
    fn image_without_cell_marker_fails() {
        let img = touching_pair(1).unwrap();
        let nucleus_only = MultiChannelImage::new(
            vec![img.image.channels()[0].clone()],
            vec![crate::imaging::ChannelRole::Nucleus],
        )
        .unwrap();
        assert!(matches!(
            segment_image(&nucleus_only, &oracle(), &SegmentSettings::default()),
            Err(Error::NoCellMarkerChannel)
        ));
    }
}
