//! Batch runs over image files: segmentation, features, hit validation and
//! evaluation, with a manifest of checksums and per-image status.

mod config;
mod manifest;
mod segment;

use std::path::{Path, PathBuf};

pub use config::{BackendConfig, EvalConfig, InputConfig, Overrides, RunConfig};
pub use manifest::{sha256_hex, ImageStatus, Manifest, StageRecord};
pub use segment::{segment_image, Backends, CellDiagnostics, ImageSegmentation, SegmentSettings};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalPair, EvalReport};
use crate::features::{extract_all, FeatureTable};
use crate::imaging::io::{encode_label_map, encode_planes_tiff, read_label_raster, read_planes};
use crate::imaging::{BinaryMask, ChannelRole, InstanceLabelMap, MultiChannelImage, Raster};
use crate::nuclei::{compute_center, NucleusRecord, ShapeStats};
use crate::screen::{run_hitval, PlateLayout};
use crate::subcell::SubcellularEntity;
use crate::synth::{synthetic_plate, PlateSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.csv";

/// Image id of an input file: its file stem.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads an image and assigns roles to its planes. Planes beyond the role
/// list are `other`; roles beyond the plane count are dropped, which makes
/// a missing nucleus plane a per-image error.
pub fn load_image(path: &Path, roles: &[ChannelRole]) -> Result<MultiChannelImage> {
    let planes = read_planes(path)?;
    let roles: Vec<ChannelRole> = (0..planes.len())
        .map(|i| roles.get(i).copied().unwrap_or(ChannelRole::Other))
        .collect();
    MultiChannelImage::new(planes, roles)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn write_artifact(out: &Path, rel: &str, bytes: &[u8], record: &mut ImageStatus) -> Result<()> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, bytes)?;
    record.artifacts.insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}

pub fn nuclei_label_path(id: &str) -> String {
    format!("labels/{id}_nuclei.tif")
}

pub fn cell_label_path(id: &str) -> String {
    format!("labels/{id}_cells.tif")
}

pub fn subcellular_label_path(id: &str) -> String {
    format!("labels/{id}_subcellular.tif")
}

pub fn diagnostics_path(id: &str) -> String {
    format!("diagnostics/{id}.json")
}

/// Per-image sidecar: which nucleus each cell label came from, and the
/// per-cell loop diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDiagnostics {
    pub image_id: String,
    pub seed: u64,
    /// `cell_sources[k - 1]` is the nucleus id of cell label `k`.
    pub cell_sources: Vec<u32>,
    pub cells: Vec<CellDiagnostics>,
}

struct SegmentedArtifacts {
    nuclei: Vec<u8>,
    cells: Vec<u8>,
    subcellular: Vec<u8>,
    diagnostics: Vec<u8>,
    counts: (usize, usize, usize),
}

fn segment_one(path: &Path, cfg: &RunConfig, backends: &Backends) -> Result<SegmentedArtifacts> {
    let id = image_id(path);
    let image = load_image(path, &cfg.input.roles)?;
    image.validate(crate::imaging::StageRequest {
        cells: true,
        subcellular: false,
    })?;
    let settings = SegmentSettings {
        sampling: cfg.sampling.clone(),
        integration: cfg.integration,
        subcell: cfg.subcell,
    };
    let seg = segment_image(&image, backends, &settings)?;
    let (w, h) = image.dims();
    let mut nuclei = Raster::filled(w, h, 0u32);
    for n in &seg.nuclei {
        for (x, y) in n.mask.pixels() {
            *nuclei.get_mut(x, y) = n.id;
        }
    }
    let mut sub = Raster::filled(w, h, 0u32);
    for (k, e) in seg.entities.iter().enumerate() {
        for (x, y) in e.mask.pixels() {
            *sub.get_mut(x, y) = k as u32 + 1;
        }
    }
    let diag = ImageDiagnostics {
        image_id: id.clone(),
        seed: cfg.seed(),
        cell_sources: seg.cells.source_ids().to_vec(),
        cells: seg.diagnostics.clone(),
    };
    let tif = Path::new("x.tif");
    Ok(SegmentedArtifacts {
        nuclei: encode_label_map(tif, &nuclei)?,
        cells: encode_label_map(tif, seg.cells.raster())?,
        subcellular: encode_label_map(tif, &sub)?,
        diagnostics: serde_json::to_vec_pretty(&diag)?,
        counts: (seg.nuclei.len(), seg.cells.num_labels(), seg.entities.len()),
    })
}

/// Segments every input image; failures are recorded per image.
pub fn cmd_segment(cfg: &RunConfig) -> Result<StageRecord> {
    let inputs = cfg.input_images()?;
    let backends = Backends::from_config(cfg)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    let results: Vec<Result<SegmentedArtifacts>> =
        pool(cfg.workers)?.install(|| inputs.par_iter().map(|p| segment_one(p, cfg, &backends)).collect());

    let mut stage = StageRecord::new("segment", cfg);
    for (path, result) in inputs.iter().zip(results) {
        let id = image_id(path);
        let mut rec = ImageStatus::new(&id, path);
        match result {
            Ok(a) => {
                write_artifact(&out, &nuclei_label_path(&id), &a.nuclei, &mut rec)?;
                write_artifact(&out, &cell_label_path(&id), &a.cells, &mut rec)?;
                write_artifact(&out, &subcellular_label_path(&id), &a.subcellular, &mut rec)?;
                write_artifact(&out, &diagnostics_path(&id), &a.diagnostics, &mut rec)?;
                rec.counts.insert("nuclei".into(), a.counts.0);
                rec.counts.insert("cells".into(), a.counts.1);
                rec.counts.insert("entities".into(), a.counts.2);
                log::info!("{id}: {} nuclei, {} cells", a.counts.0, a.counts.1);
            }
            Err(e) => {
                log::warn!("{id}: {e}");
                rec.fail(&e);
            }
        }
        stage.images.push(rec);
    }
    stage.backends = backends.descriptors();
    Manifest::update(&out, cfg, stage.clone())?;
    Ok(stage)
}

fn nuclei_from_labels(raw: &Raster<u32>) -> Result<Vec<NucleusRecord>> {
    let (w, h) = raw.dims();
    let mut ids: Vec<u32> = raw.as_slice().iter().copied().filter(|v| *v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let mask = BinaryMask::from_fn(w, h, |x, y| *raw.get(x, y) == id);
            Ok(NucleusRecord {
                id,
                center: compute_center(&mask)?,
                stats: ShapeStats::of(&mask)?,
                mask,
            })
        })
        .collect()
}

fn entities_from_labels(raw: &Raster<u32>, cells: &InstanceLabelMap) -> Vec<SubcellularEntity> {
    let (w, h) = raw.dims();
    let n = raw.as_slice().iter().copied().max().unwrap_or(0);
    (1..=n)
        .filter_map(|k| {
            let mask = BinaryMask::from_fn(w, h, |x, y| *raw.get(x, y) == k);
            let (x, y) = mask.pixels().next()?;
            Some(SubcellularEntity {
                cell_id: cells.get(x, y),
                area: mask.area(),
                mask,
            })
        })
        .collect()
}

fn features_one(path: &Path, cfg: &RunConfig, out: &Path, layout: Option<&PlateLayout>) -> Result<FeatureTable> {
    let id = image_id(path);
    let need = |rel: String| {
        let p = out.join(&rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::FileNotFound(p))
        }
    };
    let diag: ImageDiagnostics =
        serde_json::from_slice(&std::fs::read(need(diagnostics_path(&id))?)?)?;
    let cells = InstanceLabelMap::with_sources(read_label_raster(&need(cell_label_path(&id))?)?, diag.cell_sources)?;
    let nuclei = nuclei_from_labels(&read_label_raster(&need(nuclei_label_path(&id))?)?)?;
    let entities = entities_from_labels(&read_label_raster(&need(subcellular_label_path(&id))?)?, &cells);
    let image = load_image(path, &cfg.input.roles)?;
    extract_all(&id, &image, &cells, &nuclei, &entities, layout)
}

fn read_layout(cfg: &RunConfig) -> Result<Option<PlateLayout>> {
    cfg.layout
        .as_ref()
        .map(|p| PlateLayout::read(&cfg.resolve(p)))
        .transpose()
}

/// Feature table over every segmented image, written as one CSV.
pub fn cmd_features(cfg: &RunConfig) -> Result<StageRecord> {
    let inputs = cfg.input_images()?;
    let out = cfg.output_dir();
    let layout = read_layout(cfg)?;
    let results: Vec<Result<FeatureTable>> = pool(cfg.workers)?.install(|| {
        inputs
            .par_iter()
            .map(|p| features_one(p, cfg, &out, layout.as_ref()))
            .collect()
    });
    let mut stage = StageRecord::new("features", cfg);
    let mut table = FeatureTable::new();
    for (path, result) in inputs.iter().zip(results) {
        let mut rec = ImageStatus::new(&image_id(path), path);
        match result {
            Ok(t) => {
                rec.counts.insert("rows".into(), t.len());
                table.extend(t.rows().iter().cloned())?;
            }
            Err(e) => rec.fail(&e),
        }
        stage.images.push(rec);
    }
    let mut rec = ImageStatus::default();
    write_artifact(&out, FEATURES_FILE, &table.to_csv_bytes()?, &mut rec)?;
    stage.artifacts = rec.artifacts;
    Manifest::update(&out, cfg, stage.clone())?;
    Ok(stage)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Z' table, composite read-out, Hill fits and plots from the feature CSV.
pub fn cmd_hitval(cfg: &RunConfig) -> Result<StageRecord> {
    let layout = read_layout(cfg)?
        .ok_or_else(|| Error::Config("hit validation needs a plate layout".into()))?;
    let out = cfg.output_dir();
    let features_path = out.join(FEATURES_FILE);
    if !features_path.exists() {
        return Err(Error::FileNotFound(features_path));
    }
    let table = FeatureTable::read_csv(std::fs::File::open(&features_path)?)?;
    let report = run_hitval(&table, &layout, &cfg.hitval)?;
    let mut stage = StageRecord::new("hitval", cfg);
    let mut rec = ImageStatus::default();
    write_artifact(&out, "hitval/zprime.csv", &report.zprime_csv()?, &mut rec)?;
    write_artifact(&out, "hitval/ec50.csv", &report.ec50_csv()?, &mut rec)?;
    if let Ok(lda) = &report.lda {
        write_artifact(&out, "hitval/lda.json", &serde_json::to_vec_pretty(lda)?, &mut rec)?;
    }
    for (compound, svg) in report.plots() {
        write_artifact(&out, &format!("hitval/plots/{}.svg", file_safe(&compound)), svg.as_bytes(), &mut rec)?;
    }
    stage.artifacts = rec.artifacts;
    for c in &report.compounds {
        let mut r = ImageStatus {
            image_id: c.compound_id.clone(),
            status: "ok".into(),
            ..Default::default()
        };
        if let Err(e) = &c.fit {
            r.status = "error".into();
            r.error = Some(e.clone());
        }
        stage.images.push(r);
    }
    Manifest::update(&out, cfg, stage.clone())?;
    Ok(stage)
}

fn find_ground_truth(dir: &Path, id: &str) -> Option<PathBuf> {
    ["tif", "tiff", "png"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
}

/// Scores cell label maps against ground truth named after each image.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(StageRecord, EvalReport)> {
    let gt_dir = cfg
        .eval
        .ground_truth
        .as_ref()
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| Error::Config("evaluation needs `eval.ground_truth`".into()))?;
    let out = cfg.output_dir();
    let mut stage = StageRecord::new("eval", cfg);
    let mut loaded = Vec::new();
    for path in cfg.input_images()? {
        let id = image_id(&path);
        let mut rec = ImageStatus::new(&id, &path);
        let pred = out.join(cell_label_path(&id));
        let pair = match find_ground_truth(&gt_dir, &id) {
            None => Err(Error::FileNotFound(gt_dir.join(format!("{id}.tif")))),
            Some(_) if !pred.exists() => Err(Error::FileNotFound(pred.clone())),
            Some(gt) => read_label_raster(&pred).and_then(|p| {
                Ok((InstanceLabelMap::from_raw(p), InstanceLabelMap::from_raw(read_label_raster(&gt)?)))
            }),
        };
        match pair {
            Ok(p) => loaded.push((id, p)),
            Err(e) => rec.fail(&e),
        }
        stage.images.push(rec);
    }
    let pairs: Vec<EvalPair<'_>> = loaded
        .iter()
        .map(|(id, (p, g))| EvalPair {
            image_id: id,
            prediction: p,
            ground_truth: g,
        })
        .collect();
    let report = evaluate_dataset(&pairs, cfg.eval.mode)?;
    let mut rec = ImageStatus::default();
    write_artifact(&out, "eval/eval.csv", &report.to_csv()?, &mut rec)?;
    let mut summary = report.summary();
    let unpaired: Vec<&str> = stage
        .images
        .iter()
        .filter(|r| r.status != "ok")
        .map(|r| r.image_id.as_str())
        .collect();
    if !unpaired.is_empty() {
        summary.push_str(&format!("unpaired: {}\n", unpaired.join(", ")));
    }
    write_artifact(&out, "eval/summary.txt", summary.as_bytes(), &mut rec)?;
    stage.artifacts = rec.artifacts;
    Manifest::update(&out, cfg, stage.clone())?;
    Ok((stage, report))
}

/// Segment, extract features, then hit validation when a layout is set and
/// evaluation when ground truth is set.
pub fn cmd_all(cfg: &RunConfig) -> Result<Vec<StageRecord>> {
    let mut stages = vec![cmd_segment(cfg)?, cmd_features(cfg)?];
    if cfg.layout.is_some() {
        stages.push(cmd_hitval(cfg)?);
    }
    if cfg.eval.ground_truth.is_some() {
        stages.push(cmd_eval(cfg)?.0);
    }
    Ok(stages)
}

/// Writes a synthetic plate with ground truth, layout and a ready config.
/// Returns the config path.
pub fn write_synthetic_plate(dir: &Path, spec: &PlateSpec) -> Result<PathBuf> {
    let plate = synthetic_plate(spec)?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("ground_truth"))?;
    for img in &plate.images {
        std::fs::write(
            dir.join("images").join(format!("{}.tif", img.image_id)),
            encode_planes_tiff(img.image.channels())?,
        )?;
        let gt = dir.join("ground_truth").join(format!("{}.tif", img.image_id));
        std::fs::write(&gt, encode_label_map(&gt, img.ground_truth.raster())?)?;
    }
    std::fs::write(dir.join("layout.csv"), plate.layout.to_csv()?)?;
    let config = format!(
        r#"seed = {seed}
output_dir = "out"
layout = "layout.csv"

[input]
images = "images/*.tif"
roles = ["nucleus", "cell_marker", "subcellular_marker"]

[backend]
nuclei = "oracle"
cell = "oracle"

[eval]
mode = "whole_mask"
ground_truth = "ground_truth"
"#,
        seed = spec.seed
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config)?;
    Ok(path)
}
