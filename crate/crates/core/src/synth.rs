//! Synthetic plates with known ground truth.
//!
//! Cells are discs in the cell-marker channel: a bright cytoplasm annulus
//! around a dimmer (still foreground) nucleus region. Nuclei are discs of one
//! radius per image placed at integer centres, so their shape statistics agree
//! exactly. The subcellular channel carries small puncta inside each annulus.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{FeatureRow, FeatureTable, ObjectLevel, FEATURE_COLUMNS};
use crate::imaging::{BinaryMask, ChannelRole, InstanceLabelMap, MultiChannelImage, Raster};
use crate::rng::{stream, StreamKind};
use crate::screen::{PlateLayout, WellInfo, WellRole};

const BACKGROUND: f32 = 0.05;
const NUCLEUS_SIGNAL: f32 = 0.9;
const CELL_NUCLEUS_REGION: f32 = 0.55;
const PUNCTUM: f32 = 0.9;
const NOISE: f32 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCell {
    pub cell_center: (f64, f64),
    pub cell_radius: f64,
    pub nucleus_center: (usize, usize),
    pub nucleus_radius: f64,
    pub puncta: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub image_id: String,
    pub image: MultiChannelImage,
    pub cells: Vec<SyntheticCell>,
    /// Cell labels in cell order; overlapping discs are split by nearest centre.
    pub ground_truth: InstanceLabelMap,
}

impl SyntheticImage {
    pub fn nucleus_mask(&self, i: usize) -> BinaryMask {
        let c = &self.cells[i];
        let (w, h) = self.image.dims();
        disc(w, h, (c.nucleus_center.0 as f64, c.nucleus_center.1 as f64), c.nucleus_radius)
    }
}

fn disc(w: usize, h: usize, c: (f64, f64), r: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2) <= r * r)
}

fn noisy(rng: &mut ChaCha8Rng, v: f32) -> f32 {
    (v + rng.random_range(-NOISE..=NOISE)).clamp(0.0, 1.0)
}

/// Renders the three channels and the ground truth for a set of cells.
/// `annulus` is the cytoplasm intensity of the cell-marker channel.
pub fn render(
    image_id: &str,
    (w, h): (usize, usize),
    cells: Vec<SyntheticCell>,
    annulus: f32,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticImage> {
    let cell_masks: Vec<BinaryMask> = cells.iter().map(|c| disc(w, h, c.cell_center, c.cell_radius)).collect();
    let nuc_masks: Vec<BinaryMask> = cells
        .iter()
        .map(|c| disc(w, h, (c.nucleus_center.0 as f64, c.nucleus_center.1 as f64), c.nucleus_radius))
        .collect();
    let punct_masks: Vec<BinaryMask> = cells
        .iter()
        .flat_map(|c| c.puncta.iter().map(|p| disc(w, h, (p.0 as f64, p.1 as f64), 1.5)))
        .collect();

    let nucleus = Raster::from_fn(w, h, |x, y| {
        if nuc_masks.iter().any(|m| m.get(x, y)) {
            NUCLEUS_SIGNAL
        } else {
            BACKGROUND
        }
    });
    let cell = Raster::from_fn(w, h, |x, y| {
        if nuc_masks.iter().any(|m| m.get(x, y)) {
            CELL_NUCLEUS_REGION
        } else if cell_masks.iter().any(|m| m.get(x, y)) {
            annulus
        } else {
            BACKGROUND
        }
    });
    let sub = Raster::from_fn(w, h, |x, y| {
        if punct_masks.iter().any(|m| m.get(x, y)) {
            PUNCTUM
        } else {
            BACKGROUND
        }
    });
    let nucleus = nucleus.map(|v| noisy(rng, *v));
    let cell = cell.map(|v| noisy(rng, *v));
    let sub = sub.map(|v| noisy(rng, *v));
    let image = MultiChannelImage::new(
        vec![nucleus, cell, sub],
        vec![ChannelRole::Nucleus, ChannelRole::CellMarker, ChannelRole::SubcellularMarker],
    )?;
    let truth = Raster::from_fn(w, h, |x, y| {
        let mut best: Option<(f64, u32)> = None;
        for (k, (c, m)) in cells.iter().zip(&cell_masks).enumerate() {
            if m.get(x, y) {
                let d = (x as f64 - c.cell_center.0).powi(2) + (y as f64 - c.cell_center.1).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k as u32 + 1));
                }
            }
        }
        best.map_or(0, |(_, k)| k)
    });
    let ids: Vec<u32> = (1..=cells.len() as u32).collect();
    Ok(SyntheticImage {
        image_id: image_id.to_string(),
        image,
        cells,
        ground_truth: InstanceLabelMap::with_sources(truth, ids)?,
    })
}

fn sample_puncta(rng: &mut ChaCha8Rng, c: &SyntheticCell) -> Vec<(usize, usize)> {
    let k = rng.random_range(2..=4);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for _ in 0..200 {
        if out.len() == k {
            break;
        }
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let d = rng.random_range(0.0..c.cell_radius - 3.0);
        let p = (
            (c.cell_center.0 + d * a.cos()).round(),
            (c.cell_center.1 + d * a.sin()).round(),
        );
        let nd = ((p.0 - c.nucleus_center.0 as f64).powi(2) + (p.1 - c.nucleus_center.1 as f64).powi(2)).sqrt();
        let cd = ((p.0 - c.cell_center.0).powi(2) + (p.1 - c.cell_center.1).powi(2)).sqrt();
        if nd < c.nucleus_radius + 3.0 || cd > c.cell_radius - 3.0 {
            continue;
        }
        let p = (p.0 as usize, p.1 as usize);
        if out
            .iter()
            .all(|q| (q.0 as f64 - p.0 as f64).hypot(q.1 as f64 - p.1 as f64) >= 5.0)
        {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSpec {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Compound EC50 used to modulate cytoplasm intensity, molar.
    pub ec50: f64,
}

impl Default for PlateSpec {
    fn default() -> Self {
        Self {
            images: 20,
            width: 128,
            height: 128,
            seed: 0,
            ec50: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPlate {
    pub images: Vec<SyntheticImage>,
    pub layout: PlateLayout,
}

/// Fraction of the full effect at concentration `c` for a unit Hill slope.
fn effect(c: Option<f64>, role: WellRole, ec50: f64) -> f64 {
    match role {
        WellRole::NeutralControl => 0.0,
        WellRole::PositiveControl => 1.0,
        WellRole::Compound => {
            let c = c.expect("compound wells have a concentration");
            1.0 / (1.0 + ec50 / c)
        }
    }
}

fn plate_wells(n: usize) -> Vec<(WellRole, Option<f64>)> {
    let concs: Vec<f64> = (0..6).map(|i| 10f64.powf(-8.0 + 0.8 * i as f64)).collect();
    (0..n)
        .map(|i| match i % 20 {
            0..=3 => (WellRole::NeutralControl, None),
            4..=7 => (WellRole::PositiveControl, None),
            k => (WellRole::Compound, Some(concs[(k - 8) / 2])),
        })
        .collect()
}

/// `images` single-image wells with 3–8 separated cells each. Wells cycle
/// through four neutral controls, four positive controls and a six-point
/// duplicate titration of one compound.
pub fn synthetic_plate(spec: &PlateSpec) -> Result<SyntheticPlate> {
    let (w, h) = (spec.width, spec.height);
    let mut images = Vec::with_capacity(spec.images);
    let mut wells = Vec::with_capacity(spec.images);
    for (i, (role, conc)) in plate_wells(spec.images).into_iter().enumerate() {
        let mut rng = stream(spec.seed, i as u64, 0, StreamKind::Synthetic);
        let target = rng.random_range(3..=8usize);
        let nucleus_radius = rng.random_range(3..=5) as f64;
        let mut cells: Vec<SyntheticCell> = Vec::new();
        let mut attempts = 0;
        while cells.len() < target || cells.len() < 3 {
            attempts += 1;
            let r = rng.random_range(nucleus_radius + 5.0..nucleus_radius + 11.0);
            let margin = r + 3.0;
            if 2.0 * margin >= w.min(h) as f64 {
                break;
            }
            let cx = rng.random_range(margin..w as f64 - margin).round();
            let cy = rng.random_range(margin..h as f64 - margin).round();
            let clear = cells.iter().all(|c| {
                (c.cell_center.0 - cx).hypot(c.cell_center.1 - cy) >= c.cell_radius + r + 3.0
            });
            if clear {
                let slack = (r - nucleus_radius - 4.0).max(0.0);
                let dx = rng.random_range(-slack..=slack).round();
                let dy = rng.random_range(-slack..=slack).round();
                let mut cell = SyntheticCell {
                    cell_center: (cx, cy),
                    cell_radius: r,
                    nucleus_center: ((cx + dx) as usize, (cy + dy) as usize),
                    nucleus_radius,
                    puncta: Vec::new(),
                };
                cell.puncta = sample_puncta(&mut rng, &cell);
                cells.push(cell);
            }
            if attempts > 10_000 {
                break;
            }
        }
        let image_id = format!("img_{i:03}");
        let well_id = format!("W{i:03}");
        let annulus = 0.65 + 0.3 * effect(conc, role, spec.ec50) as f32;
        images.push(render(&image_id, (w, h), cells, annulus, &mut rng)?);
        wells.push(WellInfo {
            well_id,
            role,
            compound_id: (role == WellRole::Compound).then(|| "CPD1".to_string()),
            concentration: conc,
            image_files: vec![format!("{image_id}.tif")],
        });
    }
    Ok(SyntheticPlate {
        images,
        layout: PlateLayout::new(wells)?,
    })
}

/// Two overlapping cells whose nuclei lie inside each other's neighbour box
/// (three times the nucleus box), in random orientation.
pub fn touching_pair(seed: u64) -> Result<SyntheticImage> {
    let (w, h) = (72, 72);
    let mut rng = stream(seed, 0, 1, StreamKind::Synthetic);
    let r: f64 = rng.random_range(10.0..12.0);
    let d = (1.7 * r).round();
    // Box side 2r_n + 1 must satisfy 1.5 (2 r_n + 1) >= d.
    let rn = ((d / 1.5 - 1.0) / 2.0).ceil() + 1.0;
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (ux, uy) = (angle.cos(), angle.sin());
    let (mx, my) = (36.0 + rng.random_range(-2.0..2.0), 36.0 + rng.random_range(-2.0..2.0));
    let a = ((mx - 0.5 * d * ux).round(), (my - 0.5 * d * uy).round());
    let b = ((mx + 0.5 * d * ux).round(), (my + 0.5 * d * uy).round());
    let cells = [a, b]
        .into_iter()
        .map(|c| SyntheticCell {
            cell_center: c,
            cell_radius: r,
            nucleus_center: (c.0 as usize, c.1 as usize),
            nucleus_radius: rn,
            puncta: Vec::new(),
        })
        .collect();
    render(&format!("pair_{seed:03}"), (w, h), cells, 0.8, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillScreenSpec {
    pub s0: f64,
    pub s_inf: f64,
    pub ec50: f64,
    pub hill_n: f64,
    pub control_wells: usize,
    pub concentrations: Vec<f64>,
    pub replicates: usize,
    pub cells_per_well: usize,
}

impl Default for HillScreenSpec {
    fn default() -> Self {
        Self {
            s0: 0.2,
            s_inf: 0.8,
            ec50: 1e-6,
            hill_n: 1.2,
            control_wells: 8,
            concentrations: (0..8).map(|i| 10f64.powf(-8.0 + 4.0 * i as f64 / 7.0)).collect(),
            replicates: 2,
            cells_per_well: 6,
        }
    }
}

/// A cell-level feature table whose per-well `cell.mean_intensity` follows the
/// Hill curve exactly, plus a short two-point compound `CPD_SHORT`.
/// Cell values scatter symmetrically around the well mean.
pub fn hill_screen(spec: &HillScreenSpec) -> Result<(FeatureTable, PlateLayout)> {
    let hill = |c: f64| spec.s0 + (spec.s_inf - spec.s0) / (1.0 + (spec.ec50 / c).powf(spec.hill_n));
    let mut wells = Vec::new();
    for i in 0..spec.control_wells {
        wells.push((format!("N{i:02}"), WellRole::NeutralControl, None, None, spec.s0));
        wells.push((format!("P{i:02}"), WellRole::PositiveControl, None, None, spec.s_inf));
    }
    for (ci, c) in spec.concentrations.iter().enumerate() {
        for r in 0..spec.replicates {
            wells.push((format!("C{ci:02}_{r}"), WellRole::Compound, Some("CPD1"), Some(*c), hill(*c)));
        }
    }
    for (k, c) in [1e-7, 1e-5].into_iter().enumerate() {
        wells.push((format!("S{k:02}"), WellRole::Compound, Some("CPD_SHORT"), Some(c), hill(c)));
    }
    let col = crate::features::column_index("mean_intensity").expect("column exists");
    let mut rows = Vec::new();
    let mut infos = Vec::new();
    for (well_id, role, compound, conc, mean) in wells {
        let image_id = format!("{well_id}_img");
        let half = spec.cells_per_well / 2;
        for k in 0..spec.cells_per_well {
            let delta = if spec.cells_per_well % 2 == 1 && k == spec.cells_per_well - 1 {
                0.0
            } else {
                0.01 * (1 + k % half.max(1)) as f64 * if k < half { 1.0 } else { -1.0 }
            };
            let mut values = [None; FEATURE_COLUMNS.len()];
            values[col] = Some(mean + delta);
            rows.push(FeatureRow {
                image_id: image_id.clone(),
                well_id: Some(well_id.clone()),
                level: ObjectLevel::Cell,
                object_id: k as u32 + 1,
                cell_id: k as u32 + 1,
                values,
            });
        }
        infos.push(WellInfo {
            well_id,
            role,
            compound_id: compound.map(str::to_string),
            concentration: conc,
            image_files: vec![format!("{image_id}.tif")],
        });
    }
    Ok((FeatureTable::from_rows(rows)?, PlateLayout::new(infos)?))
}
