//! Segmentation quality: Dice, IoU and dataset reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, InstanceLabelMap};

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks agree perfectly.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a, b)?;
    let total = a.area() + b.area();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * a.intersection_count(b)? as f64 / total as f64)
}

/// `|A∩B| / |A∪B|`; two empty masks agree perfectly.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a, b)?;
    let inter = a.intersection_count(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Foreground of all instances against the foreground of the ground truth.
    #[default]
    WholeMask,
    /// Greedy max-IoU matching of instances, averaged over matched pairs.
    PerInstance,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::WholeMask => "whole_mask",
            EvalMode::PerInstance => "per_instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub image_id: String,
    pub dsc: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_image: Vec<ImageScore>,
    pub mean_dsc: f64,
    pub mean_iou: f64,
}

pub struct EvalPair<'a> {
    pub image_id: &'a str,
    pub prediction: &'a InstanceLabelMap,
    pub ground_truth: &'a InstanceLabelMap,
}

fn per_instance(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<(f64, f64)> {
    let (pm, gm) = (pred.masks(), gt.masks());
    if pm.is_empty() && gm.is_empty() {
        return Ok((1.0, 1.0));
    }
    let mut candidates = Vec::new();
    for (i, p) in pm.iter().enumerate() {
        for (j, g) in gm.iter().enumerate() {
            let v = iou(p, g)?;
            if v > 0.0 {
                candidates.push((v, i, j));
            }
        }
    }
    // Highest IoU first; index order breaks ties.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; pm.len()], vec![false; gm.len()]);
    let (mut sd, mut si, mut n) = (0.0, 0.0, 0usize);
    for (v, i, j) in candidates {
        if used_p[i] || used_g[j] {
            continue;
        }
        used_p[i] = true;
        used_g[j] = true;
        sd += dice(&pm[i], &gm[j])?;
        si += v;
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((sd / n as f64, si / n as f64))
}

/// Scores every prediction against its ground truth and averages.
pub fn evaluate_dataset(pairs: &[EvalPair<'_>], mode: EvalMode) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image = pairs
        .par_iter()
        .map(|p| {
            if p.prediction.dims() != p.ground_truth.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: prediction {:?} vs ground truth {:?}",
                    p.image_id,
                    p.prediction.dims(),
                    p.ground_truth.dims()
                )));
            }
            let (dsc, iou_v) = match mode {
                EvalMode::WholeMask => {
                    let (a, b) = (p.prediction.foreground(), p.ground_truth.foreground());
                    (dice(&a, &b)?, iou(&a, &b)?)
                }
                EvalMode::PerInstance => per_instance(p.prediction, p.ground_truth)?,
            };
            Ok(ImageScore {
                image_id: p.image_id.to_string(),
                dsc,
                iou: iou_v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    Ok(EvalReport {
        mode,
        mean_dsc: per_image.iter().map(|s| s.dsc).sum::<f64>() / n,
        mean_iou: per_image.iter().map(|s| s.iou).sum::<f64>() / n,
        per_image,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "mode", "dsc", "iou"])?;
        for s in &self.per_image {
            w.write_record([&s.image_id, self.mode.as_str(), &s.dsc.to_string(), &s.iou.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode.as_str());
        let _ = writeln!(s, "images: {}", self.per_image.len());
        let _ = writeln!(s, "mean DSC: {:.4}", self.mean_dsc);
        let _ = writeln!(s, "mean IoU: {:.4}", self.mean_iou);
        s
    }
}
