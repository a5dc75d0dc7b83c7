use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{parse_feature, PlateLayout, WellRole};
use crate::error::{Error, Result};
use crate::features::{column_index, FeatureTable, ObjectLevel};

/// Feature set of the composite read-out.
pub const DEFAULT_LDA_FEATURES: [&str; 7] = [
    "nucleus.mean_intensity",
    "cell.mean_intensity",
    "cell.extent",
    "cell.perimeter",
    "cell.major_axis_length",
    "cell.minor_axis_length",
    "nucleus.nucleus_marker_correlation",
];

pub const LDA_COMPOSITE: &str = "lda_composite";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdaModel {
    pub features: Vec<String>,
    /// Control-population mean and SD used for standardisation.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Discriminant direction on standardised features.
    pub weights: Vec<f64>,
    /// True when the within-class scatter needed ridge regularisation.
    pub regularized: bool,
    /// Per-well composite, neutral controls at 0 and positive controls at 1.
    pub per_well: BTreeMap<String, f64>,
}

struct CellVector {
    well_id: String,
    values: Vec<f64>,
}

/// Joins the requested features into one vector per cell. Nucleus and cell
/// features are looked up by cell label; subcellular features are averaged
/// over the cell's entities. Cells with any missing value are skipped.
fn cell_vectors(table: &FeatureTable, features: &[String]) -> Result<Vec<CellVector>> {
    type Key = (String, u32);
    // Well id plus per-feature (sum, count).
    type Acc = (Option<String>, Vec<(f64, usize)>);
    let refs = features
        .iter()
        .map(|f| parse_feature(f))
        .collect::<Result<Vec<_>>>()?;
    let mut sums: BTreeMap<Key, Acc> = BTreeMap::new();
    let mut seen = vec![false; refs.len()];
    for row in table.rows() {
        for (j, (level, col)) in refs.iter().enumerate() {
            if row.level != *level {
                continue;
            }
            let Some(v) = row.values[*col] else { continue };
            seen[j] = true;
            let entry = sums
                .entry((row.image_id.clone(), row.cell_id))
                .or_insert_with(|| (row.well_id.clone(), vec![(0.0, 0); refs.len()]));
            entry.1[j].0 += v;
            entry.1[j].1 += 1;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::MissingFeature(features[j].clone()));
    }
    Ok(sums
        .into_values()
        .filter_map(|(well, acc)| {
            let well_id = well?;
            let values = acc
                .iter()
                .map(|(s, n)| (*n > 0).then(|| s / *n as f64))
                .collect::<Option<Vec<f64>>>()?;
            Some(CellVector { well_id, values })
        })
        .collect())
}

/// Fisher discriminant composite fitted on control cells.
pub fn lda_weighted_feature(
    table: &FeatureTable,
    layout: &PlateLayout,
    feature_names: &[&str],
) -> Result<LdaModel> {
    let features: Vec<String> = feature_names.iter().map(|s| s.to_string()).collect();
    if features.is_empty() {
        return Err(Error::InvalidArgument("no features for the composite".into()));
    }
    let cells = cell_vectors(table, &features)?;
    let role_of = |w: &str| layout.well(w).map(|i| i.role);
    let d = features.len();
    let (neutral, positive): (Vec<&CellVector>, Vec<&CellVector>) = {
        let n = cells.iter().filter(|c| role_of(&c.well_id) == Some(WellRole::NeutralControl));
        let p = cells.iter().filter(|c| role_of(&c.well_id) == Some(WellRole::PositiveControl));
        (n.collect(), p.collect())
    };
    if neutral.is_empty() || positive.is_empty() {
        return Err(Error::DegenerateControls(
            "both control groups need complete cells".into(),
        ));
    }

    let controls: Vec<&CellVector> = neutral.iter().chain(&positive).copied().collect();
    let nc = controls.len() as f64;
    let center: Vec<f64> = (0..d)
        .map(|j| controls.iter().map(|c| c.values[j]).sum::<f64>() / nc)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = controls
                .iter()
                .map(|c| (c.values[j] - center[j]).powi(2))
                .sum::<f64>()
                / nc;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardize =
        |c: &CellVector| DVector::from_iterator(d, (0..d).map(|j| (c.values[j] - center[j]) / scale[j]));

    let group_mean = |g: &[&CellVector]| {
        g.iter()
            .map(|c| standardize(c))
            .fold(DVector::zeros(d), |a, b| a + b)
            / g.len() as f64
    };
    let (mu_n, mu_p) = (group_mean(&neutral), group_mean(&positive));
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (g, mu) in [(&neutral, &mu_n), (&positive, &mu_p)] {
        for c in g.iter() {
            let z = standardize(c) - mu;
            sw += &z * z.transpose();
        }
    }
    let diff = &mu_p - &mu_n;
    let trace = sw.trace();
    let well_conditioned = sw.clone().cholesky().is_some_and(|ch| {
        let l = ch.l();
        (0..d).all(|i| l[(i, i)] * l[(i, i)] > 1e-10 * trace / d as f64)
    });
    let (w, regularized) = if well_conditioned {
        (sw.cholesky().expect("checked").solve(&diff), false)
    } else {
        let lambda = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1.0 };
        let reg = sw + DMatrix::identity(d, d) * lambda;
        let ch = reg
            .cholesky()
            .ok_or_else(|| Error::DegenerateControls("scatter matrix not invertible".into()))?;
        (ch.solve(&diff), true)
    };

    let mut well_scores: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in &cells {
        let s = w.dot(&standardize(c));
        let e = well_scores.entry(c.well_id.clone()).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    let raw: BTreeMap<String, f64> = well_scores
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    let role_mean = |role| {
        let v: Vec<f64> = raw
            .iter()
            .filter(|(k, _)| role_of(k) == Some(role))
            .map(|(_, v)| *v)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (zero, one) = (role_mean(WellRole::NeutralControl), role_mean(WellRole::PositiveControl));
    let span = one - zero;
    if !(span.is_finite() && span != 0.0) {
        return Err(Error::DegenerateControls("controls have identical composite means".into()));
    }
    let per_well = raw.into_iter().map(|(k, v)| (k, (v - zero) / span)).collect();
    Ok(LdaModel {
        features,
        center,
        scale,
        weights: w.iter().copied().collect(),
        regularized,
        per_well,
    })
}

pub(crate) fn feature_exists(table: &FeatureTable, name: &str) -> bool {
    let Some((level, col)) = name.split_once('.') else {
        return false;
    };
    let (Ok(level), Some(col)) = (ObjectLevel::parse(level), column_index(col)) else {
        return false;
    };
    table
        .rows()
        .iter()
        .any(|r| r.level == level && r.values[col].is_some())
}
