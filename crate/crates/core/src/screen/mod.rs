//! Hit-validation analytics: per-well aggregation, Z'-factor, the LDA
//! composite read-out and Hill fits.

mod hill;
mod layout;
mod lda;
mod plot;
mod zprime;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use hill::{fit_hill, hill, DosePoint, DoseResponse, HillFit, HILL_N_MAX, HILL_N_MIN};
pub use layout::{PlateLayout, WellInfo, WellRole};
pub use lda::{lda_weighted_feature, LdaModel, DEFAULT_LDA_FEATURES, LDA_COMPOSITE};
pub use plot::dose_response_svg;
pub use zprime::{z_prime, z_prime_with, ZPrimeVariant};
use zprime::mean;

use crate::error::{Error, Result};
use crate::features::{column_index, FeatureTable, ObjectLevel, FEATURE_COLUMNS};

/// Splits `level.column`, e.g. `cell.extent`.
pub fn parse_feature(name: &str) -> Result<(ObjectLevel, usize)> {
    let (level, col) = name
        .split_once('.')
        .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
    let level = ObjectLevel::parse(level).map_err(|_| Error::MissingFeature(name.to_string()))?;
    let col = column_index(col).ok_or_else(|| Error::MissingFeature(name.to_string()))?;
    Ok((level, col))
}

/// Feature name → well → mean over the well's objects.
pub type WellFeatures = BTreeMap<String, BTreeMap<String, f64>>;

/// Per-well means of every `level.column` that has at least one value.
pub fn well_features(table: &FeatureTable) -> WellFeatures {
    let mut acc: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for row in table.rows() {
        let Some(well) = &row.well_id else { continue };
        for (col, v) in FEATURE_COLUMNS.iter().zip(&row.values) {
            let Some(v) = v else { continue };
            let e = acc
                .entry(format!("{}.{}", row.level.as_str(), col))
                .or_default()
                .entry(well.clone())
                .or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(f, wells)| (f, wells.into_iter().map(|(w, (s, n))| (w, s / n as f64)).collect()))
        .collect()
}

fn control_values(values: &BTreeMap<String, f64>, layout: &PlateLayout, role: WellRole) -> Vec<f64> {
    layout
        .wells_with_role(role)
        .filter_map(|w| values.get(&w.well_id).copied())
        .collect()
}

/// Z' of one per-well column.
pub fn feature_z_prime(
    values: &BTreeMap<String, f64>,
    layout: &PlateLayout,
    variant: ZPrimeVariant,
) -> Result<f64> {
    z_prime_with(
        &control_values(values, layout, WellRole::NeutralControl),
        &control_values(values, layout, WellRole::PositiveControl),
        variant,
    )
}

/// Z' of every column, in name order.
pub fn z_prime_table(
    features: &WellFeatures,
    layout: &PlateLayout,
    variant: ZPrimeVariant,
) -> Vec<(String, Result<f64>)> {
    features
        .iter()
        .map(|(name, values)| (name.clone(), feature_z_prime(values, layout, variant)))
        .collect()
}

/// Whether the control means differ beyond rounding. Under the mean-sum denominator a column
/// that is constant across all controls scores exactly 1 without telling the
/// controls apart, so it cannot serve as a read-out.
fn separates_controls(values: &BTreeMap<String, f64>, layout: &PlateLayout) -> bool {
    let n = control_values(values, layout, WellRole::NeutralControl);
    let p = control_values(values, layout, WellRole::PositiveControl);
    if n.is_empty() || p.is_empty() {
        return false;
    }
    let (a, b) = (mean(&n), mean(&p));
    // Relative slack absorbs summation-order rounding in per-well means.
    (a - b).abs() > 1e-9 * a.abs().max(b.abs())
}

/// Column with the highest Z' among those that separate the controls; ties
/// go to the lexicographically first name.
pub fn best_of(
    features: &WellFeatures,
    layout: &PlateLayout,
    variant: ZPrimeVariant,
) -> Result<(String, f64)> {
    let mut best: Option<(String, f64)> = None;
    for (name, z) in z_prime_table(features, layout, variant) {
        let Ok(z) = z else { continue };
        if !separates_controls(&features[&name], layout) {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| z > *b) {
            best = Some((name, z));
        }
    }
    best.ok_or_else(|| Error::DegenerateControls("no feature has a defined Z'".into()))
}

/// Best per-well feature by Z'. The default LDA composite competes when all
/// of its input features are in the table.
pub fn best_feature_by_zprime(
    table: &FeatureTable,
    layout: &PlateLayout,
    variant: ZPrimeVariant,
) -> Result<(String, f64)> {
    let mut features = well_features(table);
    if DEFAULT_LDA_FEATURES.iter().all(|f| lda::feature_exists(table, f)) {
        if let Ok(m) = lda_weighted_feature(table, layout, &DEFAULT_LDA_FEATURES) {
            features.insert(LDA_COMPOSITE.to_string(), m.per_well);
        }
    }
    best_of(&features, layout, variant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitvalConfig {
    pub zprime_variant: ZPrimeVariant,
    /// Inputs of the composite read-out.
    pub lda_features: Vec<String>,
    /// Read-out for the Hill fits; the best feature by Z' when unset.
    pub readout: Option<String>,
}

impl Default for HitvalConfig {
    fn default() -> Self {
        Self {
            zprime_variant: ZPrimeVariant::default(),
            lda_features: DEFAULT_LDA_FEATURES.iter().map(|s| s.to_string()).collect(),
            readout: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompoundResult {
    pub compound_id: String,
    pub dose_response: DoseResponse,
    pub fit: std::result::Result<HillFit, String>,
}

#[derive(Debug, Clone)]
pub struct HitvalReport {
    pub variant: ZPrimeVariant,
    pub z_primes: Vec<(String, std::result::Result<f64, String>)>,
    pub best: Option<(String, f64)>,
    pub readout: String,
    pub lda: std::result::Result<LdaModel, String>,
    pub compounds: Vec<CompoundResult>,
}

/// Z' of every feature and the composite, then one Hill fit per compound on
/// the read-out. A failed fit becomes a report row; it never aborts the run.
pub fn run_hitval(table: &FeatureTable, layout: &PlateLayout, cfg: &HitvalConfig) -> Result<HitvalReport> {
    if layout.wells_with_role(WellRole::NeutralControl).next().is_none()
        || layout.wells_with_role(WellRole::PositiveControl).next().is_none()
    {
        return Err(Error::DegenerateControls("layout lacks a control group".into()));
    }
    let mut features = well_features(table);
    let names: Vec<&str> = cfg.lda_features.iter().map(String::as_str).collect();
    let lda = lda_weighted_feature(table, layout, &names).map_err(|e| e.to_string());
    if let Ok(m) = &lda {
        features.insert(LDA_COMPOSITE.to_string(), m.per_well.clone());
    }
    let z_primes: Vec<(String, std::result::Result<f64, String>)> =
        z_prime_table(&features, layout, cfg.zprime_variant)
            .into_iter()
            .map(|(n, z)| (n, z.map_err(|e| e.to_string())))
            .collect();
    let best = best_of(&features, layout, cfg.zprime_variant).ok();
    let readout = match (&cfg.readout, &best) {
        (Some(r), _) => r.clone(),
        (None, Some((b, _))) => b.clone(),
        (None, None) => {
            return Err(Error::DegenerateControls("no feature has a defined Z'".into()));
        }
    };
    let values = features
        .get(&readout)
        .ok_or_else(|| Error::MissingFeature(readout.clone()))?;

    let mut compounds = Vec::new();
    for compound in layout.compounds() {
        let wells: Vec<(f64, f64)> = layout
            .wells_with_role(WellRole::Compound)
            .filter(|w| w.compound_id.as_deref() == Some(compound.as_str()))
            .filter_map(|w| Some((w.concentration?, *values.get(&w.well_id)?)))
            .collect();
        let dose_response = DoseResponse::from_wells(compound.clone(), &wells)?;
        let fit = fit_hill(&dose_response).map_err(|e| e.to_string());
        compounds.push(CompoundResult {
            compound_id: compound,
            dose_response,
            fit,
        });
    }
    Ok(HitvalReport {
        variant: cfg.zprime_variant,
        z_primes,
        best,
        readout,
        lda,
        compounds,
    })
}

impl HitvalReport {
    pub fn zprime_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature", "z_prime", "best", "status"])?;
        for (name, z) in &self.z_primes {
            let is_best = self.best.as_ref().is_some_and(|(b, _)| b == name);
            match z {
                Ok(z) => w.write_record([name.as_str(), &z.to_string(), &is_best.to_string(), "ok"])?,
                Err(e) => w.write_record([name.as_str(), "", "false", e.as_str()])?,
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn ec50_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "compound_id",
            "readout",
            "n_concentrations",
            "status",
            "s0",
            "s_inf",
            "ec50_molar",
            "hill_n",
            "residual_sse",
            "converged",
        ])?;
        for c in &self.compounds {
            let n = c.dose_response.distinct_concentrations().to_string();
            match &c.fit {
                Ok(f) => w.write_record([
                    c.compound_id.as_str(),
                    &self.readout,
                    &n,
                    "ok",
                    &f.s0.to_string(),
                    &f.s_inf.to_string(),
                    &f.ec50.to_string(),
                    &f.n.to_string(),
                    &f.residual_sse.to_string(),
                    &f.converged.to_string(),
                ])?,
                Err(e) => w.write_record([
                    c.compound_id.as_str(),
                    &self.readout,
                    &n,
                    e.as_str(),
                    "",
                    "",
                    "",
                    "",
                    "",
                    "false",
                ])?,
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// One SVG per compound, keyed by compound id.
    pub fn plots(&self) -> Vec<(String, String)> {
        self.compounds
            .iter()
            .map(|c| {
                (
                    c.compound_id.clone(),
                    dose_response_svg(&c.dose_response, c.fit.as_ref().ok(), &self.readout),
                )
            })
            .collect()
    }
}
