//! The hierarchical feature table and its CSV form.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{correlation_feature, intensity_stats, region_props};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Channel, InstanceLabelMap, MultiChannelImage};
use crate::nuclei::NucleusRecord;
use crate::screen::PlateLayout;
use crate::subcell::{entities_per_cell, SubcellularEntity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLevel {
    Nucleus,
    Cell,
    Subcellular,
}

impl ObjectLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectLevel::Nucleus => "nucleus",
            ObjectLevel::Cell => "cell",
            ObjectLevel::Subcellular => "subcellular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nucleus" => Ok(ObjectLevel::Nucleus),
            "cell" => Ok(ObjectLevel::Cell),
            "subcellular" => Ok(ObjectLevel::Subcellular),
            other => Err(Error::Format(format!("unknown object level `{other}`"))),
        }
    }
}

/// Feature columns in CSV order, after the key columns.
pub const FEATURE_COLUMNS: [&str; 16] = [
    "area",
    "perimeter",
    "equivalent_diameter",
    "eccentricity",
    "solidity",
    "extent",
    "aspect_ratio",
    "circularity",
    "major_axis_length",
    "minor_axis_length",
    "mean_intensity",
    "min_intensity",
    "max_intensity",
    "std_intensity",
    "nucleus_marker_correlation",
    "entities_per_cell",
];

const KEY_COLUMNS: [&str; 5] = ["image_id", "well_id", "level", "object_id", "cell_id"];

pub fn column_index(name: &str) -> Option<usize> {
    FEATURE_COLUMNS.iter().position(|c| *c == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub well_id: Option<String>,
    pub level: ObjectLevel,
    pub object_id: u32,
    /// Label of the cell the object belongs to.
    pub cell_id: u32,
    /// Indexed like [`FEATURE_COLUMNS`]; `None` is a missing value.
    pub values: [Option<f64>; FEATURE_COLUMNS.len()],
}

impl FeatureRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        column_index(column).and_then(|i| self.values[i])
    }

    fn key(&self) -> (String, ObjectLevel, u32) {
        (self.image_id.clone(), self.level, self.object_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table, rejecting duplicate (image, level, object) keys and non-finite values.
    pub fn from_rows(rows: Vec<FeatureRow>) -> Result<Self> {
        let mut t = Self::new();
        t.extend(rows)?;
        Ok(t)
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = FeatureRow>) -> Result<()> {
        let mut keys: BTreeSet<_> = self.rows.iter().map(FeatureRow::key).collect();
        for r in rows {
            if r.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "feature row {} {} {}",
                    r.image_id,
                    r.level.as_str(),
                    r.object_id
                )));
            }
            if !keys.insert(r.key()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate feature row {} {} {}",
                    r.image_id,
                    r.level.as_str(),
                    r.object_id
                )));
            }
            self.rows.push(r);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(KEY_COLUMNS.iter().chain(FEATURE_COLUMNS.iter()))?;
        for r in &self.rows {
            let mut rec = vec![
                r.image_id.clone(),
                r.well_id.clone().unwrap_or_default(),
                r.level.as_str().to_string(),
                r.object_id.to_string(),
                r.cell_id.to_string(),
            ];
            rec.extend(r.values.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = KEY_COLUMNS.iter().chain(FEATURE_COLUMNS.iter()).copied().collect();
        if header != expected {
            return Err(Error::Format(format!("unexpected feature table header {header:?}")));
        }
        let parse_u32 = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::Format(format!("bad {what} `{s}`")))
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut values = [None; FEATURE_COLUMNS.len()];
            for (i, v) in values.iter_mut().enumerate() {
                let field = &rec[KEY_COLUMNS.len() + i];
                if !field.is_empty() {
                    *v = Some(
                        field
                            .parse::<f64>()
                            .map_err(|_| Error::Format(format!("bad number `{field}`")))?,
                    );
                }
            }
            rows.push(FeatureRow {
                image_id: rec[0].to_string(),
                well_id: (!rec[1].is_empty()).then(|| rec[1].to_string()),
                level: ObjectLevel::parse(&rec[2])?,
                object_id: parse_u32(&rec[3], "object_id")?,
                cell_id: parse_u32(&rec[4], "cell_id")?,
                values,
            });
        }
        Self::from_rows(rows)
    }
}

fn object_row(
    image_id: &str,
    well_id: &Option<String>,
    level: ObjectLevel,
    object_id: u32,
    cell_id: u32,
    mask: &BinaryMask,
    channel: Option<&Channel>,
) -> Result<FeatureRow> {
    let f = region_props(mask)?;
    let mut values = [None; FEATURE_COLUMNS.len()];
    let morph = [
        f.area as f64,
        f.perimeter,
        f.equivalent_diameter,
        f.eccentricity,
        f.solidity,
        f.extent,
        f.aspect_ratio,
        f.circularity,
        f.major_axis_length,
        f.minor_axis_length,
    ];
    for (slot, v) in values.iter_mut().zip(morph) {
        *slot = Some(v);
    }
    if let Some(ch) = channel {
        let s = intensity_stats(mask, ch)?;
        values[10] = Some(s.mean);
        values[11] = Some(s.min);
        values[12] = Some(s.max);
        values[13] = Some(s.std);
    }
    Ok(FeatureRow {
        image_id: image_id.to_string(),
        well_id: well_id.clone(),
        level,
        object_id,
        cell_id,
        values,
    })
}

/// Feature rows for one segmented image: a nucleus and a cell row per retained
/// cell label, and one row per subcellular entity.
///
/// Nucleus rows use the nucleus channel for intensity and carry the
/// nucleus/cell-marker correlation; cell rows use the first cell-marker
/// channel and carry the entity count; entity rows use the subcellular channel.
pub fn extract_all(
    image_id: &str,
    image: &MultiChannelImage,
    labels: &InstanceLabelMap,
    nuclei: &[NucleusRecord],
    entities: &[SubcellularEntity],
    layout: Option<&PlateLayout>,
) -> Result<FeatureTable> {
    let well_id = match layout {
        Some(l) => Some(
            l.well_of_image(image_id)
                .ok_or_else(|| Error::LayoutMismatch(image_id.to_string()))?
                .well_id
                .clone(),
        ),
        None => None,
    };
    let nucleus_channel = image.nucleus_channel().ok();
    let marker = image.cell_marker_channels().first().copied();
    let subcellular = image.subcellular_channel().ok();
    let cell_masks = labels.masks();
    let cells: Vec<u32> = (1..=cell_masks.len() as u32).collect();
    let counts = entities_per_cell(entities, &cells);

    let mut rows = Vec::new();
    for (k, _) in cell_masks.iter().enumerate() {
        let label = k as u32 + 1;
        let source = labels.source_of(label).expect("label has a source");
        let nucleus = nuclei.iter().find(|n| n.id == source).ok_or_else(|| {
            Error::InvalidArgument(format!("cell {label} refers to unknown nucleus {source}"))
        })?;
        let mut row = object_row(
            image_id,
            &well_id,
            ObjectLevel::Nucleus,
            label,
            label,
            &nucleus.mask,
            nucleus_channel,
        )?;
        if let (Some(a), Some(b)) = (nucleus_channel, marker) {
            row.values[14] = correlation_feature(&nucleus.mask, a, b)?;
        }
        rows.push(row);
    }
    for (k, mask) in cell_masks.iter().enumerate() {
        let label = k as u32 + 1;
        let mut row = object_row(image_id, &well_id, ObjectLevel::Cell, label, label, mask, marker)?;
        if subcellular.is_some() {
            row.values[15] = Some(counts[&label] as f64);
        }
        rows.push(row);
    }
    for (i, e) in entities.iter().enumerate() {
        rows.push(object_row(
            image_id,
            &well_id,
            ObjectLevel::Subcellular,
            i as u32 + 1,
            e.cell_id,
            &e.mask,
            subcellular,
        )?);
    }
    FeatureTable::from_rows(rows)
}
