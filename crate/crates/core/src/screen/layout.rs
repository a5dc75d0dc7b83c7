use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellRole {
    NeutralControl,
    PositiveControl,
    Compound,
}

impl WellRole {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "neutral_control" => Ok(WellRole::NeutralControl),
            "positive_control" => Ok(WellRole::PositiveControl),
            "compound" => Ok(WellRole::Compound),
            other => Err(Error::Format(format!("unknown well role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellInfo {
    pub well_id: String,
    pub role: WellRole,
    pub compound_id: Option<String>,
    /// Molar; `None` for controls.
    pub concentration: Option<f64>,
    pub image_files: Vec<String>,
}

impl WellInfo {
    fn matches_image(&self, image_id: &str) -> bool {
        self.image_files.iter().any(|f| {
            f == image_id
                || Path::new(f)
                    .file_stem()
                    .is_some_and(|s| s.to_string_lossy() == image_id)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlateLayout {
    wells: BTreeMap<String, WellInfo>,
}

#[derive(Deserialize)]
struct LayoutRecord {
    well_id: String,
    role: String,
    #[serde(default)]
    compound_id: String,
    #[serde(default)]
    concentration_molar: String,
    #[serde(default)]
    image_files: String,
}

impl PlateLayout {
    pub fn new(wells: impl IntoIterator<Item = WellInfo>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for w in wells {
            validate_well(&w)?;
            let id = w.well_id.clone();
            if map.insert(id.clone(), w).is_some() {
                return Err(Error::Format(format!("duplicate well `{id}`")));
            }
        }
        Ok(Self { wells: map })
    }

    /// Reads the layout CSV: `well_id, role, compound_id, concentration_molar,
    /// image_files`, with image files separated by `;`.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut wells = Vec::new();
        for rec in rdr.deserialize::<LayoutRecord>() {
            let rec = rec?;
            let concentration = if rec.concentration_molar.is_empty() {
                None
            } else {
                Some(rec.concentration_molar.parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "well {}: bad concentration `{}`",
                        rec.well_id, rec.concentration_molar
                    ))
                })?)
            };
            wells.push(WellInfo {
                role: WellRole::parse(&rec.role)?,
                compound_id: (!rec.compound_id.is_empty()).then_some(rec.compound_id),
                concentration,
                image_files: rec
                    .image_files
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
                well_id: rec.well_id,
            });
        }
        Self::new(wells)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_csv(f)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["well_id", "role", "compound_id", "concentration_molar", "image_files"])?;
        for well in self.wells.values() {
            let role = match well.role {
                WellRole::NeutralControl => "neutral_control",
                WellRole::PositiveControl => "positive_control",
                WellRole::Compound => "compound",
            };
            w.write_record([
                well.well_id.as_str(),
                role,
                well.compound_id.as_deref().unwrap_or(""),
                &well.concentration.map(|c| c.to_string()).unwrap_or_default(),
                &well.image_files.join(";"),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn wells(&self) -> impl Iterator<Item = &WellInfo> {
        self.wells.values()
    }

    pub fn well(&self, well_id: &str) -> Option<&WellInfo> {
        self.wells.get(well_id)
    }

    /// The well listing this image, by exact file name or file stem.
    pub fn well_of_image(&self, image_id: &str) -> Option<&WellInfo> {
        self.wells.values().find(|w| w.matches_image(image_id))
    }

    pub fn wells_with_role(&self, role: WellRole) -> impl Iterator<Item = &WellInfo> {
        self.wells.values().filter(move |w| w.role == role)
    }

    /// Compound ids in sorted order.
    pub fn compounds(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .wells_with_role(WellRole::Compound)
            .filter_map(|w| w.compound_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

fn validate_well(w: &WellInfo) -> Result<()> {
    match w.role {
        WellRole::Compound => {
            if w.compound_id.is_none() {
                return Err(Error::Format(format!("compound well {} has no compound_id", w.well_id)));
            }
            match w.concentration {
                Some(c) if c.is_finite() && c > 0.0 => Ok(()),
                _ => Err(Error::Format(format!(
                    "compound well {} needs a positive concentration",
                    w.well_id
                ))),
            }
        }
        _ if w.concentration.is_some() => Err(Error::Format(format!(
            "control well {} must not have a concentration",
            w.well_id
        ))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "well_id,role,compound_id,concentration_molar,image_files
A01,neutral_control,,,a01_1.tif;a01_2.tif
A02,positive_control,,,a02_1.tif
B01,compound,CPD1,1e-6,b01.png
";

    #[test]
    fn parses_roles_and_images() {
        let l = PlateLayout::from_csv(CSV.as_bytes()).unwrap();
        assert_eq!(l.wells().count(), 3);
        assert_eq!(l.well_of_image("a01_2").unwrap().well_id, "A01");
        assert_eq!(l.well_of_image("b01.png").unwrap().well_id, "B01");
        assert!(l.well_of_image("zz").is_none());
        assert_eq!(l.well("B01").unwrap().concentration, Some(1e-6));
        assert_eq!(l.compounds(), vec!["CPD1".to_string()]);
    }

    #[test]
    fn csv_round_trip() {
        let l = PlateLayout::from_csv(CSV.as_bytes()).unwrap();
        let back = PlateLayout::from_csv(l.to_csv().unwrap().as_slice()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn rejects_invalid_wells() {
        let bad_control = "well_id,role,compound_id,concentration_molar,image_files\nA01,neutral_control,,1e-6,a.tif\n";
        assert!(PlateLayout::from_csv(bad_control.as_bytes()).is_err());
        let zero = "well_id,role,compound_id,concentration_molar,image_files\nA01,compound,C,0,a.tif\n";
        assert!(PlateLayout::from_csv(zero.as_bytes()).is_err());
        let role = "well_id,role,compound_id,concentration_molar,image_files\nA01,blank,,,a.tif\n";
        assert!(PlateLayout::from_csv(role.as_bytes()).is_err());
        let dup = format!("{CSV}A01,neutral_control,,,x.tif\n");
        assert!(PlateLayout::from_csv(dup.as_bytes()).is_err());
    }
}
