//! ROI atlas tables (`roi_index,roi_name,network,hemisphere`).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven large-scale functional networks of the Yeo parcellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Network {
    Visual,
    Somatomotor,
    DorsalAttention,
    VentralAttention,
    Limbic,
    Control,
    Default,
}

impl Network {
    pub const ALL: [Network; 7] = [
        Network::Visual,
        Network::Somatomotor,
        Network::DorsalAttention,
        Network::VentralAttention,
        Network::Limbic,
        Network::Control,
        Network::Default,
    ];

    pub const ALL_NAMES: [&'static str; 7] = [
        "Visual",
        "Somatomotor",
        "DorsalAttention",
        "VentralAttention",
        "Limbic",
        "Control",
        "Default",
    ];

    pub fn name(self) -> &'static str {
        Self::ALL_NAMES[self as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Network {
    type Err = Error;

    /// Accepts the canonical names and the short labels used in Schaefer
    /// parcel names (`Vis`, `SomMot`, `DorsAttn`, `SalVentAttn`, `Limbic`,
    /// `Cont`, `Default`).
    fn from_str(s: &str) -> Result<Self> {
        let n = match s.trim() {
            "Visual" | "Vis" => Network::Visual,
            "Somatomotor" | "SomMot" => Network::Somatomotor,
            "DorsalAttention" | "DorsAttn" => Network::DorsalAttention,
            "VentralAttention" | "SalVentAttn" => Network::VentralAttention,
            "Limbic" => Network::Limbic,
            "Control" | "Cont" => Network::Control,
            "Default" => Network::Default,
            other => {
                return Err(Error::UnknownNetwork {
                    label: other.to_string(),
                })
            }
        };
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hemisphere {
    L,
    R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasRow {
    pub roi_index: usize,
    pub roi_name: String,
    pub network: Network,
    pub hemisphere: Hemisphere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasTable {
    rows: Vec<AtlasRow>,
}

#[derive(Deserialize)]
struct RawRow {
    roi_index: String,
    roi_name: String,
    network: String,
    hemisphere: String,
}

impl AtlasTable {
    /// Validates rows and sorts them by `roi_index`.
    pub fn new(mut rows: Vec<AtlasRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Atlas("atlas has no rows".into()));
        }
        rows.sort_by_key(|r| r.roi_index);
        for (expected, row) in rows.iter().enumerate() {
            if row.roi_index != expected {
                let what = if row.roi_index < expected {
                    "duplicate"
                } else {
                    "gap before"
                };
                return Err(Error::Atlas(format!(
                    "{what} roi_index {} (indices must be exactly 0..{})",
                    row.roi_index,
                    rows.len()
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["roi_index", "roi_name", "network", "hemisphere"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Atlas(format!(
                "header must be `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.deserialize::<RawRow>().enumerate() {
            let raw = rec?;
            let roi_index = raw.roi_index.parse::<usize>().map_err(|_| {
                Error::Atlas(format!(
                    "row {}: roi_index {:?} is not a nonnegative integer",
                    line + 1,
                    raw.roi_index
                ))
            })?;
            let hemisphere = match raw.hemisphere.as_str() {
                "L" => Hemisphere::L,
                "R" => Hemisphere::R,
                h => {
                    return Err(Error::Atlas(format!(
                        "row {}: hemisphere {h:?} must be L or R",
                        line + 1
                    )))
                }
            };
            rows.push(AtlasRow {
                roi_index,
                roi_name: raw.roi_name,
                network: raw.network.parse()?,
                hemisphere,
            });
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["roi_index", "roi_name", "network", "hemisphere"])?;
        for r in &self.rows {
            let hemi = match r.hemisphere {
                Hemisphere::L => "L",
                Hemisphere::R => "R",
            };
            w.write_record([
                r.roi_index.to_string().as_str(),
                &r.roi_name,
                r.network.name(),
                hemi,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Number of ROIs.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[AtlasRow] {
        &self.rows
    }

    pub fn networks(&self) -> Vec<Network> {
        self.rows.iter().map(|r| r.network).collect()
    }
}

pub fn load_atlas(path: impl AsRef<Path>) -> Result<AtlasTable> {
    AtlasTable::load(path)
}
