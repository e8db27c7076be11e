use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional network label of a parcel: the seven canonical cortical
/// networks plus a single subcortical system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Network {
    Vis,
    SomMot,
    DorsAttn,
    SalVentAttn,
    Limbic,
    Cont,
    Default,
    Subcortex,
}

impl Network {
    pub const ALL: [Network; 8] = [
        Network::Vis,
        Network::SomMot,
        Network::DorsAttn,
        Network::SalVentAttn,
        Network::Limbic,
        Network::Cont,
        Network::Default,
        Network::Subcortex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Network::Vis => "Vis",
            Network::SomMot => "SomMot",
            Network::DorsAttn => "DorsAttn",
            Network::SalVentAttn => "SalVentAttn",
            Network::Limbic => "Limbic",
            Network::Cont => "Cont",
            Network::Default => "Default",
            Network::Subcortex => "Subcortex",
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Network {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Network::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown network label {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub roi_id: u32,
    pub name: String,
    pub network: Network,
    pub hemisphere: String,
}

/// Parcellation metadata. ROI ids are dense, `0..len()`, and stored in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atlas {
    rois: Vec<Roi>,
}

impl Atlas {
    pub fn new(mut rois: Vec<Roi>) -> Result<Self> {
        rois.sort_by_key(|r| r.roi_id);
        for (i, r) in rois.iter().enumerate() {
            if r.roi_id as usize != i {
                return Err(Error::Invalid(format!(
                    "atlas roi ids must be unique and dense from 0; position {i} holds id {}",
                    r.roi_id
                )));
            }
        }
        Ok(Atlas { rois })
    }

    pub fn rois(&self) -> &[Roi] {
        &self.rois
    }

    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    pub fn network(&self, roi: usize) -> Network {
        self.rois[roi].network
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut rois = Vec::new();
        for rec in rdr.deserialize::<RoiRow>() {
            let row = rec.map_err(|e| Error::parse(path, e))?;
            let network = row.network.parse().map_err(|e| Error::parse(path, e))?;
            rois.push(Roi {
                roi_id: row.roi_id,
                name: row.name,
                network,
                hemisphere: row.hemisphere,
            });
        }
        Atlas::new(rois)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        for r in &self.rois {
            w.serialize(RoiRow {
                roi_id: r.roi_id,
                name: r.name.clone(),
                network: r.network.as_str().to_string(),
                hemisphere: r.hemisphere.clone(),
            })
            .map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct RoiRow {
    roi_id: u32,
    name: String,
    network: String,
    hemisphere: String,
}
