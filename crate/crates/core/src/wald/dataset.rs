//! On-disk dataset: `manifest.json` plus one PSR1 file per raster, named
//! `{id}_{role}.psr1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{psr1, Raster, SensorSpec};

use super::{SamplePair, Splits};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Pan,
    Lrms,
    Gt,
    Gtd,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Pan, Role::Lrms, Role::Gt, Role::Gtd];

    pub fn name(self) -> &'static str {
        match self {
            Role::Pan => "pan",
            Role::Lrms => "lrms",
            Role::Gt => "gt",
            Role::Gtd => "gtd",
        }
    }
}

/// How the samples were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub patch: usize,
    pub stride: usize,
    pub ratio: usize,
    pub pan_degradation: String,
    pub gt_d_degradation: String,
}

impl Provenance {
    pub fn new(sources: Vec<String>, patch: usize, stride: usize, ratio: usize) -> Self {
        Provenance {
            sources,
            patch,
            stride,
            ratio,
            pan_degradation: "pan mtf blur + decimate".into(),
            gt_d_degradation: "ms mtf blur (ratio 2) + decimate".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub sensor: SensorSpec,
    pub splits: Splits,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    /// 64-bit FNV-1a of the serialised manifest, used to tag results.
    pub fn fingerprint(&self) -> u64 {
        self.to_json().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
        })
    }

    pub fn all_ids(&self) -> Vec<u64> {
        let s = &self.splits;
        s.train.iter().chain(&s.val).chain(&s.test).copied().collect()
    }
}

/// A dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn raster_path(dir: &Path, id: u64, role: Role) -> PathBuf {
        dir.join(format!("{id}_{}.psr1", role.name()))
    }

    /// Writes every sample and the manifest.
    pub fn create(dir: impl AsRef<Path>, manifest: DatasetManifest, samples: &[SamplePair]) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let sensor = &manifest.sensor;
        for s in samples {
            for role in Role::ALL {
                let raster = match role {
                    Role::Pan => &s.pan,
                    Role::Lrms => &s.lrms,
                    Role::Gt => &s.gt,
                    Role::Gtd => &s.gt_d,
                };
                psr1::write(
                    Self::raster_path(dir, s.id, role),
                    raster,
                    sensor.bit_depth,
                    &sensor.name,
                )?;
            }
        }
        fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest: DatasetManifest::from_json(&text)?,
        })
    }

    fn read_role(&self, id: u64, role: Role) -> Result<Raster> {
        Ok(psr1::read(Self::raster_path(&self.dir, id, role))?.raster)
    }

    pub fn load(&self, id: u64) -> Result<SamplePair> {
        Ok(SamplePair {
            id,
            pan: self.read_role(id, Role::Pan)?,
            lrms: self.read_role(id, Role::Lrms)?,
            gt: self.read_role(id, Role::Gt)?,
            gt_d: self.read_role(id, Role::Gtd)?,
        })
    }

    pub fn load_all(&self, ids: &[u64]) -> Result<Vec<SamplePair>> {
        ids.iter().map(|&id| self.load(id)).collect()
    }
}
