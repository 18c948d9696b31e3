use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sensor constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub bands: usize,
    /// PAN / MS scale ratio.
    pub ratio: usize,
    /// MTF amplitude at the Nyquist frequency of the MS grid, per band.
    pub ms_nyquist_gains: Vec<f64>,
    pub pan_nyquist_gain: f64,
    pub bit_depth: u32,
}

impl SensorSpec {
    pub fn new(
        name: impl Into<String>,
        bands: usize,
        ratio: usize,
        ms_nyquist_gains: Vec<f64>,
        pan_nyquist_gain: f64,
        bit_depth: u32,
    ) -> Result<Self> {
        let spec = SensorSpec {
            name: name.into(),
            bands,
            ratio,
            ms_nyquist_gains,
            pan_nyquist_gain,
            bit_depth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.ms_nyquist_gains.len() != self.bands {
            return Err(Error::Config(format!(
                "sensor {}: {} gains for {} bands",
                self.name,
                self.ms_nyquist_gains.len(),
                self.bands
            )));
        }
        if self.ratio < 1 {
            return Err(Error::Config(format!("sensor {}: ratio must be positive", self.name)));
        }
        let in_open_unit = |g: f64| g > 0.0 && g < 1.0;
        if !self.ms_nyquist_gains.iter().all(|&g| in_open_unit(g)) || !in_open_unit(self.pan_nyquist_gain) {
            return Err(Error::Config(format!(
                "sensor {}: Nyquist gains must lie strictly inside (0, 1)",
                self.name
            )));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::Config(format!(
                "sensor {}: bit depth {}",
                self.name, self.bit_depth
            )));
        }
        Ok(())
    }

    /// 8 bands, 11 bits.
    pub fn worldview3() -> Self {
        SensorSpec::new("WV3", 8, 4, vec![0.35; 8], 0.15, 11).expect("valid preset")
    }

    /// 4 bands, 10 bits.
    pub fn gaofen2() -> Self {
        SensorSpec::new("GF2", 4, 4, vec![0.30; 4], 0.15, 10).expect("valid preset")
    }

    /// 4 bands, 11 bits.
    pub fn quickbird() -> Self {
        SensorSpec::new("QB", 4, 4, vec![0.34; 4], 0.15, 11).expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "wv3" | "worldview3" | "worldview-3" => Ok(Self::worldview3()),
            "gf2" | "gaofen2" | "gaofen-2" => Ok(Self::gaofen2()),
            "qb" | "quickbird" => Ok(Self::quickbird()),
            other => Err(Error::Config(format!("unknown sensor preset '{other}'"))),
        }
    }
}
