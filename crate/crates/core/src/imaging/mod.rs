//! Raster data model, radiometric scaling and the resampling filters.
//!
//! Rasters are stored band-interleaved-by-pixel: sample `(y, x, band)`
//! lives at `(y·width + x)·bands + band`. Decimation keeps the sample at
//! offset 0 of every block, and all filters extend images by whole-sample
//! mirroring (`x[-1] = x[1]`).

mod filter;
pub mod pnm;
pub mod psr1;
mod sensor;

pub use filter::{
    box_kernel, decimate, interp23, interp23_kernel, lowpass, mtf_gaussian_kernel, mtf_sigma, reflect, zero_interleave,
    Kernel2d, DEFAULT_SUPPORT,
};
pub use sensor::SensorSpec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::shape("raster", format!("empty raster {height}x{width}x{bands}")));
        }
        if data.len() != height * width * bands {
            return Err(Error::shape(
                "raster",
                format!(
                    "{height}x{width}x{bands} needs {} samples, got {}",
                    height * width * bands,
                    data.len()
                ),
            ));
        }
        Ok(Raster {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Self {
        Raster::new(height, width, bands, vec![value; height * width * bands]).expect("non-empty raster")
    }

    pub fn from_fn(height: usize, width: usize, bands: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * bands);
        for y in 0..height {
            for x in 0..width {
                for b in 0..bands {
                    data.push(f(y, x, b));
                }
            }
        }
        Raster::new(height, width, bands, data).expect("non-empty raster")
    }

    /// Builds a raster from per-band planes (row-major `height × width`).
    pub fn from_bands(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        if planes.iter().any(|p| p.len() != height * width) {
            return Err(Error::shape("raster", "band plane size mismatch"));
        }
        let bands = planes.len();
        let mut data = vec![0.0; height * width * bands];
        for (b, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                data[i * bands + b] = v;
            }
        }
        Raster::new(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, b: usize) -> f64 {
        self.data[(y * self.width + x) * self.bands + b]
    }

    pub fn set(&mut self, y: usize, x: usize, b: usize, v: f64) {
        self.data[(y * self.width + x) * self.bands + b] = v;
    }

    /// Spectral vector of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.bands;
        &self.data[i..i + self.bands]
    }

    pub fn band(&self, b: usize) -> Vec<f64> {
        self.data.iter().skip(b).step_by(self.bands).copied().collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.bands).map(|b| self.band(b)).collect()
    }

    /// Applies `f` to every band plane independently.
    pub fn map_planes(&self, f: impl Fn(&[f64], usize, usize) -> (Vec<f64>, usize, usize)) -> Raster {
        let mut out_planes = Vec::with_capacity(self.bands);
        let mut dims = (0, 0);
        for plane in self.planes() {
            let (p, h, w) = f(&plane, self.height, self.width);
            dims = (h, w);
            out_planes.push(p);
        }
        Raster::from_bands(dims.0, dims.1, &out_planes).expect("consistent planes")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Copies the `h × w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Raster> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::invalid(format!(
                "window {h}x{w} at ({y}, {x}) exceeds raster {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.bands);
        for row in y..y + h {
            let start = (row * self.width + x) * self.bands;
            data.extend_from_slice(&self.data[start..start + w * self.bands]);
        }
        Raster::new(h, w, self.bands, data)
    }

    /// Pads with zero bands up to `bands`.
    pub fn pad_bands(&self, bands: usize) -> Raster {
        if bands <= self.bands {
            return self.clone();
        }
        Raster::from_fn(self.height, self.width, bands, |y, x, b| {
            if b < self.bands {
                self.get(y, x, b)
            } else {
                0.0
            }
        })
    }

    /// Replicates a single-band raster across `bands` bands.
    pub fn broadcast_bands(&self, bands: usize) -> Raster {
        Raster::from_fn(self.height, self.width, bands, |y, x, _| self.get(y, x, 0))
    }

    pub fn clamp_unit(&self) -> Raster {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Reduced,
    Full,
}

/// A multispectral image normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsImage {
    pub raster: Raster,
    pub sensor: SensorSpec,
    pub resolution: Resolution,
}

impl MsImage {
    /// Validates band count and the unit radiometric range.
    pub fn new(raster: Raster, sensor: SensorSpec, resolution: Resolution) -> Result<Self> {
        if raster.bands() != sensor.bands {
            return Err(Error::shape(
                "ms image",
                format!(
                    "raster has {} bands but sensor {} has {}",
                    raster.bands(),
                    sensor.name,
                    sensor.bands
                ),
            ));
        }
        if let Some(v) = raster.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("ms sample {v} outside [0, 1]")));
        }
        Ok(MsImage {
            raster,
            sensor,
            resolution,
        })
    }

    /// Wraps a raster that may leave `[0, 1]` (unclamped fusion output).
    pub fn unchecked(raster: Raster, sensor: SensorSpec, resolution: Resolution) -> Self {
        MsImage {
            raster,
            sensor,
            resolution,
        }
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn bands(&self) -> usize {
        self.raster.bands()
    }
}

/// A single-band panchromatic image normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanImage {
    pub raster: Raster,
    pub sensor: SensorSpec,
}

impl PanImage {
    pub fn new(raster: Raster, sensor: SensorSpec) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(Error::shape(
                "pan image",
                format!("expected 1 band, got {}", raster.bands()),
            ));
        }
        let r = sensor.ratio;
        if !raster.height().is_multiple_of(r) || !raster.width().is_multiple_of(r) {
            return Err(Error::divisibility(
                "pan image",
                format!("{}x{} is not divisible by ratio {r}", raster.height(), raster.width()),
            ));
        }
        if let Some(v) = raster.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pan sample {v} outside [0, 1]")));
        }
        Ok(PanImage { raster, sensor })
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }
}

fn full_scale(bit_depth: u32) -> Result<f64> {
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::invalid(format!("unsupported bit depth {bit_depth}")));
    }
    Ok(((1u32 << bit_depth) - 1) as f64)
}

/// Scales raw integer samples to `[0, 1]` by `2^bit_depth − 1`.
pub fn normalize(raw: &[u16], bit_depth: u32) -> Result<Vec<f64>> {
    let scale = full_scale(bit_depth)?;
    raw.iter()
        .map(|&v| {
            if v as f64 > scale {
                Err(Error::invalid(format!("sample {v} exceeds {bit_depth}-bit range")))
            } else {
                Ok(v as f64 / scale)
            }
        })
        .collect()
}

/// Inverse of [`normalize`], rounding to the nearest integer level.
pub fn denormalize(values: &[f64], bit_depth: u32) -> Result<Vec<u16>> {
    let scale = full_scale(bit_depth)?;
    Ok(values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * scale).round() as u16)
        .collect())
}
