//! Reduced-resolution simulation: degrade both inputs by the scale ratio so
//! the original MS image becomes the reference, cut aligned patches, and
//! split them into train/validation/test sets.

mod dataset;
mod synthetic;

pub use dataset::{Dataset, DatasetManifest, Provenance, Role, MANIFEST_FILE};
pub use synthetic::{synthetic_scene, SceneOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{decimate, lowpass, mtf_gaussian_kernel, MsImage, PanImage, Raster, SensorSpec, DEFAULT_SUPPORT};
use crate::rng::{seeded, SliceRandom};

/// MTF blur matched to `factor`, then decimation. Single-band rasters use
/// the PAN gain, `c`-band rasters the per-band MS gains.
pub fn degrade(image: &Raster, sensor: &SensorSpec, factor: usize) -> Result<Raster> {
    let (h, w, c) = image.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::divisibility(
            "degrade",
            format!("{h}x{w} is not divisible by {factor}"),
        ));
    }
    let gains = if c == 1 {
        vec![sensor.pan_nyquist_gain]
    } else if c == sensor.bands {
        sensor.ms_nyquist_gains.clone()
    } else {
        return Err(Error::shape(
            "degrade",
            format!("{c} bands for sensor {} with {}", sensor.name, sensor.bands),
        ));
    };
    let mut planes = Vec::with_capacity(c);
    for (b, &g) in gains.iter().enumerate() {
        let plane = Raster::new(h, w, 1, image.band(b))?;
        let blurred = lowpass(&plane, &mtf_gaussian_kernel(g, factor, DEFAULT_SUPPORT)?);
        planes.push(decimate(&blurred, factor)?.into_data());
    }
    Raster::from_bands(h / factor, w / factor, &planes)
}

/// One training/evaluation sample at reduced resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: u64,
    /// Degraded PAN, same size as `gt`.
    pub pan: Raster,
    /// Degraded MS, `gt` reduced by the ratio.
    pub lrms: Raster,
    /// Original MS patch (reference).
    pub gt: Raster,
    /// `gt` reduced by 2, the first-level target.
    pub gt_d: Raster,
}

impl SamplePair {
    /// Re-derives `lrms` and `gt_d` from `gt` and returns the larger RMS
    /// difference.
    pub fn redegrade_error(&self, sensor: &SensorSpec) -> Result<f64> {
        let rms = |a: &Raster, b: &Raster| {
            let n = a.data().len() as f64;
            (a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n)
                .sqrt()
        };
        let lrms = degrade(&self.gt, sensor, sensor.ratio)?;
        let gt_d = degrade(&self.gt, sensor, 2)?;
        if !lrms.same_dims(&self.lrms) || !gt_d.same_dims(&self.gt_d) {
            return Err(Error::shape(
                "sample pair",
                "stored rasters do not match the re-degraded sizes",
            ));
        }
        Ok(rms(&lrms, &self.lrms).max(rms(&gt_d, &self.gt_d)))
    }
}

/// Cuts `patch × patch` GT tiles from `ms_full` on a `stride` grid and
/// degrades each with its co-located PAN tile. Ids start at `first_id`.
pub fn make_samples(
    ms_full: &MsImage,
    pan_full: &PanImage,
    patch: usize,
    stride: usize,
    first_id: u64,
) -> Result<Vec<SamplePair>> {
    let sensor = &ms_full.sensor;
    let r = sensor.ratio;
    let (h, w) = (ms_full.height(), ms_full.width());
    if pan_full.height() != r * h || pan_full.width() != r * w {
        return Err(Error::shape(
            "make_samples",
            format!(
                "PAN {}x{} is not {r}x the MS {h}x{w}",
                pan_full.height(),
                pan_full.width()
            ),
        ));
    }
    if patch == 0 || stride == 0 || patch > h || patch > w {
        return Err(Error::invalid(format!(
            "patch {patch} (stride {stride}) exceeds the {h}x{w} image"
        )));
    }
    if !patch.is_multiple_of(r) || !patch.is_multiple_of(2) {
        return Err(Error::divisibility(
            "make_samples",
            format!("patch {patch} not divisible by {r} and 2"),
        ));
    }
    let mut out = Vec::new();
    let mut id = first_id;
    for y in (0..=h - patch).step_by(stride) {
        for x in (0..=w - patch).step_by(stride) {
            let gt = ms_full.raster.crop(y, x, patch, patch)?;
            let pan_tile = pan_full.raster.crop(r * y, r * x, r * patch, r * patch)?;
            out.push(SamplePair {
                id,
                pan: degrade(&pan_tile, sensor, r)?,
                lrms: degrade(&gt, sensor, r)?,
                gt_d: degrade(&gt, sensor, 2)?,
                gt,
            });
            id += 1;
        }
    }
    Ok(out)
}

/// Co-located original-resolution pairs for no-reference evaluation.
pub fn full_res_set(ms: &MsImage, pan: &PanImage, patch_pan: usize) -> Result<Vec<(Raster, Raster)>> {
    let r = ms.sensor.ratio;
    if !patch_pan.is_multiple_of(r) {
        return Err(Error::divisibility(
            "full_res_set",
            format!("PAN patch {patch_pan} vs ratio {r}"),
        ));
    }
    let p = patch_pan / r;
    let mut out = Vec::new();
    if p == 0 || ms.height() < p || ms.width() < p {
        return Err(Error::invalid(format!(
            "MS patch {p} exceeds {}x{}",
            ms.height(),
            ms.width()
        )));
    }
    for y in (0..=ms.height() - p).step_by(p) {
        for x in (0..=ms.width() - p).step_by(p) {
            out.push(full_res_patch(ms, pan, y, x, patch_pan)?);
        }
    }
    Ok(out)
}

/// One full-resolution pair whose MS patch starts at `(y, x)`.
pub fn full_res_patch(ms: &MsImage, pan: &PanImage, y: usize, x: usize, patch_pan: usize) -> Result<(Raster, Raster)> {
    let r = ms.sensor.ratio;
    if pan.height() != r * ms.height() || pan.width() != r * ms.width() {
        return Err(Error::shape("full_res_set", "PAN is not aligned with the MS image"));
    }
    let p = patch_pan / r;
    Ok((
        ms.raster.crop(y, x, p, p)?,
        pan.raster.crop(r * y, r * x, patch_pan, patch_pan)?,
    ))
}

/// Train/validation/test partition of sample ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Seeded shuffle followed by contiguous cuts. Validation and test get
/// `floor(n · ratio)` ids, training gets the rest.
pub fn split(ids: &[u64], ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| *r < 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut seeded(seed));
    let n = ids.len() as f64;
    let n_val = (n * b + 1e-9).floor() as usize;
    let n_test = (n * c + 1e-9).floor() as usize;
    let n_train = ids.len() - n_val - n_test;
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(Splits {
        train: shuffled,
        val,
        test,
    })
}
