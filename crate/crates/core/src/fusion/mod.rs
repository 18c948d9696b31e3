//! Component-substitution-free detail injection:
//! `fused = interp23(ms) + G ⊙ (P − P_L)`.
//!
//! The low-pass operator (`P_L`) and the gain `G` are pluggable, which gives
//! EXP, SFIM, GLP-HPM, GLP with regression gain, and unit-gain injection.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    box_kernel, decimate, interp23, lowpass, mtf_gaussian_kernel, MsImage, PanImage, Raster, Resolution, SensorSpec,
    DEFAULT_SUPPORT,
};

/// Denominator floor for high-pass modulation, in units of full scale.
pub const HPM_EPSILON: f64 = 1e-4;
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowpassMode {
    /// MTF blur, decimation, interp23 back to PAN scale.
    MtfGlp,
    /// Uniform mean filter.
    BoxSmoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Unit,
    Hpm,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MraConfig {
    pub lowpass_mode: LowpassMode,
    pub gain_mode: GainMode,
    pub sensor: SensorSpec,
    /// Side of the box window; `None` means `2·ratio + 1`.
    pub box_window: Option<usize>,
    /// Match the PAN mean and standard deviation to every interpolated band
    /// before extracting details, giving one detail plane per band.
    pub equalize_pan: bool,
    /// Clamp the fused output to `[0, 1]`.
    pub clamp: bool,
}

impl MraConfig {
    pub fn new(lowpass_mode: LowpassMode, gain_mode: GainMode, sensor: SensorSpec) -> Self {
        MraConfig {
            lowpass_mode,
            gain_mode,
            sensor,
            box_window: None,
            equalize_pan: gain_mode != GainMode::Unit,
            clamp: true,
        }
    }

    pub fn sfim(sensor: SensorSpec) -> Self {
        Self::new(LowpassMode::BoxSmoothing, GainMode::Hpm, sensor)
    }

    pub fn glp_hpm(sensor: SensorSpec) -> Self {
        Self::new(LowpassMode::MtfGlp, GainMode::Hpm, sensor)
    }

    pub fn glp_regression(sensor: SensorSpec) -> Self {
        Self::new(LowpassMode::MtfGlp, GainMode::Regression, sensor)
    }

    pub fn unit(sensor: SensorSpec) -> Self {
        Self::new(LowpassMode::MtfGlp, GainMode::Unit, sensor)
    }

    fn box_size(&self) -> usize {
        self.box_window.unwrap_or(2 * self.sensor.ratio + 1)
    }
}

/// Classic methods by their command-line names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exp,
    Sfim,
    GlpHpm,
    GlpReg,
    MraUnit,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Exp,
        Method::Sfim,
        Method::GlpHpm,
        Method::GlpReg,
        Method::MraUnit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exp => "exp",
            Method::Sfim => "sfim",
            Method::GlpHpm => "glp-hpm",
            Method::GlpReg => "glp-reg",
            Method::MraUnit => "mra-unit",
        }
    }

    /// `None` for EXP, which injects nothing.
    pub fn config(self, sensor: SensorSpec) -> Option<MraConfig> {
        match self {
            Method::Exp => None,
            Method::Sfim => Some(MraConfig::sfim(sensor)),
            Method::GlpHpm => Some(MraConfig::glp_hpm(sensor)),
            Method::GlpReg => Some(MraConfig::glp_regression(sensor)),
            Method::MraUnit => Some(MraConfig::unit(sensor)),
        }
    }

    /// Runs the method with its preset configuration. EXP is clamped like
    /// the injecting methods so all rows share the same radiometric range.
    pub fn fuse(self, ms: &MsImage, pan: &PanImage) -> Result<MsImage> {
        match self.config(ms.sensor.clone()) {
            Some(cfg) => mra_fuse(ms, pan, &cfg),
            None => {
                let up = exp_baseline(ms, ms.sensor.ratio)?;
                Ok(MsImage::unchecked(up.raster.clamp_unit(), up.sensor, Resolution::Full))
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion method '{s}'")))
    }
}

/// Low-pass version of every band of `image` at its own scale. In MTF mode a
/// single-band image uses the PAN gain and a `c`-band image the per-band MS
/// gains.
pub fn lowpass_bands(image: &Raster, config: &MraConfig) -> Result<Raster> {
    let r = config.sensor.ratio;
    match config.lowpass_mode {
        LowpassMode::BoxSmoothing => Ok(lowpass(image, &box_kernel(config.box_size())?)),
        LowpassMode::MtfGlp => {
            let gains: Vec<f64> = if image.bands() == 1 {
                vec![config.sensor.pan_nyquist_gain]
            } else if image.bands() == config.sensor.bands {
                config.sensor.ms_nyquist_gains.clone()
            } else {
                return Err(Error::shape(
                    "pan lowpass",
                    format!("{} bands for sensor with {}", image.bands(), config.sensor.bands),
                ));
            };
            let (h, w, _) = image.dims();
            let mut planes = Vec::with_capacity(gains.len());
            for (b, &g) in gains.iter().enumerate() {
                let plane = Raster::new(h, w, 1, image.band(b))?;
                let blurred = lowpass(&plane, &mtf_gaussian_kernel(g, r, DEFAULT_SUPPORT)?);
                let back = interp23(&decimate(&blurred, r)?, r)?;
                planes.push(back.into_data());
            }
            Raster::from_bands(h, w, &planes)
        }
    }
}

/// `P_L` for a PAN image.
pub fn pan_lowpass(pan: &PanImage, config: &MraConfig) -> Result<Raster> {
    lowpass_bands(&pan.raster, config)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// PAN with its mean and standard deviation matched to each band of
/// `ms_up`. A flat PAN maps to each band's mean.
pub fn equalize_pan(pan: &Raster, ms_up: &Raster) -> Raster {
    let (mp, sp) = mean_std(pan.data());
    let stats: Vec<(f64, f64)> = ms_up.planes().iter().map(|p| mean_std(p)).collect();
    Raster::from_fn(pan.height(), pan.width(), ms_up.bands(), |y, x, b| {
        let (mk, sk) = stats[b];
        if sp == 0.0 {
            mk
        } else {
            (pan.get(y, x, 0) - mp) * sk / sp + mk
        }
    })
}

/// Band `b` of `r`, or its only band when single-band.
fn band_of(r: &Raster, y: usize, x: usize, b: usize) -> f64 {
    if r.bands() == 1 {
        r.get(y, x, 0)
    } else {
        r.get(y, x, b)
    }
}

/// Injection gain `G` (H×W×c). `pan_l` may have one band or `c` bands.
pub fn injection_gain(ms_up: &Raster, pan_l: &Raster, config: &MraConfig) -> Result<Raster> {
    let (h, w, c) = ms_up.dims();
    if pan_l.height() != h || pan_l.width() != w || (pan_l.bands() != 1 && pan_l.bands() != c) {
        return Err(Error::shape(
            "injection gain",
            format!("pan_l {:?} against ms_up {:?}", pan_l.dims(), ms_up.dims()),
        ));
    }
    Ok(match config.gain_mode {
        GainMode::Unit => Raster::filled(h, w, c, 1.0),
        GainMode::Hpm => Raster::from_fn(h, w, c, |y, x, b| {
            ms_up.get(y, x, b) / band_of(pan_l, y, x, b).max(HPM_EPSILON)
        }),
        GainMode::Regression => {
            let slopes: Vec<f64> = (0..c)
                .map(|b| {
                    let m = ms_up.band(b);
                    let p = pan_l.band(if pan_l.bands() == 1 { 0 } else { b });
                    regression_slope(&m, &p).unwrap_or_else(|| {
                        warn!("band {b}: low-pass PAN has no variance, falling back to unit gain");
                        1.0
                    })
                })
                .collect();
            Raster::from_fn(h, w, c, |_, _, b| slopes[b])
        }
    })
}

/// Least-squares slope of `y` against `x`, `None` when `x` is flat.
pub fn regression_slope(y: &[f64], x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        var += (a - mx) * (a - mx);
    }
    cov /= n;
    var /= n;
    (var >= DEGENERATE_VARIANCE).then(|| cov / var)
}

/// `ms_up + G ⊙ (pan − pan_l)`, with single-band PAN planes broadcast over
/// the bands.
pub fn inject(ms_up: &Raster, pan: &Raster, pan_l: &Raster, gain: &Raster) -> Result<Raster> {
    let (h, w, c) = ms_up.dims();
    for (name, r) in [("pan", pan), ("pan_l", pan_l)] {
        if r.height() != h || r.width() != w || (r.bands() != 1 && r.bands() != c) {
            return Err(Error::shape(
                "inject",
                format!("{name} {:?} against ms_up {:?}", r.dims(), ms_up.dims()),
            ));
        }
    }
    if gain.dims() != (h, w, c) {
        return Err(Error::shape(
            "inject",
            format!("gain {:?} against ms_up {:?}", gain.dims(), ms_up.dims()),
        ));
    }
    Ok(Raster::from_fn(h, w, c, |y, x, b| {
        ms_up.get(y, x, b) + gain.get(y, x, b) * (band_of(pan, y, x, b) - band_of(pan_l, y, x, b))
    }))
}

fn check_pair(ms: &MsImage, pan: &PanImage, ratio: usize) -> Result<()> {
    if pan.height() != ratio * ms.height() || pan.width() != ratio * ms.width() {
        return Err(Error::shape(
            "fuse",
            format!(
                "PAN {}x{} is not {ratio}x the MS {}x{}",
                pan.height(),
                pan.width(),
                ms.height(),
                ms.width()
            ),
        ));
    }
    Ok(())
}

/// Intermediate planes of one fusion, exposed for inspection.
#[derive(Debug, Clone)]
pub struct MraParts {
    pub ms_up: Raster,
    /// PAN as injected: one band, or one equalised plane per band.
    pub pan: Raster,
    pub pan_l: Raster,
    pub gain: Raster,
}

pub fn mra_parts(ms: &MsImage, pan: &PanImage, config: &MraConfig) -> Result<MraParts> {
    let r = config.sensor.ratio;
    check_pair(ms, pan, r)?;
    let ms_up = interp23(&ms.raster, r)?;
    let pan_in = if config.equalize_pan {
        equalize_pan(&pan.raster, &ms_up)
    } else {
        pan.raster.clone()
    };
    let pan_l = lowpass_bands(&pan_in, config)?;
    let gain = injection_gain(&ms_up, &pan_l, config)?;
    Ok(MraParts {
        ms_up,
        pan: pan_in,
        pan_l,
        gain,
    })
}

/// Detail-injection fusion of an MS/PAN pair.
pub fn mra_fuse(ms: &MsImage, pan: &PanImage, config: &MraConfig) -> Result<MsImage> {
    let parts = mra_parts(ms, pan, config)?;
    let mut out = inject(&parts.ms_up, &parts.pan, &parts.pan_l, &parts.gain)?;
    if config.clamp {
        out = out.clamp_unit();
    }
    Ok(MsImage::unchecked(out, ms.sensor.clone(), Resolution::Full))
}

/// The MS image interpolated with the 23-tap kernel, nothing injected.
pub fn exp_baseline(ms: &MsImage, ratio: usize) -> Result<MsImage> {
    Ok(MsImage::unchecked(
        interp23(&ms.raster, ratio)?,
        ms.sensor.clone(),
        Resolution::Full,
    ))
}
