//! Procedural scenes for demos and tests. A latent scene is built at PAN
//! resolution as illumination × a soft mixture of material spectra; the PAN
//! image is its band average and the MS image its MTF-degraded version.

use crate::error::Result;
use crate::imaging::{MsImage, PanImage, Raster, Resolution, SensorSpec};
use crate::rng::{seeded, RngExt, SeededRng};

use super::degrade;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOptions {
    pub materials: usize,
    /// Sinusoids per random field.
    pub components: usize,
    /// Highest spatial frequency in cycles per PAN pixel.
    pub max_frequency: f64,
    /// Softmax sharpness of the material mixture; larger gives crisper edges.
    pub sharpness: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            materials: 4,
            components: 6,
            max_frequency: 0.12,
            sharpness: 6.0,
        }
    }
}

struct Field {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Field {
    fn new(rng: &mut SeededRng, components: usize, max_frequency: f64) -> Self {
        let waves = (0..components)
            .map(|i| {
                // geometric spread of scales from coarse to the finest allowed
                let t = i as f64 / components.max(2) as f64;
                let f = max_frequency * (0.04f64).powf(1.0 - t) * rng.random_range(0.7..1.0);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let amp = 1.0 / (1.0 + 2.0 * t);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (
                    std::f64::consts::TAU * f * theta.cos(),
                    std::f64::consts::TAU * f * theta.sin(),
                    amp,
                    phase,
                )
            })
            .collect();
        Field { waves }
    }

    /// Roughly in [−1, 1].
    fn at(&self, y: f64, x: f64) -> f64 {
        let norm: f64 = self.waves.iter().map(|w| w.2).sum();
        self.waves
            .iter()
            .map(|&(fx, fy, a, p)| a * (fx * x + fy * y + p).sin())
            .sum::<f64>()
            / norm
    }
}

/// An aligned MS (`ms_height × ms_width`) and PAN (`ratio ×` larger) pair.
pub fn synthetic_scene(
    ms_height: usize,
    ms_width: usize,
    sensor: &SensorSpec,
    seed: u64,
    opts: &SceneOptions,
) -> Result<(MsImage, PanImage)> {
    let mut rng = seeded(seed);
    let c = sensor.bands;
    let r = sensor.ratio;
    let (h, w) = (ms_height * r, ms_width * r);
    let spectra: Vec<Vec<f64>> = (0..opts.materials)
        .map(|_| {
            let base = rng.random_range(0.2..0.7);
            let slope = rng.random_range(-0.4..0.4);
            (0..c)
                .map(|k| {
                    let t = k as f64 / (c - 1).max(1) as f64 - 0.5;
                    (base + slope * t + rng.random_range(-0.08..0.08)).clamp(0.05, 0.95)
                })
                .collect()
        })
        .collect();
    let abundance: Vec<Field> = (0..opts.materials)
        .map(|_| Field::new(&mut rng, opts.components, opts.max_frequency))
        .collect();
    let shading = Field::new(&mut rng, opts.components, opts.max_frequency * 1.5);

    let mut weights = vec![0.0; opts.materials];
    let latent = Raster::from_fn(h, w, c, |y, x, k| {
        let (fy, fx) = (y as f64, x as f64);
        if k == 0 {
            let mut total = 0.0;
            for (wgt, field) in weights.iter_mut().zip(&abundance) {
                *wgt = (opts.sharpness * field.at(fy, fx)).exp();
                total += *wgt;
            }
            let light = 0.75 + 0.25 * shading.at(fy, fx);
            weights.iter_mut().for_each(|v| *v *= light / total);
        }
        weights.iter().zip(&spectra).map(|(a, s)| a * s[k]).sum::<f64>()
    });
    let pan = Raster::from_fn(h, w, 1, |y, x, _| latent.pixel(y, x).iter().sum::<f64>() / c as f64);
    let ms = degrade(&latent, sensor, r)?.clamp_unit();
    Ok((
        MsImage::new(ms, sensor.clone(), Resolution::Full)?,
        PanImage::new(pan.clamp_unit(), sensor.clone())?,
    ))
}
