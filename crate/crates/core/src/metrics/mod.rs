//! Quality indices with and without a reference image. Everything is
//! computed in `f64`.
//!
//! Windowed indices (UIQI, Q2ⁿ, D_λ, D_s) use non-overlapping square
//! blocks anchored at the origin; a trailing strip narrower than the window
//! is ignored.

mod hypercomplex;
pub mod report;

pub use hypercomplex::{cd_conj, cd_mul, q2n};
pub use report::{EvalRecord, EvalReport, Metric};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{decimate, lowpass, mtf_gaussian_kernel, reflect, Raster, SensorSpec, DEFAULT_SUPPORT};

/// Protocol parameters of the windowed and no-reference indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub window: usize,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            window: 32,
            p: 1.0,
            q: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// 3×3 Laplacian used as the high-pass of SCC.
pub const LAPLACIAN: [f64; 9] = [-1.0, -1.0, -1.0, -1.0, 8.0, -1.0, -1.0, -1.0, -1.0];

fn same_dims(op: &'static str, a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean spectral angle in degrees. Pixels where either vector is zero
/// count as 0.
pub fn sam(fused: &Raster, reference: &Raster) -> Result<f64> {
    same_dims("sam", fused, reference)?;
    let (h, w, c) = fused.dims();
    let mut total = 0.0;
    for (x, y) in fused.data().chunks_exact(c).zip(reference.data().chunks_exact(c)) {
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nx > 0.0 && ny > 0.0 {
            // 2·atan2(|x̂ − ŷ|, |x̂ + ŷ|) stays accurate near 0 and π
            let (mut diff, mut sum) = (0.0, 0.0);
            for (a, b) in x.iter().zip(y) {
                let (u, v) = (a / nx, b / ny);
                diff += (u - v) * (u - v);
                sum += (u + v) * (u + v);
            }
            total += 2.0 * diff.sqrt().atan2(sum.sqrt());
        }
    }
    Ok((total / (h * w) as f64).to_degrees())
}

/// Relative dimensionless global error in synthesis.
pub fn ergas(fused: &Raster, reference: &Raster, ratio: usize) -> Result<f64> {
    same_dims("ergas", fused, reference)?;
    let (h, w, c) = fused.dims();
    let n = (h * w) as f64;
    let mut acc = 0.0;
    for b in 0..c {
        let mut se = 0.0;
        let mut sum = 0.0;
        for i in 0..h * w {
            let r = reference.data()[i * c + b];
            let d = fused.data()[i * c + b] - r;
            se += d * d;
            sum += r;
        }
        let mean = sum / n;
        if mean == 0.0 {
            return Err(Error::Numeric(format!("ergas: reference band {b} has zero mean")));
        }
        acc += se / n / (mean * mean);
    }
    Ok(100.0 / ratio as f64 * (acc / c as f64).sqrt())
}

/// Laplacian response of every band, mirror-extended at the borders.
fn highpass(image: &Raster) -> Raster {
    let (h, w, c) = image.dims();
    Raster::from_fn(h, w, c, |y, x, b| {
        let mut acc = 0.0;
        for dy in 0..3 {
            let yy = reflect(y as isize + dy as isize - 1, h);
            for dx in 0..3 {
                let xx = reflect(x as isize + dx as isize - 1, w);
                acc += LAPLACIAN[dy * 3 + dx] * image.get(yy, xx, b);
            }
        }
        acc
    })
}

/// Pearson correlation, `None` when either side is flat.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Correlation of Laplacian-filtered images, averaged over bands.
pub fn scc(fused: &Raster, reference: &Raster) -> Result<f64> {
    same_dims("scc", fused, reference)?;
    let (hf, hr) = (highpass(fused), highpass(reference));
    let mut total = 0.0;
    let mut used = 0;
    for b in 0..fused.bands() {
        match pearson(&hf.band(b), &hr.band(b)) {
            Some(r) => {
                total += r;
                used += 1;
            }
            None => warn!("scc: band {b} has no high-pass variance, skipped"),
        }
    }
    if used == 0 {
        return Err(Error::Numeric("scc: every band is flat after high-pass".into()));
    }
    Ok(total / used as f64)
}

/// Top-left corners of the block windows of side `window`.
pub(crate) fn windows(h: usize, w: usize, window: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 || h < window || w < window {
        return Err(Error::invalid(format!("window {window} does not fit a {h}x{w} image")));
    }
    let mut out = Vec::new();
    for y in (0..=h - window).step_by(window) {
        for x in (0..=w - window).step_by(window) {
            out.push((y, x));
        }
    }
    Ok(out)
}

/// Mean computed relative to the first sample, so a flat window has a
/// mean equal to its value and zero deviations.
pub(crate) fn shifted_mean(v: &[f64]) -> f64 {
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

fn uiqi_window(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let n = a.len() as f64;
    let ma = shifted_mean(a);
    let mb = shifted_mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let (sab, saa, sbb) = (sab / n, saa / n, sbb / n);
    let den = (saa + sbb) * (ma * ma + mb * mb);
    if den == 0.0 {
        return 0.0;
    }
    4.0 * sab * ma * mb / den
}

/// Universal image quality index of two `h × w` planes.
pub fn uiqi(a: &[f64], b: &[f64], h: usize, w: usize, window: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape(
            "uiqi",
            format!("planes of {} and {} samples for {h}x{w}", a.len(), b.len()),
        ));
    }
    let blocks = windows(h, w, window)?;
    let mut wa = Vec::with_capacity(window * window);
    let mut wb = Vec::with_capacity(window * window);
    let mut total = 0.0;
    for &(y0, x0) in &blocks {
        wa.clear();
        wb.clear();
        for y in y0..y0 + window {
            wa.extend_from_slice(&a[y * w + x0..y * w + x0 + window]);
            wb.extend_from_slice(&b[y * w + x0..y * w + x0 + window]);
        }
        total += uiqi_window(&wa, &wb);
    }
    Ok(total / blocks.len() as f64)
}

fn band_uiqi_matrix(image: &Raster, window: usize) -> Result<Vec<Vec<f64>>> {
    let planes = image.planes();
    let c = planes.len();
    let mut m = vec![vec![0.0; c]; c];
    for k in 0..c {
        for l in k + 1..c {
            let q = uiqi(&planes[k], &planes[l], image.height(), image.width(), window)?;
            m[k][l] = q;
            m[l][k] = q;
        }
    }
    Ok(m)
}

/// Spectral distortion between a fused image and the MS image it came
/// from. `ratio` scales the window down at MS resolution.
pub fn d_lambda(fused: &Raster, ms: &Raster, ratio: usize, opts: &MetricOptions) -> Result<f64> {
    let c = fused.bands();
    if c < 2 || ms.bands() != c {
        return Err(Error::invalid(format!(
            "d_lambda needs matching band counts >= 2, got {c} and {}",
            ms.bands()
        )));
    }
    let ms_window = (opts.window / ratio).max(1);
    let qf = band_uiqi_matrix(fused, opts.window)?;
    let qm = band_uiqi_matrix(ms, ms_window)?;
    let mut acc = 0.0;
    for k in 0..c {
        for l in 0..c {
            if k != l {
                acc += (qf[k][l] - qm[k][l]).abs().powf(opts.p);
            }
        }
    }
    Ok((acc / (c * (c - 1)) as f64).powf(1.0 / opts.p))
}

/// PAN blurred with its MTF and decimated to MS scale.
pub fn degrade_pan(pan: &Raster, sensor: &SensorSpec) -> Result<Raster> {
    let k = mtf_gaussian_kernel(sensor.pan_nyquist_gain, sensor.ratio, DEFAULT_SUPPORT)?;
    decimate(&lowpass(pan, &k), sensor.ratio)
}

/// Spatial distortion given PAN at both scales.
pub fn d_s(
    fused: &Raster,
    ms: &Raster,
    pan: &Raster,
    pan_degraded: &Raster,
    ratio: usize,
    opts: &MetricOptions,
) -> Result<f64> {
    let c = fused.bands();
    if ms.bands() != c || pan.bands() != 1 || pan_degraded.bands() != 1 {
        return Err(Error::invalid("d_s expects c-band images and single-band PAN planes"));
    }
    if (pan.height(), pan.width()) != (fused.height(), fused.width())
        || (pan_degraded.height(), pan_degraded.width()) != (ms.height(), ms.width())
    {
        return Err(Error::shape("d_s", "PAN planes do not match the image scales"));
    }
    let ms_window = (opts.window / ratio).max(1);
    let mut acc = 0.0;
    for k in 0..c {
        let hi = uiqi(&fused.band(k), pan.data(), fused.height(), fused.width(), opts.window)?;
        let lo = uiqi(&ms.band(k), pan_degraded.data(), ms.height(), ms.width(), ms_window)?;
        acc += (hi - lo).abs().powf(opts.q);
    }
    Ok((acc / c as f64).powf(1.0 / opts.q))
}

/// `(1 − D_λ)^α · (1 − D_s)^β`.
pub fn qnr(d_lambda: f64, d_s: f64, opts: &MetricOptions) -> Result<f64> {
    for (name, v) in [("d_lambda", d_lambda), ("d_s", d_s)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok((1.0 - d_lambda).powf(opts.alpha) * (1.0 - d_s).powf(opts.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedScores {
    pub sam: f64,
    pub ergas: f64,
    pub scc: f64,
    pub q2n: f64,
}

/// SAM, ERGAS, SCC and Q2ⁿ against a reference.
pub fn reduced_scores(fused: &Raster, reference: &Raster, ratio: usize, opts: &MetricOptions) -> Result<ReducedScores> {
    Ok(ReducedScores {
        sam: sam(fused, reference)?,
        ergas: ergas(fused, reference, ratio)?,
        scc: scc(fused, reference)?,
        q2n: q2n(fused, reference, opts.window)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullScores {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

/// D_λ, D_s and QNR of a fused image against its MS/PAN inputs.
pub fn full_scores(
    fused: &Raster,
    ms: &Raster,
    pan: &Raster,
    sensor: &SensorSpec,
    opts: &MetricOptions,
) -> Result<FullScores> {
    let dl = d_lambda(fused, ms, sensor.ratio, opts)?;
    let pan_d = degrade_pan(pan, sensor)?;
    let ds = d_s(fused, ms, pan, &pan_d, sensor.ratio, opts)?;
    Ok(FullScores {
        d_lambda: dl,
        d_s: ds,
        qnr: qnr(dl.min(1.0), ds.min(1.0), opts)?,
    })
}

#[cfg(test)]
mod tests;
