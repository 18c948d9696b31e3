use std::f64::consts::PI;

use super::Raster;
use crate::error::{Error, Result};

pub const DEFAULT_SUPPORT: usize = 41;

/// Square, odd-sized 2-D kernel; `separable` holds the 1-D factor when the
/// kernel is an outer product of it with itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    size: usize,
    data: Vec<f64>,
    separable: Option<Vec<f64>>,
}

impl Kernel2d {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || data.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel must be odd and square, got size {size}"
            )));
        }
        Ok(Kernel2d {
            size,
            data,
            separable: None,
        })
    }

    pub fn from_separable(taps: Vec<f64>) -> Result<Self> {
        let size = taps.len();
        if size.is_multiple_of(2) {
            return Err(Error::invalid("separable kernel needs an odd tap count"));
        }
        let data = taps.iter().flat_map(|&a| taps.iter().map(move |&b| a * b)).collect();
        Ok(Kernel2d {
            size,
            data,
            separable: Some(taps),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, dy: usize, dx: usize) -> f64 {
        self.data[dy * self.size + dx]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn taps(&self) -> Option<&[f64]> {
        self.separable.as_deref()
    }
}

/// Standard deviation (samples) of the Gaussian whose frequency response at
/// `1/(2·ratio)` cycles/sample equals `nyquist_gain`.
pub fn mtf_sigma(nyquist_gain: f64, ratio: usize) -> f64 {
    ratio as f64 * (-2.0 * nyquist_gain.ln()).sqrt() / PI
}

/// Gaussian low-pass matched to a sensor MTF, truncated to `support` taps
/// and renormalised to unit sum.
pub fn mtf_gaussian_kernel(nyquist_gain: f64, ratio: usize, support: usize) -> Result<Kernel2d> {
    if !(nyquist_gain > 0.0 && nyquist_gain < 1.0) {
        return Err(Error::invalid(format!("Nyquist gain {nyquist_gain} outside (0, 1)")));
    }
    if support.is_multiple_of(2) || ratio == 0 {
        return Err(Error::invalid("support must be odd and ratio positive"));
    }
    let sigma = mtf_sigma(nyquist_gain, ratio);
    let half = (support / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| (-((n * n) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    Kernel2d::from_separable(taps)
}

/// Uniform `size × size` mean filter.
pub fn box_kernel(size: usize) -> Result<Kernel2d> {
    Kernel2d::from_separable(vec![1.0 / size as f64; size])
}

/// Whole-sample mirror index (`-1 → 1`, `n → n − 2`), repeated as needed.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// 1-D correlation along rows (`axis = 1`) or columns (`axis = 0`) of one
/// plane. Written as `centre + Σ t·(x − centre)`, which equals `Σ t·x` for
/// unit-sum taps and reproduces constant planes exactly.
fn filter_axis(plane: &[f64], h: usize, w: usize, taps: &[f64], axis: usize) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let centre = plane[y * w + x];
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                let d = j as isize - half;
                let v = if axis == 1 {
                    plane[y * w + reflect(x as isize + d, w)]
                } else {
                    plane[reflect(y as isize + d, h) * w + x]
                };
                acc += t * (v - centre);
            }
            out[y * w + x] = centre + acc;
        }
    }
    out
}

fn lowpass_plane(plane: &[f64], h: usize, w: usize, kernel: &Kernel2d) -> Vec<f64> {
    if let Some(taps) = kernel.taps() {
        let rows = filter_axis(plane, h, w, taps, 1);
        return filter_axis(&rows, h, w, taps, 0);
    }
    let k = kernel.size();
    let half = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let centre = plane[y * w + x];
            let mut acc = 0.0;
            for dy in 0..k {
                let yy = reflect(y as isize + dy as isize - half, h);
                for dx in 0..k {
                    let xx = reflect(x as isize + dx as isize - half, w);
                    acc += kernel.at(dy, dx) * (plane[yy * w + xx] - centre);
                }
            }
            out[y * w + x] = centre + acc;
        }
    }
    out
}

/// Per-band 2-D correlation with mirror extension; output size equals input.
pub fn lowpass(image: &Raster, kernel: &Kernel2d) -> Raster {
    image.map_planes(|p, h, w| (lowpass_plane(p, h, w, kernel), h, w))
}

/// Keeps every `ratio`-th sample on both axes, starting at offset 0.
pub fn decimate(image: &Raster, ratio: usize) -> Result<Raster> {
    let (h, w, c) = image.dims();
    if ratio == 0 || h % ratio != 0 || w % ratio != 0 {
        return Err(Error::divisibility(
            "decimate",
            format!("{h}x{w} is not divisible by ratio {ratio}"),
        ));
    }
    Ok(Raster::from_fn(h / ratio, w / ratio, c, |y, x, b| {
        image.get(y * ratio, x * ratio, b)
    }))
}

/// Inserts `factor − 1` zeros after every sample on both axes.
pub fn zero_interleave(image: &Raster, factor: usize) -> Raster {
    let (h, w, c) = image.dims();
    Raster::from_fn(h * factor, w * factor, c, |y, x, b| {
        if y % factor == 0 && x % factor == 0 {
            image.get(y / factor, x / factor, b)
        } else {
            0.0
        }
    })
}

const INTERP_TAPS: usize = 23;

/// Unit-sum 23-tap half-band interpolation kernel: a Hamming-windowed
/// `sinc(n/2)`, `n = −11..=11`, scaled so the centre tap is 1/2 and the
/// odd taps also sum to 1/2. Applied with gain 2 after zero interleaving.
pub fn interp23_kernel() -> [f64; INTERP_TAPS] {
    let half = (INTERP_TAPS / 2) as isize;
    let mut h = [0.0; INTERP_TAPS];
    for (i, tap) in h.iter_mut().enumerate() {
        let n = (i as isize - half).abs();
        let sinc = if n == 0 {
            1.0
        } else {
            let a = PI * n as f64 / 2.0;
            a.sin() / a
        };
        let window = 0.54 + 0.46 * (PI * n as f64 / half as f64).cos();
        *tap = if n != 0 && n % 2 == 0 { 0.0 } else { sinc * window };
    }
    let odd_sum: f64 = 2.0 * h[half as usize + 1..].iter().step_by(2).sum::<f64>();
    for (i, tap) in h.iter_mut().enumerate() {
        let n = i as isize - half;
        *tap = if n == 0 { 0.5 } else { *tap / (2.0 * odd_sum) };
    }
    h
}

/// One ×2 stage along an axis. Even outputs copy the input (the only
/// nonzero even tap is the centre); odd outputs are the odd-phase taps
/// applied to the mirrored interleaved grid.
fn upsample2_axis(plane: &[f64], h: usize, w: usize, axis: usize, kernel: &[f64; INTERP_TAPS]) -> Vec<f64> {
    let half = (INTERP_TAPS / 2) as isize;
    let (oh, ow) = if axis == 1 { (h, 2 * w) } else { (2 * h, w) };
    let len = if axis == 1 { w } else { h };
    let mut out = vec![0.0; oh * ow];
    let sample = |line: usize, i: usize| {
        if axis == 1 {
            plane[line * w + i]
        } else {
            plane[i * w + line]
        }
    };
    let lines = if axis == 1 { h } else { w };
    for line in 0..lines {
        for i in 0..len {
            let centre = sample(line, i);
            let pos = 2 * i + 1;
            let mut acc = 0.0;
            for (j, &t) in kernel.iter().enumerate() {
                let n = j as isize - half;
                if n % 2 == 0 {
                    continue;
                }
                let src = reflect(pos as isize - n, 2 * len);
                debug_assert_eq!(src % 2, 0);
                acc += 2.0 * t * (sample(line, src / 2) - centre);
            }
            let (even, odd) = (centre, centre + acc);
            if axis == 1 {
                out[line * ow + 2 * i] = even;
                out[line * ow + 2 * i + 1] = odd;
            } else {
                out[2 * i * ow + line] = even;
                out[(2 * i + 1) * ow + line] = odd;
            }
        }
    }
    out
}

/// 23-tap polynomial-kernel interpolation by 4 (two separable ×2 stages).
pub fn interp23(image: &Raster, ratio: usize) -> Result<Raster> {
    if ratio != 4 {
        return Err(Error::invalid(format!("interp23 supports ratio 4 only, got {ratio}")));
    }
    let kernel = interp23_kernel();
    Ok(image.map_planes(|p, h, w| {
        let mut plane = p.to_vec();
        let (mut h, mut w) = (h, w);
        for _ in 0..2 {
            plane = upsample2_axis(&plane, h, w, 1, &kernel);
            w *= 2;
            plane = upsample2_axis(&plane, h, w, 0, &kernel);
            h *= 2;
        }
        (plane, h, w)
    }))
}
