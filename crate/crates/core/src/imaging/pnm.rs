//! Binary PGM/PPM previews.

use std::fs;
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

/// Linear 8-bit stretch of each band between its `lo` and `hi` percentiles.
pub fn stretch_to_u8(raster: &Raster, lo: f64, hi: f64) -> Vec<u8> {
    let (_, _, c) = raster.dims();
    let bounds: Vec<(f64, f64)> = (0..c)
        .map(|b| {
            let mut band = raster.band(b);
            band.sort_by(f64::total_cmp);
            let pick = |q: f64| band[((band.len() - 1) as f64 * q).round() as usize];
            (pick(lo), pick(hi))
        })
        .collect();
    raster
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (a, b) = bounds[i % c];
            let t = if b > a { (v - a) / (b - a) } else { 0.0 };
            (t.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

/// Writes a 1-band raster as P5 or a 3-band raster as P6, stretched
/// between the 2nd and 98th percentiles.
pub fn write_preview(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let magic = match raster.bands() {
        1 => "P5",
        3 => "P6",
        n => return Err(Error::invalid(format!("preview needs 1 or 3 bands, got {n}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend(stretch_to_u8(raster, 0.02, 0.98));
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM/PPM (8- or 16-bit) into a `[0, 1]` raster.
pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    let bands = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported PNM type {m}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM field '{s}'")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PNM maxval {maxval}")));
    }
    let wide = maxval > 255;
    let n = w * h * bands;
    let body = &bytes[pos.min(bytes.len())..];
    let data: Vec<f64> = if wide {
        if body.len() < 2 * n {
            return Err(Error::Format("truncated PNM body".into()));
        }
        body.chunks_exact(2)
            .take(n)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        if body.len() < n {
            return Err(Error::Format("truncated PNM body".into()));
        }
        body[..n].iter().map(|&b| b as f64 / maxval as f64).collect()
    };
    Raster::new(h, w, bands, data)
}
