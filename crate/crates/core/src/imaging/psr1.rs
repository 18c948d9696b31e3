//! PSR1 raster container.
//!
//! ```text
//! offset  size  field
//! 0       12    magic  "PSR1-RASTER\n"
//! 12      4     u32 LE format version (1)
//! 16      4     u32 LE height
//! 20      4     u32 LE width
//! 24      4     u32 LE bands
//! 28      4     u32 LE bit depth
//! 32      4     u32 LE sensor-name length n
//! 36      n     sensor name, UTF-8
//! 36+n    4·H·W·C  f32 LE samples, band-interleaved-by-pixel
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 12] = b"PSR1-RASTER\n";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Psr1 {
    pub raster: Raster,
    pub bit_depth: u32,
    pub sensor: String,
}

pub fn encode(raster: &Raster, bit_depth: u32, sensor: &str) -> Vec<u8> {
    let (h, w, c) = raster.dims();
    let mut out = Vec::with_capacity(36 + sensor.len() + 4 * h * w * c);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, h as u32, w as u32, c as u32, bit_depth, sensor.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(sensor.as_bytes());
    for &v in raster.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated PSR1 header".into()))
}

pub fn decode(bytes: &[u8]) -> Result<Psr1> {
    if bytes.len() < 36 || &bytes[..12] != MAGIC {
        return Err(Error::Format("not a PSR1 raster (bad magic)".into()));
    }
    let version = read_u32(bytes, 12)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PSR1 version {version}")));
    }
    let h = read_u32(bytes, 16)? as usize;
    let w = read_u32(bytes, 20)? as usize;
    let c = read_u32(bytes, 24)? as usize;
    let bit_depth = read_u32(bytes, 28)?;
    let name_len = read_u32(bytes, 32)? as usize;
    let name_end = 36 + name_len;
    let sensor = std::str::from_utf8(
        bytes
            .get(36..name_end)
            .ok_or_else(|| Error::Format("truncated sensor name".into()))?,
    )
    .map_err(|_| Error::Format("sensor name is not UTF-8".into()))?
    .to_string();
    let expected = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("PSR1 dimensions overflow".into()))?;
    let payload = &bytes[name_end..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "PSR1 payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(Psr1 {
        raster: Raster::new(h, w, c, data).map_err(|e| Error::Format(e.to_string()))?,
        bit_depth,
        sensor,
    })
}

pub fn write(path: impl AsRef<Path>, raster: &Raster, bit_depth: u32, sensor: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(raster, bit_depth, sensor))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Psr1> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
