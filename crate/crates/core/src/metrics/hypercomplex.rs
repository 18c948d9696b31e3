//! Q2ⁿ: the image quality index lifted to Cayley–Dickson numbers, so each
//! pixel's whole spectral vector is compared at once.

use crate::error::{Error, Result};
use crate::imaging::Raster;

use super::{shifted_mean, windows};

/// Cayley–Dickson product of two numbers of dimension `2ⁿ`:
/// `(a, b)(c, d) = (ac − d̄b, da + bc̄)`.
pub fn cd_mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 1 {
        return vec![x[0] * y[0]];
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let ac = cd_mul(a, c);
    let db = cd_mul(&cd_conj(d), b);
    let da = cd_mul(d, a);
    let bc = cd_mul(b, &cd_conj(c));
    let mut out = Vec::with_capacity(n);
    out.extend(ac.iter().zip(&db).map(|(p, q)| p - q));
    out.extend(da.iter().zip(&bc).map(|(p, q)| p + q));
    out
}

/// Conjugate: `(a, b)* = (a*, −b)`, which negates every component but the
/// real one.
pub fn cd_conj(x: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().map(|v| -v).collect();
    out[0] = x[0];
    out
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn centred_mean(v: &[Vec<f64>]) -> Vec<f64> {
    let dim = v[0].len();
    (0..dim)
        .map(|i| {
            let column: Vec<f64> = v.iter().map(|p| p[i]).collect();
            shifted_mean(&column)
        })
        .collect()
}

fn q_window(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    if x == y {
        return 1.0;
    }
    let dim = x[0].len();
    let n = x.len() as f64;
    let mx = centred_mean(x);
    let my = centred_mean(y);
    let mut cov = vec![0.0; dim];
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let da: Vec<f64> = a.iter().zip(&mx).map(|(p, m)| p - m).collect();
        let db: Vec<f64> = b.iter().zip(&my).map(|(p, m)| p - m).collect();
        for (acc, v) in cov.iter_mut().zip(cd_mul(&da, &cd_conj(&db))) {
            *acc += v;
        }
        vx += norm2(&da);
        vy += norm2(&db);
    }
    cov.iter_mut().for_each(|v| *v /= n);
    let (vx, vy) = (vx / n, vy / n);
    let (mx2, my2) = (norm2(&mx), norm2(&my));
    let den = (vx + vy) * (mx2 + my2);
    if den == 0.0 {
        return 0.0;
    }
    4.0 * norm2(&cov).sqrt() * (mx2 * my2).sqrt() / den
}

/// Q2ⁿ over block windows. Band counts that are not a power of two are
/// zero-padded up to the next one; at most 8 bands are supported.
pub fn q2n(fused: &Raster, reference: &Raster, window: usize) -> Result<f64> {
    if !fused.same_dims(reference) {
        return Err(Error::shape(
            "q2n",
            format!("{:?} vs {:?}", fused.dims(), reference.dims()),
        ));
    }
    let (h, w, c) = fused.dims();
    if c > 8 {
        return Err(Error::invalid(format!("q2n supports up to 8 bands, got {c}")));
    }
    let dim = c.next_power_of_two();
    let (f, r) = (fused.pad_bands(dim), reference.pad_bands(dim));
    let blocks = windows(h, w, window)?;
    let mut total = 0.0;
    for &(y0, x0) in &blocks {
        let mut xs = Vec::with_capacity(window * window);
        let mut ys = Vec::with_capacity(window * window);
        for y in y0..y0 + window {
            for x in x0..x0 + window {
                xs.push(f.pixel(y, x).to_vec());
                ys.push(r.pixel(y, x).to_vec());
            }
        }
        total += q_window(&xs, &ys);
    }
    Ok(total / blocks.len() as f64)
}
