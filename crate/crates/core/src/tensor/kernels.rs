//! Low-level loops shared by the convolution operators.

use std::cell::Cell;

/// Row-major matrix view: `rows × cols`, optionally transposed on read.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

thread_local! {
    static WIDE_ACCUMULATION: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with matrix products accumulated in `f64` (operands and
/// results stay `f32`). Used by finite-difference checks, where the
/// rounding noise of long `f32` dot products would swamp the difference
/// quotient.
pub fn with_wide_accumulation<T>(f: impl FnOnce() -> T) -> T {
    let previous = WIDE_ACCUMULATION.with(|w| w.replace(true));
    let out = f();
    WIDE_ACCUMULATION.with(|w| w.set(previous));
    out
}

fn gemm_wide(a: Mat<'_>, b: Mat<'_>, out: &mut [f32], beta: f32, m: usize, k: usize, n: usize) {
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let a64: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    let mut c64: Vec<f64> = out.iter().map(|&v| v as f64).collect();
    // SAFETY: same views as the f32 path, over copies of equal length.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a64.as_ptr(),
            rsa,
            csa,
            b64.as_ptr(),
            rsb,
            csb,
            beta as f64,
            c64.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for (o, v) in out.iter_mut().zip(c64) {
        *o = v as f32;
    }
}

/// `out = a · b + beta · out`, where `out` is row-major `m × n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, out: &mut [f32], beta: f32) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if WIDE_ACCUMULATION.with(Cell::get) {
        return gemm_wide(a, b, out, beta, m, k, n);
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the strides describe in-bounds row-major views of slices
    // whose lengths were checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry of a square-kernel convolution over one image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfolds `image` (`channels × height × width`) into a
/// `(channels·k·k) × (out_h·out_w)` matrix; out-of-bounds taps read zero.
pub(crate) fn im2col(image: &[f32], g: Window, col: &mut [f32]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    debug_assert_eq!(col.len(), g.col_rows() * oh * ow);
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `col` back into `image`.
pub(crate) fn col2im(col: &[f32], g: Window, image: &mut [f32]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Linear-interpolation taps for upsampling an axis of length `n` by `s`
/// (half-pixel centres, edge clamped).
pub(crate) fn linear_taps(n: usize, s: usize) -> Vec<(usize, usize, f32)> {
    (0..n * s)
        .map(|o| {
            let src = ((o as f32 + 0.5) / s as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}
