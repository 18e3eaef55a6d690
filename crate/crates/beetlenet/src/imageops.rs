//! Shared raster helpers: bilinear resampling and u8/f64 conversion.
//!
//! Conventions used throughout the crate (and by the test oracles):
//! resize maps destination pixel centers through
//! `src = (dst + 0.5) * scale - 0.5` with edge clamping; free-form
//! sampling (affine warps) uses zero fill outside the source.

use ndarray::Array3;

/// Convert an 8-bit H×W×3 patch to f64.
pub fn to_f64(src: &Array3<u8>) -> Array3<f64> {
    src.mapv(|v| v as f64)
}

/// Round and clamp an f64 raster back to 8-bit.
pub fn to_u8_clamped(src: &Array3<f64>) -> Array3<u8> {
    src.mapv(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Bilinear sample at fractional (y, x) with edge clamping.
pub fn sample_clamped(src: &Array3<f64>, y: f64, x: f64, c: usize) -> f64 {
    let (h, w, _) = src.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    src[[y0, x0, c]] * (1.0 - fy) * (1.0 - fx)
        + src[[y0, x1, c]] * (1.0 - fy) * fx
        + src[[y1, x0, c]] * fy * (1.0 - fx)
        + src[[y1, x1, c]] * fy * fx
}

/// Bilinear sample at fractional (y, x) with zero fill outside the raster.
pub fn sample_zero_fill(src: &Array3<f64>, y: f64, x: f64, c: usize) -> f64 {
    let (h, w, _) = src.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let yy = y0 + dy;
            let xx = x0 + dx;
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                acc += src[[yy as usize, xx as usize, c]] * wy * wx;
            }
        }
    }
    acc
}

/// Bilinear resize to `out_h`×`out_w` using half-pixel centers.
pub fn resize_bilinear(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, ch) = src.dim();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Array3::zeros((out_h, out_w, ch));
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            for c in 0..ch {
                out[[oy, ox, c]] = sample_clamped(src, sy, sx, c);
            }
        }
    }
    out
}
