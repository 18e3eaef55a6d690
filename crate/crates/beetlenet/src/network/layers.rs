//! Convolution and pooling primitives with explicit backward passes.
//!
//! All activations are NCHW f64 arrays. Convolution goes through im2col so
//! the inner loop is a matrix product.

use ndarray::{s, Array1, Array2, Array3, Array4};

/// Output spatial side for a square conv/pool: floor((in + 2p - k)/s) + 1.
pub fn conv_out_side(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold one sample (C,H,W) into a (C*K*K, Ho*Wo) matrix.
fn im2col(x: &Array3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(w, k, stride, pad);
    let mut cols = Array2::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx as usize >= w {
                            continue;
                        }
                        cols[[row, oy * wo + ox]] = x[[ci, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a (C*K*K, Ho*Wo) gradient matrix back onto an input-shaped array.
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Array3<f64> {
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(w, k, stride, pad);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx as usize >= w {
                            continue;
                        }
                        out[[ci, sy as usize, sx as usize]] += cols[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    out
}

/// 2-D convolution: x (N,Ci,H,W), w (Co,Ci,K,K), b (Co).
pub fn conv2d_forward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, ci, h, wd) = x.dim();
    let (co, ci_w, k, _) = w.dim();
    assert_eq!(ci, ci_w, "channel mismatch: input {ci}, weight {ci_w}");
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(wd, k, stride, pad);
    let w_mat = w.view().into_shape((co, ci * k * k)).unwrap().to_owned();
    let mut y = Array4::zeros((n, co, ho, wo));
    for ni in 0..n {
        let cols = im2col(&x.slice(s![ni, .., .., ..]).to_owned(), k, stride, pad);
        let y_mat = w_mat.dot(&cols); // (Co, Ho*Wo)
        for c in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    y[[ni, c, oy, ox]] = y_mat[[c, oy * wo + ox]] + b[c];
                }
            }
        }
    }
    y
}

/// Backward pass of [`conv2d_forward`]: returns (dx, dw, db).
pub fn conv2d_backward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    gy: &Array4<f64>,
    stride: usize,
    pad: usize,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let (n, ci, h, wd) = x.dim();
    let (co, _, k, _) = w.dim();
    let (_, _, ho, wo) = gy.dim();
    let w_mat = w.view().into_shape((co, ci * k * k)).unwrap().to_owned();
    let mut gx = Array4::zeros((n, ci, h, wd));
    let mut gw_mat = Array2::<f64>::zeros((co, ci * k * k));
    let mut gb = Array1::zeros(co);
    for ni in 0..n {
        let x_n = x.slice(s![ni, .., .., ..]).to_owned();
        let cols = im2col(&x_n, k, stride, pad);
        let gy_mat = gy
            .slice(s![ni, .., .., ..])
            .to_owned()
            .into_shape((co, ho * wo))
            .unwrap();
        gw_mat += &gy_mat.dot(&cols.t());
        for c in 0..co {
            gb[c] += gy_mat.row(c).sum();
        }
        let gcols = w_mat.t().dot(&gy_mat);
        let gx_n = col2im(&gcols, ci, h, wd, k, stride, pad);
        gx.slice_mut(s![ni, .., .., ..]).assign(&gx_n);
    }
    let gw = gw_mat.into_shape((co, ci, k, k)).unwrap();
    (gx, gw, gb)
}

/// ReLU.
pub fn relu_forward(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// ReLU backward using the forward input.
pub fn relu_backward(x: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

/// 3×3 stride-2 pad-1 max pooling (the ResNet stem pool). Returns the
/// output and the flat argmax index (y*W+x) per output cell.
pub fn maxpool3x3s2_forward(x: &Array4<f64>) -> (Array4<f64>, Array4<usize>) {
    let (n, c, h, w) = x.dim();
    let ho = conv_out_side(h, 3, 2, 1);
    let wo = conv_out_side(w, 3, 2, 1);
    let mut y = Array4::zeros((n, c, ho, wo));
    let mut arg = Array4::zeros((n, c, ho, wo));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..3usize {
                        let sy = (oy * 2 + ky) as isize - 1;
                        if sy < 0 || sy as usize >= h {
                            continue;
                        }
                        for kx in 0..3usize {
                            let sx = (ox * 2 + kx) as isize - 1;
                            if sx < 0 || sx as usize >= w {
                                continue;
                            }
                            let v = x[[ni, ci, sy as usize, sx as usize]];
                            if v > best {
                                best = v;
                                best_idx = sy as usize * w + sx as usize;
                            }
                        }
                    }
                    y[[ni, ci, oy, ox]] = best;
                    arg[[ni, ci, oy, ox]] = best_idx;
                }
            }
        }
    }
    (y, arg)
}

/// Scatter pooled gradients back to the argmax positions.
pub fn maxpool3x3s2_backward(
    x_shape: (usize, usize, usize, usize),
    arg: &Array4<usize>,
    gy: &Array4<f64>,
) -> Array4<f64> {
    let (n, c, _, w) = x_shape;
    let mut gx = Array4::zeros(x_shape);
    let (_, _, ho, wo) = gy.dim();
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let flat = arg[[ni, ci, oy, ox]];
                    gx[[ni, ci, flat / w, flat % w]] += gy[[ni, ci, oy, ox]];
                }
            }
        }
    }
    gx
}

/// Nearest-neighbor 2× upsampling (FPN top-down pathway).
pub fn upsample2x_forward(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, h * 2, w * 2), |(ni, ci, y, xx)| x[[ni, ci, y / 2, xx / 2]])
}

/// Backward of nearest 2× upsampling: sum over each 2×2 block.
pub fn upsample2x_backward(gy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = gy.dim();
    let mut gx = Array4::zeros((n, c, h2 / 2, w2 / 2));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h2 {
                for x in 0..w2 {
                    gx[[ni, ci, y / 2, x / 2]] += gy[[ni, ci, y, x]];
                }
            }
        }
    }
    gx
}

/// Global average pooling to (N,C,1,1).
pub fn gap_forward(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::zeros((n, c, 1, 1));
    for ni in 0..n {
        for ci in 0..c {
            y[[ni, ci, 0, 0]] = x.slice(s![ni, ci, .., ..]).sum() / (h * w) as f64;
        }
    }
    y
}

pub fn gap_backward(x_shape: (usize, usize, usize, usize), gy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x_shape;
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn(x_shape, |(ni, ci, _, _)| gy[[ni, ci, 0, 0]] * scale)
        .into_shape((n, c, h, w))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;
    use rand::Rng;

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = substream_rng(seed, 0, 0);
        Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Naive nested-loop convolution for cross-checking.
    fn conv_naive(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, ci, h, wd) = x.dim();
        let (co, _, k, _) = w.dim();
        let ho = conv_out_side(h, k, stride, pad);
        let wo = conv_out_side(wd, k, stride, pad);
        let mut y = Array4::zeros((n, co, ho, wo));
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[c];
                        for cc in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = (oy * stride + ky) as isize - pad as isize;
                                    let sx = (ox * stride + kx) as isize - pad as isize;
                                    if sy >= 0
                                        && sx >= 0
                                        && (sy as usize) < h
                                        && (sx as usize) < wd
                                    {
                                        acc += w[[c, cc, ky, kx]]
                                            * x[[ni, cc, sy as usize, sx as usize]];
                                    }
                                }
                            }
                        }
                        y[[ni, c, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7)] {
            let x = randn4((2, 3, 8, 8), 1);
            let w = randn4((4, 3, k, k), 2);
            let b = Array1::from_shape_fn(4, |i| i as f64 * 0.1);
            let fast = conv2d_forward(&x, &w, &b, stride, pad);
            let slow = conv_naive(&x, &w, &b, stride, pad);
            assert_eq!(fast.dim(), slow.dim());
            for (a, bb) in fast.iter().zip(slow.iter()) {
                assert!((a - bb).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = randn4((1, 2, 5, 5), 3);
        let w = randn4((3, 2, 3, 3), 4);
        let b = Array1::from_shape_fn(3, |i| 0.05 * i as f64);
        let gy = randn4((1, 3, 3, 3), 5); // stride 2, pad 1 -> 3x3
        let (gx, gw, gb) = conv2d_backward(&x, &w, &gy, 2, 1);
        let loss = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| {
            (&conv2d_forward(x, w, b, 2, 1) * &gy).sum()
        };
        let h = 1e-6;
        for &idx in &[(0, 0, 0, 0), (0, 1, 2, 3), (0, 0, 4, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - gx[idx]).abs() < 1e-5, "gx at {idx:?}: {fd} vs {}", gx[idx]);
        }
        for &idx in &[(0, 0, 0, 0), (2, 1, 1, 2)] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - gw[idx]).abs() < 1e-5);
        }
        let mut bp = b.clone();
        bp[1] += h;
        let mut bm = b.clone();
        bm[1] -= h;
        let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
        assert!((fd - gb[1]).abs() < 1e-5);
    }

    #[test]
    fn maxpool_shapes_and_gradient_flow() {
        let x = randn4((1, 2, 8, 8), 6);
        let (y, arg) = maxpool3x3s2_forward(&x);
        assert_eq!(y.dim(), (1, 2, 4, 4));
        let gy = Array4::from_elem((1, 2, 4, 4), 1.0);
        let gx = maxpool3x3s2_backward(x.dim(), &arg, &gy);
        // All gradient mass is preserved.
        assert!((gx.sum() - gy.sum()).abs() < 1e-12);
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = randn4((2, 3, 4, 4), 7);
        let y = upsample2x_forward(&x);
        assert_eq!(y.dim(), (2, 3, 8, 8));
        assert_eq!(y[[0, 0, 5, 5]], x[[0, 0, 2, 2]]);
        let gx = upsample2x_backward(&y);
        // Each input cell receives 4 copies of itself.
        assert!((gx[[0, 0, 2, 2]] - 4.0 * x[[0, 0, 2, 2]]).abs() < 1e-12);
    }

    #[test]
    fn gap_is_mean() {
        let x = randn4((2, 3, 5, 5), 8);
        let y = gap_forward(&x);
        let manual = x.slice(s![1, 2, .., ..]).sum() / 25.0;
        assert!((y[[1, 2, 0, 0]] - manual).abs() < 1e-12);
        let gy = Array4::from_elem((2, 3, 1, 1), 1.0);
        let gx = gap_backward(x.dim(), &gy);
        assert!((gx[[0, 0, 0, 0]] - 1.0 / 25.0).abs() < 1e-12);
    }
}
