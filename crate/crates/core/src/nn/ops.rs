//! Convolution and pooling kernels on (N, C, H, W) arrays.
//!
//! Convolution is im2col + one gemm per batch; the backward pass recomputes
//! the column matrix instead of caching it, trading a second im2col for a
//! much smaller working set.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

pub fn conv_out_side(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds conv windows of the whole batch into a (C*k*k, N*OH*OW) matrix.
/// Out-of-bounds taps read 0 (inputs are ink-mass images, so 0 is
/// background).
pub fn im2col_batch(
    x: &ArrayView4<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_side(h, kernel, stride, pad).expect("validated at build");
    let ow = conv_out_side(w, kernel, stride, pad).expect("validated at build");
    let mut cols = Array2::zeros((c * kernel * kernel, n * oh * ow));
    for ni in 0..n {
        for ci in 0..c {
            for kh in 0..kernel {
                for kw in 0..kernel {
                    let row = (ci * kernel + kh) * kernel + kw;
                    for ohi in 0..oh {
                        let hy = (ohi * stride + kh) as isize - pad as isize;
                        if hy < 0 || hy >= h as isize {
                            continue;
                        }
                        for owi in 0..ow {
                            let hx = (owi * stride + kw) as isize - pad as isize;
                            if hx < 0 || hx >= w as isize {
                                continue;
                            }
                            let col = (ni * oh + ohi) * ow + owi;
                            cols[(row, col)] = x[(ni, ci, hy as usize, hx as usize)];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_batch`]: folds column gradients back onto the input.
pub fn col2im_batch(
    cols: &ArrayView2<f64>,
    dims: (usize, usize, usize, usize),
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, c, h, w) = dims;
    let oh = conv_out_side(h, kernel, stride, pad).expect("validated at build");
    let ow = conv_out_side(w, kernel, stride, pad).expect("validated at build");
    let mut dx = Array4::zeros(dims);
    for ni in 0..n {
        for ci in 0..c {
            for kh in 0..kernel {
                for kw in 0..kernel {
                    let row = (ci * kernel + kh) * kernel + kw;
                    for ohi in 0..oh {
                        let hy = (ohi * stride + kh) as isize - pad as isize;
                        if hy < 0 || hy >= h as isize {
                            continue;
                        }
                        for owi in 0..ow {
                            let hx = (owi * stride + kw) as isize - pad as isize;
                            if hx < 0 || hx >= w as isize {
                                continue;
                            }
                            let col = (ni * oh + ohi) * ow + owi;
                            dx[(ni, ci, hy as usize, hx as usize)] += cols[(row, col)];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// weight: (out_ch, in_ch*k*k), bias: out_ch.
pub fn conv_forward(
    x: &ArrayView4<f64>,
    weight: &ArrayView2<f64>,
    bias: &[f64],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, _, h, w) = x.dim();
    let oc = weight.nrows();
    let oh = conv_out_side(h, kernel, stride, pad).expect("validated at build");
    let ow = conv_out_side(w, kernel, stride, pad).expect("validated at build");
    let cols = im2col_batch(x, kernel, stride, pad);
    let flat = weight.dot(&cols); // (oc, n*oh*ow)
    let mut out = Array4::zeros((n, oc, oh, ow));
    for oci in 0..oc {
        let b = bias[oci];
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    out[(ni, oci, ohi, owi)] = flat[(oci, (ni * oh + ohi) * ow + owi)] + b;
                }
            }
        }
    }
    out
}

/// Returns (d_weight, d_bias, d_input).
pub fn conv_backward(
    x: &ArrayView4<f64>,
    weight: &ArrayView2<f64>,
    dout: &ArrayView4<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Array2<f64>, Vec<f64>, Array4<f64>) {
    let (n, oc, oh, ow) = dout.dim();
    let mut dflat = Array2::zeros((oc, n * oh * ow));
    let mut db = vec![0.0; oc];
    for oci in 0..oc {
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let g = dout[(ni, oci, ohi, owi)];
                    dflat[(oci, (ni * oh + ohi) * ow + owi)] = g;
                    db[oci] += g;
                }
            }
        }
    }
    let cols = im2col_batch(x, kernel, stride, pad);
    let dw = dflat.dot(&cols.t());
    let dcols = weight.t().dot(&dflat);
    let dx = col2im_batch(&dcols.view(), x.dim(), kernel, stride, pad);
    (dw, db, dx)
}

pub fn maxpool_forward(x: &ArrayView4<f64>, kernel: usize, stride: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_side(h, kernel, stride, 0).expect("validated at build");
    let ow = conv_out_side(w, kernel, stride, 0).expect("validated at build");
    let mut out = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for kh in 0..kernel {
                        for kw in 0..kernel {
                            let v = x[(ni, ci, ohi * stride + kh, owi * stride + kw)];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[(ni, ci, ohi, owi)] = best;
                }
            }
        }
    }
    out
}

/// Routes each output gradient to the first maximum of its window
/// (row-major scan), which keeps tie handling deterministic.
pub fn maxpool_backward(
    x: &ArrayView4<f64>,
    dout: &ArrayView4<f64>,
    kernel: usize,
    stride: usize,
) -> Array4<f64> {
    let (n, c, oh, ow) = dout.dim();
    let mut dx = Array4::zeros(x.dim());
    for ni in 0..n {
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = (0, 0);
                    for kh in 0..kernel {
                        for kw in 0..kernel {
                            let v = x[(ni, ci, ohi * stride + kh, owi * stride + kw)];
                            if v > best {
                                best = v;
                                at = (ohi * stride + kh, owi * stride + kw);
                            }
                        }
                    }
                    dx[(ni, ci, at.0, at.1)] += dout[(ni, ci, ohi, owi)];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    fn randn4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = crate::seeding::stream(seed, "ops-test", &[]);
        Array4::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct sliding-window convolution used to verify the im2col path.
    fn conv_naive(
        x: &Array4<f64>,
        weight: &Array2<f64>,
        bias: &[f64],
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let oc = weight.nrows();
        let oh = conv_out_side(h, kernel, stride, pad).unwrap();
        let ow = conv_out_side(w, kernel, stride, pad).unwrap();
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for oci in 0..oc {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = bias[oci];
                        for ci in 0..c {
                            for kh in 0..kernel {
                                for kw in 0..kernel {
                                    let hy = (ohi * stride + kh) as isize - pad as isize;
                                    let hx = (owi * stride + kw) as isize - pad as isize;
                                    if hy < 0 || hx < 0 || hy >= h as isize || hx >= w as isize {
                                        continue;
                                    }
                                    acc += x[(ni, ci, hy as usize, hx as usize)]
                                        * weight[(oci, (ci * kernel + kh) * kernel + kw)];
                                }
                            }
                        }
                        out[(ni, oci, ohi, owi)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let x = randn4((3, 2, 7, 7), 1);
        let mut rng = crate::seeding::stream(2, "ops-test", &[]);
        let weight = Array2::from_shape_fn((4, 2 * 9), |_| rng.random_range(-1.0..1.0));
        let bias: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let fast = conv_forward(&x.view(), &weight.view(), &bias, 3, 2, 1);
        let slow = conv_naive(&x, &weight, &bias, 3, 2, 1);
        assert_eq!(fast.dim(), slow.dim());
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = randn4((2, 2, 5, 5), 3);
        let mut rng = crate::seeding::stream(4, "ops-test", &[]);
        let mut weight = Array2::from_shape_fn((3, 2 * 9), |_| rng.random_range(-1.0..1.0));
        let bias: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let dout = randn4((2, 3, 5, 5), 5);

        let (dw, db, dx) = conv_backward(&x.view(), &weight.view(), &dout.view(), 3, 1, 1);

        let loss = |x: &Array4<f64>, w: &Array2<f64>, b: &[f64]| -> f64 {
            let y = conv_forward(&x.view(), &w.view(), b, 3, 1, 1);
            y.iter().zip(dout.iter()).map(|(a, g)| a * g).sum()
        };
        let h = 1e-6;
        for &(r, c) in &[(0, 0), (1, 7), (2, 17)] {
            let orig = weight[(r, c)];
            weight[(r, c)] = orig + h;
            let up = loss(&x, &weight, &bias);
            weight[(r, c)] = orig - h;
            let dn = loss(&x, &weight, &bias);
            weight[(r, c)] = orig;
            assert_abs_diff_eq!(dw[(r, c)], (up - dn) / (2.0 * h), epsilon = 1e-5);
        }
        let mut b2 = bias.clone();
        b2[1] += h;
        let up = loss(&x, &weight, &b2);
        b2[1] -= 2.0 * h;
        let dn = loss(&x, &weight, &b2);
        assert_abs_diff_eq!(db[1], (up - dn) / (2.0 * h), epsilon = 1e-5);

        let mut x2 = x.clone();
        for &idx in &[(0, 0, 2, 2), (1, 1, 0, 4)] {
            let orig = x2[idx];
            x2[idx] = orig + h;
            let up = loss(&x2, &weight, &bias);
            x2[idx] = orig - h;
            let dn = loss(&x2, &weight, &bias);
            x2[idx] = orig;
            assert_abs_diff_eq!(dx[idx], (up - dn) / (2.0 * h), epsilon = 1e-5);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max() {
        let mut x = Array4::zeros((1, 1, 2, 2));
        x[(0, 0, 0, 0)] = 3.0;
        x[(0, 0, 1, 1)] = 3.0; // tie with (0,0)
        let mut dout = Array4::zeros((1, 1, 1, 1));
        dout[(0, 0, 0, 0)] = 1.0;
        let dx = maxpool_backward(&x.view(), &dout.view(), 2, 2);
        assert_eq!(dx[(0, 0, 0, 0)], 1.0);
        assert_eq!(dx[(0, 0, 1, 1)], 0.0);
    }

    #[test]
    fn maxpool_forward_picks_window_maxima() {
        let x = randn4((2, 3, 6, 6), 6);
        let y = maxpool_forward(&x.view(), 2, 2);
        assert_eq!(y.dim(), (2, 3, 3, 3));
        for ni in 0..2 {
            for ci in 0..3 {
                for oh in 0..3 {
                    for ow in 0..3 {
                        let m = (0..2)
                            .flat_map(|a| (0..2).map(move |b| (a, b)))
                            .map(|(a, b)| x[(ni, ci, oh * 2 + a, ow * 2 + b)])
                            .fold(f64::NEG_INFINITY, f64::max);
                        assert_eq!(y[(ni, ci, oh, ow)], m);
                    }
                }
            }
        }
    }
}
