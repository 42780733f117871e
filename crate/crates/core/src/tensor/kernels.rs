// Raw NCHW convolution kernels. All three are views of the same linear map
// `correlate`: the input adjoint and the weight adjoint.

use super::Shape;

/// Spatial output size of a strided, zero-padded correlation.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Spatial output size of a transposed convolution.
pub fn conv_transpose_output_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel + output_padding).checked_sub(2 * padding)
}

/// y[n,o,oy,ox] = sum_{c,ky,kx} x[n,c,oy*s+ky-p, ox*s+kx-p] * w[o,c,ky,kx]
pub(crate) fn correlate(
    x: &[f32],
    xs: Shape,
    w: &[f32],
    ws: Shape,
    stride: usize,
    padding: usize,
    ys: Shape,
) -> Vec<f32> {
    let [n_batch, in_ch, h, wd] = xs;
    let [out_ch, _, k, _] = ws;
    let [_, _, oh, ow] = ys;
    let mut y = vec![0.0f32; n_batch * out_ch * oh * ow];
    for n in 0..n_batch {
        for o in 0..out_ch {
            let y_plane = &mut y[(n * out_ch + o) * oh * ow..(n * out_ch + o + 1) * oh * ow];
            for c in 0..in_ch {
                let x_plane = &x[(n * in_ch + c) * h * wd..(n * in_ch + c + 1) * h * wd];
                let w_k = &w[(o * in_ch + c) * k * k..(o * in_ch + c + 1) * k * k];
                for ky in 0..k {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[iy as usize * wd..(iy as usize + 1) * wd];
                        let y_row = &mut y_plane[oy * ow..(oy + 1) * ow];
                        for kx in 0..k {
                            let wv = w_k[ky * k + kx];
                            let (lo, hi) = valid_range(ow, wd, stride, padding, kx);
                            for ox in lo..hi {
                                y_row[ox] += wv * x_row[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of `correlate` with respect to its input: scatters `y` back onto an
/// input-shaped buffer of shape `xs`.
pub(crate) fn correlate_adjoint_input(
    y: &[f32],
    ys: Shape,
    w: &[f32],
    ws: Shape,
    stride: usize,
    padding: usize,
    xs: Shape,
) -> Vec<f32> {
    let [n_batch, in_ch, h, wd] = xs;
    let [out_ch, _, k, _] = ws;
    let [_, _, oh, ow] = ys;
    let mut x = vec![0.0f32; n_batch * in_ch * h * wd];
    for n in 0..n_batch {
        for c in 0..in_ch {
            let x_plane = &mut x[(n * in_ch + c) * h * wd..(n * in_ch + c + 1) * h * wd];
            for o in 0..out_ch {
                let y_plane = &y[(n * out_ch + o) * oh * ow..(n * out_ch + o + 1) * oh * ow];
                let w_k = &w[(o * in_ch + c) * k * k..(o * in_ch + c + 1) * k * k];
                for ky in 0..k {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let y_row = &y_plane[oy * ow..(oy + 1) * ow];
                        let x_row = &mut x_plane[iy as usize * wd..(iy as usize + 1) * wd];
                        for kx in 0..k {
                            let wv = w_k[ky * k + kx];
                            let (lo, hi) = valid_range(ow, wd, stride, padding, kx);
                            for ox in lo..hi {
                                x_row[ox * stride + kx - padding] += wv * y_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Adjoint of `correlate` with respect to its weight.
pub(crate) fn correlate_adjoint_weight(
    x: &[f32],
    xs: Shape,
    gy: &[f32],
    ys: Shape,
    stride: usize,
    padding: usize,
    ws: Shape,
) -> Vec<f32> {
    let [n_batch, in_ch, h, wd] = xs;
    let [out_ch, _, k, _] = ws;
    let [_, _, oh, ow] = ys;
    let mut gw = vec![0.0f32; out_ch * in_ch * k * k];
    for o in 0..out_ch {
        for c in 0..in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = valid_range(ow, wd, stride, padding, kx);
                    let mut acc = 0.0f64;
                    for n in 0..n_batch {
                        let x_plane = &x[(n * in_ch + c) * h * wd..(n * in_ch + c + 1) * h * wd];
                        let y_plane = &gy[(n * out_ch + o) * oh * ow..(n * out_ch + o + 1) * oh * ow];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * wd..(iy as usize + 1) * wd];
                            let y_row = &y_plane[oy * ow..(oy + 1) * ow];
                            let mut row_acc = 0.0f32;
                            for ox in lo..hi {
                                row_acc += y_row[ox] * x_row[ox * stride + kx - padding];
                            }
                            acc += row_acc as f64;
                        }
                    }
                    gw[((o * in_ch + c) * k + ky) * k + kx] = acc as f32;
                }
            }
        }
    }
    gw
}

/// Range of output columns `ox` whose tap `kx` lands inside `[0, width)`.
fn valid_range(ow: usize, width: usize, stride: usize, padding: usize, kx: usize) -> (usize, usize) {
    // ox*stride + kx - padding >= 0
    let lo = if kx >= padding {
        0
    } else {
        (padding - kx).div_ceil(stride)
    };
    // ox*stride + kx - padding <= width - 1
    let limit = width as isize - 1 + padding as isize - kx as isize;
    let hi = if limit < 0 {
        0
    } else {
        (limit as usize / stride + 1).min(ow)
    };
    (lo.min(hi), hi)
}

pub(crate) fn bias_grad(gy: &[f32], ys: Shape) -> Vec<f32> {
    let [n_batch, ch, h, w] = ys;
    let plane = h * w;
    let mut gb = vec![0.0f32; ch];
    for (c, slot) in gb.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for n in 0..n_batch {
            let start = (n * ch + c) * plane;
            acc += gy[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        *slot = acc as f32;
    }
    gb
}

pub(crate) fn add_bias(y: &mut [f32], ys: Shape, bias: &[f32]) {
    let [n_batch, ch, h, w] = ys;
    let plane = h * w;
    for n in 0..n_batch {
        for (c, &b) in bias.iter().enumerate().take(ch) {
            let start = (n * ch + c) * plane;
            y[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}
