use super::{MattingError, SparseMatrix};
use crate::image::ImageBuffer;

/// Builds the Matting Laplacian of an RGB image.
///
/// For every full `(2r+1)²` window `w_k` lying inside the image, with color mean
/// `μ_k` and (biased) covariance `Σ_k`, each pixel pair `(i, j)` of the window
/// contributes
///
/// ```text
/// δ_ij − (1 + (x_i − μ_k)ᵀ (Σ_k + ε/|w_k| · I₃)⁻¹ (x_j − μ_k)) / |w_k|
/// ```
///
/// Windows are not padded at the border, so every row sums to zero.
pub fn build_matting_laplacian(
    image: &ImageBuffer,
    eps: f64,
    window_radius: usize,
) -> Result<SparseMatrix, MattingError> {
    if image.channels() != 3 {
        return Err(MattingError::Channels(image.channels()));
    }
    if !(eps > 0.0) {
        return Err(MattingError::Parameter(format!("eps must be positive, got {eps}")));
    }
    let (w, h) = (image.width(), image.height());
    let side = 2 * window_radius + 1;
    if w < side || h < side {
        return Err(MattingError::ImageTooSmall {
            width: w,
            height: h,
            window: side,
        });
    }
    let n = w * h;
    let win = side * side;
    let reach = 2 * window_radius;
    let span = 2 * reach + 1;
    let stencil = span * span;

    let color = |p: usize| -> [f64; 3] {
        let d = &image.data()[p * 3..p * 3 + 3];
        [d[0] as f64, d[1] as f64, d[2] as f64]
    };

    // Row i, stencil slot s <-> column i + (dy - reach)*w + (dx - reach).
    let mut acc = vec![0.0f64; n * stencil];
    let mut covered = vec![false; n * stencil];
    let mut pixels = vec![0usize; win];
    let mut centered = vec![[0.0f64; 3]; win];
    let mut projected = vec![[0.0f64; 3]; win];
    let mut window_diag = vec![0.0f64; win];

    for cy in window_radius..h - window_radius {
        for cx in window_radius..w - window_radius {
            let mut mean = [0.0f64; 3];
            for (slot, p) in pixels.iter_mut().enumerate() {
                let (dy, dx) = (slot / side, slot % side);
                *p = (cy + dy - window_radius) * w + (cx + dx - window_radius);
                let c = color(*p);
                (0..3).for_each(|ch| mean[ch] += c[ch]);
            }
            mean.iter_mut().for_each(|m| *m /= win as f64);

            let mut cov = [[0.0f64; 3]; 3];
            for (slot, &p) in pixels.iter().enumerate() {
                let c = color(p);
                let d = [c[0] - mean[0], c[1] - mean[1], c[2] - mean[2]];
                centered[slot] = d;
                for a in 0..3 {
                    for b in 0..3 {
                        cov[a][b] += d[a] * d[b];
                    }
                }
            }
            for (a, row) in cov.iter_mut().enumerate() {
                for v in row.iter_mut() {
                    *v /= win as f64;
                }
                row[a] += eps / win as f64;
            }
            // Whitening with the Cholesky factor keeps q_ab accurate when the
            // covariance is nearly singular; an explicit inverse does not.
            let l = cholesky3(&cov).ok_or(MattingError::Singular { x: cx, y: cy })?;
            for (slot, d) in centered.iter().enumerate() {
                projected[slot] = forward_substitute(&l, d);
            }

            // Off-diagonal terms only; each window's diagonal is minus the sum of
            // its row so that M·1 = 0 holds to rounding.
            for a in 0..win {
                for b in a + 1..win {
                    let q = projected[a][0] * projected[b][0]
                        + projected[a][1] * projected[b][1]
                        + projected[a][2] * projected[b][2];
                    let value = -(1.0 + q) / win as f64;
                    let (pa, pb) = (pixels[a], pixels[b]);
                    let s_ab = stencil_slot(pa, pb, w, reach, span);
                    let s_ba = stencil_slot(pb, pa, w, reach, span);
                    acc[pa * stencil + s_ab] += value;
                    acc[pb * stencil + s_ba] += value;
                    covered[pa * stencil + s_ab] = true;
                    covered[pb * stencil + s_ba] = true;
                    window_diag[a] -= value;
                    window_diag[b] -= value;
                }
            }
            for (a, d) in window_diag.iter_mut().enumerate() {
                let pa = pixels[a];
                let s_aa = stencil_slot(pa, pa, w, reach, span);
                acc[pa * stencil + s_aa] += *d;
                covered[pa * stencil + s_aa] = true;
                *d = 0.0;
            }
        }
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let (iy, ix) = ((i / w) as isize, (i % w) as isize);
        for s in 0..stencil {
            if !covered[i * stencil + s] {
                continue;
            }
            let dy = (s / span) as isize - reach as isize;
            let dx = (s % span) as isize - reach as isize;
            let j = ((iy + dy) * w as isize + ix + dx) as usize;
            col_idx.push(j);
            values.push(acc[i * stencil + s]);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SparseMatrix::from_csr(n, row_ptr, col_idx, values).expect("stencil order yields sorted columns"))
}

fn stencil_slot(from: usize, to: usize, w: usize, reach: usize, span: usize) -> usize {
    let dy = (to / w) as isize - (from / w) as isize + reach as isize;
    let dx = (to % w) as isize - (from % w) as isize + reach as isize;
    dy as usize * span + dx as usize
}

/// Lower-triangular `L` with `L·Lᵀ = m`, or `None` if `m` is not positive definite.
fn cholesky3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L·z = d` for lower-triangular `L`.
fn forward_substitute(l: &[[f64; 3]; 3], d: &[f64; 3]) -> [f64; 3] {
    let z0 = d[0] / l[0][0];
    let z1 = (d[1] - l[1][0] * z0) / l[1][1];
    let z2 = (d[2] - l[2][0] * z0 - l[2][1] * z1) / l[2][2];
    [z0, z1, z2]
}
