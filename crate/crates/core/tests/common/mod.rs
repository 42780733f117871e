//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hazeforge::image::ImageBuffer;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f32, hi: f32) -> ImageBuffer {
    let data = (0..w * h * 3).map(|_| rng.random_range(lo..hi)).collect();
    ImageBuffer::new(w, h, 3, data).unwrap()
}

/// Dense Matting Laplacian: every window, every pixel pair.
///
/// With `D` the window's centered colors (one row per pixel) and `D = U·S·Vᵀ`,
/// `(x_i − μ)ᵀ(Σ + ε/n·I)⁻¹(x_j − μ) = n·Σ_k U_ik·U_jk·s_k²/(s_k² + ε)`.
/// The SVD form stays accurate when the window covariance is nearly singular.
pub fn dense_laplacian(img: &ImageBuffer, eps: f64, r: usize) -> DMatrix<f64> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let side = 2 * r + 1;
    let win = side * side;
    let nf = win as f64;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for cy in r..h - r {
        for cx in r..w - r {
            let idx: Vec<usize> = (cy - r..=cy + r)
                .flat_map(|y| (cx - r..=cx + r).map(move |x| y * w + x))
                .collect();
            let colors = DMatrix::from_fn(win, 3, |a, c| img.data()[idx[a] * 3 + c] as f64);
            let mean = colors.row_mean();
            let centered = DMatrix::from_fn(win, 3, |a, c| colors[(a, c)] - mean[c]);
            let svd = centered.svd(true, false);
            let u = svd.u.unwrap();
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    let q: f64 = (0..svd.singular_values.len())
                        .map(|k| {
                            let s2 = svd.singular_values[k].powi(2);
                            nf * u[(a, k)] * u[(b, k)] * s2 / (s2 + eps)
                        })
                        .sum();
                    let delta = if i == j { 1.0 } else { 0.0 };
                    m[(i, j)] += delta - (1.0 + q) / nf;
                }
            }
        }
    }
    m
}

/// Direct solve of (M + λI) x = λ·target.
pub fn dense_soft_matting(m: &DMatrix<f64>, target: &[f64], lambda: f64) -> Vec<f64> {
    let n = target.len();
    let a = m + DMatrix::identity(n, n) * lambda;
    let b = DVector::from_iterator(n, target.iter().map(|t| lambda * t));
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

pub fn to_dense(m: &hazeforge::matting::SparseMatrix) -> DMatrix<f64> {
    let rows = m.to_dense();
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

/// Per-channel SSIM by explicit loops over every valid window position.
#[allow(clippy::needless_range_loop)]
pub fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let size = 11usize;
    let sigma = 1.5f64;
    let half = (size / 2) as f64;
    let mut g = vec![vec![0.0f64; size]; size];
    let mut total = 0.0;
    for (y, row) in g.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (x as f64 - half, y as f64 - half);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let at = |img: &ImageBuffer, x: usize, y: usize, c: usize| img.data()[(y * w + x) * ch + c] as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for oy in 0..=h - size {
            for ox in 0..=w - size {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..size {
                    for kx in 0..size {
                        let wt = g[ky][kx] / total;
                        let (va, vb) = (at(a, ox + kx, oy + ky, c), at(b, ox + kx, oy + ky, c));
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}
