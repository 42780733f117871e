//! Matting Laplacian construction, the photorealism quadratic energy and its
//! gradient, and the soft-matting solver used for depth refinement.

mod cache;
mod cg;
mod laplacian;
mod sparse;

pub use cache::{cache_key, read_mlap, write_mlap, MattingCache, CACHE_ENV_VAR, MLAP_MAGIC, MLAP_VERSION};
pub use cg::{conjugate_gradient, solve_soft_matting, solve_soft_matting_observed, CgOptions, CgSolution};
pub use laplacian::build_matting_laplacian;
pub use sparse::SparseMatrix;

pub use crate::image::ImageBuffer;

use thiserror::Error;

pub const DEFAULT_EPS: f64 = 1e-7;
pub const DEFAULT_WINDOW_RADIUS: usize = 1;
pub const DEFAULT_REFINE_LAMBDA: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MattingError {
    #[error("image {width}x{height} is smaller than one {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },
    #[error("matting Laplacian needs a 3-channel image, got {0} channel(s)")]
    Channels(usize),
    #[error("vector has {got} pixels but the matrix is {expected}x{expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("window covariance centered at ({x}, {y}) is singular")]
    Singular { x: usize, y: usize },
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matting cache: {0}")]
    Cache(String),
}

fn check_pixels(m: &SparseMatrix, v: &ImageBuffer) -> Result<(), MattingError> {
    if v.pixel_count() != m.dim() {
        return Err(MattingError::Dimension {
            expected: m.dim(),
            got: v.pixel_count(),
        });
    }
    Ok(())
}

/// Σ_c V_cᵀ M V_c over the channels of `v`.
pub fn photorealism_energy(m: &SparseMatrix, v: &ImageBuffer) -> Result<f64, MattingError> {
    check_pixels(m, v)?;
    Ok((0..v.channels())
        .map(|c| {
            let plane: Vec<f64> = v.channel(c).iter().map(|&x| x as f64).collect();
            m.quadratic_form(&plane)
        })
        .sum())
}

/// 2·M·V_c per channel, in the interleaved layout of `v`.
pub fn photorealism_gradient(m: &SparseMatrix, v: &ImageBuffer) -> Result<Vec<f64>, MattingError> {
    check_pixels(m, v)?;
    let ch = v.channels();
    let mut grad = vec![0.0; v.data().len()];
    for c in 0..ch {
        let plane: Vec<f64> = v.channel(c).iter().map(|&x| x as f64).collect();
        for (p, g) in m.matvec(&plane).into_iter().enumerate() {
            grad[p * ch + c] = 2.0 * g;
        }
    }
    Ok(grad)
}

/// Energy and gradient for channel-planar data (`channels` consecutive planes of
/// `m.dim()` values each), as laid out in a 1xCxHxW tensor.
pub fn planar_energy_and_gradient(
    m: &SparseMatrix,
    planes: &[f64],
    channels: usize,
) -> Result<(f64, Vec<f64>), MattingError> {
    let n = m.dim();
    if planes.len() != n * channels {
        return Err(MattingError::Dimension {
            expected: n,
            got: planes.len() / channels.max(1),
        });
    }
    let mut energy = 0.0;
    let mut grad = vec![0.0; planes.len()];
    for c in 0..channels {
        let plane = &planes[c * n..(c + 1) * n];
        let mv = m.matvec(plane);
        energy += mv.iter().zip(plane).map(|(a, b)| a * b).sum::<f64>();
        for (g, v) in grad[c * n..(c + 1) * n].iter_mut().zip(mv) {
            *g = 2.0 * v;
        }
    }
    Ok((energy, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_v_has_zero_energy_and_gradient() {
        let img = ImageBuffer::from_fn(6, 5, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f32 / 7.0).unwrap();
        let m = build_matting_laplacian(&img, DEFAULT_EPS, 1).unwrap();
        let v = ImageBuffer::filled(6, 5, 3, 0.3).unwrap();
        assert!(photorealism_energy(&m, &v).unwrap().abs() < 1e-9);
        assert!(photorealism_gradient(&m, &v).unwrap().iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn constant_image_itself_has_zero_energy() {
        let img = ImageBuffer::filled(3, 3, 3, 0.6).unwrap();
        let m = build_matting_laplacian(&img, DEFAULT_EPS, 1).unwrap();
        assert!(photorealism_energy(&m, &img).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let img = ImageBuffer::filled(3, 3, 3, 0.6).unwrap();
        let m = build_matting_laplacian(&img, DEFAULT_EPS, 1).unwrap();
        let v = ImageBuffer::filled(4, 3, 3, 0.6).unwrap();
        assert!(matches!(
            photorealism_energy(&m, &v),
            Err(MattingError::Dimension { expected: 9, got: 12 })
        ));
        assert!(photorealism_gradient(&m, &v).is_err());
    }

    #[test]
    fn planar_matches_interleaved() {
        let img = ImageBuffer::from_fn(5, 5, 3, |x, y, c| ((x * 2 + y * 7 + c * 3) % 9) as f32 / 9.0).unwrap();
        let m = build_matting_laplacian(&img, 1e-5, 1).unwrap();
        let v = ImageBuffer::from_fn(5, 5, 3, |x, y, c| ((x + y * y + c) % 5) as f32 / 5.0).unwrap();
        let t = v.to_tensor();
        // tensor holds 2v - 1; shift back to v
        let planes: Vec<f64> = t.data().iter().map(|&x| ((x + 1.0) * 0.5) as f64).collect();
        let (e, g) = planar_energy_and_gradient(&m, &planes, 3).unwrap();
        let e_ref = photorealism_energy(&m, &v).unwrap();
        assert!((e - e_ref).abs() < 1e-5 * e_ref.abs().max(1.0));
        let g_ref = photorealism_gradient(&m, &v).unwrap();
        for p in 0..25 {
            for c in 0..3 {
                assert!((g[c * 25 + p] - g_ref[p * 3 + c]).abs() < 1e-5);
            }
        }
    }
}
