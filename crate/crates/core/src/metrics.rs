//! PSNR and SSIM on [0,1] images, computed per channel and averaged.

use thiserror::Error;

use crate::image::ImageBuffer;
use crate::networks::{NetworkError, NetworkParams};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    Dimensions {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn dims(i: &ImageBuffer) -> (usize, usize, usize) {
    (i.width(), i.height(), i.channels())
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if !a.same_dims(b) {
        return Err(MetricError::Dimensions { a: dims(a), b: dims(b) });
    }
    Ok(())
}

/// 10·log10(1 / MSE), MSE over every pixel and channel; [`PSNR_CAP`] if equal.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over the valid (unpadded) window positions and over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let x: Vec<f64> = a.channel(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.channel(c).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &taps));
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            sum += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Separable valid-mode Gaussian filter of a w×h plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricEntry {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
        let entry = MetricEntry {
            name: name.into(),
            psnr: psnr(a, b)?,
            ssim: ssim(a, b)?,
        };
        self.entries.push(entry);
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.ssim))
    }

    /// `filename  psnr  ssim` rows followed by a `mean` summary row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("filename\tpsnr\tssim\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.name, e.psnr, e.ssim));
        }
        out.push_str(&format!("mean\t{:.6}\t{:.6}\n", self.mean_psnr(), self.mean_ssim()));
        out
    }
}

/// Cycle reconstruction quality: each image goes through `forward` then
/// `backward`, and the reconstruction is scored against the original.
pub fn cycle_report(
    forward: &NetworkParams,
    backward: &NetworkParams,
    images: &[(String, ImageBuffer)],
) -> Result<MetricReport, MetricError> {
    let mut report = MetricReport::default();
    for (name, image) in images {
        let image = image.to_rgb();
        let rec = backward.translate(&forward.translate(&image)?)?;
        report.push(name.clone(), &rec, &image)?;
    }
    Ok(report)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
