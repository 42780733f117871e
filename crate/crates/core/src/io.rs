//! Image and depth file IO plus bilinear resampling.
//!
//! Images: 8/16-bit PNG and binary PNM (PPM/PGM). Depth: PFM (raw floats),
//! 16-bit PGM/PNG (scaled by 1/65535) or 8-bit greyscale (scaled by 1/255).

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use thiserror::Error;

use crate::image::{DepthMap, ImageBuffer, ImageError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated image data, input ends at byte offset {offset} ({detail})")]
    Truncated { path: PathBuf, offset: u64, detail: String },
    #[error("{path}: cannot decode image ({detail})")]
    Decode { path: PathBuf, detail: String },
    #[error("{path}: unsupported format ({detail})")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn decode(path: &Path) -> Result<DynamicImage, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let reader = ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(io_err(path))?;
    if reader.format().is_none() {
        return Err(IoError::Unsupported {
            path: path.to_path_buf(),
            detail: "unrecognized file signature".into(),
        });
    }
    reader
        .decode()
        .map_err(|e| classify_decode_error(path, bytes.len() as u64, e))
}

fn classify_decode_error(path: &Path, len: u64, err: image::ImageError) -> IoError {
    let detail = err.to_string();
    let lower = detail.to_ascii_lowercase();
    let eof = matches!(&err, image::ImageError::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof)
        || lower.contains("eof")
        || lower.contains("end of")
        || lower.contains("truncat")
        || lower.contains("not enough");
    match err {
        image::ImageError::Unsupported(_) => IoError::Unsupported {
            path: path.to_path_buf(),
            detail,
        },
        _ if eof => IoError::Truncated {
            path: path.to_path_buf(),
            offset: len,
            detail,
        },
        _ => IoError::Decode {
            path: path.to_path_buf(),
            detail,
        },
    }
}

/// Reads an image into [0, 1]. Greyscale files yield one channel, colour files
/// three (alpha is dropped).
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer, IoError> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grey = !img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() >= 2;
    let data: Vec<f32> = match (grey, sixteen) {
        (true, false) => img.to_luma8().into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        (true, true) => img.to_luma16().into_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        (false, false) => img.to_rgb8().into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        (false, true) => img.to_rgb16().into_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
    };
    let channels = if grey { 1 } else { 3 };
    ImageBuffer::new(w, h, channels, data).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an 8-bit image; the format follows the extension (`.png`, `.ppm`, `.pgm`).
pub fn write_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let format = match extension(path).as_str() {
        "png" => ImageFormat::Png,
        "ppm" | "pgm" | "pnm" => ImageFormat::Pnm,
        other => {
            return Err(IoError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("cannot write extension '{other}'"),
            })
        }
    };
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = if image.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer size matches"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer size matches"))
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    dynamic.save_with_format(path, format).map_err(|e| IoError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Reads a depth map from PFM, PGM or PNG.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap, IoError> {
    let path = path.as_ref();
    if extension(path) == "pfm" {
        return read_pfm(path);
    }
    let img = read_image(path)?;
    let (w, h) = (img.width(), img.height());
    let data = if img.channels() == 1 {
        img.into_data()
    } else {
        img.channel(0)
    };
    DepthMap::new(w, h, data).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn read_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |detail: String| IoError::Decode {
        path: path.to_path_buf(),
        detail,
    };
    // Three whitespace-terminated header tokens after the magic line.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::Truncated {
                path: path.to_path_buf(),
                offset: bytes.len() as u64,
                detail: "incomplete PFM header".into(),
            });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(format!("bad PFM magic '{other}'"))),
    };
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| bad(format!("bad width '{}'", tokens[1])))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| bad(format!("bad height '{}'", tokens[2])))?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| bad(format!("bad scale '{}'", tokens[3])))?;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    if bytes.len() < pos + need {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("PFM raster needs {need} bytes after header"),
        });
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0f32; w * h];
    for row in 0..h {
        // rows are stored bottom to top
        let y = h - 1 - row;
        for x in 0..w {
            let off = ((row * w + x) * channels) * 4;
            let word: [u8; 4] = raster[off..off + 4].try_into().unwrap();
            data[y * w + x] = if little {
                f32::from_le_bytes(word)
            } else {
                f32::from_be_bytes(word)
            };
        }
    }
    DepthMap::new(w, h, data).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single-channel little-endian PFM.
pub fn write_pfm(depth: &DepthMap, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let (w, h) = (depth.width(), depth.height());
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for &v in &depth.data()[row * w..(row + 1) * w] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Source position for output index `i` when mapping `src` samples onto `dst`
/// with the first and last samples aligned.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst == 1 {
        (src as f64 - 1.0) / 2.0
    } else {
        i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
    }
}

fn bilinear_plane(data: &[f32], stride: usize, offset: usize, w: usize, h: usize, nw: usize, nh: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let sy = source_coord(y, h, nh).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..nw {
            let sx = source_coord(x, w, nw).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let at = |xx: usize, yy: usize| data[(yy * w + xx) * stride + offset] as f64;
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Bilinear resampling with corner-aligned sample grids and edge clamping.
/// Unchanged dimensions return an exact copy.
pub fn resize_bilinear(image: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    if width == image.width() && height == image.height() {
        return Ok(image.clone());
    }
    let ch = image.channels();
    let planes: Vec<Vec<f32>> = (0..ch)
        .map(|c| bilinear_plane(image.data(), ch, c, image.width(), image.height(), width, height))
        .collect();
    let mut data = Vec::with_capacity(width * height * ch);
    for p in 0..width * height {
        for plane in &planes {
            data.push(plane[p]);
        }
    }
    ImageBuffer::from_clamped(width, height, ch, data)
}

pub fn resize_depth(depth: &DepthMap, width: usize, height: usize) -> Result<DepthMap, ImageError> {
    if width == depth.width() && height == depth.height() {
        return Ok(depth.clone());
    }
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    let data = bilinear_plane(depth.data(), 1, 0, depth.width(), depth.height(), width, height);
    DepthMap::new(width, height, data.into_iter().map(|v| v.max(0.0)).collect())
}

/// Image files (`.png`, `.ppm`, `.pgm`) directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, IoError> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && matches!(extension(&path).as_str(), "png" | "ppm" | "pgm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_round_trip_is_exact_for_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..7 * 5 * 3)
            .map(|_| rng.random_range(0..=255u8) as f32 / 255.0)
            .collect();
        let img = ImageBuffer::new(7, 5, 3, data).unwrap();
        let path = dir.path().join("x.png");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back, img);
        let bytes_a = fs::read(&path).unwrap();
        write_image(&back, &path).unwrap();
        assert_eq!(bytes_a, fs::read(&path).unwrap());

        let ppm = dir.path().join("x.ppm");
        write_image(&img, &ppm).unwrap();
        assert_eq!(read_image(&ppm).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_pgm_scales_to_unit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        fs::write(&path, bytes).unwrap();
        let d = read_depth(&path).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let d = DepthMap::new(3, 2, vec![0.0, 1.5, 2.0, 3.25, 4.0, 100.0]).unwrap();
        write_pfm(&d, &path).unwrap();
        assert_eq!(read_depth(&path).unwrap(), d);
    }

    #[test]
    fn truncated_png_names_file_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.png");
        let img = ImageBuffer::from_fn(16, 16, 3, |x, y, c| ((x * y + c) % 13) as f32 / 13.0).unwrap();
        write_image(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_image(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cut.png"), "{msg}");
        assert!(msg.contains(&format!("byte offset {}", bytes.len() / 2)), "{msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_image("/nonexistent/nope.png"), Err(IoError::Io { .. })));
    }

    #[test]
    fn resize_identity_and_uniform() {
        let img = ImageBuffer::from_fn(5, 4, 3, |x, y, c| (x + y + c) as f32 / 12.0).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);
        let flat = ImageBuffer::filled(2, 2, 3, 0.37).unwrap();
        let one = resize_bilinear(&flat, 1, 1).unwrap();
        assert!(one.data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    }

    #[test]
    fn upsampled_ramp_stays_linear() {
        let w = 8;
        let img = ImageBuffer::from_fn(w, 3, 1, |x, _, _| 0.1 + 0.1 * x as f32).unwrap();
        let up = resize_bilinear(&img, 2 * w, 6).unwrap();
        for y in 0..6 {
            for x in 0..2 * w {
                // analytic: value at source coordinate x * (w-1)/(2w-1)
                let expect = 0.1 + 0.1 * (x as f64 * (w as f64 - 1.0) / (2.0 * w as f64 - 1.0));
                assert!((up.get(x, y, 0) as f64 - expect).abs() < 1e-6);
            }
        }
    }
}
