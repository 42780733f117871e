//! Haze synthesis from depth with the atmospheric scattering model
//! `I = J·t + A·(1 − t)`, `t = exp(−β·d)`, and soft-matting depth refinement.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{DepthMap, ImageBuffer, ImageError};
use crate::io::{self, IoError};
use crate::matting::{self, CgOptions, MattingError};

#[derive(Debug, Error)]
pub enum HazeError {
    #[error("invalid haze parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Matting(#[from] MattingError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Global atmospheric light `A` and scattering coefficient `β`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    atmospheric_light: f32,
    beta: f32,
}

impl HazeParams {
    pub const DEFAULT_ATMOSPHERIC_LIGHT: f32 = 0.85;
    pub const DEFAULT_BETA: f32 = 1.0;

    pub fn new(atmospheric_light: f32, beta: f32) -> Result<Self, HazeError> {
        if !(atmospheric_light > 0.0 && atmospheric_light <= 1.0) {
            return Err(HazeError::Parameter(format!(
                "atmospheric light must be in (0, 1], got {atmospheric_light}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(HazeError::Parameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            atmospheric_light,
            beta,
        })
    }

    pub fn atmospheric_light(&self) -> f32 {
        self.atmospheric_light
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }
}

impl Default for HazeParams {
    fn default() -> Self {
        Self {
            atmospheric_light: Self::DEFAULT_ATMOSPHERIC_LIGHT,
            beta: Self::DEFAULT_BETA,
        }
    }
}

/// Per-pixel scalar field (transmission), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ScalarField {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// t(p) = exp(−β·d(p))
pub fn transmission_from_depth(depth: &DepthMap, beta: f32) -> Result<ScalarField, HazeError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(HazeError::Parameter(format!("beta must be positive, got {beta}")));
    }
    Ok(ScalarField {
        width: depth.width(),
        height: depth.height(),
        data: depth
            .data()
            .iter()
            .map(|&d| (-(beta as f64) * d as f64).exp() as f32)
            .collect(),
    })
}

fn check_field(image: &ImageBuffer, t: &ScalarField) -> Result<(), HazeError> {
    if image.width() != t.width || image.height() != t.height || t.data.len() != t.width * t.height {
        return Err(HazeError::Mismatch(format!(
            "image {}x{} vs transmission {}x{}",
            image.width(),
            image.height(),
            t.width,
            t.height
        )));
    }
    Ok(())
}

/// I = J·t + A·(1 − t)
pub fn add_haze(
    clean: &ImageBuffer,
    transmission: &ScalarField,
    atmospheric_light: f32,
) -> Result<ImageBuffer, HazeError> {
    check_field(clean, transmission)?;
    let ch = clean.channels();
    let a = atmospheric_light;
    let data = clean
        .data()
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let t = transmission.data[i / ch];
            j * t + a * (1.0 - t)
        })
        .collect();
    Ok(ImageBuffer::from_clamped(clean.width(), clean.height(), ch, data)?)
}

/// J = (I − A) / max(t, t_floor) + A, clamped to [0, 1].
pub fn invert_haze(
    hazy: &ImageBuffer,
    transmission: &ScalarField,
    atmospheric_light: f32,
    t_floor: f32,
) -> Result<ImageBuffer, HazeError> {
    if !(t_floor > 0.0) {
        return Err(HazeError::Parameter(format!("t_floor must be positive, got {t_floor}")));
    }
    check_field(hazy, transmission)?;
    let ch = hazy.channels();
    let a = atmospheric_light as f64;
    let data = hazy
        .data()
        .iter()
        .enumerate()
        .map(|(p, &i)| {
            let t = (transmission.data[p / ch] as f64).max(t_floor as f64);
            ((i as f64 - a) / t + a) as f32
        })
        .collect();
    Ok(ImageBuffer::from_clamped(hazy.width(), hazy.height(), ch, data)?)
}

/// Soft-matting refinement of `depth` guided by the edges of `guide`:
/// solves `(M + λI) d = λ·depth` with `M` built from the guide.
pub fn refine_depth(
    depth: &DepthMap,
    guide: &ImageBuffer,
    lambda: f64,
    eps: f64,
    window_radius: usize,
    cg: CgOptions,
) -> Result<DepthMap, HazeError> {
    if depth.width() != guide.width() || depth.height() != guide.height() {
        return Err(HazeError::Mismatch(format!(
            "depth {}x{} vs guide {}x{}",
            depth.width(),
            depth.height(),
            guide.width(),
            guide.height()
        )));
    }
    let m = matting::build_matting_laplacian(&guide.to_rgb(), eps, window_radius)?;
    let target: Vec<f64> = depth.data().iter().map(|&d| d as f64).collect();
    let sol = matting::solve_soft_matting(&m, &target, lambda, cg)?;
    let data = sol.x.iter().map(|&v| (v as f32).max(0.0)).collect();
    Ok(DepthMap::new(depth.width(), depth.height(), data)?)
}

/// Options for [`generate_paired_set`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub haze: HazeParams,
    /// Per-image β multiplier drawn uniformly from this range.
    pub beta_jitter: (f32, f32),
    pub refine_lambda: f64,
    pub matting_eps: f64,
    pub window_radius: usize,
    pub cg: CgOptions,
    /// Resample every source image (and its depth) to this square size first.
    pub resize_to: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            haze: HazeParams::default(),
            beta_jitter: (0.7, 1.3),
            refine_lambda: matting::DEFAULT_REFINE_LAMBDA,
            matting_eps: matting::DEFAULT_EPS,
            window_radius: matting::DEFAULT_WINDOW_RADIUS,
            cg: CgOptions::default(),
            resize_to: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EntryOutcome {
    Written { beta: f32, atmospheric_light: f32 },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub outcome: EntryOutcome,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn written_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.outcome, EntryOutcome::Written { .. }))
            .count()
    }

    /// TSV with columns name, beta, A, seed, status.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tbeta\tA\tseed\tstatus\n");
        for e in &self.entries {
            match &e.outcome {
                EntryOutcome::Written {
                    beta,
                    atmospheric_light,
                } => writeln!(out, "{}\t{beta:.6}\t{atmospheric_light:.6}\t{}\tok", e.name, e.seed),
                EntryOutcome::Failed(msg) => {
                    let msg = msg.replace(['\t', '\n', '\r'], " ");
                    writeln!(out, "{}\t-\t-\t{}\terror: {msg}", e.name, e.seed)
                }
            }
            .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Deterministic per-file seed from the global seed and the file name.
pub fn per_file_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn find_depth(depth_dir: &Path, name: &str) -> Option<PathBuf> {
    ["pfm", "pgm", "png"]
        .iter()
        .map(|ext| depth_dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

/// Hazes every `images/<name>.png` in `source_dir` using `depth/<name>.{pfm,pgm,png}`
/// and writes `paired/hazy/<name>.png`, `paired/clean/<name>.png` and
/// `manifest.tsv` under `output_dir`. Per-file failures are recorded in the
/// manifest and do not stop the run.
pub fn generate_paired_set(
    source_dir: impl AsRef<Path>,
    output_dir: impl AsRef<Path>,
    opts: &SynthOptions,
    seed: u64,
) -> Result<Manifest, HazeError> {
    let source_dir = source_dir.as_ref();
    let output_dir = output_dir.as_ref();
    if !source_dir.is_dir() {
        return Err(HazeError::Io(IoError::Io {
            path: source_dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "source directory not found"),
        }));
    }
    let images_dir = source_dir.join("images");
    let depth_dir = source_dir.join("depth");
    let images = if images_dir.is_dir() {
        io::list_images(&images_dir)?
    } else {
        Vec::new()
    };
    let hazy_dir = output_dir.join("paired").join("hazy");
    let clean_dir = output_dir.join("paired").join("clean");
    for d in [&hazy_dir, &clean_dir] {
        fs::create_dir_all(d).map_err(|source| IoError::Io {
            path: d.clone(),
            source,
        })?;
    }

    let mut manifest = Manifest::default();
    for path in images {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let file_seed = per_file_seed(seed, &name);
        let outcome = match synthesize_one(&path, &depth_dir, &name, opts, file_seed, &hazy_dir, &clean_dir) {
            Ok((beta, a)) => EntryOutcome::Written {
                beta,
                atmospheric_light: a,
            },
            Err(e) => EntryOutcome::Failed(e.to_string()),
        };
        manifest.entries.push(ManifestEntry {
            name,
            seed: file_seed,
            outcome,
        });
    }
    let manifest_path = output_dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest.to_tsv()).map_err(|source| IoError::Io {
        path: manifest_path,
        source,
    })?;
    Ok(manifest)
}

fn synthesize_one(
    image_path: &Path,
    depth_dir: &Path,
    name: &str,
    opts: &SynthOptions,
    file_seed: u64,
    hazy_dir: &Path,
    clean_dir: &Path,
) -> Result<(f32, f32), HazeError> {
    let depth_path = find_depth(depth_dir, name)
        .ok_or_else(|| HazeError::Mismatch(format!("no depth map for '{name}' in {}", depth_dir.display())))?;
    let mut clean = io::read_image(image_path)?.to_rgb();
    if let Some(size) = opts.resize_to {
        clean = io::resize_bilinear(&clean, size, size)?;
    }
    let depth = io::read_depth(&depth_path)?;
    let depth = io::resize_depth(&depth, clean.width(), clean.height())?.normalized();
    let refined = refine_depth(
        &depth,
        &clean,
        opts.refine_lambda,
        opts.matting_eps,
        opts.window_radius,
        opts.cg,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(file_seed);
    let (lo, hi) = opts.beta_jitter;
    let factor = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let beta = opts.haze.beta() * factor;
    let a = opts.haze.atmospheric_light();
    let t = transmission_from_depth(&refined, beta)?;
    let hazy = add_haze(&clean, &t, a)?;
    io::write_image(&hazy, hazy_dir.join(format!("{name}.png")))?;
    io::write_image(&clean, clean_dir.join(format!("{name}.png")))?;
    Ok((beta, a))
}
