//! On-disk dataset layout, loading at network resolution, and the
//! deterministic sample order used by the trainer.
//!
//! ```text
//! <root>/unpaired/trainA   hazy images
//! <root>/unpaired/trainB   clean images
//! <root>/paired/hazy       hazy half of each pair
//! <root>/paired/clean      clean half, same file name
//! <root>/test/hazy         held-out hazy images
//! <root>/test/clean        their ground truth, same file name
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};
use crate::io::{list_images, read_image, resize_bilinear, IoError};
use crate::matting::{build_matting_laplacian, MattingCache, MattingError, SparseMatrix};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}: no images found")]
    Empty(PathBuf),
    #[error("paired sets differ: {0}")]
    Unaligned(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {source}")]
    Matting {
        path: PathBuf,
        #[source]
        source: MattingError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn unpaired_hazy(&self) -> PathBuf {
        self.root.join("unpaired/trainA")
    }

    pub fn unpaired_clean(&self) -> PathBuf {
        self.root.join("unpaired/trainB")
    }

    pub fn paired_hazy(&self) -> PathBuf {
        self.root.join("paired/hazy")
    }

    pub fn paired_clean(&self) -> PathBuf {
        self.root.join("paired/clean")
    }

    pub fn test_hazy(&self) -> PathBuf {
        self.root.join("test/hazy")
    }

    pub fn test_clean(&self) -> PathBuf {
        self.root.join("test/clean")
    }
}

/// One image at network resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub image: ImageBuffer,
    /// 1x3xSxS in [-1, 1]
    pub tensor: Tensor,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_sample(path: &Path, size: usize) -> Result<Sample, DatasetError> {
    let image = read_image(path)?.to_rgb();
    let image = resize_bilinear(&image, size, size).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Sample {
        name: file_name(path),
        tensor: image.to_tensor(),
        image,
    })
}

/// Every image in `dir`, sorted by file name, resized to `size`×`size`.
pub fn load_dir(dir: &Path, size: usize) -> Result<Vec<Sample>, DatasetError> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    paths.iter().map(|p| load_sample(p, size)).collect()
}

/// File names present in both directories. Fails unless the two name sets match.
pub fn aligned_names(hazy: &Path, clean: &Path) -> Result<Vec<String>, DatasetError> {
    let names = |dir: &Path| -> Result<BTreeMap<String, ()>, DatasetError> {
        Ok(list_images(dir)?.iter().map(|p| (file_name(p), ())).collect())
    };
    let (a, b) = (names(hazy)?, names(clean)?);
    if a.is_empty() {
        return Err(DatasetError::Empty(hazy.to_path_buf()));
    }
    let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(DatasetError::Unaligned(format!(
            "only in {}: {:?}; only in {}: {:?}",
            hazy.display(),
            only_a,
            clean.display(),
            only_b
        )));
    }
    Ok(a.into_keys().collect())
}

pub fn load_pairs(hazy: &Path, clean: &Path, size: usize) -> Result<Vec<(Sample, Sample)>, DatasetError> {
    aligned_names(hazy, clean)?
        .iter()
        .map(|n| Ok((load_sample(&hazy.join(n), size)?, load_sample(&clean.join(n), size)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MattingSettings {
    pub eps: f64,
    pub window_radius: usize,
}

impl Default for MattingSettings {
    fn default() -> Self {
        Self {
            eps: crate::matting::DEFAULT_EPS,
            window_radius: crate::matting::DEFAULT_WINDOW_RADIUS,
        }
    }
}

/// Everything the trainer reads: both unpaired pools with the Matting
/// Laplacian of each image, and the aligned pairs.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub hazy: Vec<Sample>,
    pub clean: Vec<Sample>,
    pub hazy_laplacians: Vec<SparseMatrix>,
    pub clean_laplacians: Vec<SparseMatrix>,
    pub pairs: Vec<(Sample, Sample)>,
}

fn laplacians(
    dir: &Path,
    samples: &[Sample],
    settings: &MattingSettings,
    cache: Option<&MattingCache>,
) -> Result<Vec<SparseMatrix>, DatasetError> {
    samples
        .iter()
        .map(|s| {
            let built = match cache {
                Some(c) => c.get_or_build(&s.image, settings.eps, settings.window_radius),
                None => build_matting_laplacian(&s.image, settings.eps, settings.window_radius),
            };
            built.map_err(|source| DatasetError::Matting {
                path: dir.join(&s.name),
                source,
            })
        })
        .collect()
}

impl TrainingData {
    pub fn from_samples(
        hazy: Vec<Sample>,
        clean: Vec<Sample>,
        pairs: Vec<(Sample, Sample)>,
        settings: &MattingSettings,
        cache: Option<&MattingCache>,
    ) -> Result<Self, DatasetError> {
        Self::assemble(
            Path::new("trainA"),
            Path::new("trainB"),
            hazy,
            clean,
            pairs,
            settings,
            cache,
        )
    }

    pub fn load(
        layout: &DatasetLayout,
        size: usize,
        settings: &MattingSettings,
        cache: Option<&MattingCache>,
    ) -> Result<Self, DatasetError> {
        let (hazy_dir, clean_dir) = (layout.unpaired_hazy(), layout.unpaired_clean());
        let hazy = load_dir(&hazy_dir, size)?;
        let clean = load_dir(&clean_dir, size)?;
        let pairs = load_pairs(&layout.paired_hazy(), &layout.paired_clean(), size)?;
        Self::assemble(&hazy_dir, &clean_dir, hazy, clean, pairs, settings, cache)
    }

    fn assemble(
        hazy_dir: &Path,
        clean_dir: &Path,
        hazy: Vec<Sample>,
        clean: Vec<Sample>,
        pairs: Vec<(Sample, Sample)>,
        settings: &MattingSettings,
        cache: Option<&MattingCache>,
    ) -> Result<Self, DatasetError> {
        let hazy_laplacians = laplacians(hazy_dir, &hazy, settings, cache)?;
        let clean_laplacians = laplacians(clean_dir, &clean, settings, cache)?;
        Ok(Self {
            hazy,
            clean,
            hazy_laplacians,
            clean_laplacians,
            pairs,
        })
    }

    /// Size of the larger unpaired pool; one epoch is this many unpaired samples.
    pub fn unpaired_len(&self) -> usize {
        self.hazy.len().max(self.clean.len())
    }
}

/// Sample streams drawn by the trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    UnpairedHazy = 0,
    UnpairedClean = 1,
    Paired = 2,
}

/// Index of the `position`-th sample of `stream` in a pool of `n` items.
///
/// Each pass over the pool is a fresh permutation drawn from a ChaCha stream
/// keyed by (seed, stream, pass), so any position can be computed without
/// replaying earlier ones.
pub fn sample_index(seed: u64, stream: Stream, position: u64, n: usize) -> usize {
    assert!(n > 0, "empty pool");
    let pass = position / n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream as u64 + 1)));
    rng.set_stream(pass);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order[(position % n as u64) as usize]
}
