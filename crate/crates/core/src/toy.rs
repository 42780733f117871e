//! Procedural outdoor scenes with known depth, used to build small synthetic
//! datasets in the standard layout (see [`crate::dataset`]).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetLayout;
use crate::hazesynth::{generate_paired_set, per_file_seed, HazeError, Manifest, SynthOptions};
use crate::image::{DepthMap, ImageBuffer};
use crate::io::{self, IoError};

/// Sky, a receding ground plane and a few box-shaped buildings.
/// Depth is 1 for the sky and falls to 0.2 at the bottom edge.
pub fn toy_scene(seed: u64, size: usize) -> (ImageBuffer, DepthMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let horizon = rng.random_range(0.3..0.55) * s;
    let sky_top = [
        rng.random_range(0.2..0.4),
        rng.random_range(0.4..0.6),
        rng.random_range(0.8..0.95),
    ];
    let sky_low = [0.75, 0.82, 0.95];
    let ground = [
        rng.random_range(0.2..0.45),
        rng.random_range(0.35..0.55),
        rng.random_range(0.1..0.3),
    ];
    let ground_depth = |y: f32| 1.0 - 0.8 * ((y - horizon) / (s - horizon)).clamp(0.0, 1.0);

    let mut rgb = vec![0.0f32; size * size * 3];
    let mut depth = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let fy = y as f32 + 0.5;
            let (col, d) = if fy < horizon {
                let t = fy / horizon;
                (std::array::from_fn(|c| sky_top[c] * (1.0 - t) + sky_low[c] * t), 1.0)
            } else {
                let d = ground_depth(fy);
                let stripe = if (x / 3 + y / 2) % 2 == 0 { 0.04 } else { -0.04 };
                (std::array::from_fn(|c| ground[c] * (1.4 - 0.6 * d) + stripe), d)
            };
            let col: [f32; 3] = col;
            rgb[p * 3..p * 3 + 3].copy_from_slice(&col);
            depth[p] = d;
        }
    }

    let mut buildings: Vec<(usize, usize, usize, usize, [f32; 3])> = (0..rng.random_range(2..5))
        .map(|_| {
            let w = rng.random_range(size / 8..size / 3).max(2);
            let h = rng.random_range(size / 6..size / 2).max(2);
            let x0 = rng.random_range(0..size - w);
            let base = rng
                .random_range(horizon as usize + 1..size.max(horizon as usize + 2))
                .min(size);
            let col = [
                rng.random_range(0.1..0.8),
                rng.random_range(0.1..0.8),
                rng.random_range(0.1..0.8),
            ];
            (x0, w, base, h, col)
        })
        .collect();
    // far buildings first so near ones overwrite them
    buildings.sort_by_key(|b| b.2);
    for (x0, w, base, h, col) in buildings {
        let d = ground_depth(base as f32);
        for y in base.saturating_sub(h)..base {
            for x in x0..x0 + w {
                let p = y * size + x;
                let window = (x - x0) % 3 == 1 && (y % 3 == 1);
                for c in 0..3 {
                    rgb[p * 3 + c] = if window { col[c] * 0.5 } else { col[c] };
                }
                depth[p] = d;
            }
        }
    }
    let image = ImageBuffer::from_clamped(size, size, 3, rgb).expect("consistent dimensions");
    let depth = DepthMap::new(size, size, depth).expect("finite non-negative depth");
    (image, depth)
}

/// Writes `count` scenes as `images/<prefix>NNN.png` and `depth/<prefix>NNN.pfm`.
pub fn write_scene_sources(dir: &Path, prefix: &str, count: usize, size: usize, seed: u64) -> Result<(), IoError> {
    for sub in ["images", "depth"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|source| IoError::Io { path: d, source })?;
    }
    for i in 0..count {
        let name = format!("{prefix}{i:03}");
        let (img, depth) = toy_scene(per_file_seed(seed, &name), size);
        io::write_image(&img, dir.join("images").join(format!("{name}.png")))?;
        io::write_pfm(&depth, dir.join("depth").join(format!("{name}.pfm")))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyCounts {
    pub unpaired: usize,
    pub paired: usize,
    pub test: usize,
}

impl Default for ToyCounts {
    fn default() -> Self {
        Self {
            unpaired: 16,
            paired: 8,
            test: 4,
        }
    }
}

fn move_dir(from: &Path, to: &Path) -> Result<(), IoError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IoError::Io { path, source }
    };
    if let Some(parent) = to.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    if to.exists() {
        fs::remove_dir_all(to).map_err(io(to))?;
    }
    fs::rename(from, to).map_err(io(from))
}

/// Builds a complete toy dataset under `root`:
/// hazy-only scenes for `unpaired/trainA`, a disjoint set of clean scenes for
/// `unpaired/trainB`, and hazy/clean pairs for `paired/` and `test/`.
/// Every hazy image goes through [`generate_paired_set`].
pub fn generate_toy_dataset(
    root: &Path,
    size: usize,
    counts: ToyCounts,
    opts: &SynthOptions,
    seed: u64,
) -> Result<Vec<Manifest>, HazeError> {
    let layout = DatasetLayout::new(root);
    let staging = root.join(".staging");
    let mut manifests = Vec::new();
    for (prefix, count, hazy_to, clean_to) in [
        ("a", counts.unpaired, Some(layout.unpaired_hazy()), None),
        ("b", counts.unpaired, None, Some(layout.unpaired_clean())),
        (
            "p",
            counts.paired,
            Some(layout.paired_hazy()),
            Some(layout.paired_clean()),
        ),
        ("t", counts.test, Some(layout.test_hazy()), Some(layout.test_clean())),
    ] {
        let src = staging.join(format!("{prefix}_src"));
        let out = staging.join(format!("{prefix}_out"));
        write_scene_sources(&src, prefix, count, size, seed)?;
        let manifest = generate_paired_set(&src, &out, opts, seed)?;
        if let Some(to) = hazy_to {
            move_dir(&out.join("paired/hazy"), &to)?;
        }
        if let Some(to) = clean_to {
            move_dir(&out.join("paired/clean"), &to)?;
        }
        manifests.push(manifest);
    }
    fs::remove_dir_all(&staging).map_err(|source| IoError::Io { path: staging, source })?;
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_varied() {
        let (a, da) = toy_scene(1, 32);
        let (b, db) = toy_scene(1, 32);
        assert_eq!(a, b);
        assert_eq!(da, db);
        let (c, _) = toy_scene(2, 32);
        assert_ne!(a, c);
        assert!(da.data().iter().all(|&d| (0.2..=1.0).contains(&d)));
        assert_eq!(da.data()[0], 1.0, "top-left pixel is sky");
    }

    #[test]
    fn dataset_layout_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let counts = ToyCounts {
            unpaired: 2,
            paired: 2,
            test: 1,
        };
        let manifests = generate_toy_dataset(dir.path(), 16, counts, &SynthOptions::default(), 7).unwrap();
        assert!(manifests.iter().all(|m| m.written_count() == m.entries.len()));
        let layout = DatasetLayout::new(dir.path());
        for (d, n) in [
            (layout.unpaired_hazy(), 2),
            (layout.unpaired_clean(), 2),
            (layout.paired_hazy(), 2),
            (layout.paired_clean(), 2),
            (layout.test_hazy(), 1),
            (layout.test_clean(), 1),
        ] {
            assert_eq!(io::list_images(&d).unwrap().len(), n, "{}", d.display());
        }
        assert!(!dir.path().join(".staging").exists());
    }
}
