//! On-disk cache of Matting Laplacians keyed by image content.
//!
//! File layout (all integers little-endian):
//!
//! | offset | type            | field                         |
//! |--------|-----------------|-------------------------------|
//! | 0      | `[u8; 4]`       | magic `MLAP`                  |
//! | 4      | `u32`           | version (1)                   |
//! | 8      | `u64`           | N (matrix dimension)          |
//! | 16     | `u64`           | nnz                           |
//! | 24     | `u64 × (N+1)`   | row pointers                  |
//! | …      | `u64 × nnz`     | column indices                |
//! | …      | `f64 × nnz`     | values (IEEE-754 binary64)    |

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{build_matting_laplacian, MattingError, SparseMatrix};
use crate::image::ImageBuffer;

pub const MLAP_MAGIC: &[u8; 4] = b"MLAP";
pub const MLAP_VERSION: u32 = 1;
pub const CACHE_ENV_VAR: &str = "HAZEFORGE_CACHE";

pub fn write_mlap(m: &SparseMatrix, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * (m.dim() + 1) + 16 * m.nnz());
    buf.extend_from_slice(MLAP_MAGIC);
    buf.extend_from_slice(&MLAP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.nnz() as u64).to_le_bytes());
    for &p in m.row_ptr() {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in m.col_idx() {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_mlap(input: &mut impl Read) -> Result<SparseMatrix, MattingError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| MattingError::Cache(format!("read failed: {e}")))?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0 };
    if cursor.take(4)? != MLAP_MAGIC {
        return Err(MattingError::Cache("bad magic, not an MLAP file".into()));
    }
    let version = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if version != MLAP_VERSION {
        return Err(MattingError::Cache(format!("unsupported MLAP version {version}")));
    }
    let n = cursor.u64()? as usize;
    let nnz = cursor.u64()? as usize;
    let expected = 24u128 + 8 * (n as u128 + 1) + 16 * nnz as u128;
    if bytes.len() as u128 != expected {
        return Err(MattingError::Cache(format!(
            "file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let row_ptr = (0..=n)
        .map(|_| cursor.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let col_idx = (0..nnz)
        .map(|_| cursor.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let values = (0..nnz)
        .map(|_| cursor.u64().map(f64::from_bits))
        .collect::<Result<Vec<_>, _>>()?;
    SparseMatrix::from_csr(n, row_ptr, col_idx, values).map_err(MattingError::Cache)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], MattingError> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(MattingError::Cache(format!(
                "truncated at byte offset {}",
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, MattingError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Content hash of the image and construction parameters.
pub fn cache_key(image: &ImageBuffer, eps: f64, window_radius: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"hazeforge-mlap-key-v2");
    hasher.update((image.width() as u64).to_le_bytes());
    hasher.update((image.height() as u64).to_le_bytes());
    hasher.update((image.channels() as u64).to_le_bytes());
    for v in image.data() {
        hasher.update(v.to_le_bytes());
    }
    hasher.update(eps.to_le_bytes());
    hasher.update((window_radius as u64).to_le_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Clone, Debug)]
pub struct MattingCache {
    dir: PathBuf,
}

impl MattingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Directory from `HAZEFORGE_CACHE`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV_VAR).map(|d| Self::new(PathBuf::from(d)))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.mlap"))
    }

    /// Loads the cached matrix for `image`, building and storing it on a miss.
    /// A corrupt cache entry is rebuilt and overwritten.
    pub fn get_or_build(
        &self,
        image: &ImageBuffer,
        eps: f64,
        window_radius: usize,
    ) -> Result<SparseMatrix, MattingError> {
        let path = self.path_for(&cache_key(image, eps, window_radius));
        if let Ok(mut f) = fs::File::open(&path) {
            if let Ok(m) = read_mlap(&mut f) {
                if m.dim() == image.pixel_count() {
                    return Ok(m);
                }
            }
        }
        let m = build_matting_laplacian(image, eps, window_radius)?;
        self.store(&path, &m)?;
        Ok(m)
    }

    fn store(&self, path: &Path, m: &SparseMatrix) -> Result<(), MattingError> {
        let io = |e: std::io::Error| MattingError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let tmp = path.with_extension(format!("mlap.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            write_mlap(m, &mut f).map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }
}
