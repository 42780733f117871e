//! Binary training checkpoints (`SCGN` container).
//!
//! All integers are little-endian; floats are IEEE-754 binary32 unless noted.
//! See `docs/FORMATS.md` for the byte-level table.
//!
//! ```text
//! "SCGN" | version u32 | base_channels u32 | residual_blocks u32 | image_size u32
//! tensor_count u32
//!   repeated: name_len u32 | name (utf-8) | shape 4×u64 | data f32×numel
//! optimizer_count u32
//!   repeated: name_len u32 | name | step u64 | slot_count u32
//!     repeated: len u64 | m f32×len | v f32×len
//! iteration u64 | sampler_seed u64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::networks::{ArchConfig, NetKind, NetworkError, NetworkParams};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;

pub const SCGN_MAGIC: &[u8; 4] = b"SCGN";
pub const SCGN_VERSION: u32 = 1;
/// Parameter-name prefixes of the four networks, in file order.
pub const NET_NAMES: [&str; 4] = ["g_y", "g_x", "d_y", "d_x"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint truncated at byte offset {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Full training state: the four networks, their Adam moments, the iteration
/// counter and the seed of the data sampler. The sampler is counter-based, so
/// seed and iteration fully determine the remaining data order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub g_y: NetworkParams,
    pub g_x: NetworkParams,
    pub d_y: NetworkParams,
    pub d_x: NetworkParams,
    /// Optimizer state per network, in [`NET_NAMES`] order.
    pub optimizers: [OptimizerState; 4],
    pub iteration: u64,
    pub sampler_seed: u64,
}

impl Checkpoint {
    pub fn arch(&self) -> ArchConfig {
        self.g_y.arch()
    }

    pub fn nets(&self) -> [&NetworkParams; 4] {
        [&self.g_y, &self.g_x, &self.d_y, &self.d_x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let arch = self.arch();
        b.extend_from_slice(SCGN_MAGIC);
        put_u32(&mut b, SCGN_VERSION);
        put_u32(&mut b, arch.base_channels as u32);
        put_u32(&mut b, arch.num_residual_blocks as u32);
        put_u32(&mut b, arch.image_size as u32);
        let total: usize = self.nets().iter().map(|n| n.len()).sum();
        put_u32(&mut b, total as u32);
        for (prefix, net) in NET_NAMES.iter().zip(self.nets()) {
            for (name, t) in net.params() {
                put_str(&mut b, &format!("{prefix}.{name}"));
                for d in t.shape() {
                    put_u64(&mut b, d as u64);
                }
                put_f32s(&mut b, t.data());
            }
        }
        put_u32(&mut b, 4);
        for (name, opt) in NET_NAMES.iter().zip(&self.optimizers) {
            put_str(&mut b, name);
            put_u64(&mut b, opt.step);
            put_u32(&mut b, opt.m.len() as u32);
            for (m, v) in opt.m.iter().zip(&opt.v) {
                put_u64(&mut b, m.len() as u64);
                put_f32s(&mut b, m);
                put_f32s(&mut b, v);
            }
        }
        put_u64(&mut b, self.iteration);
        put_u64(&mut b, self.sampler_seed);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != SCGN_MAGIC {
            return Err(CheckpointError::Format("bad magic, not an SCGN checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version != SCGN_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let arch = ArchConfig {
            base_channels: r.u32("arch")? as usize,
            num_residual_blocks: r.u32("arch")? as usize,
            image_size: r.u32("arch")? as usize,
        };
        let count = r.u32("tensor count")? as usize;
        let mut groups: [Vec<(String, Tensor)>; 4] = Default::default();
        for _ in 0..count {
            let full = r.string("tensor name")?;
            let (prefix, name) = full
                .split_once('.')
                .ok_or_else(|| CheckpointError::Format(format!("tensor name {full:?} has no network prefix")))?;
            let slot = NET_NAMES
                .iter()
                .position(|p| *p == prefix)
                .ok_or_else(|| CheckpointError::Format(format!("unknown network prefix {prefix:?}")))?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.u64("tensor shape")? as usize;
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| CheckpointError::Format(format!("{full}: shape overflows")))?;
            let data = r.f32s(numel, "tensor data")?;
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            groups[slot].push((name.to_string(), t));
        }
        let [gy, gx, dy, dx] = groups;
        let g_y = NetworkParams::from_tensors(NetKind::Generator, arch, gy)?;
        let g_x = NetworkParams::from_tensors(NetKind::Generator, arch, gx)?;
        let d_y = NetworkParams::from_tensors(NetKind::Discriminator, arch, dy)?;
        let d_x = NetworkParams::from_tensors(NetKind::Discriminator, arch, dx)?;

        let opt_count = r.u32("optimizer count")? as usize;
        if opt_count != 4 {
            return Err(CheckpointError::Format(format!(
                "expected 4 optimizer records, got {opt_count}"
            )));
        }
        let nets = [&g_y, &g_x, &d_y, &d_x];
        let mut optimizers: [OptimizerState; 4] = nets.map(OptimizerState::new);
        for (i, expected) in NET_NAMES.iter().enumerate() {
            let name = r.string("optimizer name")?;
            if name != *expected {
                return Err(CheckpointError::Format(format!(
                    "optimizer record {i} is {name:?}, expected {expected:?}"
                )));
            }
            let step = r.u64("optimizer step")?;
            let slots = r.u32("optimizer slots")? as usize;
            let mut m = Vec::with_capacity(slots);
            let mut v = Vec::with_capacity(slots);
            for _ in 0..slots {
                let len = r.u64("moment length")? as usize;
                m.push(r.f32s(len, "first moment")?);
                v.push(r.f32s(len, "second moment")?);
            }
            let state = OptimizerState { step, m, v };
            if !state.matches(nets[i]) {
                return Err(CheckpointError::Format(format!(
                    "optimizer {name} does not match its network"
                )));
            }
            optimizers[i] = state;
        }
        let iteration = r.u64("iteration")?;
        let sampler_seed = r.u64("sampler seed")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes after footer",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            g_y,
            g_x,
            d_y,
            d_x,
            optimizers,
            iteration,
            sampler_seed,
        })
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("scgn.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Hex sha256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

fn put_f32s(b: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        match self.pos.checked_add(len) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(CheckpointError::Truncated {
                offset: self.bytes.len(),
                what,
            }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| CheckpointError::Format(format!("{what} is not utf-8")))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, CheckpointError> {
        let len = n.checked_mul(4).ok_or(CheckpointError::Truncated {
            offset: self.bytes.len(),
            what,
        })?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
