//! NCAP checkpoints: a small binary file with the weights and a JSON sidecar
//! with everything else.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NCAP"  u8 version  u32 count  u32 dims[count]  f64 W_1 .. W_T (row-major)
//! ```
//!
//! `dims` is `d, p_1, .., p_T`, so `count = T + 1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{LossReport, NetworkArch, ParamSet, TrainConfig};

pub const MAGIC: [u8; 4] = *b"NCAP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: NetworkArch,
    pub train_config: Option<TrainConfig>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Keyed by split and mode, e.g. `test_expected`.
    pub final_losses: BTreeMap<String, LossReport>,
    /// Seconds since the Unix epoch; absent in reproducibility-sensitive outputs.
    pub created_unix: Option<u64>,
}

impl CheckpointMeta {
    pub fn new(arch: NetworkArch) -> Self {
        Self {
            arch,
            train_config: None,
            epochs_run: 0,
            stopped_early: false,
            final_losses: BTreeMap::new(),
            created_unix: None,
        }
    }
}

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(9 + 4 * dims.len() + 8 * params.num_params());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for w in params.weights() {
        for v in w.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Truncated(format!(
                "checkpoint ends at byte {} while reading {what}",
                self.bytes.len()
            ))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("dimension count")? as usize;
    if count < 2 {
        return Err(Error::Checkpoint(format!("need at least 2 dimensions, found {count}")));
    }
    let dims = (0..count)
        .map(|_| r.u32("dimensions").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::with_capacity(count - 1);
    for pair in dims.windows(2) {
        let (rows, cols) = (pair[0], pair[1]);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("layer {rows}×{cols} is too large")))?;
        let raw = r.take(8 * n, "weights")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        weights.push(Array2::from_shape_vec((rows, cols), values).expect("length matches shape"));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    ParamSet::new(weights)
}

/// Sidecar path: the checkpoint path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamSet, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    if !params.matches(&meta.arch) {
        return Err(Error::Checkpoint(format!(
            "weights {:?} do not match the recorded architecture {:?}",
            params.dims(),
            meta.arch.dims()
        )));
    }
    fs::write(path, encode_params(params))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamSet, CheckpointMeta)> {
    let path = path.as_ref();
    let params = decode_params(&fs::read(path)?)?;
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if !params.matches(&meta.arch) {
        return Err(Error::Checkpoint(format!(
            "weights {:?} disagree with sidecar architecture {:?}",
            params.dims(),
            meta.arch.dims()
        )));
    }
    Ok((params, meta))
}
