//! Checkpoint file format: magic header, version, JSON metadata block, then
//! named little-endian f64 parameter blobs. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;

const MAGIC: &[u8; 4] = b"ICGN";
const VERSION: u32 = 1;

/// Metadata stored alongside the parameters.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Serialized model configuration.
    pub config: serde_json::Value,
    pub epoch: usize,
    /// Per-epoch metric history (name -> series).
    #[serde(default)]
    pub metrics: std::collections::BTreeMap<String, Vec<f64>>,
}

pub fn save(path: &Path, params: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(p.rows as u32).to_le_bytes())?;
        w.write_all(&(p.cols as u32).to_le_bytes())?;
        w.write_all(&((p.data.len() * 8) as u64).to_le_bytes())?;
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Data("bad checkpoint magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let meta_len = u32::from_le_bytes(u32buf) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Data("checkpoint metadata truncated".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Data(e.to_string()))?;

    r.read_exact(&mut u32buf)?;
    let n_params = u32::from_le_bytes(u32buf) as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Data("bad param name".into()))?;
        r.read_exact(&mut u32buf)?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let byte_len = u64::from_le_bytes(u64buf) as usize;
        if byte_len != rows * cols * 8 {
            return Err(Error::Data(format!("blob length mismatch for {name}")));
        }
        let mut blob = vec![0u8; byte_len];
        r.read_exact(&mut blob)
            .map_err(|_| Error::Data(format!("checkpoint blob truncated at {name}")))?;
        let data: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(&name, rows, cols, data);
    }
    Ok((params, meta))
}
