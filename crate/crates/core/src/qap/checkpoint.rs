//! Checkpoint directory: `meta.json` plus `params.bin`.
//!
//! `params.bin` layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "MIREPRM0"
//! count    u32
//! count × { name_len u32, name UTF-8, rows u32, cols u32 }
//! tensors  Σ rows·cols × f64, in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, PoolingDims, PoolingParams};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TENSOR_MAGIC: &[u8; 8] = b"MIREPRM0";
pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: PoolingDims,
    pub activation: Activation,
    pub init_seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    #[serde(default)]
    pub epoch: u64,
}

/// Serialises named tensors.
pub fn encode_tensors(tensors: &[(String, &Matrix)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    }
    for (_, m) in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(self.at as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8, "magic")? != TENSOR_MAGIC {
        return Err(Error::format(0, "bad tensor-file magic"));
    }
    let count = c.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let at = c.at;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(at as u64, "tensor name is not UTF-8"))?
            .to_string();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        manifest.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(manifest.len());
    for (name, rows, cols) in manifest {
        let raw = c.take(rows * cols * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Matrix::new(rows, cols, data)?));
    }
    if c.at != bytes.len() {
        return Err(Error::format(c.at as u64, "trailing bytes after tensors"));
    }
    Ok(out)
}

fn param_tensors(params: &PoolingParams) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    for (name, l) in params.layers() {
        out.push((format!("{name}.weight"), l.weight.clone()));
        let b = Matrix::new(1, l.bias.len(), l.bias.clone()).expect("finite bias");
        out.push((format!("{name}.bias"), b));
    }
    out
}

pub fn write_tensor_file(path: &Path, tensors: &[(String, Matrix)]) -> Result<()> {
    let refs: Vec<(String, &Matrix)> = tensors.iter().map(|(n, m)| (n.clone(), m)).collect();
    fs::write(path, encode_tensors(&refs)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

pub fn save_checkpoint(dir: &Path, params: &PoolingParams, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor_file(&dir.join(PARAMS_FILE), &param_tensors(params))?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(PoolingParams, CheckpointMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut params = PoolingParams::zeros(meta.dims, meta.activation)?;
    let tensors = read_tensor_file(&dir.join(PARAMS_FILE))?;
    let expected = param_tensors(&params);
    if tensors.len() != expected.len() {
        return Err(Error::format(0, format!("expected {} tensors, found {}", expected.len(), tensors.len())));
    }
    let mut flat = Vec::with_capacity(params.param_count());
    for ((name, m), (want, w)) in tensors.iter().zip(&expected) {
        if name != want || m.shape() != w.shape() {
            return Err(Error::format(
                0,
                format!("tensor {name} {:?} does not match expected {want} {:?}", m.shape(), w.shape()),
            ));
        }
        flat.extend_from_slice(m.data());
    }
    params.load_flat(&flat)?;
    Ok((params, meta))
}
