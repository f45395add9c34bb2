//! Index directory layout (binary files little-endian):
//!
//! ```text
//! centroids.bin  "MIRECEN0", k u32, dim u32, k·dim × f32
//! codes.bin      "MIRECOD0", tokens u64, code_len u32,
//!                tokens × centroid u32, tokens·code_len bytes
//! postings.bin   "MIREPST0", passages u32,
//!                passages × { id_len u32, id UTF-8, token_count u32 },
//!                k u32, k × { len u32, len × (passage u32, offset u32) }
//! meta.json      format_version, k, dim, bits, buckets, build config
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Centroids, CompressedIndex, EncodeReport, IndexConfig, InvertedIndex, ResidualCodes, ResidualQuantizer};
use crate::error::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const CENTROID_MAGIC: &[u8; 8] = b"MIRECEN0";
const CODES_MAGIC: &[u8; 8] = b"MIRECOD0";
const POSTINGS_MAGIC: &[u8; 8] = b"MIREPST0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    pub k: usize,
    pub dim: usize,
    pub num_passages: usize,
    pub num_tokens: usize,
    pub quantizer: ResidualQuantizer,
    pub config: IndexConfig,
    pub report: EncodeReport,
}

struct Reader<'a> {
    file: &'a str,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(file: &'a str, bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Self { file, bytes, at: 0 };
        if r.take(8)? != magic {
            return Err(Error::format(0, format!("{file}: bad magic")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(self.at as u64, format!("{}: truncated", self.file)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::format(self.at as u64, format!("{}: trailing bytes", self.file)));
        }
        Ok(())
    }
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let p = dir.join(name);
    fs::read(&p).map_err(|e| Error::io(p, e))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

impl CompressedIndex {
    pub fn meta(&self) -> IndexMeta {
        IndexMeta {
            format_version: INDEX_FORMAT_VERSION,
            k: self.centroids.k(),
            dim: self.dim(),
            num_passages: self.num_passages(),
            num_tokens: self.codes.len(),
            quantizer: self.codes.quantizer.clone(),
            config: self.config,
            report: self.report,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut c = CENTROID_MAGIC.to_vec();
        c.extend_from_slice(&(self.centroids.k() as u32).to_le_bytes());
        c.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.centroids.values() {
            c.extend_from_slice(&v.to_le_bytes());
        }
        write(dir, "centroids.bin", &c)?;

        let mut b = CODES_MAGIC.to_vec();
        b.extend_from_slice(&(self.codes.len() as u64).to_le_bytes());
        b.extend_from_slice(&(self.codes.code_len() as u32).to_le_bytes());
        for id in &self.codes.centroid_ids {
            b.extend_from_slice(&id.to_le_bytes());
        }
        b.extend_from_slice(&self.codes.codes);
        write(dir, "codes.bin", &b)?;

        let inv = &self.inverted;
        let mut p = POSTINGS_MAGIC.to_vec();
        p.extend_from_slice(&(inv.num_passages() as u32).to_le_bytes());
        for (id, &n) in inv.passage_ids.iter().zip(&inv.token_counts) {
            p.extend_from_slice(&(id.len() as u32).to_le_bytes());
            p.extend_from_slice(id.as_bytes());
            p.extend_from_slice(&n.to_le_bytes());
        }
        p.extend_from_slice(&(inv.postings.len() as u32).to_le_bytes());
        for list in &inv.postings {
            p.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &(pid, off) in list {
                p.extend_from_slice(&pid.to_le_bytes());
                p.extend_from_slice(&off.to_le_bytes());
            }
        }
        write(dir, "postings.bin", &p)?;

        write(dir, "meta.json", serde_json::to_string_pretty(&self.meta())?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_bytes = read(dir, "meta.json")?;
        let meta: IndexMeta = serde_json::from_slice(&meta_bytes)?;
        if meta.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::format(0, format!("unsupported index format version {}", meta.format_version)));
        }

        let bytes = read(dir, "centroids.bin")?;
        let mut r = Reader::new("centroids.bin", &bytes, CENTROID_MAGIC)?;
        let (k, dim) = (r.u32()? as usize, r.u32()? as usize);
        if (k, dim) != (meta.k, meta.dim) {
            return Err(Error::format(8, "centroids.bin disagrees with meta.json"));
        }
        let raw = r.take(k * dim * 4)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        r.finish()?;
        let centroids = Centroids::new(dim, values)?;

        let bytes = read(dir, "codes.bin")?;
        let mut r = Reader::new("codes.bin", &bytes, CODES_MAGIC)?;
        let n = r.u64()? as usize;
        let code_len = r.u32()? as usize;
        if n != meta.num_tokens || code_len != meta.quantizer.code_len() {
            return Err(Error::format(8, "codes.bin disagrees with meta.json"));
        }
        let ids: Vec<u32> = r.take(n * 4)?.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        if ids.iter().any(|&c| c as usize >= k) {
            return Err(Error::format(20, "codes.bin: centroid id out of range"));
        }
        let codes = r.take(n * code_len)?.to_vec();
        r.finish()?;

        let bytes = read(dir, "postings.bin")?;
        let mut r = Reader::new("postings.bin", &bytes, POSTINGS_MAGIC)?;
        let np = r.u32()? as usize;
        let mut passage_ids = Vec::with_capacity(np.min(1 << 20));
        let mut token_counts = Vec::with_capacity(np.min(1 << 20));
        for _ in 0..np {
            let len = r.u32()? as usize;
            let at = r.at;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(at as u64, "postings.bin: passage id is not UTF-8"))?;
            passage_ids.push(id.to_string());
            token_counts.push(r.u32()?);
        }
        let kp = r.u32()? as usize;
        if kp != k {
            return Err(Error::format(r.at as u64, "postings.bin: list count differs from k"));
        }
        let mut postings = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.u32()? as usize;
            let raw = r.take(len * 8)?;
            postings.push(
                raw.chunks_exact(8)
                    .map(|b| {
                        (u32::from_le_bytes(b[..4].try_into().unwrap()), u32::from_le_bytes(b[4..].try_into().unwrap()))
                    })
                    .collect(),
            );
        }
        r.finish()?;
        let inverted = InvertedIndex::new(passage_ids, token_counts, postings)?;
        if inverted.total_tokens() != n || inverted.num_passages() != meta.num_passages {
            return Err(Error::format(0, "postings.bin disagrees with codes.bin"));
        }
        Ok(Self {
            config: meta.config,
            centroids,
            codes: ResidualCodes { quantizer: meta.quantizer, centroid_ids: ids, codes },
            inverted,
            report: meta.report,
        })
    }
}
