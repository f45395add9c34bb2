use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 8] = b"MIREEMB0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum EmbeddingKind {
    TextQuery = 0,
    Passage = 1,
    VisualPatch = 2,
    VisualGlobal = 3,
}

impl EmbeddingKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::TextQuery,
            1 => Self::Passage,
            2 => Self::VisualPatch,
            3 => Self::VisualGlobal,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextQuery => "text_query",
            Self::Passage => "passage",
            Self::VisualPatch => "visual_patch",
            Self::VisualGlobal => "visual_global",
        }
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sequence of `tokens` embedding vectors of dimension `dim`, stored
/// row-major as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    pub id: String,
    pub kind: EmbeddingKind,
    dim: usize,
    values: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(id: impl Into<String>, kind: EmbeddingKind, dim: usize, values: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if dim == 0 {
            return Err(Error::shape(format!("{id}: zero dimension")));
        }
        if values.len() % dim != 0 {
            return Err(Error::shape(format!(
                "{id}: {} values is not a multiple of dim {dim}",
                values.len()
            )));
        }
        if kind == EmbeddingKind::VisualGlobal && values.len() != dim {
            return Err(Error::shape(format!(
                "{id}: visual_global must hold exactly one token, got {}",
                values.len() / dim
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{id}: value {i}")));
        }
        Ok(Self { id, kind, dim, values })
    }

    pub fn from_rows(id: impl Into<String>, kind: EmbeddingKind, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("ragged token rows"));
        }
        Self::new(id, kind, dim, rows.concat())
    }

    pub fn from_matrix(id: impl Into<String>, kind: EmbeddingKind, m: &Matrix) -> Result<Self> {
        Self::new(id, kind, m.cols(), m.to_f32())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_f32(self.tokens(), self.dim, &self.values)
            .expect("token values are finite by construction")
    }

    /// Normalises every token to unit L2 norm. Returns the number of zero
    /// tokens, which are left unchanged.
    pub fn normalize(&mut self) -> usize {
        let mut degenerate = 0;
        for row in self.values.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
            } else {
                degenerate += 1;
            }
        }
        degenerate
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }
}

/// A homogeneous set of token matrices: same kind, same dimension, unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCollection {
    kind: EmbeddingKind,
    dim: usize,
    records: Vec<TokenMatrix>,
    id_index: HashMap<String, usize>,
}

impl EmbeddingCollection {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            records: Vec::new(),
            id_index: HashMap::new(),
        }
    }

    pub fn from_records(kind: EmbeddingKind, dim: usize, records: Vec<TokenMatrix>) -> Result<Self> {
        let mut c = Self::new(kind, dim);
        for r in records {
            c.push(r)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, record: TokenMatrix) -> Result<()> {
        if record.kind != self.kind {
            return Err(Error::shape(format!(
                "{}: kind {} in a {} collection",
                record.id, record.kind, self.kind
            )));
        }
        if record.dim != self.dim {
            return Err(Error::shape(format!(
                "{}: dim {} in a dim-{} collection",
                record.id, record.dim, self.dim
            )));
        }
        if self.id_index.contains_key(&record.id) {
            return Err(Error::param(format!("duplicate id {}", record.id)));
        }
        self.id_index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TokenMatrix] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TokenMatrix> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&TokenMatrix> {
        self.id_index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn total_tokens(&self) -> usize {
        self.records.iter().map(TokenMatrix::tokens).sum()
    }

    /// Normalises every token of every record in place.
    pub fn normalize(&mut self) -> usize {
        self.records.iter_mut().map(TokenMatrix::normalize).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .records
            .iter()
            .map(|r| 8 + r.id.len() + 4 * r.values.len())
            .sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            out.extend_from_slice(&(r.tokens() as u32).to_le_bytes());
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = cur.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(8, format!("unsupported format version {version}")));
        }
        let kind_byte = cur.take(1, "kind")?[0];
        let kind = EmbeddingKind::from_u8(kind_byte)
            .ok_or_else(|| Error::format(12, format!("unknown kind {kind_byte}")))?;
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::format(13, "dim must be positive"));
        }
        let count = cur.u64("count")?;
        let mut c = Self::new(kind, dim);
        for n in 0..count {
            let start = cur.pos as u64;
            let id_len = cur.u32("id length")? as usize;
            let id = std::str::from_utf8(cur.take(id_len, "id")?)
                .map_err(|_| Error::format(start + 4, "id is not UTF-8"))?
                .to_string();
            let tokens_at = cur.pos as u64;
            let tokens = cur.u32("token count")? as usize;
            if kind == EmbeddingKind::VisualGlobal && tokens != 1 {
                return Err(Error::format(
                    tokens_at,
                    format!("record {n} ({id}): visual_global with {tokens} tokens"),
                ));
            }
            let nbytes = tokens
                .checked_mul(dim)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| Error::format(tokens_at, "payload length overflows"))?;
            let raw = cur.take(nbytes, "token payload")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let record = TokenMatrix::new(id, kind, dim, values)
                .map_err(|e| Error::format(start, e.to_string()))?;
            c.push(record).map_err(|e| Error::format(start, e.to_string()))?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(
                cur.pos as u64,
                format!(
                    "{} trailing bytes after {count} declared records",
                    bytes.len() - cur.pos
                ),
            ));
        }
        Ok(c)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<'a> IntoIterator for &'a EmbeddingCollection {
    type Item = &'a TokenMatrix;
    type IntoIter = std::slice::Iter<'a, TokenMatrix>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn sample(n: usize, dim: usize, seed: u64) -> EmbeddingCollection {
        let mut rng = Rng::new(seed);
        let mut c = EmbeddingCollection::new(EmbeddingKind::Passage, dim);
        for i in 0..n {
            let tokens = 1 + rng.below(5);
            let values = (0..tokens * dim).map(|_| rng.normal() as f32).collect();
            c.push(TokenMatrix::new(format!("p{i}"), EmbeddingKind::Passage, dim, values).unwrap())
                .unwrap();
        }
        c
    }

    #[test]
    fn empty_round_trip() {
        let c = EmbeddingCollection::new(EmbeddingKind::TextQuery, 8);
        let back = EmbeddingCollection::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back, c);
    }

    #[test]
    fn single_record_round_trip() {
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let mut c = EmbeddingCollection::new(EmbeddingKind::Passage, 4);
        c.push(TokenMatrix::new("doc", EmbeddingKind::Passage, 4, values.clone()).unwrap())
            .unwrap();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 3 + 4 + 48);
        let back = EmbeddingCollection::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("doc").unwrap().values(), values.as_slice());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn thousand_records_byte_identical() {
        let c = sample(1000, 6, 17);
        let bytes = c.to_bytes();
        let back = EmbeddingCollection::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, c);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample(2, 3, 1).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingCollection::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_reports_offset() {
        let bytes = sample(3, 3, 2).to_bytes();
        let cut = bytes.len() - 2;
        match EmbeddingCollection::from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset as usize <= cut);
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample(3, 3, 2).to_bytes();
        bytes.push(0);
        assert!(matches!(
            EmbeddingCollection::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn visual_global_single_token() {
        assert!(TokenMatrix::new("g", EmbeddingKind::VisualGlobal, 2, vec![0.0; 4]).is_err());
        assert!(TokenMatrix::new("g", EmbeddingKind::VisualGlobal, 2, vec![0.0; 2]).is_ok());
    }

    #[test]
    fn dim_and_id_checks() {
        let mut c = EmbeddingCollection::new(EmbeddingKind::Passage, 4);
        let wrong = TokenMatrix::new("a", EmbeddingKind::Passage, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(c.push(wrong), Err(Error::Shape(_))));
        let ok = TokenMatrix::new("a", EmbeddingKind::Passage, 4, vec![0.0; 4]).unwrap();
        c.push(ok.clone()).unwrap();
        assert!(c.push(ok).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dim in 1usize..6,
            raw in proptest::collection::vec(proptest::collection::vec(any::<u32>(), 0..24), 0..12),
        ) {
            let mut c = EmbeddingCollection::new(EmbeddingKind::TextQuery, dim);
            for (i, bits) in raw.iter().enumerate() {
                let values: Vec<f32> = bits
                    .iter()
                    .map(|&b| f32::from_bits(b))
                    .filter(|v| v.is_finite())
                    .collect();
                let n = values.len() / dim * dim;
                c.push(TokenMatrix::new(format!("q{i}"), EmbeddingKind::TextQuery, dim, values[..n].to_vec()).unwrap()).unwrap();
            }
            let bytes = c.to_bytes();
            let back = EmbeddingCollection::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn length_disagreement_rejected(cut in 1usize..40) {
            let bytes = sample(4, 3, 9).to_bytes();
            let cut = cut.min(bytes.len() - 1);
            prop_assert!(EmbeddingCollection::from_bytes(&bytes[..bytes.len() - cut]).is_err());
        }
    }
}
