use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension scalar quantizer for centroid residuals.
///
/// Each dimension has `2^bits` buckets bounded by quantiles of a training
/// sample; values decode to the mean of the sample values in their bucket,
/// the squared-error optimum for fixed boundaries. For any value inside the
/// sampled range the error is at most the distance from its bucket's
/// reconstruction value to the farther bucket edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualQuantizer {
    pub bits: u8,
    /// Per dimension: `2^bits + 1` ascending edges, from the sample minimum
    /// through the interior cut points to the sample maximum.
    pub edges: Vec<Vec<f32>>,
    /// Per dimension: `2^bits` reconstruction values, one per bucket.
    pub values: Vec<Vec<f32>>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f32], q: f64) -> f32 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = (pos - lo as f64) as f32;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

impl ResidualQuantizer {
    /// Fits bucket edges and reconstruction values on `sample` (flat, `dim`
    /// values per residual). An empty bucket reconstructs to its midpoint.
    pub fn fit(sample: &[f32], dim: usize, bits: u8) -> Result<Self> {
        if ![1, 2, 4, 8].contains(&bits) {
            return Err(Error::param(format!("bits must be 1, 2, 4 or 8, got {bits}")));
        }
        if dim == 0 || sample.is_empty() || sample.len() % dim != 0 {
            return Err(Error::shape("residual sample is empty or not a multiple of dim"));
        }
        let buckets = 1usize << bits;
        let n = sample.len() / dim;
        let mut edges = Vec::with_capacity(dim);
        let mut values = Vec::with_capacity(dim);
        let mut column = Vec::with_capacity(n);
        for d in 0..dim {
            column.clear();
            column.extend((0..n).map(|i| sample[i * dim + d]));
            column.sort_by(f32::total_cmp);
            let e: Vec<f32> = (0..=buckets).map(|b| quantile(&column, b as f64 / buckets as f64)).collect();
            values.push(
                e.windows(2)
                    .enumerate()
                    .map(|(b, w)| {
                        let inside: Vec<f32> = column
                            .iter()
                            .copied()
                            .filter(|&x| (b == 0 || x > w[0]) && (b == buckets - 1 || x <= w[1]))
                            .collect();
                        if inside.is_empty() {
                            0.5 * (w[0] + w[1])
                        } else {
                            (inside.iter().map(|&x| x as f64).sum::<f64>() / inside.len() as f64) as f32
                        }
                    })
                    .collect(),
            );
            edges.push(e);
        }
        Ok(Self { bits, edges, values })
    }

    pub fn dim(&self) -> usize {
        self.edges.len()
    }

    pub fn buckets(&self) -> usize {
        1 << self.bits
    }

    /// Bytes per encoded residual, `ceil(dim · bits / 8)`.
    pub fn code_len(&self) -> usize {
        (self.dim() * self.bits as usize).div_ceil(8)
    }

    /// Bucket of `x` in dimension `d`: the number of interior cut points
    /// strictly below it.
    pub fn bucket(&self, d: usize, x: f32) -> u8 {
        let e = &self.edges[d];
        e[1..e.len() - 1].iter().filter(|&&c| x > c).count() as u8
    }

    /// Per dimension, the largest distance from a reconstruction value to
    /// an edge of its bucket: the worst decode error inside the sampled
    /// range.
    pub fn error_bounds(&self) -> Vec<f32> {
        self.edges
            .iter()
            .zip(&self.values)
            .map(|(e, v)| e.windows(2).zip(v).map(|(w, &v)| (v - w[0]).max(w[1] - v)).fold(0.0, f32::max))
            .collect()
    }

    /// Packs bucket ids least-significant bits first.
    pub fn encode(&self, residual: &[f32]) -> Result<Vec<u8>> {
        if residual.len() != self.dim() {
            return Err(Error::shape(format!("residual of dim {} for quantizer of dim {}", residual.len(), self.dim())));
        }
        let bits = self.bits as usize;
        let mut out = vec![0u8; self.code_len()];
        for (d, &x) in residual.iter().enumerate() {
            let bit = d * bits;
            out[bit / 8] |= self.bucket(d, x) << (bit % 8);
        }
        Ok(out)
    }

    /// Writes the reconstructed residual into `out`.
    pub fn decode_into(&self, code: &[u8], out: &mut [f32]) {
        let bits = self.bits as usize;
        let mask = ((1u16 << bits) - 1) as u8;
        for (d, o) in out.iter_mut().enumerate().take(self.dim()) {
            let bit = d * bits;
            let b = (code[bit / 8] >> (bit % 8)) & mask;
            *o = self.values[d][b as usize];
        }
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = vec![0.0; self.dim()];
        self.decode_into(code, &mut out);
        out
    }
}
