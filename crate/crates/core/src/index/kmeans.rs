use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::late_interaction::dot_f32;
use crate::numerics::Rng;

/// Unit-norm cluster centres in token space.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    dim: usize,
    /// `k × dim`, row-major.
    vectors: Vec<f32>,
}

fn normalize(v: &mut [f32]) -> bool {
    let n = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if n == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / n) as f32;
    }
    true
}

impl Centroids {
    pub fn new(dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::shape(format!("{} values do not form centroids of dim {dim}", vectors.len())));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("centroid values".into()));
        }
        Ok(Self { dim, vectors })
    }

    pub fn k(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, c: usize) -> &[f32] {
        &self.vectors[c * self.dim..(c + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.vectors
    }

    /// Highest-dot centroid; the lower id wins ties.
    pub fn nearest(&self, v: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::NEG_INFINITY);
        for c in 0..self.k() {
            let s = dot_f32(v, self.row(c));
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }

    /// The `n` highest-dot centroids, best first, ties by id.
    pub fn top(&self, v: &[f32], n: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f32)> = (0..self.k()).map(|c| (c, dot_f32(v, self.row(c)))).collect();
        let n = n.min(scored.len());
        if n < scored.len() {
            scored.select_nth_unstable_by(n, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(n);
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().map(|(c, _)| c).collect()
    }
}

/// Spherical k-means (Lloyd iterations with max-dot assignment) over unit
/// tokens, stored flat with `dim` values each.
///
/// Seeds are `k` distinct tokens drawn with `seed`. A cluster left empty is
/// reseeded with the token currently worst served by its centroid. Stops
/// early once assignments no longer change.
pub fn train_centroids(tokens: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Result<Centroids> {
    if k == 0 {
        return Err(Error::param("number of centroids must be positive"));
    }
    if dim == 0 || tokens.len() % dim != 0 {
        return Err(Error::shape(format!("{} values are not a multiple of dim {dim}", tokens.len())));
    }
    let n = tokens.len() / dim;
    if n < k {
        return Err(Error::param(format!("{n} tokens cannot seed {k} centroids")));
    }
    let row = |i: usize| &tokens[i * dim..(i + 1) * dim];

    // Distinct seeds, so that no two centroids start (or stay) identical.
    let mut rng = Rng::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    for &i in &order {
        if seeds.iter().all(|&s| row(s) != row(i)) {
            seeds.push(i);
            if seeds.len() == k {
                break;
            }
        }
    }
    if seeds.len() < k {
        return Err(Error::param(format!("only {} distinct tokens for {k} centroids", seeds.len())));
    }
    let mut vectors: Vec<f32> = seeds.iter().flat_map(|&i| row(i).to_vec()).collect();
    for c in 0..k {
        normalize(&mut vectors[c * dim..(c + 1) * dim]);
    }
    let mut cents = Centroids { dim, vectors };

    let mut assign = vec![usize::MAX; n];
    for it in 0..iters.max(1) {
        let next: Vec<(usize, f32)> = (0..n).into_par_iter().map(|i| cents.nearest(row(i))).collect();
        let changed = next.iter().zip(&assign).filter(|((c, _), &a)| *c != a).count();
        for (a, (c, _)) in assign.iter_mut().zip(&next) {
            *a = *c;
        }
        if changed == 0 && it > 0 {
            break;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += f64::from(x);
            }
        }
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| next[a].1.total_cmp(&next[b].1).then(a.cmp(&b)));
        let mut worst = worst.into_iter();
        for c in 0..k {
            let out = &mut cents.vectors[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                for (o, &s) in out.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *o = s as f32;
                }
                if normalize(out) {
                    continue;
                }
            }
            // Empty (or cancelled-out) cluster: take over the farthest token.
            for i in worst.by_ref() {
                if counts[assign[i]] > 1 {
                    counts[assign[i]] -= 1;
                    out.copy_from_slice(row(i));
                    normalize(out);
                    assign[i] = c;
                    counts[c] = 1;
                    break;
                }
            }
        }
    }
    Ok(cents)
}
