use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Indices into the dataset: query `items[i]` has positive passage
/// `positives[i]`, and every other passage of the batch is a negative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBatch {
    pub items: Vec<usize>,
    pub positives: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

const POSITIVE_STREAM: u64 = 1 << 40;

/// Picks one gold passage per query for `epoch`, uniformly when a query has
/// several.
pub fn sample_positives(gold: &[Vec<usize>], seed: u64, epoch: u64) -> Result<Vec<usize>> {
    let mut rng = Rng::new(seed).fork(POSITIVE_STREAM + epoch);
    gold.iter()
        .enumerate()
        .map(|(i, g)| match g.len() {
            0 => Err(Error::param(format!("query {i} has no gold passage"))),
            1 => Ok(g[0]),
            n => Ok(g[rng.below(n)]),
        })
        .collect()
}

/// Shuffles items for `epoch` and cuts them into batches of `batch_size`,
/// dropping the final partial batch. A positive that already occurs in the
/// batch being filled is swapped with the next later item whose positive
/// does not; a batch that cannot be completed this way is rejected.
pub fn make_batches(positives: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<TrainBatch>> {
    if batch_size < 2 {
        return Err(Error::param("batch size must be at least 2"));
    }
    if positives.len() < batch_size {
        return Err(Error::param(format!(
            "dataset has {} items, fewer than the batch size {batch_size}",
            positives.len()
        )));
    }
    let n = positives.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).fork(epoch).shuffle(&mut order);

    let mut batches = Vec::with_capacity(n / batch_size);
    for start in (0..n).step_by(batch_size) {
        if start + batch_size > n {
            break;
        }
        let mut seen = HashSet::with_capacity(batch_size);
        let mut complete = true;
        for p in start..start + batch_size {
            if seen.contains(&positives[order[p]]) {
                match (p + 1..n).find(|&q| !seen.contains(&positives[order[q]])) {
                    Some(q) => order.swap(p, q),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            seen.insert(positives[order[p]]);
        }
        if !complete {
            log::warn!("epoch {epoch}: batch at offset {start} has unavoidable duplicate positives; skipped");
            continue;
        }
        let items = order[start..start + batch_size].to_vec();
        let pos = items.iter().map(|&i| positives[i]).collect();
        batches.push(TrainBatch { items, positives: pos });
    }
    Ok(batches)
}
