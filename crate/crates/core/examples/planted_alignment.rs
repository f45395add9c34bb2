//! Trains query-aware pooling on the planted benchmark and reports held-out
//! Recall@1, splitting errors into same-image siblings and other images.
//!
//! Usage: `planted_alignment [images] [epochs]` (defaults 576 and 5; the
//! last 64 images are held out).

use std::time::Instant;

use mire::embedding_io::{synth_planted_dataset, PlantedConfig};
use mire::late_interaction::maxsim_with_argmax;
use mire::qap::{assemble_query, Activation, PoolingDims, PoolingParams, Stage};
use mire::training::{alignment_recall, train_alignment, AlignmentDataset, TrainConfig};
use mire::{Error, Result};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> Result<T> {
    match std::env::args().nth(i) {
        Some(v) => v.parse().map_err(|_| Error::Param(format!("bad argument {v:?}"))),
        None => Ok(default),
    }
}

fn main() -> Result<()> {
    let images: usize = arg(1, 576)?;
    let epochs: u64 = arg(2, 5)?;
    if images < 65 {
        return Err(Error::Param("need more than 64 images".into()));
    }
    let cfg = PlantedConfig::alignment_benchmark(images, 7);
    let data = AlignmentDataset::from_planted(&synth_planted_dataset(&cfg)?)?;
    let per_image = cfg.concepts_per_image;
    let split = (images - 64) * per_image;
    let train = data.subset(0..split)?;
    let held = data.subset(split..images * per_image)?;

    let dims = PoolingDims::new(cfg.dim_v).with_text_dim(cfg.dim_t);
    let params = PoolingParams::init(dims, Activation::Silu, 0)?;
    println!("{} training queries, {} held-out passages", train.queries.len(), held.passages.len());
    println!("untrained R@1 {:.4}", alignment_recall(&params, &held, 1)?);

    let t = Instant::now();
    let out = train_alignment(&train, params, TrainConfig { epochs, ..TrainConfig::desk() }, 0, None)?;
    let means: Vec<String> = out.epoch_means.iter().map(|m| format!("{m:.3}")).collect();
    println!("epoch mean loss [{}] in {:.0}s", means.join(", "), t.elapsed().as_secs_f64());
    println!("trained R@1 {:.4}", alignment_recall(&out.params, &held, 1)?);

    // Passages of one image are contiguous, so the image is `index / per_image`.
    let (mut sibling, mut other) = (0, 0);
    for (i, q) in held.queries.iter().enumerate() {
        let tokens = assemble_query(q, &out.params, Stage::Alignment)?.tokens();
        let mut best = (0, f64::NEG_INFINITY);
        for (j, p) in held.passages.iter().enumerate() {
            let s = maxsim_with_argmax(&tokens, p)?.0;
            if s > best.1 {
                best = (j, s);
            }
        }
        let gold = held.gold[i][0];
        if best.0 != gold {
            if best.0 / per_image == gold / per_image {
                sibling += 1;
            } else {
                other += 1;
            }
        }
    }
    println!("errors: {sibling} same-image sibling, {other} other image");
    Ok(())
}
