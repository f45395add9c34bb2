//! Builds a centroid + 2-bit residual index, compares it with exact search
//! and round-trips it through disk.

use mire::embedding_io::{synth_clustered_corpus, ClusteredCorpusConfig};
use mire::index::{CompressedIndex, IndexConfig};
use mire::late_interaction::search_exact;

fn main() -> mire::Result<()> {
    let corpus = synth_clustered_corpus(&ClusteredCorpusConfig::new(1000, 128, 50, 2))?;
    let index = CompressedIndex::build(&corpus.passages, IndexConfig { k_centroids: Some(256), ..Default::default() })?;
    println!(
        "{} passages, {} centroids, residual mse {:.2e}",
        index.num_passages(),
        index.centroids.k(),
        index.report.mse
    );
    for nprobe in [1, 2, 4, 8, 32] {
        let mut overlap = 0.0;
        for q in corpus.queries.iter() {
            let exact = search_exact(q, &corpus.passages, 10)?;
            let want: Vec<&str> = exact.ids().collect();
            let got = index.search(q, 10, nprobe)?;
            overlap += got.ids().filter(|id| want.contains(id)).count() as f64 / 10.0;
        }
        println!("nprobe {nprobe:>2}: mean top-10 overlap {:.3}", overlap / corpus.queries.len() as f64);
    }
    let dir = std::env::temp_dir().join("mire-example-index");
    index.save(&dir)?;
    let loaded = CompressedIndex::load(&dir)?;
    let q = &corpus.queries.records()[0];
    assert_eq!(index.search(q, 10, 8)?, loaded.search(q, 10, 8)?);
    println!("saved to and reloaded from {}", dir.display());
    Ok(())
}
