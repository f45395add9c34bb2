//! Exact late-interaction search over a synthetic clustered corpus.

use mire::embedding_io::{synth_clustered_corpus, ClusteredCorpusConfig};
use mire::late_interaction::{maxsim, search_exact};

fn main() -> mire::Result<()> {
    let corpus = synth_clustered_corpus(&ClusteredCorpusConfig::new(500, 64, 20, 1))?;
    let mut hits = 0;
    for (query, &source) in corpus.queries.iter().zip(&corpus.sources) {
        let ranked = search_exact(query, &corpus.passages, 5)?;
        let want = &corpus.passages.records()[source].id;
        hits += usize::from(ranked.entries[0].passage_id == *want);
        if query.id == corpus.queries.records()[0].id {
            println!("query {} (drawn from {want}):", query.id);
            for (rank, e) in ranked.entries.iter().enumerate() {
                println!("  {} {} {:.4}", rank + 1, e.passage_id, e.score);
            }
            let direct = maxsim(query, &corpus.passages.records()[source])?;
            println!("  maxsim against its source passage: {:.4}", direct.score);
        }
    }
    println!("source passage ranked first for {hits}/{} queries", corpus.queries.len());
    Ok(())
}
