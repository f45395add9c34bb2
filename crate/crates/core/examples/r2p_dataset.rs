//! Turns dialogue responses into retrieval passages over a toy knowledge
//! base with BM25.

use mire::r2p::toy::{toy_dialogues, toy_knowledge_base};
use mire::r2p::{run_pipeline, Bm25, R2pConfig};

fn main() -> mire::Result<()> {
    let kb = toy_knowledge_base(200, 1);
    let lines = toy_dialogues(40, 2).into_iter().enumerate().map(|(i, l)| (i + 1, Ok(l))).collect();
    let out = run_pipeline(lines, &kb, &Bm25::new(&kb)?, &R2pConfig::default())?;
    println!("{} turns in, {} passages out", out.stats.input, out.stats.output);
    for (reason, n) in &out.stats.dropped {
        println!("  dropped {reason}: {n}");
    }
    println!("  compensated simple responses: {}", out.stats.compensated);
    if let Some(r) = out.records.first() {
        println!("\n{} / {}: {}", r.query_id, r.image_id, r.query_text);
        println!("answer: {}", r.answers[0]);
        println!("passage ({}): {}", r.provenance.retrieved_ids.join(", "), r.passage);
    }
    Ok(())
}
