//! The command chain behind the `mire` binary, run in a temporary
//! directory: synthesize → build-dataset → embed → train-align →
//! build-index → search → eval.

use mire::commands::*;
use mire::eval::GoldMode;

fn main() -> mire::Result<()> {
    let root = std::env::temp_dir().join("mire-example-pipeline");
    let p = |s: &str| root.join(s);
    println!("{}", cmd_synth(&SynthArgs { kind: SynthKind::R2pToy, out: p("toy"), size: 120, secondary: 40, dim_t: 8, dim_v: 8, seed: 1 })?);
    let stats = cmd_build_dataset(&BuildDatasetArgs { qa: p("toy/qa.jsonl"), kb: p("toy/kb.jsonl"), config: None, k: None, out: p("ds.jsonl") })?;
    println!("{} constructed pairs", stats.output);
    println!("{}", cmd_embed(&EmbedArgs { dataset: p("ds.jsonl"), out: p("emb"), dim_t: 32, dim_v: 32, patches: 16, max_passage_tokens: 64 })?);
    let summary = cmd_train_align(&TrainAlignArgs {
        dataset: p("emb"),
        config: None,
        out: p("ck"),
        resume: None,
        lr: Some(1e-3),
        epochs: Some(2),
        batch_size: Some(16),
        warmup: Some(4),
        temperature: None,
        seed: None,
        init_seed: None,
        epoch_checkpoints: false,
    })?;
    println!("trained {} steps, epoch loss {:?} -> {:?}", summary.steps, summary.first_epoch_loss, summary.last_epoch_loss);
    println!(
        "{}",
        cmd_build_index(&BuildIndexArgs {
            corpus: p("emb/passages.emb"),
            out: p("idx"),
            centroids: None,
            bits: 2,
            seed: 0,
            kmeans_iters: 20,
            sample_size: 100_000,
        })?
    );
    cmd_search(&SearchArgs {
        queries: p("emb"),
        corpus: None,
        index: Some(p("idx")),
        exact: false,
        compressed: true,
        k: 10,
        nprobe: 8,
        checkpoint: Some(p("ck")),
        text_only: false,
        out: p("ranked.tsv"),
    })?;
    let report = cmd_eval(&EvalArgs {
        ranked: p("ranked.tsv"),
        gold: p("emb/answers.jsonl"),
        mode: GoldMode::Answer,
        passages: Some(p("emb/passages.jsonl")),
        ks: vec![1, 5, 10],
        word_boundary: false,
        out: p("report.json"),
    })?;
    print!("{}", report.table());
    println!("outputs in {}", root.display());
    Ok(())
}
