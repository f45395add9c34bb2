//! Scores rankings with MRR@5, Recall@k and answer-based Pseudo-Recall@k.

use mire::eval::{evaluate, EvalConfig, EvalRecord, Gold, GoldMode, PassageTexts};
use mire::late_interaction::{RankedEntry, RankedList};

fn ranked(query: &str, ids: &[&str]) -> RankedList {
    RankedList {
        query_id: query.into(),
        entries: ids.iter().enumerate().map(|(i, id)| RankedEntry { passage_id: id.to_string(), score: -(i as f32) }).collect(),
        k: ids.len(),
        short: false,
        no_candidates: false,
    }
}

fn main() -> mire::Result<()> {
    let lists = [ranked("q1", &["p3", "p1", "p2"]), ranked("q2", &["p2", "p3", "p1"])];
    let by_id: Vec<EvalRecord> = lists
        .iter()
        .zip(["p1", "p2"])
        .map(|(l, g)| EvalRecord { query_id: l.query_id.clone(), ranked: l.clone(), gold: Gold::Passages(vec![g.into()]) })
        .collect();
    let config = EvalConfig { ks: vec![1, 2], ..Default::default() };
    print!("by passage id\n{}", evaluate(&by_id, None, &config)?.table());

    let texts: PassageTexts = [
        ("p1", "The bridge was completed in 1937."),
        ("p2", "Giraffes eat acacia leaves."),
        ("p3", "The tower is made of wrought iron."),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let by_answer: Vec<EvalRecord> = lists
        .iter()
        .zip(["1937", "wrought iron"])
        .map(|(l, a)| EvalRecord { query_id: l.query_id.clone(), ranked: l.clone(), gold: Gold::Answers(vec![a.into()]) })
        .collect();
    let config = EvalConfig { mode: GoldMode::Answer, ..config };
    print!("\nby answer string\n{}", evaluate(&by_answer, Some(&texts), &config)?.table());
    Ok(())
}
