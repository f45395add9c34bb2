//! A small synthetic knowledge base and dialogue set that exercise every
//! filter rule, multi-sentence truncation and the per-image cap.

use crate::embedding_io::{PassageRecord, RawQaLine};
use crate::numerics::Rng;

const SUBJECTS: &[&str] = &[
    "lighthouse", "glacier", "harbour", "cathedral", "volcano", "orchard", "canal", "windmill", "bridge", "desert",
    "reef", "castle", "market", "forest", "vineyard", "temple", "observatory", "railway", "quarry", "meadow",
];

const FACTS: &[&str] = &[
    "was built by Dr. Hale in the old style",
    "attracts visitors from St. Ives every summer",
    "is maintained by a small guild of volunteers",
    "appears on several regional postcards",
    "was restored after a long winter storm",
    "sits beside a narrow coastal road",
    "hosts an annual lantern festival",
    "is known for its copper weather vane",
    "was surveyed by Prof. Lin and her students",
    "has a museum devoted to local trade",
    "was painted by many travelling artists",
    "is reachable only by a ferry at dawn",
];

fn sentence(rng: &mut Rng, subject: &str) -> String {
    format!("The {subject} {}.", FACTS[rng.below(FACTS.len())])
}

/// `n` passages of three to six sentences each.
pub fn toy_knowledge_base(n: usize, seed: u64) -> Vec<PassageRecord> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let subject = SUBJECTS[i % SUBJECTS.len()];
            let len = 3 + rng.below(4);
            let text: Vec<String> = (0..len).map(|_| sentence(&mut rng, subject)).collect();
            PassageRecord { id: format!("kb{i:04}"), text: text.join(" "), answers: None }
        })
        .collect()
}

/// Dialogue turns about `images` images. Most images get a handful of
/// turns; every seventh gets fifteen, past the per-image cap.
pub fn toy_dialogues(images: usize, seed: u64) -> Vec<RawQaLine> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for img in 0..images {
        let turns = if img % 7 == 0 { 15 } else { 2 + rng.below(5) };
        for turn in 0..turns {
            let subject = SUBJECTS[rng.below(SUBJECTS.len())];
            let (query, response) = match rng.below(6) {
                0 => (format!("Is this a {subject}?"), if rng.below(2) == 0 { "Yes." } else { "no" }.to_string()),
                1 => (format!("How many people are near the {subject}?"), format!("{} people", 2 + rng.below(9))),
                2 => (format!("What is this {subject} called?"), format!("the old {subject}")),
                3 => (format!("Describe the {subject} in the image."), format!("a {subject}")),
                4 => (format!("Tell me about the {subject}."), format!("The {subject} {}", FACTS[rng.below(FACTS.len())])),
                _ => (format!("What happened to the {subject}?"), "it was rebuilt".to_string()),
            };
            out.push(RawQaLine { image_id: format!("img{img:04}"), query, response, turn });
        }
    }
    out
}
