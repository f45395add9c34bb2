use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::text::{extract_nouns, word_tokens};
use super::R2pConfig;
use crate::embedding_io::{QaRecord, RawQaLine, ResponseKind};

/// Responses that only affirm or negate.
pub const AFFIRMATIONS: &[&str] = &["yes", "no", "yeah", "yep", "nope", "yes it is", "no it is not", "no it isn't"];

/// Query phrases marking counting and localisation tasks, which have no
/// knowledge to retrieve. Matched as whole-word substrings of the
/// lowercased query.
pub const IRRELEVANT_QUERY_PATTERNS: &[&str] = &[
    "how many",
    "what number of",
    "count the",
    "where is",
    "where are",
    "where was",
    "where were",
    "which side",
    "what side",
    "what position",
    "in which part",
    "what part of the image",
    "what part of the picture",
    "left or right",
    "top or bottom",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Malformed,
    EmptyResponse,
    Affirmation,
    IrrelevantTask,
    ShortDetailed,
    ImageCap,
}

impl DropReason {
    pub const ALL: [DropReason; 6] = [
        DropReason::Malformed,
        DropReason::EmptyResponse,
        DropReason::Affirmation,
        DropReason::IrrelevantTask,
        DropReason::ShortDetailed,
        DropReason::ImageCap,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DropReason::Malformed => "malformed",
            DropReason::EmptyResponse => "empty_response",
            DropReason::Affirmation => "affirmation",
            DropReason::IrrelevantTask => "irrelevant_task",
            DropReason::ShortDetailed => "short_detailed",
            DropReason::ImageCap => "image_cap",
        }
    }
}

/// A surviving record and the 1-based input line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourcedRecord {
    pub line: usize,
    pub record: QaRecord,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Filtered {
    pub records: Vec<SourcedRecord>,
    pub input: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

/// Simple responses have at most this many word tokens.
pub const SIMPLE_MAX_WORDS: usize = 3;

pub fn classify(response: &str) -> ResponseKind {
    if word_tokens(response).len() <= SIMPLE_MAX_WORDS {
        ResponseKind::Simple
    } else {
        ResponseKind::Detailed
    }
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

fn is_count(response_words: &[String]) -> bool {
    const NUMBERS: &[&str] = &[
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    ];
    response_words.len() == 1
        && (response_words[0].chars().all(|c| c.is_ascii_digit()) || NUMBERS.contains(&response_words[0].as_str()))
}

/// Why a single record would be dropped on content grounds, if at all.
pub fn content_drop(raw: &RawQaLine, config: &R2pConfig) -> Option<DropReason> {
    let response = raw.response.trim();
    let words = word_tokens(response);
    if words.is_empty() {
        return Some(DropReason::EmptyResponse);
    }
    let joined = words.join(" ");
    if AFFIRMATIONS.contains(&joined.as_str()) {
        return Some(DropReason::Affirmation);
    }
    let query = word_tokens(&raw.query);
    let irrelevant = config.irrelevant_patterns.iter().any(|p| contains_phrase(&query, &word_tokens(p)));
    if irrelevant || is_count(&words) {
        return Some(DropReason::IrrelevantTask);
    }
    if classify(response) == ResponseKind::Detailed && response.chars().count() < config.min_detailed_len {
        return Some(DropReason::ShortDetailed);
    }
    None
}

/// Drops malformed, affirmation-only, retrieval-irrelevant and short
/// detailed records, then keeps at most `max_pairs_per_image` per image
/// (earliest turns first, input order among equal turns).
pub fn filter_and_classify(
    lines: Vec<(usize, std::result::Result<RawQaLine, String>)>,
    config: &R2pConfig,
) -> Filtered {
    let input = lines.len();
    let mut dropped: BTreeMap<DropReason, usize> = DropReason::ALL.iter().map(|&r| (r, 0)).collect();
    let mut kept: Vec<(usize, RawQaLine)> = Vec::new();
    for (line, r) in lines {
        match r {
            Err(msg) => {
                log::warn!("qa line {line}: {}: {msg}", DropReason::Malformed.code());
                *dropped.get_mut(&DropReason::Malformed).unwrap() += 1;
            }
            Ok(raw) => match content_drop(&raw, config) {
                Some(reason) => {
                    log::debug!("qa line {line}: {}", reason.code());
                    *dropped.get_mut(&reason).unwrap() += 1;
                }
                None => kept.push((line, raw)),
            },
        }
    }

    // Per-image cap over the content-filtered records.
    let mut by_image: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (i, (_, raw)) in kept.iter().enumerate() {
        by_image.entry(raw.image_id.as_str()).or_default().push((raw.turn, i));
    }
    let mut keep = vec![true; kept.len()];
    for turns in by_image.values_mut() {
        turns.sort_unstable();
        for &(_, i) in turns.iter().skip(config.max_pairs_per_image) {
            keep[i] = false;
        }
    }
    let mut records = Vec::with_capacity(kept.len());
    for ((line, raw), k) in kept.into_iter().zip(keep) {
        if !k {
            log::debug!("qa line {line}: {}", DropReason::ImageCap.code());
            *dropped.get_mut(&DropReason::ImageCap).unwrap() += 1;
            continue;
        }
        let response = raw.response.trim().to_string();
        let query: Vec<&str> = raw.query.split_whitespace().take(config.max_query_tokens).collect();
        records.push(SourcedRecord {
            line,
            record: QaRecord {
                image_id: raw.image_id,
                query_text: query.join(" "),
                response_kind: classify(&response),
                response_text: response,
                turn_index: raw.turn,
            },
        });
    }
    Filtered { records, input, dropped }
}

/// Separator between a simple response and its appended query nouns.
pub const COMPENSATION_SEPARATOR: &str = " — ";

/// Appends the query's nouns to a simple response. Returns the record and
/// whether compensation was impossible (no nouns found); detailed records
/// pass through untouched.
pub fn compensate_simple(record: &QaRecord) -> (QaRecord, bool) {
    if record.response_kind != ResponseKind::Simple {
        return (record.clone(), false);
    }
    let have = word_tokens(&record.response_text);
    let nouns: Vec<String> = extract_nouns(&record.query_text).into_iter().filter(|n| !have.contains(n)).collect();
    if nouns.is_empty() {
        return (record.clone(), true);
    }
    let mut out = record.clone();
    out.response_text = format!("{}{}{}", record.response_text, COMPENSATION_SEPARATOR, nouns.join(", "));
    (out, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(image: &str, query: &str, response: &str, turn: usize) -> RawQaLine {
        RawQaLine { image_id: image.into(), query: query.into(), response: response.into(), turn }
    }

    fn run(lines: Vec<RawQaLine>) -> Filtered {
        filter_and_classify(lines.into_iter().enumerate().map(|(i, r)| (i + 1, Ok(r))).collect(), &R2pConfig::default())
    }

    #[test]
    fn affirmations_dropped() {
        let f = run(vec![
            raw("a", "Is it red?", "yes", 0),
            raw("a", "Is it red?", "No.", 1),
            raw("a", "What is it?", "a fire truck", 2),
        ]);
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.dropped[&DropReason::Affirmation], 2);
    }

    #[test]
    fn image_cap_keeps_earliest_turns() {
        let lines: Vec<RawQaLine> =
            (0..13).rev().map(|t| raw("img", "What is the animal?", &format!("zebra {t}x"), t)).collect();
        let f = run(lines);
        assert_eq!(f.records.len(), 12);
        assert_eq!(f.dropped[&DropReason::ImageCap], 1);
        assert!(f.records.iter().all(|r| r.record.turn_index < 12));
        // Surviving records stay in input order.
        assert!(f.records.windows(2).all(|w| w[0].line < w[1].line));
    }

    #[test]
    fn detailed_length_boundary() {
        let r29 = "This is a response of 29 char";
        let r30 = "This is a response of 30 chars";
        assert_eq!((r29.len(), r30.len()), (29, 30));
        let f = run(vec![raw("a", "Tell me about it.", r29, 0), raw("a", "Tell me about it.", r30, 1)]);
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.records[0].record.response_text, r30);
        assert_eq!(f.dropped[&DropReason::ShortDetailed], 1);
    }

    #[test]
    fn simple_kept_regardless_of_length() {
        let f = run(vec![raw("a", "What breed is the dog?", "a labrador", 0)]);
        assert_eq!(f.records[0].record.response_kind, ResponseKind::Simple);
    }

    #[test]
    fn counts_and_locations_dropped() {
        let f = run(vec![
            raw("a", "How many people are there?", "three people in total", 0),
            raw("a", "Where is the cat?", "on the mat near the door", 1),
            raw("a", "What is the number on the bus?", "42", 2),
            raw("a", "What is the name of this bridge?", "golden gate bridge", 3),
        ]);
        assert_eq!(f.dropped[&DropReason::IrrelevantTask], 3);
        assert_eq!(f.records.len(), 1);
    }

    #[test]
    fn malformed_and_conservation() {
        let lines = vec![
            (1, Ok(raw("a", "What is shown?", "a lighthouse", 0))),
            (2, Err("bad json".to_string())),
            (3, Ok(raw("a", "What is shown?", "   ", 1))),
        ];
        let f = filter_and_classify(lines, &R2pConfig::default());
        assert_eq!(f.dropped[&DropReason::Malformed], 1);
        assert_eq!(f.dropped[&DropReason::EmptyResponse], 1);
        assert_eq!(f.input - f.dropped.values().sum::<usize>(), f.records.len());
    }

    #[test]
    fn query_truncated_to_token_limit() {
        let long: String = (0..200).map(|i| format!("w{i} ")).collect();
        let config = R2pConfig::default();
        let f = filter_and_classify(vec![(1, Ok(raw("a", &long, "a lighthouse", 0)))], &config);
        assert_eq!(f.records[0].record.query_text.split(' ').count(), config.max_query_tokens);
    }

    #[test]
    fn compensation() {
        let rec = QaRecord {
            image_id: "i".into(),
            query_text: "What breed is the dog in the park?".into(),
            response_text: "a labrador".into(),
            response_kind: ResponseKind::Simple,
            turn_index: 0,
        };
        let (out, flag) = compensate_simple(&rec);
        assert_eq!(out.response_text, "a labrador — dog, park");
        assert!(!flag);

        let detailed = QaRecord { response_kind: ResponseKind::Detailed, ..rec.clone() };
        assert_eq!(compensate_simple(&detailed), (detailed.clone(), false));

        let bare = QaRecord { query_text: "What is that?".into(), ..rec };
        let (out, flag) = compensate_simple(&bare);
        assert_eq!(out, bare);
        assert!(flag);
    }
}
