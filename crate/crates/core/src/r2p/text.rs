//! Dependency-free text heuristics: word tokens, sentence splitting and
//! query noun extraction.

/// Abbreviations whose trailing period never ends a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "mt", "jr", "sr", "vs", "etc", "no", "inc", "ltd", "co", "corp", "e.g",
    "i.e", "u.s", "u.k", "approx", "fig", "gen", "col", "lt", "sgt", "rev", "jan", "feb", "aug", "sept", "oct", "nov",
    "dec",
];

/// Lowercased alphanumeric runs (apostrophes kept inside words).
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || (ch == '\'' && !cur.is_empty()) {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur).trim_end_matches('\'').to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur.trim_end_matches('\'').to_string());
    }
    out
}

fn is_abbreviation(text: &str, dot: usize) -> bool {
    let head = &text[..dot];
    let word = head.rsplit(|c: char| c.is_whitespace() || c == '(' || c == '"').next().unwrap_or("");
    let word = word.to_lowercase();
    // Single initials such as "J." in "J. Smith".
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits on `.`, `?` or `!` followed by whitespace and an uppercase
/// letter, unless the period ends a known abbreviation. Sentences keep
/// their terminal punctuation and are trimmed.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, ch)) in chars.iter().enumerate() {
        if !matches!(ch, '.' | '?' | '!') {
            continue;
        }
        let mut j = i + 1;
        // Closing quotes or brackets stay with the sentence.
        while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']') {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |c| c.0);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k >= chars.len() || !chars[k].1.is_uppercase() {
            continue;
        }
        if ch == '.' && is_abbreviation(text, pos) {
            continue;
        }
        let s = text[start..end].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = chars[k].0;
    }
    let s = text[start..].trim();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

/// First `n` sentences joined by single spaces, with internal whitespace
/// collapsed.
pub fn truncate_sentences(text: &str, n: usize) -> String {
    split_sentences(text)
        .into_iter()
        .take(n)
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(" ")
}

pub const WH_WORDS: &[&str] = &["what", "which", "who", "whom", "whose", "where", "when", "why", "how"];

pub const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "has", "have", "had", "can",
    "could", "will", "would", "shall", "should", "may", "might", "must", "'s",
];

pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "there", "here", "it", "its", "they", "them", "their", "he",
    "she", "his", "her", "him", "we", "us", "our", "you", "your", "i", "me", "my", "of", "in", "on", "at", "to",
    "for", "from", "by", "with", "about", "into", "onto", "over", "under", "near", "behind", "between", "and", "or",
    "but", "not", "no", "yes", "if", "as", "than", "then", "so", "such", "very", "some", "any", "all", "each",
    "every", "other", "another", "one", "ones", "kind", "type", "sort", "any", "picture", "image", "photo", "shown",
    "visible", "seen", "please", "also", "just", "only", "s",
];

/// Common verbs in visual questions; anything here is never a noun.
pub const VERBS: &[&str] = &[
    "see", "look", "looks", "looking", "show", "shows", "showing", "hold", "holds", "holding", "wear", "wears",
    "wearing", "sit", "sits", "sitting", "stand", "stands", "standing", "make", "made", "makes", "use", "used",
    "uses", "using", "call", "called", "play", "playing", "eat", "eating", "ride", "riding", "go", "going", "get",
    "doing", "happen", "happened", "happens", "happening", "mean", "say", "says", "written", "write", "depict", "depicted", "describe",
    "identify", "tell", "find", "belong", "belongs", "known", "name", "named",
];

/// Heuristic content nouns of a question, in order of first appearance.
///
/// A leading wh-phrase is removed up to and including its first
/// auxiliary (so "What breed is the dog" keeps only "the dog"); then
/// stopwords, auxiliaries, verbs and numbers are dropped.
pub fn extract_nouns(query: &str) -> Vec<String> {
    let tokens = word_tokens(query);
    let mut start = 0;
    if tokens.first().is_some_and(|t| WH_WORDS.contains(&t.as_str())) {
        start = tokens.iter().position(|t| AUXILIARIES.contains(&t.as_str())).map_or(1, |p| p + 1);
    }
    let mut out: Vec<String> = Vec::new();
    for t in &tokens[start.min(tokens.len())..] {
        let w = t.as_str();
        if w.len() < 2
            || w.chars().all(|c| c.is_ascii_digit())
            || STOPWORDS.contains(&w)
            || AUXILIARIES.contains(&w)
            || WH_WORDS.contains(&w)
            || VERBS.contains(&w)
        {
            continue;
        }
        if !out.iter().any(|o| o == w) {
            out.push(w.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        assert_eq!(word_tokens("The dog's ball, 3 times!"), vec!["the", "dog's", "ball", "3", "times"]);
        assert!(word_tokens("  ...  ").is_empty());
    }

    #[test]
    fn sentences() {
        let t = "Dr. Smith moved to St. Louis in 1990. He liked it! Did he stay? yes. No doubt.";
        assert_eq!(
            split_sentences(t),
            vec!["Dr. Smith moved to St. Louis in 1990.", "He liked it!", "Did he stay? yes.", "No doubt."]
        );
        assert_eq!(split_sentences("No terminal punctuation"), vec!["No terminal punctuation"]);
        assert_eq!(split_sentences("J. R. R. Tolkien wrote it. Then more."), vec!["J. R. R. Tolkien wrote it.", "Then more."]);
        assert_eq!(split_sentences("He said \"Go.\" Then left."), vec!["He said \"Go.\"", "Then left."]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn truncation() {
        let t = "One.  Two\nlines. Three. Four. Five.";
        assert_eq!(truncate_sentences(t, 3), "One. Two lines. Three.");
        assert_eq!(truncate_sentences("Short.", 3), "Short.");
        assert_eq!(split_sentences(&truncate_sentences(t, 3)).len(), 3);
    }

    #[test]
    fn nouns_from_question() {
        assert_eq!(extract_nouns("What breed is the dog in the park?"), vec!["dog", "park"]);
        assert_eq!(extract_nouns("Which team does the player on the left play for?"), vec!["player", "left"]);
        assert_eq!(extract_nouns("Is this a stop sign?"), vec!["stop", "sign"]);
        assert!(extract_nouns("What is it?").is_empty());
        assert!(extract_nouns("").is_empty());
    }
}
