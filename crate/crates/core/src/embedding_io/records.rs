use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One knowledge-base passage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Detailed,
    Simple,
}

/// A question-response turn about one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub image_id: String,
    pub query_text: String,
    pub response_text: String,
    pub response_kind: ResponseKind,
    pub turn_index: usize,
}

impl QaRecord {
    /// Stable identifier of the source turn.
    pub fn source_id(&self) -> String {
        format!("{}:{}", self.image_id, self.turn_index)
    }
}

/// Line format of QA input files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQaLine {
    pub image_id: String,
    pub query: String,
    pub response: String,
    #[serde(default)]
    pub turn: usize,
}

/// Query → passage relevance pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldPair {
    pub query_id: String,
    pub passage_id: String,
}

/// Query → image link for multimodal queries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryImage {
    pub query_id: String,
    pub image_id: String,
}

/// Reads every line of a JSONL file, failing on the first malformed line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    read_jsonl_lenient(path)?
        .into_iter()
        .map(|(line, r)| {
            r.map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })
        })
        .collect()
}

/// Reads a JSONL file, keeping per-line parse failures as values.
/// Blank lines are skipped. Line numbers are 1-based.
pub fn read_jsonl_lenient<T: DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<(usize, std::result::Result<T, String>)>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| e.to_string())));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let recs = vec![
            PassageRecord { id: "a".into(), text: "Alpha.".into(), answers: None },
            PassageRecord { id: "b".into(), text: "Beta.".into(), answers: Some(vec!["beta".into()]) },
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<PassageRecord>(&path).unwrap(), recs);

        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\n\nnot json\n").unwrap();
        match read_jsonl::<PassageRecord>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_jsonl::<GoldPair>("/nonexistent/gold.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/gold.jsonl"));
        assert!(err.is_input_error());
    }
}
