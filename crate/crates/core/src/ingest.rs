//! Chooses the chat and evaluation examples from the rows of an uploaded file.
//!
//! Decoding CSV/JSONL bytes into [`Row`]s happens in the service crate; this
//! module owns the selection policy so it stays deterministic and testable.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CHAT_EXAMPLES: usize = 3;
pub const MAX_EVAL_EXAMPLES: usize = 8;
pub const MAX_EXAMPLE_CHARS: usize = 8000;
pub const PREVIEW_MARKER: &str = "…";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_filename(name: &str) -> Option<Self> {
        let ext = name.rsplit_once('.')?.1.to_ascii_lowercase();
        match ext.as_str() {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Chat,
    Eval,
}

impl Split {
    pub fn parse(value: &str) -> Option<Self> {
        match value.trim() {
            "chat" => Some(Split::Chat),
            "eval" => Some(Split::Eval),
            _ => None,
        }
    }
}

/// One decoded data row. `row` is the 1-based data row number in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub row: usize,
    pub text: String,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub filename: String,
    pub format: DataFormat,
    pub total_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserData {
    pub chat_examples: Vec<String>,
    pub eval_examples: Vec<String>,
    /// Row numbers the chat examples came from, parallel to `chat_examples`.
    pub chat_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    pub source: SourceInfo,
    pub selection_seed: u64,
}

impl UserData {
    /// Chat example `n` (1-based).
    pub fn chat_example(&self, n: u8) -> Option<&str> {
        let idx = usize::from(n).checked_sub(1)?;
        self.chat_examples.get(idx).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("the file has no data rows")]
    EmptyFile,
    #[error("at least {CHAT_EXAMPLES} non-empty examples are needed, found {found}")]
    FewerThanThreeExamples { found: usize },
    #[error("no `text` column or field")]
    MissingTextColumn,
    #[error("row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("row {row} has {chars} characters, above the limit of {MAX_EXAMPLE_CHARS}")]
    ExampleTooLong { row: usize, chars: usize },
    #[error("unknown data format `{0}`")]
    UnknownFormat(String),
    #[error("preview length must be positive")]
    ZeroPreviewLength,
}

/// Picks three chat examples and up to eight evaluation examples.
///
/// With a split column, rows keep file order: the first three `chat` rows and
/// the first eight `eval` rows. Without one, rows are shuffled with `seed`;
/// the first three become chat examples and the next eight evaluation ones.
pub fn select_examples(rows: Vec<Row>, source: SourceInfo, seed: u64) -> Result<UserData, IngestError> {
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let mut rows: Vec<Row> = rows.into_iter().filter(|r| !r.text.trim().is_empty()).collect();
    for r in &rows {
        let chars = r.text.chars().count();
        if chars > MAX_EXAMPLE_CHARS {
            return Err(IngestError::ExampleTooLong { row: r.row, chars });
        }
    }

    let split_mode = rows.iter().any(|r| r.split.is_some());
    let (chat, eval): (Vec<Row>, Vec<Row>) = if split_mode {
        if let Some(r) = rows.iter().find(|r| r.split.is_none()) {
            return Err(IngestError::MalformedRow {
                row: r.row,
                detail: String::from("missing split value; expected `chat` or `eval`"),
            });
        }
        let (chat, eval): (Vec<Row>, Vec<Row>) = rows.into_iter().partition(|r| r.split == Some(Split::Chat));
        if chat.len() < CHAT_EXAMPLES {
            return Err(IngestError::FewerThanThreeExamples { found: chat.len() });
        }
        (chat.into_iter().take(CHAT_EXAMPLES).collect(), eval.into_iter().take(MAX_EVAL_EXAMPLES).collect())
    } else {
        if rows.len() < CHAT_EXAMPLES {
            return Err(IngestError::FewerThanThreeExamples { found: rows.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.shuffle(&mut rng);
        let mut it = rows.into_iter();
        let chat: Vec<Row> = it.by_ref().take(CHAT_EXAMPLES).collect();
        let eval: Vec<Row> = it.take(MAX_EVAL_EXAMPLES).collect();
        (chat, eval)
    };

    Ok(UserData {
        chat_rows: chat.iter().map(|r| r.row).collect(),
        eval_rows: eval.iter().map(|r| r.row).collect(),
        chat_examples: chat.into_iter().map(|r| r.text).collect(),
        eval_examples: eval.into_iter().map(|r| r.text).collect(),
        source,
        selection_seed: seed,
    })
}

/// The chat examples cut to `n_chars` characters, marked when cut.
pub fn example_preview(data: &UserData, n_chars: usize) -> Result<Vec<String>, IngestError> {
    if n_chars == 0 {
        return Err(IngestError::ZeroPreviewLength);
    }
    Ok(data
        .chat_examples
        .iter()
        .map(|text| match text.char_indices().nth(n_chars) {
            Some((cut, _)) => {
                let mut s = String::from(&text[..cut]);
                s.push_str(PREVIEW_MARKER);
                s
            }
            None => text.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn rows(n: usize) -> Vec<Row> {
        (1..=n).map(|i| Row { row: i, text: format!("text {i}"), split: None }).collect()
    }

    fn source(n: usize) -> SourceInfo {
        SourceInfo { filename: "data.csv".into(), format: DataFormat::Csv, total_rows: n }
    }

    #[test]
    fn three_rows_no_eval() {
        let d = select_examples(rows(3), source(3), 1).unwrap();
        assert_eq!(d.chat_examples.len(), 3);
        assert!(d.eval_examples.is_empty());
    }

    #[test]
    fn twenty_rows_capped_and_disjoint() {
        let d = select_examples(rows(20), source(20), 7).unwrap();
        assert_eq!(d.chat_examples.len(), 3);
        assert_eq!(d.eval_examples.len(), 8);
        assert!(d.chat_rows.iter().all(|r| !d.eval_rows.contains(r)));
    }

    #[test]
    fn two_rows_rejected() {
        assert_eq!(select_examples(rows(2), source(2), 1), Err(IngestError::FewerThanThreeExamples { found: 2 }));
        assert_eq!(select_examples(vec![], source(0), 1), Err(IngestError::EmptyFile));
    }

    #[test]
    fn blank_rows_do_not_count() {
        let mut r = rows(2);
        r.push(Row { row: 3, text: "  \t".into(), split: None });
        assert_eq!(select_examples(r, source(3), 1), Err(IngestError::FewerThanThreeExamples { found: 2 }));
    }

    #[test]
    fn split_column_keeps_file_order() {
        let mut r = rows(14);
        for (i, row) in r.iter_mut().enumerate() {
            row.split = Some(if i % 3 == 0 { Split::Chat } else { Split::Eval });
        }
        let d = select_examples(r, source(14), 1).unwrap();
        assert_eq!(d.chat_rows, vec![1, 4, 7]);
        assert_eq!(d.eval_rows, vec![2, 3, 5, 6, 8, 9, 11, 12]);
    }

    #[test]
    fn split_mode_needs_every_row_labelled() {
        let mut r = rows(4);
        r[0].split = Some(Split::Chat);
        assert!(matches!(select_examples(r, source(4), 1), Err(IngestError::MalformedRow { row: 2, .. })));
    }

    #[test]
    fn too_long_row_rejected() {
        let mut r = rows(3);
        r[1].text = "x".repeat(MAX_EXAMPLE_CHARS + 1);
        assert_eq!(
            select_examples(r, source(3), 1),
            Err(IngestError::ExampleTooLong { row: 2, chars: MAX_EXAMPLE_CHARS + 1 })
        );
    }

    #[test]
    fn same_seed_same_selection() {
        let a = select_examples(rows(20), source(20), 42).unwrap();
        let b = select_examples(rows(20), source(20), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn preview_truncates() {
        let mut d = select_examples(rows(3), source(3), 1).unwrap();
        d.chat_examples = vec!["a".repeat(10), "b".repeat(30), "ééé".into()];
        let p = example_preview(&d, 20).unwrap();
        assert_eq!(p[0], "a".repeat(10));
        assert_eq!(p[1], format!("{}…", "b".repeat(20)));
        assert_eq!(example_preview(&d, 2).unwrap()[2], "éé…");
        assert_eq!(example_preview(&d, 0), Err(IngestError::ZeroPreviewLength));
    }

    #[test]
    fn formats_from_names() {
        assert_eq!(DataFormat::from_filename("a.CSV"), Some(DataFormat::Csv));
        assert_eq!(DataFormat::from_filename("a.jsonl"), Some(DataFormat::Jsonl));
        assert_eq!(DataFormat::from_filename("a.txt"), None);
    }
}
