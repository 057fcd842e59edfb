//! CSV and JSONL data files to [`Row`]s.

use cpe_core::ingest::{select_examples, DataFormat, IngestError, Row, SourceInfo, Split, UserData};
use serde_json::Value;

fn trim_row_end(text: &str) -> String {
    text.trim_end_matches(['\r', '\n']).to_string()
}

fn parse_split(row: usize, value: &str) -> Result<Option<Split>, IngestError> {
    if value.trim().is_empty() {
        return Ok(None);
    }
    Split::parse(value).map(Some).ok_or_else(|| IngestError::MalformedRow {
        row,
        detail: format!("split must be `chat` or `eval`, found `{value}`"),
    })
}

pub fn decode_rows(bytes: &[u8], format: DataFormat) -> Result<Vec<Row>, IngestError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(IngestError::EmptyFile);
    }
    match format {
        DataFormat::Csv => decode_csv(bytes),
        DataFormat::Jsonl => decode_jsonl(bytes),
    }
}

fn decode_csv(bytes: &[u8]) -> Result<Vec<Row>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader.headers().map_err(|e| IngestError::MalformedRow { row: 0, detail: e.to_string() })?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = column("text").ok_or(IngestError::MissingTextColumn)?;
    let split_col = column("split");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| IngestError::MalformedRow { row, detail: e.to_string() })?;
        let text = record
            .get(text_col)
            .ok_or_else(|| IngestError::MalformedRow { row, detail: "missing `text` value".to_string() })?;
        let split = match split_col.and_then(|c| record.get(c)) {
            Some(v) => parse_split(row, v)?,
            None => None,
        };
        rows.push(Row { row, text: trim_row_end(text), split });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(rows)
}

fn decode_jsonl(bytes: &[u8]) -> Result<Vec<Row>, IngestError> {
    let content = std::str::from_utf8(bytes)
        .map_err(|e| IngestError::MalformedRow { row: 0, detail: format!("file is not UTF-8: {e}") })?;
    let mut rows = Vec::new();
    let mut missing_text = None;
    for (idx, line) in content.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| IngestError::MalformedRow { row, detail: e.to_string() })?;
        let obj = value
            .as_object()
            .ok_or_else(|| IngestError::MalformedRow { row, detail: "each line must be a JSON object".to_string() })?;
        let text = match obj.get("text") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(IngestError::MalformedRow { row, detail: "`text` must be a string".to_string() }),
            None => {
                missing_text.get_or_insert(row);
                continue;
            }
        };
        let split = match obj.get("split") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => parse_split(row, s)?,
            Some(_) => return Err(IngestError::MalformedRow { row, detail: "`split` must be a string".to_string() }),
        };
        rows.push(Row { row, text: trim_row_end(text), split });
    }
    match missing_text {
        Some(_) if rows.is_empty() => Err(IngestError::MissingTextColumn),
        Some(row) => Err(IngestError::MalformedRow { row, detail: "missing `text` field".to_string() }),
        None if rows.is_empty() => Err(IngestError::EmptyFile),
        None => Ok(rows),
    }
}

/// Decodes an uploaded file and selects the chat and evaluation examples.
/// `format` overrides the format implied by the file name.
pub fn load_user_data(
    filename: &str,
    bytes: &[u8],
    format: Option<DataFormat>,
    seed: u64,
) -> Result<UserData, IngestError> {
    let format = format
        .or_else(|| DataFormat::from_filename(filename))
        .ok_or_else(|| IngestError::UnknownFormat(filename.to_string()))?;
    let rows = decode_rows(bytes, format)?;
    let source = SourceInfo { filename: filename.to_string(), format, total_rows: rows.len() };
    select_examples(rows, source, seed)
}
