use std::collections::HashSet;

use cpe_core::ingest::{DataFormat, IngestError, Split};
use cpe_service::decode::{decode_rows, load_user_data};

fn csv_rows(n: usize) -> Vec<u8> {
    let mut s = String::from("id,text\n");
    for i in 1..=n {
        s.push_str(&format!("{i},\"row {i}, with a comma\"\n"));
    }
    s.into_bytes()
}

#[test]
fn twenty_rows_give_three_chat_and_eight_eval() {
    let data = load_user_data("d.csv", &csv_rows(20), None, 3).unwrap();
    assert_eq!(data.chat_examples.len(), 3);
    assert_eq!(data.eval_examples.len(), 8);
    let rows: HashSet<usize> = data.chat_rows.iter().chain(&data.eval_rows).copied().collect();
    assert_eq!(rows.len(), 11);
    assert!(data.chat_examples.iter().all(|t| t.ends_with("with a comma")));
}

#[test]
fn selection_depends_only_on_seed() {
    let a = load_user_data("d.csv", &csv_rows(20), None, 11).unwrap();
    let b = load_user_data("d.csv", &csv_rows(20), None, 11).unwrap();
    let c = load_user_data("d.csv", &csv_rows(20), None, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.chat_rows, c.chat_rows);
}

#[test]
fn two_rows_are_rejected() {
    assert_eq!(load_user_data("d.csv", &csv_rows(2), None, 0), Err(IngestError::FewerThanThreeExamples { found: 2 }));
}

#[test]
fn missing_text_column() {
    assert_eq!(decode_rows(b"id,body\n1,x\n", DataFormat::Csv), Err(IngestError::MissingTextColumn));
    assert_eq!(decode_rows(b"{\"body\":\"x\"}\n", DataFormat::Jsonl), Err(IngestError::MissingTextColumn));
}

#[test]
fn malformed_rows_name_their_row() {
    let err = decode_rows(b"id,text\n1,a\n2,b,extra\n", DataFormat::Csv);
    assert!(matches!(err, Err(IngestError::MalformedRow { row: 2, .. })), "{err:?}");
    let err = decode_rows(b"text,split\na,chat\nb,later\n", DataFormat::Csv);
    assert!(matches!(err, Err(IngestError::MalformedRow { row: 2, .. })), "{err:?}");
    let err = decode_rows(b"{\"text\":\"a\"}\nnot json\n", DataFormat::Jsonl);
    assert!(matches!(err, Err(IngestError::MalformedRow { row: 2, .. })), "{err:?}");
}

#[test]
fn bom_and_crlf_are_tolerated() {
    let rows = decode_rows(b"\xEF\xBB\xBFtext\r\nalpha\r\nbeta\r\n", DataFormat::Csv).unwrap();
    assert_eq!(rows.iter().map(|r| r.text.as_str()).collect::<Vec<_>>(), ["alpha", "beta"]);
    assert_eq!(rows[0].row, 1);
}

#[test]
fn jsonl_with_split_field() {
    let mut s = String::new();
    for i in 0..6 {
        let split = if i % 2 == 0 { "chat" } else { "eval" };
        s.push_str(&format!("{{\"text\":\"t{i}\",\"split\":\"{split}\"}}\n"));
    }
    let rows = decode_rows(s.as_bytes(), DataFormat::Jsonl).unwrap();
    assert_eq!(rows[0].split, Some(Split::Chat));
    let data = load_user_data("d.jsonl", s.as_bytes(), None, 0).unwrap();
    assert_eq!(data.chat_examples, ["t0", "t2", "t4"]);
    assert_eq!(data.eval_examples, ["t1", "t3", "t5"]);
}

#[test]
fn format_comes_from_override_or_extension() {
    let jsonl = b"{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n";
    assert!(load_user_data("upload.bin", jsonl, Some(DataFormat::Jsonl), 0).is_ok());
    assert_eq!(load_user_data("upload.bin", jsonl, None, 0), Err(IngestError::UnknownFormat("upload.bin".to_string())));
}

#[test]
fn empty_file() {
    assert_eq!(load_user_data("d.csv", b"text\n", None, 0), Err(IngestError::EmptyFile));
}
