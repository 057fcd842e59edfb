use std::fs;
use std::io::Write;

use chrono::Utc;
use cpe_core::backend::BackendKind;
use cpe_core::demo::{demo_data, demo_script};
use cpe_core::SessionEvent;
use cpe_service::store::{EventStore, SessionRecord, SessionStatus, StoreError, EVENTS_FILE};

fn record(id: &str) -> SessionRecord {
    SessionRecord {
        session_id: id.to_string(),
        created_at: Utc::now(),
        status: SessionStatus::Active,
        chat_backend: BackendKind::Scripted,
        target_backend: BackendKind::Scripted,
        chat_model: "scripted".to_string(),
        target_model: "scripted".to_string(),
        template: "generic".to_string(),
        selection_seed: None,
        evaluation_seed: None,
    }
}

fn events() -> Vec<SessionEvent> {
    vec![
        SessionEvent::SessionCreated { session_id: "s1".to_string(), config: demo_script(1).config() },
        SessionEvent::DataLoaded { data: demo_data() },
    ]
}

fn store_with_two_batches() -> (tempfile::TempDir, EventStore) {
    let dir = tempfile::tempdir().unwrap();
    let store = EventStore::open(dir.path()).unwrap();
    store.create(&record("s1")).unwrap();
    let ev = events();
    store.append_batch("s1", 1, &ev[..1]).unwrap();
    store.append_batch("s1", 2, &ev[1..]).unwrap();
    (dir, store)
}

#[test]
fn round_trip() {
    let (_dir, store) = store_with_two_batches();
    let loaded = store.load("s1").unwrap();
    assert_eq!(loaded.events, events());
    assert_eq!(loaded.discarded, 0);
    assert!(!loaded.repaired);
    assert_eq!(store.list().unwrap(), ["s1"]);
    assert_eq!(store.read_record("s1").unwrap().session_id, "s1");
}

#[test]
fn torn_last_line_is_cut() {
    let (_dir, store) = store_with_two_batches();
    let path = store.events_path("s1").unwrap();
    let full = fs::read(&path).unwrap();
    let first_line = full.iter().position(|&b| b == b'\n').unwrap() + 1;
    fs::write(&path, &full[..full.len() - 7]).unwrap();
    let loaded = store.load("s1").unwrap();
    assert_eq!(loaded.events, events()[..1]);
    assert!(loaded.repaired);
    assert_eq!(fs::read(&path).unwrap().len(), first_line);
    let again = store.load("s1").unwrap();
    assert!(!again.repaired);
}

#[test]
fn uncommitted_tail_is_discarded() {
    let (_dir, store) = store_with_two_batches();
    let path = store.events_path("s1").unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let uncommitted = lines[1].replace(",\"commit\":true", "");
    assert_ne!(uncommitted, lines[1]);
    fs::write(&path, format!("{}\n{}\n", lines[0], uncommitted)).unwrap();
    let loaded = store.load("s1").unwrap();
    assert_eq!(loaded.events.len(), 1);
    assert_eq!(loaded.discarded, 1);
    assert!(loaded.repaired);
}

#[test]
fn seq_gap_is_corruption() {
    let (_dir, store) = store_with_two_batches();
    let path = store.events_path("s1").unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let second = text.lines().nth(1).unwrap().replace("\"seq\":2", "\"seq\":3");
    fs::write(&path, format!("{}\n{}\n", text.lines().next().unwrap(), second)).unwrap();
    assert!(matches!(store.load("s1"), Err(StoreError::CorruptLog { seq: 2, .. })));
}

#[test]
fn garbage_in_the_middle_is_corruption() {
    let (_dir, store) = store_with_two_batches();
    let path = store.events_path("s1").unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.insert(1, "{not json");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(store.load("s1"), Err(StoreError::CorruptLog { .. })));
}

#[test]
fn foreign_session_id_is_corruption() {
    let (dir, store) = store_with_two_batches();
    store.create(&record("s2")).unwrap();
    let text = fs::read_to_string(store.events_path("s1").unwrap()).unwrap();
    fs::OpenOptions::new()
        .append(true)
        .open(dir.path().join("s2").join(EVENTS_FILE))
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    assert!(matches!(store.load("s2"), Err(StoreError::CorruptLog { seq: 1, .. })));
}

#[test]
fn ids_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let store = EventStore::open(dir.path()).unwrap();
    for bad in ["", "../x", "a/b", "a b", &"x".repeat(65)] {
        assert!(matches!(store.session_dir(bad), Err(StoreError::InvalidId(_))), "{bad}");
    }
    assert!(matches!(store.load("nope"), Err(StoreError::NotFound(_))));
    store.create(&record("dup")).unwrap();
    assert!(matches!(store.create(&record("dup")), Err(StoreError::AlreadyExists(_))));
}
