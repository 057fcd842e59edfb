#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cpe_core::demo::{demo_rows, demo_script, DemoScript};
use cpe_core::templates::TemplateSet;
use cpe_core::SessionConfig;
use cpe_service::http::{router, AppState};
use cpe_service::manager::{ManagerConfig, SessionManager};
use cpe_service::store::EventStore;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// A request seen by the fake provider: raw header block and body.
#[derive(Debug, Clone)]
pub struct Seen {
    pub head: String,
    pub body: String,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn completion(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{ "message": { "role": "assistant", "content": content } }],
            "usage": { "prompt_tokens": 10, "completion_tokens": 5 }
        });
        Reply { status: 200, body: body.to_string(), delay: Duration::ZERO }
    }
}

/// Serves chat-completions on a local port until the test process exits.
pub fn fake_provider(reply: impl Fn(usize, &Seen) -> Reply + Send + 'static) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let req = Seen { head, body: String::from_utf8_lossy(&body).into_owned() };
            let r = reply(n, &req);
            log.lock().unwrap().push(req);
            std::thread::sleep(r.delay);
            let _ = write!(
                stream,
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                r.status,
                r.body.len(),
                r.body
            );
        }
    });
    (url, seen)
}

pub fn demo_csv() -> Vec<u8> {
    let mut out = String::from("text\n");
    for r in demo_rows() {
        out.push_str(&r.text);
        out.push('\n');
    }
    out.into_bytes()
}

pub fn manager(dir: &Path, config: ManagerConfig) -> Arc<SessionManager> {
    Arc::new(SessionManager::new(EventStore::open(dir).unwrap(), TemplateSet::default(), config))
}

pub fn app(manager: Arc<SessionManager>, defaults: SessionConfig, allow_client_backends: bool) -> Router {
    router(Arc::new(AppState { manager, defaults, allow_client_backends, default_seed: 7 }))
}

pub fn demo() -> DemoScript {
    demo_script(1)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub async fn upload(app: &Router, uri: &str, filename: &str, bytes: &[u8]) -> (StatusCode, Value) {
    let boundary = "cpe-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{filename}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}
