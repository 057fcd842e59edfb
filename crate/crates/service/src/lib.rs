//! Operational wrapper around `cpe-core`: data file decoding, an HTTP
//! chat-completions backend, per-session event logs with crash recovery, a
//! session manager and the HTTP API.

pub mod backends;
pub mod decode;
pub mod export;
pub mod http;
pub mod manager;
pub mod remote;
pub mod store;
pub mod template_dir;
