//! Engine for building task prompts through a guided conversation between a
//! user, a chat model and the orchestrating system.
//!
//! The crate is `no_std` (it needs `alloc`). IO, HTTP backends and the event
//! store live in the service crate.

#![no_std]

extern crate alloc;

pub mod backend;
pub mod chatstore;
pub mod demo;
pub mod evalsuite;
pub mod ingest;
pub mod orchestrator;
pub mod promptkit;
pub mod protocol;
pub mod templates;

pub use orchestrator::{Runtime, Session, SessionConfig, SessionError, SessionEvent, Stage};
