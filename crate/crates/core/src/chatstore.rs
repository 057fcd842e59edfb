//! Append-only multi-channel transcript and per-request context filtering.
//!
//! The main channel carries the conversation between user, system and model.
//! Messages exchanged while one example is being discussed are tagged with
//! that example number, so the context built for example `i` never contains
//! the discussion of any other example. Side chats are isolated channels
//! holding copies of selected content.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::orchestrator::Stage;

/// Largest context a single request may carry.
pub const DEFAULT_CONTEXT_CAP: usize = 200;

/// Number of chat examples discussed in a session.
pub const EXAMPLE_COUNT: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    User,
    System,
    Model,
    TargetModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Main,
    Side(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tags {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<u8>,
    pub channel: Channel,
    /// System notices addressed to the user (errors surfaced after retries).
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub notice: bool,
}

impl Tags {
    pub fn main(stage: Stage, example: Option<u8>) -> Self {
        Self { stage, example, channel: Channel::Main, notice: false }
    }

    pub fn side(stage: Stage, side_id: u32) -> Self {
        Self { stage, example: None, channel: Channel::Side(side_id), notice: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub author: Author,
    pub content: String,
    pub tags: Tags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextSpec {
    pub channel: Channel,
    pub focus_example: Option<u8>,
}

impl ContextSpec {
    pub fn main(focus_example: Option<u8>) -> Self {
        Self { channel: Channel::Main, focus_example }
    }

    pub fn side(side_id: u32) -> Self {
        Self { channel: Channel::Side(side_id), focus_example: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChatStoreError {
    #[error("example {0} is out of range 1..={EXAMPLE_COUNT}")]
    ExampleOutOfRange(u8),
    #[error("target model messages belong in side chats only")]
    TargetModelInMain,
    #[error("side chat {0} does not exist")]
    UnknownSideChat(u32),
    #[error("a side chat needs at least one seed message")]
    EmptySideChat,
    #[error("context would hold {len} messages, above the cap of {cap}")]
    ContextTooLarge { len: usize, cap: usize },
    #[error("message id {found} out of order, expected {expected}")]
    OutOfOrder { expected: u64, found: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<Message>,
    next_side_id: u32,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.messages.last().map_or(1, |m| m.id + 1)
    }

    /// The id the next side chat will receive.
    pub fn next_side_id(&self) -> u32 {
        self.next_side_id.max(1)
    }

    pub fn get(&self, id: u64) -> Option<&Message> {
        let idx = usize::try_from(id.checked_sub(1)?).ok()?;
        self.messages.get(idx)
    }

    fn validate(&self, author: Author, tags: &Tags) -> Result<(), ChatStoreError> {
        if let Some(e) = tags.example {
            if !(1..=EXAMPLE_COUNT).contains(&e) {
                return Err(ChatStoreError::ExampleOutOfRange(e));
            }
        }
        if author == Author::TargetModel && tags.channel == Channel::Main {
            return Err(ChatStoreError::TargetModelInMain);
        }
        Ok(())
    }

    pub fn append(&mut self, author: Author, content: impl Into<String>, tags: Tags) -> Result<u64, ChatStoreError> {
        let id = self.next_id();
        self.push(Message { id, author, content: content.into(), tags })?;
        Ok(id)
    }

    /// Appends a fully formed message; its id must be the next one.
    pub fn push(&mut self, message: Message) -> Result<(), ChatStoreError> {
        let expected = self.next_id();
        if message.id != expected {
            return Err(ChatStoreError::OutOfOrder { expected, found: message.id });
        }
        self.validate(message.author, &message.tags)?;
        if let Channel::Side(s) = message.tags.channel {
            self.next_side_id = self.next_side_id().max(s + 1);
        }
        self.messages.push(message);
        Ok(())
    }

    /// Allocates a fresh side chat holding copies of `seeds`.
    pub fn open_side_chat(&mut self, stage: Stage, seeds: Vec<(Author, String)>) -> Result<u32, ChatStoreError> {
        if seeds.is_empty() {
            return Err(ChatStoreError::EmptySideChat);
        }
        let side = self.next_side_id();
        for (author, content) in seeds {
            self.append(author, content, Tags::side(stage, side))?;
        }
        Ok(side)
    }

    pub fn build_context(&self, spec: &ContextSpec) -> Result<Vec<&Message>, ChatStoreError> {
        self.build_context_capped(spec, DEFAULT_CONTEXT_CAP)
    }

    pub fn build_context_capped(&self, spec: &ContextSpec, cap: usize) -> Result<Vec<&Message>, ChatStoreError> {
        let selected: Vec<&Message> = match spec.channel {
            Channel::Main => self
                .messages
                .iter()
                .filter(|m| m.tags.channel == Channel::Main)
                .filter(|m| match (spec.focus_example, m.tags.example) {
                    (Some(focus), Some(tagged)) => focus == tagged,
                    _ => true,
                })
                .collect(),
            Channel::Side(s) => {
                if s == 0 || s >= self.next_side_id() {
                    return Err(ChatStoreError::UnknownSideChat(s));
                }
                self.messages.iter().filter(|m| m.tags.channel == Channel::Side(s)).collect()
            }
        };
        if selected.len() > cap {
            return Err(ChatStoreError::ContextTooLarge { len: selected.len(), cap });
        }
        Ok(selected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn stage() -> Stage {
        Stage::InitialDiscussion
    }

    #[test]
    fn ids_start_at_one() {
        let mut t = Transcript::new();
        assert_eq!(t.append(Author::User, "a", Tags::main(stage(), None)).unwrap(), 1);
        assert_eq!(t.append(Author::Model, "b", Tags::main(stage(), None)).unwrap(), 2);
        assert_eq!(t.get(2).unwrap().content, "b");
    }

    #[test]
    fn rejects_example_four() {
        let mut t = Transcript::new();
        assert_eq!(
            t.append(Author::User, "a", Tags::main(stage(), Some(4))),
            Err(ChatStoreError::ExampleOutOfRange(4))
        );
        assert!(t.is_empty());
    }

    #[test]
    fn target_model_stays_in_side_chats() {
        let mut t = Transcript::new();
        assert_eq!(
            t.append(Author::TargetModel, "o", Tags::main(stage(), None)),
            Err(ChatStoreError::TargetModelInMain)
        );
    }

    #[test]
    fn focus_filters_other_examples() {
        let mut t = Transcript::new();
        t.append(Author::System, "intro", Tags::main(stage(), None)).unwrap();
        for e in 1..=3 {
            t.append(Author::User, e.to_string(), Tags::main(stage(), Some(e))).unwrap();
        }
        let ctx = t.build_context(&ContextSpec::main(Some(2))).unwrap();
        let contents: Vec<&str> = ctx.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents, vec!["intro", "2"]);
        assert_eq!(t.build_context(&ContextSpec::main(None)).unwrap().len(), 4);
    }

    #[test]
    fn side_chats_are_isolated() {
        let mut t = Transcript::new();
        t.append(Author::User, "main", Tags::main(stage(), None)).unwrap();
        let a = t.open_side_chat(stage(), vec![(Author::System, "prompt".into())]).unwrap();
        let b = t.open_side_chat(stage(), vec![(Author::System, "x".into()), (Author::User, "y".into())]).unwrap();
        assert_ne!(a, b);
        let ctx = t.build_context(&ContextSpec::side(a)).unwrap();
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx[0].content, "prompt");
        assert_eq!(t.build_context(&ContextSpec::side(b)).unwrap().len(), 2);
        assert_eq!(t.build_context(&ContextSpec::main(None)).unwrap().len(), 1);
        assert_eq!(t.build_context(&ContextSpec::side(9)), Err(ChatStoreError::UnknownSideChat(9)));
    }

    #[test]
    fn empty_side_chat_rejected() {
        let mut t = Transcript::new();
        assert_eq!(t.open_side_chat(stage(), vec![]), Err(ChatStoreError::EmptySideChat));
    }

    #[test]
    fn cap_errors_instead_of_truncating() {
        let mut t = Transcript::new();
        for _ in 0..5 {
            t.append(Author::User, "m", Tags::main(stage(), None)).unwrap();
        }
        assert_eq!(
            t.build_context_capped(&ContextSpec::main(None), 4),
            Err(ChatStoreError::ContextTooLarge { len: 5, cap: 4 })
        );
    }

    #[test]
    fn push_requires_next_id() {
        let mut t = Transcript::new();
        let m = Message { id: 3, author: Author::User, content: "x".into(), tags: Tags::main(stage(), None) };
        assert_eq!(t.push(m), Err(ChatStoreError::OutOfOrder { expected: 1, found: 3 }));
    }
}
