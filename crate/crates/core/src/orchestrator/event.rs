//! Session events. [`Session::apply`] is the only way session state changes,
//! so folding a session's event log reproduces it exactly.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Session, SessionConfig, Stage};
use crate::backend::Usage;
use crate::chatstore::{Author, Channel, Message};
use crate::evalsuite::{Evaluation, SurveyResponse};
use crate::ingest::UserData;
use crate::promptkit::{register_accepted, AcceptedExample, Instruction};
use crate::protocol::{ApiCall, ApiFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Chat,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOrigin {
    /// Taken from the head of the pending queue.
    Model,
    /// Triggered by the orchestrator itself.
    System,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum SessionEvent {
    SessionCreated { session_id: String, config: SessionConfig },
    DataLoaded { data: UserData },
    StageChanged { stage: Stage },
    MessageAppended { message: Message },
    CompletionReceived { backend: BackendRole, content: String, usage: Usage, latency_ms: u64 },
    CallsQueued { calls: Vec<ApiCall> },
    CallDispatched { call: ApiCall, origin: CallOrigin },
    CallRejected { call: ApiCall, reason: String },
    InstructionPushed { instruction: Instruction },
    OutputsGenerated { outputs: BTreeMap<u8, String> },
    OutputAccepted { example: AcceptedExample },
    Ended,
    EvaluationBuilt { evaluation: Evaluation },
    RankingRecorded { item_id: u32, best: u8, worst: u8 },
    SurveyRecorded { response: SurveyResponse },
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionEvent::SessionCreated { .. } => "SessionCreated",
            SessionEvent::DataLoaded { .. } => "DataLoaded",
            SessionEvent::StageChanged { .. } => "StageChanged",
            SessionEvent::MessageAppended { .. } => "MessageAppended",
            SessionEvent::CompletionReceived { .. } => "CompletionReceived",
            SessionEvent::CallsQueued { .. } => "CallsQueued",
            SessionEvent::CallDispatched { .. } => "CallDispatched",
            SessionEvent::CallRejected { .. } => "CallRejected",
            SessionEvent::InstructionPushed { .. } => "InstructionPushed",
            SessionEvent::OutputsGenerated { .. } => "OutputsGenerated",
            SessionEvent::OutputAccepted { .. } => "OutputAccepted",
            SessionEvent::Ended => "Ended",
            SessionEvent::EvaluationBuilt { .. } => "EvaluationBuilt",
            SessionEvent::RankingRecorded { .. } => "RankingRecorded",
            SessionEvent::SurveyRecorded { .. } => "SurveyRecorded",
        }
    }
}

/// An event that cannot be applied to the current state.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot apply {kind}: {reason}")]
pub struct ApplyError {
    pub kind: &'static str,
    pub reason: String,
}

fn reject(ev: &SessionEvent, reason: impl Into<String>) -> ApplyError {
    ApplyError { kind: ev.kind(), reason: reason.into() }
}

impl Session {
    /// Applies one event and appends it to the session log.
    pub fn apply(&mut self, ev: SessionEvent) -> Result<(), ApplyError> {
        self.apply_state(&ev)?;
        self.log.push(ev);
        Ok(())
    }

    fn apply_state(&mut self, ev: &SessionEvent) -> Result<(), ApplyError> {
        if self.log.is_empty() != matches!(ev, SessionEvent::SessionCreated { .. }) {
            return Err(reject(ev, "SessionCreated must be the first event and only the first"));
        }
        match ev {
            SessionEvent::SessionCreated { session_id, config } => {
                self.id = session_id.clone();
                self.config = config.clone();
            }
            SessionEvent::DataLoaded { data } => {
                if self.data.is_some() {
                    return Err(reject(ev, "data already loaded"));
                }
                self.data = Some(data.clone());
            }
            SessionEvent::StageChanged { stage } => {
                if !self.stage.can_transition(*stage) {
                    return Err(reject(ev, alloc::format!("illegal transition {} -> {}", self.stage, stage)));
                }
                self.stage = *stage;
                self.stage_history.push(*stage);
            }
            SessionEvent::MessageAppended { message } => {
                self.transcript.push(message.clone()).map_err(|e| reject(ev, alloc::format!("{e}")))?;
                if message.author == Author::User && message.tags.channel == Channel::Main {
                    self.awaiting_user = false;
                }
            }
            SessionEvent::CompletionReceived { backend, .. } => match backend {
                BackendRole::Chat => self.chat_completions += 1,
                BackendRole::Target => self.target_completions += 1,
            },
            SessionEvent::CallsQueued { calls } => self.pending_calls.extend(calls.iter().cloned()),
            SessionEvent::CallDispatched { call, origin } => match origin {
                CallOrigin::Model => {
                    if self.pending_calls.front() != Some(call) {
                        return Err(reject(ev, "dispatched call is not at the head of the queue"));
                    }
                    self.pending_calls.pop_front();
                    self.awaiting_user = call.function() == ApiFunction::SubmitMessageToUser;
                }
                CallOrigin::System => self.awaiting_user = false,
            },
            SessionEvent::CallRejected { call, .. } => {
                if self.pending_calls.front() != Some(call) {
                    return Err(reject(ev, "rejected call is not at the head of the queue"));
                }
                self.pending_calls.clear();
                self.awaiting_user = false;
            }
            SessionEvent::InstructionPushed { instruction } => {
                let expected = self.instruction_history.len() as u32 + 1;
                if instruction.version != expected {
                    return Err(reject(ev, alloc::format!("expected version {expected}")));
                }
                self.instruction_history.push(instruction.clone());
                self.iteration += 1;
            }
            SessionEvent::OutputsGenerated { outputs } => {
                self.prompt_outputs = outputs.clone();
                if !self.accepted.is_empty() {
                    self.accepted_history.push(core::mem::take(&mut self.accepted));
                }
            }
            SessionEvent::OutputAccepted { example } => {
                register_accepted(&mut self.accepted, example.clone())
                    .map_err(|e| reject(ev, alloc::format!("{e}")))?;
            }
            SessionEvent::Ended => {
                if self.stage != Stage::Ended {
                    return Err(reject(ev, "stage is not Ended"));
                }
                self.pending_calls.clear();
            }
            SessionEvent::EvaluationBuilt { evaluation } => {
                if self.evaluation.is_some() {
                    return Err(reject(ev, "evaluation already built"));
                }
                self.evaluation = Some(evaluation.clone());
            }
            SessionEvent::RankingRecorded { item_id, best, worst } => {
                let evaluation = self.evaluation.as_mut().ok_or_else(|| reject(ev, "no evaluation"))?;
                evaluation
                    .record_ranking(*item_id, *best, *worst, true)
                    .map_err(|e| reject(ev, alloc::format!("{e}")))?;
            }
            SessionEvent::SurveyRecorded { response } => {
                if self.survey.is_some() {
                    return Err(reject(ev, "survey already recorded"));
                }
                self.survey = Some(*response);
            }
        }
        Ok(())
    }
}
