//! The system actor: a state machine that talks to the user, the chat model
//! and the target model.
//!
//! A user turn runs as a transaction. The orchestrator appends the user
//! message, then repeatedly builds the filtered context, asks the chat model
//! for calls and dispatches them until the model hands control back with
//! `submit_message_to_user` or the session ends. Any failure rolls the turn
//! back and leaves only the user message plus a visible error notice.

mod event;
mod stage;

pub use event::{ApplyError, BackendRole, CallOrigin, SessionEvent};
pub use stage::Stage;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendError, ChatBackend, ChatRequest, Completion};
use crate::chatstore::{Author, Channel, ChatStoreError, ContextSpec, Message, Tags, Transcript, EXAMPLE_COUNT};
use crate::evalsuite::{Evaluation, SurveyResponse};
use crate::ingest::UserData;
use crate::promptkit::{
    build_fs_prompt, build_zs_prompt, render_prompt, AcceptedExample, Instruction, PromptBundle, PromptError,
    PromptInput, TargetTemplate,
};
use crate::protocol::{parse_model_response, render_api_call, repair_message, ApiCall, ApiFunction, ParseDiagnostic};
use crate::templates::{Binding, TemplateError, TemplateId, TemplateSet};

/// Model calls allowed within one user turn.
pub const MAX_MODEL_CALLS_PER_TURN: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub chat: BackendConfig,
    pub target: BackendConfig,
    pub template: TargetTemplate,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chat: crate::backend::scripted(Vec::<String>::new()),
            target: crate::backend::scripted(Vec::<String>::new()),
            template: TargetTemplate::generic(),
        }
    }
}

/// What a session needs from the outside world while it runs.
pub struct Runtime<'a> {
    pub chat: &'a mut dyn ChatBackend,
    pub target: &'a mut dyn ChatBackend,
    pub templates: &'a TemplateSet,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DispatchError {
    #[error("{function} is not allowed in stage {stage}: {reason}")]
    StageViolation { function: ApiFunction, stage: Stage, reason: String },
    #[error("example {0} is out of range 1..={EXAMPLE_COUNT}")]
    IndexOutOfRange(u32),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("session is in stage {0}, which does not accept this operation")]
    WrongStage(Stage),
    #[error("session has not ended")]
    NotEnded,
    #[error("message text is empty")]
    EmptyMessage,
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("model response could not be parsed after a repair attempt: {0}")]
    Parse(ParseDiagnostic),
    #[error("model call rejected after a corrective message: {0}")]
    Dispatch(#[from] DispatchError),
    #[error("model made {0} calls without returning to the user")]
    LoopLimit(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] ChatStoreError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

impl SessionError {
    /// Failures that end a turn with a visible notice rather than an error.
    fn is_turn_failure(&self) -> bool {
        matches!(
            self,
            SessionError::Backend(_)
                | SessionError::Parse(_)
                | SessionError::Dispatch(_)
                | SessionError::LoopLimit(_)
                | SessionError::Store(ChatStoreError::ContextTooLarge { .. })
        )
    }
}

/// A message as the user sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleMessage {
    pub id: u64,
    pub author: Author,
    pub text: String,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub notice: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalPrompts {
    pub fs_prompt: String,
    pub zs_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Session {
    id: String,
    config: SessionConfig,
    stage: Stage,
    stage_history: Vec<Stage>,
    transcript: Transcript,
    data: Option<UserData>,
    instruction_history: Vec<Instruction>,
    accepted: Vec<AcceptedExample>,
    accepted_history: Vec<Vec<AcceptedExample>>,
    prompt_outputs: BTreeMap<u8, String>,
    pending_calls: VecDeque<ApiCall>,
    iteration: u32,
    awaiting_user: bool,
    chat_completions: u64,
    target_completions: u64,
    pub(crate) evaluation: Option<Evaluation>,
    pub(crate) survey: Option<SurveyResponse>,
    log: Vec<SessionEvent>,
}

impl Session {
    /// A new session in `Setup`, waiting for data.
    pub fn create(id: impl Into<String>, config: SessionConfig) -> Self {
        let mut s = Session { stage_history: alloc::vec![Stage::Setup], ..Session::default() };
        s.apply(SessionEvent::SessionCreated { session_id: id.into(), config }).expect("first event always applies");
        s
    }

    /// Rebuilds a session by folding its events. Returns the index of the
    /// first event that cannot be applied.
    pub fn replay(events: impl IntoIterator<Item = SessionEvent>) -> Result<Self, (usize, ApplyError)> {
        let mut s = Session { stage_history: alloc::vec![Stage::Setup], ..Session::default() };
        for (idx, ev) in events.into_iter().enumerate() {
            s.apply(ev).map_err(|e| (idx, e))?;
        }
        if s.log.is_empty() {
            return Err((0, ApplyError { kind: "SessionCreated", reason: "empty log".to_string() }));
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Every stage the session has been in, starting with `Setup`.
    pub fn stage_history(&self) -> &[Stage] {
        &self.stage_history
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn data(&self) -> Option<&UserData> {
        self.data.as_ref()
    }

    pub fn instruction_history(&self) -> &[Instruction] {
        &self.instruction_history
    }

    pub fn current_instruction(&self) -> Option<&Instruction> {
        self.instruction_history.last()
    }

    /// Outputs accepted in the current iteration, by example number.
    pub fn accepted(&self) -> &[AcceptedExample] {
        &self.accepted
    }

    /// Accepted outputs of earlier iterations.
    pub fn accepted_history(&self) -> &[Vec<AcceptedExample>] {
        &self.accepted_history
    }

    pub fn prompt_outputs(&self) -> &BTreeMap<u8, String> {
        &self.prompt_outputs
    }

    pub fn pending_calls(&self) -> &VecDeque<ApiCall> {
        &self.pending_calls
    }

    /// Number of `submit_prompt` events so far.
    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn chat_completions(&self) -> u64 {
        self.chat_completions
    }

    pub fn target_completions(&self) -> u64 {
        self.target_completions
    }

    pub fn evaluation(&self) -> Option<&Evaluation> {
        self.evaluation.as_ref()
    }

    pub fn survey(&self) -> Option<&SurveyResponse> {
        self.survey.as_ref()
    }

    /// All events applied so far, oldest first.
    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    /// Runs `f` against a copy and keeps the copy only if `f` succeeds.
    pub(crate) fn transact<T>(
        &mut self,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, SessionError> {
        let mut staged = self.clone();
        let out = f(&mut staged)?;
        *self = staged;
        Ok(out)
    }

    pub(crate) fn emit(&mut self, ev: SessionEvent) -> Result<(), SessionError> {
        Ok(self.apply(ev)?)
    }

    fn set_stage(&mut self, stage: Stage) -> Result<(), SessionError> {
        self.emit(SessionEvent::StageChanged { stage })
    }

    fn append(&mut self, author: Author, content: String, tags: Tags) -> Result<u64, SessionError> {
        let id = self.transcript.next_id();
        self.emit(SessionEvent::MessageAppended { message: Message { id, author, content, tags } })?;
        Ok(id)
    }

    /// Appends to the main channel, tagged with the example under discussion.
    fn append_main(&mut self, author: Author, content: String) -> Result<u64, SessionError> {
        let tags = Tags::main(self.stage, self.stage.current_example());
        self.append(author, content, tags)
    }

    fn append_notice(&mut self, content: String) -> Result<u64, SessionError> {
        let mut tags = Tags::main(self.stage, self.stage.current_example());
        tags.notice = true;
        self.append(Author::System, content, tags)
    }

    fn open_side_chat(&mut self, seeds: Vec<(Author, String)>) -> Result<u32, SessionError> {
        if seeds.is_empty() {
            return Err(ChatStoreError::EmptySideChat.into());
        }
        let side = self.transcript.next_side_id();
        for (author, content) in seeds {
            self.append(author, content, Tags::side(self.stage, side))?;
        }
        Ok(side)
    }

    fn complete(
        &mut self,
        backend: &mut dyn ChatBackend,
        role: BackendRole,
        spec: ContextSpec,
    ) -> Result<Completion, SessionError> {
        let req = ChatRequest::from_context(self.transcript.build_context(&spec)?)?;
        let completion = backend.complete(&req)?;
        self.emit(SessionEvent::CompletionReceived {
            backend: role,
            content: completion.content.clone(),
            usage: completion.usage.clone(),
            latency_ms: u64::try_from(completion.latency.as_millis()).unwrap_or(u64::MAX),
        })?;
        Ok(completion)
    }

    fn render(templates: &TemplateSet, id: TemplateId, binding: Binding) -> Result<String, SessionError> {
        Ok(templates.render(id, &binding)?)
    }

    fn chat_example(&self, n: u8) -> Result<String, SessionError> {
        self.data
            .as_ref()
            .and_then(|d| d.chat_example(n))
            .map(ToString::to_string)
            .ok_or(SessionError::WrongStage(self.stage))
    }

    /// Loads the data, injects the opening instructions and lets the model
    /// open the discussion. If the model cannot be reached the setup is kept
    /// and a notice asks the user to write first.
    pub fn start_session(&mut self, data: UserData, rt: &mut Runtime<'_>) -> Result<Vec<VisibleMessage>, SessionError> {
        if self.stage != Stage::Setup {
            return Err(SessionError::WrongStage(self.stage));
        }
        self.transact(|s| {
            let examples = data
                .chat_examples
                .iter()
                .enumerate()
                .map(|(i, text)| format!("Example {}:\n{}", i + 1, text))
                .collect::<Vec<_>>()
                .join("\n\n");
            s.emit(SessionEvent::DataLoaded { data })?;
            s.set_stage(Stage::InitialDiscussion)?;
            for (id, binding) in [
                (TemplateId::Initialization, Binding::new()),
                (TemplateId::ApiInstruction, Binding::new()),
                (TemplateId::UserDataIntro, Binding::new().with("examples", examples)),
                (TemplateId::UserDataAnalysis, Binding::new()),
            ] {
                let text = Self::render(rt.templates, id, binding)?;
                s.append_main(Author::System, text)?;
            }
            Ok(())
        })?;
        let first_new = self.transcript.next_id();
        self.run_turn(rt)?;
        Ok(self.visible_since(first_new))
    }

    /// Runs the model loop; a turn failure is replaced by a notice.
    fn run_turn(&mut self, rt: &mut Runtime<'_>) -> Result<(), SessionError> {
        match self.transact(|s| s.run_model_loop(rt)) {
            Err(e) if e.is_turn_failure() => self.transact(|s| {
                s.append_notice(format!(
                    "Sorry, something went wrong and the last step was not completed ({e}). Please send your message again."
                ))?;
                Ok(())
            }),
            other => other,
        }
    }

    /// Handles one user message and returns what the user gets to see.
    pub fn post_user_message(&mut self, text: &str, rt: &mut Runtime<'_>) -> Result<Vec<VisibleMessage>, SessionError> {
        if !self.stage.is_active() {
            return Err(SessionError::WrongStage(self.stage));
        }
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let user_id = self.transcript.next_id();
        let outcome = self.transact(|s| {
            s.append_main(Author::User, text.to_string())?;
            s.run_model_loop(rt)
        });
        match outcome {
            Ok(()) => {}
            Err(e) if e.is_turn_failure() => self.transact(|s| {
                s.append_main(Author::User, text.to_string())?;
                s.append_notice(format!(
                    "Sorry, something went wrong and your message was not processed ({e}). Please try again."
                ))?;
                Ok(())
            })?,
            Err(e) => return Err(e),
        }
        Ok(self.visible_since(user_id + 1))
    }

    fn run_model_loop(&mut self, rt: &mut Runtime<'_>) -> Result<(), SessionError> {
        let mut model_calls = 0;
        let mut repair_used = false;
        let mut correction_used = false;
        let mut farewell_requested = false;

        loop {
            if let Some(call) = self.pending_calls.front().cloned() {
                match self.dispatch_model_call(call.clone(), rt) {
                    Ok(()) => correction_used = false,
                    Err(SessionError::Dispatch(err)) => {
                        self.emit(SessionEvent::CallRejected { call: call.clone(), reason: err.to_string() })?;
                        if correction_used {
                            return Err(err.into());
                        }
                        correction_used = true;
                        let text = format!(
                            "The call `{}` was not executed: {err}. Pending calls from that response were discarded. Continue the conversation with a call that fits the current step.",
                            render_api_call(&call)
                        );
                        self.append_main(Author::System, text)?;
                    }
                    Err(other) => return Err(other),
                }
                continue;
            }

            if self.stage == Stage::Ended {
                if farewell_requested {
                    return Ok(());
                }
                farewell_requested = true;
            } else if self.awaiting_user {
                return Ok(());
            }

            if model_calls == MAX_MODEL_CALLS_PER_TURN {
                return Err(SessionError::LoopLimit(model_calls));
            }
            model_calls += 1;
            let focus = self.stage.current_example();
            let completion = self.complete(rt.chat, BackendRole::Chat, ContextSpec::main(focus))?;

            match parse_model_response(&completion.content) {
                Ok(calls) if self.stage == Stage::Ended => {
                    // After the end, keep at most one goodbye message.
                    let farewell: Vec<ApiCall> = calls
                        .into_iter()
                        .filter(|c| c.function() == ApiFunction::SubmitMessageToUser)
                        .take(1)
                        .collect();
                    if !farewell.is_empty() {
                        self.emit(SessionEvent::CallsQueued { calls: farewell })?;
                    }
                }
                Ok(calls) => {
                    repair_used = false;
                    self.emit(SessionEvent::CallsQueued { calls })?;
                }
                Err(_) if self.stage == Stage::Ended => {}
                Err(diag) => {
                    if repair_used {
                        return Err(SessionError::Parse(diag));
                    }
                    repair_used = true;
                    self.append_main(Author::System, repair_message(&diag, rt.templates))?;
                }
            }
        }
    }

    /// Checks `call` against the current stage without changing anything.
    pub fn check_call(&self, call: &ApiCall) -> Result<(), DispatchError> {
        let function = call.function();
        let violation =
            |reason: &str| DispatchError::StageViolation { function, stage: self.stage, reason: reason.to_string() };
        let index = match call.index_arg() {
            Some(i) if !(1..=u32::from(EXAMPLE_COUNT)).contains(&i) => return Err(DispatchError::IndexOutOfRange(i)),
            Some(i) => Some(i as u8),
            None => None,
        };
        if self.stage == Stage::Ended {
            return match function {
                ApiFunction::SubmitMessageToUser => Ok(()),
                _ => Err(violation("the conversation has ended")),
            };
        }
        if !self.stage.is_active() {
            return Err(violation("the session has not started"));
        }
        match (function, self.stage) {
            (ApiFunction::SubmitMessageToUser | ApiFunction::ShowOriginalText, _) => Ok(()),
            (ApiFunction::SubmitPrompt, Stage::InitialDiscussion | Stage::Refinement) => {
                match call.text_arg().map(str::trim) {
                    Some("") | None => Err(violation("the prompt text is empty")),
                    Some(_) => Ok(()),
                }
            }
            (ApiFunction::SubmitPrompt, _) => {
                Err(violation("a new prompt can be submitted only before or after the outputs discussion"))
            }
            (ApiFunction::SwitchToExample, Stage::OutputGeneration) => Ok(()),
            (ApiFunction::SwitchToExample, Stage::OutputDiscussion(current)) if index == Some(current) => Ok(()),
            (ApiFunction::SwitchToExample, Stage::OutputDiscussion(_)) => {
                Err(violation("the current example must be accepted before moving on"))
            }
            (ApiFunction::SwitchToExample, _) => Err(violation("there are no outputs to discuss")),
            (ApiFunction::OutputAccepted, Stage::OutputDiscussion(current)) if index == Some(current) => Ok(()),
            (ApiFunction::OutputAccepted, Stage::OutputDiscussion(_)) => {
                Err(violation("only the example under discussion can be accepted"))
            }
            (ApiFunction::OutputAccepted, _) => Err(violation("no example is under discussion")),
            (ApiFunction::EndOutputsDiscussion, Stage::OutputDiscussion(_)) if self.all_accepted() => Ok(()),
            (ApiFunction::EndOutputsDiscussion, Stage::Refinement) => Ok(()),
            (ApiFunction::EndOutputsDiscussion, _) => Err(violation("not all outputs have been accepted")),
            (ApiFunction::ConversationEnd, Stage::Refinement) if self.all_accepted() => Ok(()),
            (ApiFunction::ConversationEnd, _) => {
                Err(violation("the prompt and all three outputs must be approved first"))
            }
        }
    }

    fn all_accepted(&self) -> bool {
        self.next_unaccepted().is_none()
    }

    fn next_unaccepted(&self) -> Option<u8> {
        (1..=EXAMPLE_COUNT).find(|n| !self.accepted.iter().any(|a| a.example_num == *n))
    }

    fn dispatch_model_call(&mut self, call: ApiCall, rt: &mut Runtime<'_>) -> Result<(), SessionError> {
        self.check_call(&call)?;
        self.emit(SessionEvent::CallDispatched { call: call.clone(), origin: CallOrigin::Model })?;
        let rendered = render_api_call(&call);
        let index = call.index_arg().map(|i| i as u8);

        match call.function() {
            ApiFunction::SubmitMessageToUser => {
                self.append_main(Author::Model, rendered)?;
            }
            ApiFunction::SubmitPrompt => {
                let turn = self.append_main(Author::Model, rendered)?;
                let instruction = Instruction {
                    text: call.text_arg().unwrap_or_default().to_string(),
                    version: self.instruction_history.len() as u32 + 1,
                    created_turn: turn,
                };
                self.emit(SessionEvent::InstructionPushed { instruction })?;
                self.set_stage(Stage::OutputGeneration)?;
                let outputs = self.generate_outputs(rt)?;
                let listing =
                    outputs.iter().map(|(n, out)| format!("Example {n}:\n{out}")).collect::<Vec<_>>().join("\n\n");
                let intro =
                    Self::render(rt.templates, TemplateId::OutputsIntro, Binding::new().with("outputs", listing))?;
                self.append_main(Author::System, intro)?;
                let analysis = Self::render(rt.templates, TemplateId::OutputsAnalysis, Binding::new())?;
                self.append_main(Author::System, analysis)?;
            }
            ApiFunction::SwitchToExample => {
                self.append_main(Author::Model, rendered)?;
                let target = index.unwrap_or(1);
                if self.stage != Stage::OutputDiscussion(target) {
                    self.enter_example(target, rt.templates)?;
                }
            }
            ApiFunction::ShowOriginalText => {
                self.append_main(Author::Model, rendered)?;
                let n = index.unwrap_or(1);
                let text = self.chat_example(n)?;
                self.append_main(Author::System, format!("Original text of example {n}:\n\n{text}"))?;
            }
            ApiFunction::OutputAccepted => {
                let turn = self.append_main(Author::Model, rendered)?;
                let n = index.unwrap_or(1);
                let example = AcceptedExample {
                    example_num: n,
                    input_text: self.chat_example(n)?,
                    output_text: call.text_arg().unwrap_or_default().to_string(),
                    accepted_turn: turn,
                };
                self.emit(SessionEvent::OutputAccepted { example })?;
                match self.next_unaccepted() {
                    Some(next) => {
                        self.emit(SessionEvent::CallDispatched {
                            call: ApiCall::switch_to_example(u32::from(next)),
                            origin: CallOrigin::System,
                        })?;
                        self.enter_example(next, rt.templates)?;
                    }
                    None => self.end_outputs_discussion(rt)?,
                }
            }
            ApiFunction::EndOutputsDiscussion => {
                self.append_main(Author::Model, rendered)?;
                if self.stage != Stage::Refinement {
                    self.end_outputs_discussion(rt)?;
                }
            }
            ApiFunction::ConversationEnd => {
                self.append_main(Author::Model, rendered)?;
                self.final_prompts()?;
                let model = self.config.target.model_id().to_string();
                let text =
                    Self::render(rt.templates, TemplateId::ConversationEnd, Binding::new().with("model", model))?;
                self.append_main(Author::System, text)?;
                self.set_stage(Stage::Ended)?;
                self.emit(SessionEvent::Ended)?;
            }
        }
        Ok(())
    }

    fn enter_example(&mut self, n: u8, templates: &TemplateSet) -> Result<(), SessionError> {
        self.set_stage(Stage::OutputDiscussion(n))?;
        let text =
            Self::render(templates, TemplateId::ExampleSwitch, Binding::new().with("example_num", n.to_string()))?;
        self.append_main(Author::System, text)?;
        Ok(())
    }

    fn end_outputs_discussion(&mut self, rt: &mut Runtime<'_>) -> Result<(), SessionError> {
        if self.log.last().is_some_and(|e| !matches!(e, SessionEvent::CallDispatched { .. })) {
            self.emit(SessionEvent::CallDispatched {
                call: ApiCall::end_outputs_discussion(),
                origin: CallOrigin::System,
            })?;
        }
        self.set_stage(Stage::FeedbackAnalysis)?;
        let recommendations = self.run_feedback_analysis(rt)?;
        self.set_stage(Stage::Refinement)?;
        let text = Self::render(
            rt.templates,
            TemplateId::OutputsDiscussion,
            Binding::new().with("recommendations", recommendations),
        )?;
        self.append_main(Author::System, text)?;
        Ok(())
    }

    /// Runs the current instruction on each chat example in its own
    /// one-message side chat with the target model. Side chats hold exactly
    /// the context that was sent; responses live in the completion events.
    pub fn generate_outputs(&mut self, rt: &mut Runtime<'_>) -> Result<BTreeMap<u8, String>, SessionError> {
        let instruction = self.current_instruction().ok_or(SessionError::WrongStage(self.stage))?.text.clone();
        let mut outputs = BTreeMap::new();
        for n in 1..=EXAMPLE_COUNT {
            let input = self.chat_example(n)?;
            let prompt = render_prompt(&self.config.template, &instruction, &[], PromptInput::Text(&input))?;
            let side = self.open_side_chat(alloc::vec![(Author::System, prompt)])?;
            let completion = self.complete(rt.target, BackendRole::Target, ContextSpec::side(side))?;
            outputs.insert(n, completion.content);
        }
        self.emit(SessionEvent::OutputsGenerated { outputs: outputs.clone() })?;
        Ok(outputs)
    }

    /// Asks the chat model, in a side chat holding only this iteration's
    /// outputs discussion, to collect the user's comments and recommend
    /// instruction changes. Returns the free-text recommendations.
    pub fn run_feedback_analysis(&mut self, rt: &mut Runtime<'_>) -> Result<String, SessionError> {
        let instruction = self.current_instruction().ok_or(SessionError::WrongStage(self.stage))?;
        let since = instruction.created_turn;
        let start = Self::render(
            rt.templates,
            TemplateId::OutputsCotStart,
            Binding::new().with("prompt", instruction.text.clone()),
        )?;
        let mut seeds = alloc::vec![(Author::System, start)];
        seeds.extend(
            self.transcript
                .messages()
                .iter()
                .filter(|m| m.id > since && m.tags.channel == Channel::Main && m.tags.example.is_some())
                .map(|m| (m.author, m.content.clone())),
        );
        seeds.push((Author::System, Self::render(rt.templates, TemplateId::OutputsCotEnd, Binding::new())?));
        let side = self.open_side_chat(seeds)?;
        let completion = self.complete(rt.chat, BackendRole::Chat, ContextSpec::side(side))?;
        Ok(completion.content)
    }

    fn final_prompts(&self) -> Result<FinalPrompts, SessionError> {
        let instruction = self.current_instruction().ok_or(SessionError::NotEnded)?.clone();
        let bundle =
            PromptBundle { instruction, examples: self.accepted.clone(), template: self.config.template.clone() };
        Ok(FinalPrompts {
            fs_prompt: build_fs_prompt(&bundle, PromptInput::Placeholder)?,
            zs_prompt: build_zs_prompt(&bundle, PromptInput::Placeholder)?,
        })
    }

    /// The downloadable prompts; only available once the session has ended.
    pub fn finalize(&self) -> Result<FinalPrompts, SessionError> {
        if self.stage != Stage::Ended {
            return Err(SessionError::NotEnded);
        }
        self.final_prompts()
    }

    /// What the user sees of a message, if anything.
    pub fn visible(message: &Message) -> Option<VisibleMessage> {
        if message.tags.channel != Channel::Main {
            return None;
        }
        let text = match message.author {
            Author::User => message.content.clone(),
            Author::System if message.tags.notice => message.content.clone(),
            Author::Model => {
                let calls = parse_model_response(&message.content).ok()?;
                let call = calls.into_iter().next()?;
                if call.function() != ApiFunction::SubmitMessageToUser {
                    return None;
                }
                call.text_arg()?.to_string()
            }
            _ => return None,
        };
        Some(VisibleMessage { id: message.id, author: message.author, text, notice: message.tags.notice })
    }

    /// The user-visible transcript.
    pub fn visible_transcript(&self) -> Vec<VisibleMessage> {
        self.visible_since(1)
    }

    fn visible_since(&self, first_id: u64) -> Vec<VisibleMessage> {
        self.transcript.messages().iter().filter(|m| m.id >= first_id).filter_map(Self::visible).collect()
    }
}
