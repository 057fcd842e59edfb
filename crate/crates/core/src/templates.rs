//! System-instruction texts injected by the orchestrator, with `{{name}}`
//! placeholders.
//!
//! The compiled-in bodies are the defaults; a deployment may replace any of
//! them (see [`TemplateSet::with_override`]) as long as the replacement keeps
//! the same placeholder set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    Initialization,
    ApiInstruction,
    UserDataIntro,
    UserDataAnalysis,
    OutputsIntro,
    OutputsAnalysis,
    ExampleSwitch,
    OutputsCotStart,
    OutputsCotEnd,
    OutputsDiscussion,
    ConversationEnd,
    BaselinePrompt,
    BaselineMetaPrompt,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::Initialization,
        TemplateId::ApiInstruction,
        TemplateId::UserDataIntro,
        TemplateId::UserDataAnalysis,
        TemplateId::OutputsIntro,
        TemplateId::OutputsAnalysis,
        TemplateId::ExampleSwitch,
        TemplateId::OutputsCotStart,
        TemplateId::OutputsCotEnd,
        TemplateId::OutputsDiscussion,
        TemplateId::ConversationEnd,
        TemplateId::BaselinePrompt,
        TemplateId::BaselineMetaPrompt,
    ];

    /// File stem used when templates are loaded from a directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateId::Initialization => "initialization",
            TemplateId::ApiInstruction => "api_instruction",
            TemplateId::UserDataIntro => "user_data_intro",
            TemplateId::UserDataAnalysis => "user_data_analysis",
            TemplateId::OutputsIntro => "outputs_intro",
            TemplateId::OutputsAnalysis => "outputs_analysis",
            TemplateId::ExampleSwitch => "example_switch",
            TemplateId::OutputsCotStart => "outputs_cot_start",
            TemplateId::OutputsCotEnd => "outputs_cot_end",
            TemplateId::OutputsDiscussion => "outputs_discussion",
            TemplateId::ConversationEnd => "conversation_end",
            TemplateId::BaselinePrompt => "baseline_prompt",
            TemplateId::BaselineMetaPrompt => "baseline_meta_prompt",
        }
    }

    pub fn default_body(self) -> &'static str {
        match self {
            TemplateId::Initialization => INITIALIZATION,
            TemplateId::ApiInstruction => API_INSTRUCTION,
            TemplateId::UserDataIntro => USER_DATA_INTRO,
            TemplateId::UserDataAnalysis => USER_DATA_ANALYSIS,
            TemplateId::OutputsIntro => OUTPUTS_INTRO,
            TemplateId::OutputsAnalysis => OUTPUTS_ANALYSIS,
            TemplateId::ExampleSwitch => EXAMPLE_SWITCH,
            TemplateId::OutputsCotStart => OUTPUTS_COT_START,
            TemplateId::OutputsCotEnd => OUTPUTS_COT_END,
            TemplateId::OutputsDiscussion => OUTPUTS_DISCUSSION,
            TemplateId::ConversationEnd => CONVERSATION_END,
            TemplateId::BaselinePrompt => BASELINE_PROMPT,
            TemplateId::BaselineMetaPrompt => BASELINE_META_PROMPT,
        }
    }

    /// The declared placeholder set.
    pub fn placeholder_set(self) -> BTreeSet<String> {
        scan_placeholders(self.default_body())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template:?} needs a value for `{name}`")]
    MissingPlaceholder { template: TemplateId, name: String },
    #[error("template {template:?} has no placeholder `{name}`")]
    UnknownPlaceholder { template: TemplateId, name: String },
    #[error("override for {template:?} must use exactly the placeholders {expected:?}, found {found:?}")]
    PlaceholderSetChanged { template: TemplateId, expected: BTreeSet<String>, found: BTreeSet<String> },
}

/// Values for a template's placeholders.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Binding(BTreeMap<String, String>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(name.into(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

/// Returns every `{{name}}` in `body`. Names are ASCII lowercase letters,
/// digits and underscores; anything else between braces is literal text.
pub fn scan_placeholders(body: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for_each_segment(body, |seg| {
        if let Segment::Placeholder(name) = seg {
            names.insert(name.to_string());
        }
    });
    names
}

enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn for_each_segment<'a>(body: &'a str, mut f: impl FnMut(Segment<'a>)) {
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_placeholder_name(&after[..close]) => {
                f(Segment::Literal(&rest[..open]));
                f(Segment::Placeholder(&after[..close]));
                rest = &after[close + 2..];
            }
            _ => {
                f(Segment::Literal(&rest[..open + 2]));
                rest = after;
            }
        }
    }
    f(Segment::Literal(rest));
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// The active set of template bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    bodies: BTreeMap<TemplateId, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self { bodies: TemplateId::ALL.into_iter().map(|id| (id, id.default_body().to_string())).collect() }
    }
}

impl TemplateSet {
    /// Replaces one body. The replacement must keep the declared placeholders.
    pub fn with_override(mut self, id: TemplateId, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let found = scan_placeholders(&body);
        let expected = id.placeholder_set();
        if found != expected {
            return Err(TemplateError::PlaceholderSetChanged { template: id, expected, found });
        }
        self.bodies.insert(id, body);
        Ok(self)
    }

    pub fn body(&self, id: TemplateId) -> &str {
        &self.bodies[&id]
    }

    pub fn placeholder_set(&self, id: TemplateId) -> BTreeSet<String> {
        scan_placeholders(self.body(id))
    }

    /// Substitutes every placeholder in one pass; values are inserted as-is
    /// and never rescanned.
    pub fn render(&self, id: TemplateId, binding: &Binding) -> Result<String, TemplateError> {
        let body = self.body(id);
        let wanted = scan_placeholders(body);
        if let Some(name) = binding.0.keys().find(|k| !wanted.contains(*k)) {
            return Err(TemplateError::UnknownPlaceholder { template: id, name: name.clone() });
        }
        if let Some(name) = wanted.iter().find(|n| binding.get(n).is_none()) {
            return Err(TemplateError::MissingPlaceholder { template: id, name: name.clone() });
        }
        let mut out = String::with_capacity(body.len());
        for_each_segment(body, |seg| match seg {
            Segment::Literal(text) => out.push_str(text),
            Segment::Placeholder(name) => out.push_str(binding.get(name).unwrap_or_default()),
        });
        Ok(out)
    }
}

const INITIALIZATION: &str = "You and I (system) will work together to build a prompt for the task of the user via a chat with the user. This prompt will be fed to a model dedicated to perform the user's task. Our aim is to build a prompt that when fed to the model, produce outputs that are aligned with the user's expectations. Thus, the prompt should reflect the specific requirements and preferences of the user from the output as expressed in the chat. You will interact with the user to gather information regarding their preferences and needs. I will send the prompts you suggest to the dedicated model to generate outputs, and pass them back to you, so that you could discuss them with the user and get feedback. User time is valuable, keep the conversation pragmatic. Make the obvious decisions by your Don't greet the user at your first interaction.You should communicate with the user and system ONLY via python API described below, and not via direct messages. The input parameters to API functions should be string literals using double quotes. Remember to escape double-quote characters inside the parameter values. Note that the user is not aware of the API, so don't not tell the user which API you are going to call. Format ALL your answers python code calling one of the following functions:";

const API_INSTRUCTION: &str = "function submit_message_to_user(msg): call this function to submit your message to the user. Use markdown to mark the prompts and the outputs.

function submit_prompt(prompt): call this function to inform the system that you have a new suggestion for the prompt. Use it only with the prompts approved by the user.

function switch_to_example(example_num): call this function before you start discussing with the user an output of a specific example, and pass the example number as parameter.

function show_original_text(example_num): call this function when the user asks to show the original text of an example, and pass the example number as parameter.

function output_accepted(example_num, output): call this function every time the user unequivocally accepts an output. Pass the example number and the output text as parameters.

function end_outputs_discussion(): call this function after all the outputs have been discussed with the user and all 3 outputs were accepted by the user.

function conversation_end(): call this function when the user wants to end the conversation.";

const USER_DATA_INTRO: &str = "The user has provided some text examples. I've selected a few of them that you will use in the conversation. Note that your goal to build a generic prompt, and not for these specific examples.

{{examples}}";

const USER_DATA_ANALYSIS: &str = "Before suggesting the prompt, briefly discuss the text examples with the user and ask them relevant questions regarding their output requirements and preferences. Please take into account the specific characteristics of the data. Your suggested prompt should reflect the user's expectations from the task output as expressed during the chat. Share the suggested prompt with the user before submitting it. Remember to communicate only via API calls.";

const OUTPUTS_INTRO: &str =
    "Based on the suggested prompt, the model has produced the following outputs for the user input examples:

{{outputs}}";

const OUTPUTS_ANALYSIS: &str = "For each of 3 examples show the model output to the user and discuss it with them, one example at a time. Use switch_example API to navigate between examples. The discussion should take as long as necessary and result in an output accepted by the user in clear way, with no doubts, conditions or modifications. When the output is accepted, call output_accepted API passing the example number and the output text. After calling output_accepted call either switch_to_example API to move to the next example, or end_outputs_discussion API if all 3 have been accepted. Assume that the user comments relay to the output. Only when the user explicitly says that he wants to update the prompt and not the output, show the updated prompt to them. Remember to communicate only via API calls.";

const EXAMPLE_SWITCH: &str = "You have switched to {{example_num}}. Look at the user comments and the accepted outputs for the previous examples, apply them to the model output of this example, and present the result to the user. Indicate the example (number), and format the text so that the output and your text are separated by empty lines. Discuss the presented output taking into account the system conclusion for this example if exists.";

const OUTPUTS_COT_START: &str = "In the following discussion, the user was asked to give feedback on the model's outputs that were generated by the prompt \"{{prompt}}\". The outputs that did not meet the user's requirements were modified.";

const OUTPUTS_COT_END: &str = "Analyze the conversation above, and share the comments made by the user on Examples 1-3. Any comment should be shared, even if minor. If no comment has been made, accept the prompt. If any comment has been made, recommend how to improve the prompt so it would produce the accepted outputs directly.";

const OUTPUTS_DISCUSSION: &str = "{{recommendations}}

Continue your conversation with the user. Do the recommendations above suggest improvements to the prompt? If so, present the modified prompt to the user, and submit it only after the user approve it. Otherwise, if no modifications to the prompt are required, communicate it to user and suggest to finish the conversation.";

const CONVERSATION_END: &str = "This is the end of conversation. Say goodbye to the user, and inform that the final prompt that includes few-shot examples and is formatted for the {{model}} can be downloaded via **Download few shot prompt** button below. Also, kindly refer the user to the survey tab that is now available, and let the user know that we will appreciate any feedback.";

const BASELINE_PROMPT: &str = "Summarize the main points and key information from the provided text in a concise and clear manner, preserving the original meaning and content.";

const BASELINE_META_PROMPT: &str = "Generate a concise and general prompt for a summarization task in one sentence";
