//! Zero-shot and few-shot prompt assembly in a target model's chat format.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chatstore::EXAMPLE_COUNT;

/// Literal written in place of the task input in downloadable prompts.
pub const INPUT_PLACEHOLDER: &str = "{{input}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub version: u32,
    /// Id of the message that submitted this version.
    pub created_turn: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedExample {
    pub example_num: u8,
    pub input_text: String,
    pub output_text: String,
    pub accepted_turn: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSegments {
    pub preamble: String,
    pub system_open: String,
    pub system_close: String,
    pub user_open: String,
    pub user_close: String,
    pub assistant_open: String,
    pub assistant_close: String,
    pub generation_cue: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTemplate {
    pub name: String,
    pub segments: TemplateSegments,
}

impl TargetTemplate {
    pub const NAMES: [&'static str; 2] = ["generic", "llama3"];

    /// Bracketed, format-neutral turns: `[SYSTEM]`, `[USER]`, `[ASSISTANT]`.
    pub fn generic() -> Self {
        Self {
            name: "generic".into(),
            segments: TemplateSegments {
                preamble: String::new(),
                system_open: "[SYSTEM]\n".into(),
                system_close: "\n".into(),
                user_open: "[USER]\n".into(),
                user_close: "\n".into(),
                assistant_open: "[ASSISTANT]\n".into(),
                assistant_close: "\n".into(),
                generation_cue: String::new(),
            },
        }
    }

    /// Llama 3 instruct header tokens.
    pub fn llama3() -> Self {
        let header = |role: &str| {
            let mut s = String::from("<|start_header_id|>");
            s.push_str(role);
            s.push_str("<|end_header_id|>\n\n");
            s
        };
        Self {
            name: "llama3".into(),
            segments: TemplateSegments {
                preamble: "<|begin_of_text|>".into(),
                system_open: header("system"),
                system_close: "<|eot_id|>".into(),
                user_open: header("user"),
                user_close: "<|eot_id|>".into(),
                assistant_open: header("assistant"),
                assistant_close: "<|eot_id|>".into(),
                generation_cue: String::new(),
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "generic" => Some(Self::generic()),
            "llama3" => Some(Self::llama3()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub instruction: Instruction,
    pub examples: Vec<AcceptedExample>,
    pub template: TargetTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptInput<'a> {
    Text(&'a str),
    Placeholder,
}

impl PromptInput<'_> {
    fn as_str(&self) -> &str {
        match self {
            PromptInput::Text(t) => t,
            PromptInput::Placeholder => INPUT_PLACEHOLDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("example {0} is out of range 1..={EXAMPLE_COUNT}")]
    ExampleOutOfRange(u8),
}

/// Renders an instruction, optional demonstration pairs and a final input.
/// Segments and payloads are concatenated verbatim; nothing is escaped.
pub fn render_prompt(
    template: &TargetTemplate,
    instruction: &str,
    examples: &[AcceptedExample],
    input: PromptInput<'_>,
) -> Result<String, PromptError> {
    if instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    let seg = &template.segments;
    let mut ordered: Vec<&AcceptedExample> = examples.iter().collect();
    ordered.sort_by_key(|e| e.example_num);

    let mut out = String::new();
    out.push_str(&seg.preamble);
    out.push_str(&seg.system_open);
    out.push_str(instruction);
    out.push_str(&seg.system_close);
    for ex in ordered {
        out.push_str(&seg.user_open);
        out.push_str(&ex.input_text);
        out.push_str(&seg.user_close);
        out.push_str(&seg.assistant_open);
        out.push_str(&ex.output_text);
        out.push_str(&seg.assistant_close);
    }
    out.push_str(&seg.user_open);
    out.push_str(input.as_str());
    out.push_str(&seg.user_close);
    out.push_str(&seg.assistant_open);
    out.push_str(&seg.generation_cue);
    Ok(out)
}

pub fn build_zs_prompt(bundle: &PromptBundle, input: PromptInput<'_>) -> Result<String, PromptError> {
    render_prompt(&bundle.template, &bundle.instruction.text, &[], input)
}

pub fn build_fs_prompt(bundle: &PromptBundle, input: PromptInput<'_>) -> Result<String, PromptError> {
    render_prompt(&bundle.template, &bundle.instruction.text, &bundle.examples, input)
}

/// Inserts or replaces the entry for `example.example_num`.
pub fn register_accepted(examples: &mut Vec<AcceptedExample>, example: AcceptedExample) -> Result<(), PromptError> {
    if !(1..=EXAMPLE_COUNT).contains(&example.example_num) {
        return Err(PromptError::ExampleOutOfRange(example.example_num));
    }
    match examples.iter_mut().find(|e| e.example_num == example.example_num) {
        Some(slot) => *slot = example,
        None => {
            examples.push(example);
            examples.sort_by_key(|e| e.example_num);
        }
    }
    Ok(())
}

/// Contents of a downloadable prompt file: the rendering, newline-terminated.
pub fn prompt_file_contents(rendered: &str) -> String {
    let mut out = String::from(rendered);
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

/// Rough token estimate for display (characters / 4, rounded up).
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
