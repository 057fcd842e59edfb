//! The constrained function-call language spoken by the chat model.
//!
//! Every main-chat model turn must consist of one or more calls such as
//!
//! ```text
//! submit_message_to_user("Which aspects should the summary cover?")
//! output_accepted(2, "He said \"hi\".")
//! ```
//!
//! Only the seven functions in [`ApiFunction`] exist. Arguments are either
//! double-quoted string literals (escapes `\"`, `\\` and `\n`) or unsigned
//! integer literals. Prose and code fences around calls are ignored.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::templates::{Binding, TemplateId, TemplateSet};

/// Kind of a positional parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Text,
    Index,
}

impl ParamKind {
    fn describe(self) -> &'static str {
        match self {
            ParamKind::Text => "string",
            ParamKind::Index => "integer",
        }
    }
}

/// The closed set of functions the model may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFunction {
    SubmitMessageToUser,
    SubmitPrompt,
    SwitchToExample,
    ShowOriginalText,
    OutputAccepted,
    EndOutputsDiscussion,
    ConversationEnd,
}

impl ApiFunction {
    pub const ALL: [ApiFunction; 7] = [
        ApiFunction::SubmitMessageToUser,
        ApiFunction::SubmitPrompt,
        ApiFunction::SwitchToExample,
        ApiFunction::ShowOriginalText,
        ApiFunction::OutputAccepted,
        ApiFunction::EndOutputsDiscussion,
        ApiFunction::ConversationEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ApiFunction::SubmitMessageToUser => "submit_message_to_user",
            ApiFunction::SubmitPrompt => "submit_prompt",
            ApiFunction::SwitchToExample => "switch_to_example",
            ApiFunction::ShowOriginalText => "show_original_text",
            ApiFunction::OutputAccepted => "output_accepted",
            ApiFunction::EndOutputsDiscussion => "end_outputs_discussion",
            ApiFunction::ConversationEnd => "conversation_end",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Parameter names and kinds, in call order.
    pub fn params(self) -> &'static [(&'static str, ParamKind)] {
        match self {
            ApiFunction::SubmitMessageToUser => &[("msg", ParamKind::Text)],
            ApiFunction::SubmitPrompt => &[("prompt", ParamKind::Text)],
            ApiFunction::SwitchToExample => &[("example_num", ParamKind::Index)],
            ApiFunction::ShowOriginalText => &[("example_num", ParamKind::Index)],
            ApiFunction::OutputAccepted => &[("example_num", ParamKind::Index), ("output", ParamKind::Text)],
            ApiFunction::EndOutputsDiscussion => &[],
            ApiFunction::ConversationEnd => &[],
        }
    }

    pub fn arity(self) -> usize {
        self.params().len()
    }

    /// Human-readable signature, e.g. `output_accepted(example_num: integer, output: string)`.
    pub fn signature(self) -> String {
        let params: Vec<String> =
            self.params().iter().map(|(name, kind)| format!("{name}: {}", kind.describe())).collect();
        format!("{}({})", self.name(), params.join(", "))
    }
}

impl fmt::Display for ApiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arg {
    Text(String),
    Index(u32),
}

impl Arg {
    pub fn kind(&self) -> ParamKind {
        match self {
            Arg::Text(_) => ParamKind::Text,
            Arg::Index(_) => ParamKind::Index,
        }
    }
}

/// Returned when constructing a call whose arguments do not fit the function.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{function} expects {expected}")]
pub struct ArityError {
    pub function: ApiFunction,
    pub expected: String,
}

/// A well-formed call of a known function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiCall {
    function: ApiFunction,
    args: Vec<Arg>,
}

impl ApiCall {
    pub fn new(function: ApiFunction, args: Vec<Arg>) -> Result<Self, ArityError> {
        let params = function.params();
        let fits = params.len() == args.len() && params.iter().zip(&args).all(|((_, kind), arg)| arg.kind() == *kind);
        if fits {
            Ok(Self { function, args })
        } else {
            Err(ArityError { function, expected: function.signature() })
        }
    }

    pub fn message_to_user(text: impl Into<String>) -> Self {
        Self { function: ApiFunction::SubmitMessageToUser, args: alloc::vec![Arg::Text(text.into())] }
    }

    pub fn submit_prompt(prompt: impl Into<String>) -> Self {
        Self { function: ApiFunction::SubmitPrompt, args: alloc::vec![Arg::Text(prompt.into())] }
    }

    pub fn switch_to_example(example_num: u32) -> Self {
        Self { function: ApiFunction::SwitchToExample, args: alloc::vec![Arg::Index(example_num)] }
    }

    pub fn show_original_text(example_num: u32) -> Self {
        Self { function: ApiFunction::ShowOriginalText, args: alloc::vec![Arg::Index(example_num)] }
    }

    pub fn output_accepted(example_num: u32, output: impl Into<String>) -> Self {
        Self {
            function: ApiFunction::OutputAccepted,
            args: alloc::vec![Arg::Index(example_num), Arg::Text(output.into())],
        }
    }

    pub fn end_outputs_discussion() -> Self {
        Self { function: ApiFunction::EndOutputsDiscussion, args: Vec::new() }
    }

    pub fn conversation_end() -> Self {
        Self { function: ApiFunction::ConversationEnd, args: Vec::new() }
    }

    pub fn function(&self) -> ApiFunction {
        self.function
    }

    pub fn args(&self) -> &[Arg] {
        &self.args
    }

    /// First text argument, if the function takes one.
    pub fn text_arg(&self) -> Option<&str> {
        self.args.iter().find_map(|a| match a {
            Arg::Text(t) => Some(t.as_str()),
            Arg::Index(_) => None,
        })
    }

    /// First index argument, if the function takes one.
    pub fn index_arg(&self) -> Option<u32> {
        self.args.iter().find_map(|a| match a {
            Arg::Index(i) => Some(*i),
            Arg::Text(_) => None,
        })
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_api_call(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    NoCallFound,
    UnknownFunction,
    ArityMismatch,
    BadLiteral,
    UnterminatedString,
}

/// Why a model response could not be turned into calls.
///
/// `position` is a character offset into the raw response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?} at {position}: {detail}")]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    pub position: usize,
    pub detail: String,
}

/// Emits the canonical source text of a call.
pub fn render_api_call(call: &ApiCall) -> String {
    let mut out = String::from(call.function.name());
    out.push('(');
    for (n, arg) in call.args.iter().enumerate() {
        if n > 0 {
            out.push_str(", ");
        }
        match arg {
            Arg::Index(i) => out.push_str(&i.to_string()),
            Arg::Text(t) => {
                out.push('"');
                for c in t.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
        }
    }
    out.push(')');
    out
}

/// Extracts every well-formed call from one model response, in source order.
///
/// Scanning looks for the seven known names at identifier boundaries followed
/// by `(`. Everything else, including code-fence lines, is prose and is
/// skipped. A malformed first candidate fails the whole response; malformed
/// later candidates are dropped. Runs in time linear in `raw.len()`.
pub fn parse_model_response(raw: &str) -> Result<Vec<ApiCall>, ParseDiagnostic> {
    let scanner = Scanner { src: raw, bytes: raw.as_bytes() };
    let mut calls = Vec::new();
    let mut first_unknown: Option<(usize, String)> = None;
    let mut seen_candidate = false;
    let mut pos = 0;

    while pos < scanner.bytes.len() {
        let b = scanner.bytes[pos];
        if !is_ident_start(b) || (pos > 0 && is_ident_byte(scanner.bytes[pos - 1])) {
            pos += 1;
            continue;
        }
        let start = pos;
        let mut end = pos;
        while end < scanner.bytes.len() && is_ident_byte(scanner.bytes[end]) {
            end += 1;
        }
        let ident = &raw[start..end];
        let after_ws = scanner.skip_ws(end);
        let opens = scanner.bytes.get(after_ws) == Some(&b'(');

        match ApiFunction::from_name(ident) {
            Some(function) if opens => {
                let first = !seen_candidate;
                seen_candidate = true;
                match scanner.parse_args(function, start, after_ws + 1) {
                    Ok((call, next)) => {
                        calls.push(call);
                        pos = next;
                    }
                    Err(failure) if first => return Err(scanner.diagnostic(failure)),
                    Err(failure) => {
                        if failure.kind == DiagnosticKind::UnterminatedString {
                            break;
                        }
                        pos = failure.resume.max(end);
                    }
                }
            }
            None if opens && after_ws == end && first_unknown.is_none() => {
                first_unknown = Some((start, ident.to_string()));
                pos = end;
            }
            _ => pos = end,
        }
    }

    if !calls.is_empty() {
        return Ok(calls);
    }
    match first_unknown {
        Some((at, name)) => Err(ParseDiagnostic {
            kind: DiagnosticKind::UnknownFunction,
            position: scanner.char_offset(at),
            detail: format!("`{name}` is not one of the available functions"),
        }),
        None => Err(ParseDiagnostic {
            kind: DiagnosticKind::NoCallFound,
            position: raw.chars().count(),
            detail: "the response contains no function call".to_string(),
        }),
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

struct Failure {
    kind: DiagnosticKind,
    at: usize,
    resume: usize,
    detail: String,
}

struct Scanner<'a> {
    src: &'a str,
    bytes: &'a [u8],
}

impl Scanner<'_> {
    fn skip_ws(&self, mut pos: usize) -> usize {
        while pos < self.bytes.len() && self.bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        pos
    }

    fn char_offset(&self, byte: usize) -> usize {
        self.src[..byte].chars().count()
    }

    fn diagnostic(&self, failure: Failure) -> ParseDiagnostic {
        ParseDiagnostic { kind: failure.kind, position: self.char_offset(failure.at), detail: failure.detail }
    }

    fn bad(&self, at: usize, detail: String) -> Failure {
        Failure { kind: DiagnosticKind::BadLiteral, at, resume: at, detail }
    }

    /// Parses `arg {, arg} )` starting just after the opening parenthesis.
    fn parse_args(
        &self,
        function: ApiFunction,
        call_start: usize,
        mut pos: usize,
    ) -> Result<(ApiCall, usize), Failure> {
        let mut args = Vec::new();
        pos = self.skip_ws(pos);
        if self.bytes.get(pos) != Some(&b')') {
            loop {
                let (arg, next) = self.parse_arg(pos)?;
                args.push(arg);
                pos = self.skip_ws(next);
                match self.bytes.get(pos) {
                    Some(b',') => pos = self.skip_ws(pos + 1),
                    Some(b')') => break,
                    Some(_) => return Err(self.bad(pos, format!("expected `,` or `)` in call to {function}"))),
                    None => return Err(self.bad(pos, format!("input ended inside call to {function}"))),
                }
            }
        }
        let after = pos + 1;
        match ApiCall::new(function, args) {
            Ok(call) => Ok((call, after)),
            Err(e) => Err(Failure {
                kind: DiagnosticKind::ArityMismatch,
                at: call_start,
                resume: after,
                detail: format!("{} expects {}", e.function, e.expected),
            }),
        }
    }

    fn parse_arg(&self, pos: usize) -> Result<(Arg, usize), Failure> {
        match self.bytes.get(pos) {
            Some(b'"') => self.parse_string(pos),
            Some(b) if b.is_ascii_digit() => {
                let mut end = pos;
                while end < self.bytes.len() && self.bytes[end].is_ascii_digit() {
                    end += 1;
                }
                if end < self.bytes.len() && (is_ident_byte(self.bytes[end]) || self.bytes[end] == b'.') {
                    return Err(self.bad(pos, "integer literals must consist of digits only".to_string()));
                }
                let value = self.src[pos..end]
                    .parse::<u32>()
                    .map_err(|_| self.bad(pos, "integer literal out of range".to_string()))?;
                Ok((Arg::Index(value), end))
            }
            Some(_) => Err(self.bad(pos, "arguments must be double-quoted string literals or integers".to_string())),
            None => Err(self.bad(pos, "input ended where an argument was expected".to_string())),
        }
    }

    fn parse_string(&self, open: usize) -> Result<(Arg, usize), Failure> {
        let mut text = String::new();
        let mut pos = open + 1;
        let mut chunk = pos;
        while pos < self.bytes.len() {
            match self.bytes[pos] {
                b'"' => {
                    text.push_str(&self.src[chunk..pos]);
                    return Ok((Arg::Text(text), pos + 1));
                }
                b'\\' => {
                    text.push_str(&self.src[chunk..pos]);
                    let unescaped = match self.bytes.get(pos + 1) {
                        Some(b'"') => '"',
                        Some(b'\\') => '\\',
                        Some(b'n') => '\n',
                        Some(_) => {
                            return Err(
                                self.bad(pos, "unsupported escape; only \\\", \\\\ and \\n are allowed".to_string())
                            )
                        }
                        None => break,
                    };
                    text.push(unescaped);
                    pos += 2;
                    chunk = pos;
                }
                _ => pos += 1,
            }
        }
        Err(Failure {
            kind: DiagnosticKind::UnterminatedString,
            at: open,
            resume: self.bytes.len(),
            detail: "string literal is never closed; escape double quotes inside values as \\\"".to_string(),
        })
    }
}

/// Builds the corrective system message sent back to the model after a
/// response that could not be parsed.
pub fn repair_message(diag: &ParseDiagnostic, templates: &TemplateSet) -> String {
    let mut out = String::from("Your last response could not be executed. ");
    out.push_str(&describe_problem(diag));
    out.push_str("\n\n");
    let init = templates.render(TemplateId::Initialization, &Binding::new()).unwrap_or_default();
    // Restate only the protocol paragraph of the opening instruction.
    let protocol = init.find("You should communicate").map_or(init.as_str(), |at| &init[at..]);
    out.push_str(protocol.trim());
    out.push('\n');
    out.push_str(&templates.render(TemplateId::ApiInstruction, &Binding::new()).unwrap_or_default());
    out
}

fn describe_problem(diag: &ParseDiagnostic) -> String {
    match diag.kind {
        DiagnosticKind::NoCallFound => "It contained no function call; plain text is never delivered.".to_string(),
        DiagnosticKind::UnknownFunction => format!("{}.", diag.detail),
        DiagnosticKind::ArityMismatch => format!("Wrong arguments: {}.", diag.detail),
        DiagnosticKind::BadLiteral => format!(
            "Invalid argument at character {}: {}. Use double-quoted strings and plain integers.",
            diag.position, diag.detail
        ),
        DiagnosticKind::UnterminatedString => format!(
            "A string literal starting at character {} is never closed. Escape every double quote \
             inside a parameter as \\\", backslashes as \\\\ and newlines as \\n.",
            diag.position
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn parse_one(src: &str) -> ApiCall {
        let calls = parse_model_response(src).unwrap();
        assert_eq!(calls.len(), 1, "{calls:?}");
        calls.into_iter().next().unwrap()
    }

    #[test]
    fn parses_submit_prompt() {
        assert_eq!(parse_one(r#"submit_prompt("Summarize the text.")"#), ApiCall::submit_prompt("Summarize the text."));
    }

    #[test]
    fn parses_escaped_quotes() {
        let call = parse_one(r#"output_accepted(2, "He said \"hi\".")"#);
        assert_eq!(call.args(), &[Arg::Index(2), Arg::Text("He said \"hi\".".into())]);
    }

    #[test]
    fn free_text_is_no_call() {
        let d = parse_model_response("Sure, here is my answer.").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::NoCallFound);
        assert_eq!(d.position, 24);
    }

    #[test]
    fn fenced_call() {
        let src = "```python\nend_outputs_discussion()\n```";
        assert_eq!(parse_one(src), ApiCall::end_outputs_discussion());
    }

    #[test]
    fn fence_inside_string_is_kept() {
        let src = "submit_message_to_user(\"```python\\nx\\n```\")";
        assert_eq!(parse_one(src).text_arg(), Some("```python\nx\n```"));
    }

    #[test]
    fn renders_canonical_forms() {
        assert_eq!(render_api_call(&ApiCall::switch_to_example(1)), "switch_to_example(1)");
        assert_eq!(render_api_call(&ApiCall::message_to_user("a \"b\"")), r#"submit_message_to_user("a \"b\"")"#);
        assert_eq!(render_api_call(&ApiCall::conversation_end()), "conversation_end()");
    }

    #[test]
    fn multiple_calls_in_order() {
        let src = "output_accepted(1, \"y\")\nswitch_to_example(2)";
        let calls = parse_model_response(src).unwrap();
        assert_eq!(calls, vec![ApiCall::output_accepted(1, "y"), ApiCall::switch_to_example(2)]);
    }

    #[test]
    fn whitespace_around_tokens() {
        let call = parse_one("output_accepted ( 3 ,\n  \"x\" )");
        assert_eq!(call, ApiCall::output_accepted(3, "x"));
    }

    #[test]
    fn known_name_inside_identifier_is_not_a_call() {
        let d = parse_model_response("my_submit_prompt(\"x\")").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::UnknownFunction);
    }

    #[test]
    fn first_malformed_candidate_fails() {
        let d = parse_model_response("switch_to_example() submit_prompt(\"x\")").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::ArityMismatch);
        assert_eq!(d.position, 0);
    }

    #[test]
    fn later_malformed_candidate_is_dropped() {
        let calls = parse_model_response("submit_prompt(\"x\") switch_to_example(\"two\")").unwrap();
        assert_eq!(calls, vec![ApiCall::submit_prompt("x")]);
    }

    #[test]
    fn diagnostic_kinds() {
        let kind = |s: &str| parse_model_response(s).unwrap_err().kind;
        assert_eq!(kind("submit_prompt(x)"), DiagnosticKind::BadLiteral);
        assert_eq!(kind("switch_to_example(1.5)"), DiagnosticKind::BadLiteral);
        assert_eq!(kind("submit_prompt('x')"), DiagnosticKind::BadLiteral);
        assert_eq!(kind("submit_prompt(\"x\\t\")"), DiagnosticKind::BadLiteral);
        assert_eq!(kind("submit_prompt(\"x"), DiagnosticKind::UnterminatedString);
        assert_eq!(kind("submit_prompt(\"a\", \"b\")"), DiagnosticKind::ArityMismatch);
        assert_eq!(kind("foo(\"x\")"), DiagnosticKind::UnknownFunction);
    }

    #[test]
    fn positions_count_characters() {
        let d = parse_model_response("éé submit_prompt(\"x").unwrap_err();
        assert_eq!(d.kind, DiagnosticKind::UnterminatedString);
        assert_eq!(d.position, 17);
    }

    #[test]
    fn signatures() {
        assert_eq!(ApiFunction::SwitchToExample.signature(), "switch_to_example(example_num: integer)");
        assert_eq!(ApiFunction::ConversationEnd.arity(), 0);
    }

    #[test]
    fn repair_texts() {
        let templates = TemplateSet::default();
        let no_call = parse_model_response("hello").unwrap_err();
        assert!(repair_message(&no_call, &templates).contains("Format ALL your answers python code"));

        let arity = parse_model_response("switch_to_example()").unwrap_err();
        let text = repair_message(&arity, &templates);
        assert!(text.contains("switch_to_example(example_num: integer)"), "{text}");

        let unterminated = parse_model_response("submit_prompt(\"abc").unwrap_err();
        let text = repair_message(&unterminated, &templates);
        assert!(text.contains("Escape every double quote"), "{text}");
    }
}
