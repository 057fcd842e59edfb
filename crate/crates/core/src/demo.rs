//! A complete scripted session: data, chat-model and target-model responses
//! and user messages that walk a session from setup to the end.
//!
//! Used by the test suites and by the command-line demo.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::scripted;
use crate::ingest::{select_examples, DataFormat, Row, SourceInfo, UserData};
use crate::orchestrator::SessionConfig;
use crate::promptkit::TargetTemplate;
use crate::protocol::{render_api_call, ApiCall};

pub const DEMO_SEED: u64 = 7;
pub const DEMO_ROWS: usize = 20;

pub const FIRST_INSTRUCTION: &str = "Summarize the debate transcript in three bullet points.";
pub const SECOND_INSTRUCTION: &str =
    "Summarize the debate transcript in three bullet points, one per speaker position, without quotes.";

#[derive(Debug, Clone)]
pub struct DemoScript {
    pub data: UserData,
    pub chat: Vec<String>,
    pub target: Vec<String>,
    pub user_messages: Vec<String>,
}

impl DemoScript {
    pub fn config(&self) -> SessionConfig {
        SessionConfig {
            chat: scripted(self.chat.iter().cloned()),
            target: scripted(self.target.iter().cloned()),
            template: TargetTemplate::generic(),
        }
    }
}

/// Rows of the demo data file, one debate snippet each.
pub fn demo_rows() -> Vec<Row> {
    (1..=DEMO_ROWS)
        .map(|i| Row {
            row: i,
            text: format!(
                "Debate {i}. Speaker A argues that policy {i} lowers costs. Speaker B replies that it shifts costs to region {i}."
            ),
            split: None,
        })
        .collect()
}

pub fn demo_data() -> UserData {
    let source = SourceInfo { filename: String::from("debates.csv"), format: DataFormat::Csv, total_rows: DEMO_ROWS };
    select_examples(demo_rows(), source, DEMO_SEED).expect("demo rows are valid")
}

fn say(text: &str) -> String {
    render_api_call(&ApiCall::message_to_user(text))
}

fn output(iteration: u32, example: u8) -> String {
    format!("- Point {example}.{iteration} a\n- Point {example}.{iteration} b\n- Point {example}.{iteration} c")
}

/// Chat responses for one outputs round: discuss and accept each example,
/// ending with the free-text feedback analysis.
fn outputs_round(chat: &mut Vec<String>, users: &mut Vec<String>, iteration: u32) {
    chat.push(format!(
        "{}\n{}",
        render_api_call(&ApiCall::switch_to_example(1)),
        say(&format!("Here is the output for example 1:\n{}\nDoes it look right?", output(iteration, 1)))
    ));
    for n in 1..=3u8 {
        users.push(format!("Example {n} looks fine."));
        chat.push(render_api_call(&ApiCall::output_accepted(u32::from(n), output(iteration, n))));
        if n < 3 {
            let next = n + 1;
            chat.push(say(&format!(
                "Here is the output for example {next}:\n{}\nIs it acceptable?",
                output(iteration, next)
            )));
        }
    }
    chat.push(format!(
        "User comments: outputs in iteration {iteration} were accepted.\nRecommendations: name each speaker position explicitly."
    ));
}

/// A session with `iterations` prompt versions (1 or 2), followed by the
/// target responses an evaluation of all eval examples needs.
pub fn demo_script(iterations: u32) -> DemoScript {
    let data = demo_data();
    let mut chat = Vec::new();
    let mut users = Vec::new();
    let mut target = Vec::new();

    chat.push(say("I have read your three texts. They are short debate snippets. What should the summary focus on?"));
    users.push(String::from("Three bullet points covering the main claims."));
    chat.push(render_api_call(&ApiCall::submit_prompt(FIRST_INSTRUCTION)));
    target.extend((1..=3).map(|n| output(1, n)));
    outputs_round(&mut chat, &mut users, 1);

    if iterations > 1 {
        chat.push(say(&format!(
            "Based on your comments I suggest this prompt:\n{SECOND_INSTRUCTION}\nShall I try it?"
        )));
        users.push(String::from("Yes, please try it."));
        chat.push(render_api_call(&ApiCall::submit_prompt(SECOND_INSTRUCTION)));
        target.extend((1..=3).map(|n| output(2, n)));
        outputs_round(&mut chat, &mut users, 2);
    }

    chat.push(say("All three outputs are approved. Do you want to finish with this prompt?"));
    users.push(String::from("Yes, I am done."));
    chat.push(render_api_call(&ApiCall::conversation_end()));
    chat.push(say("Thank you, your prompt is ready."));

    for item in 1..=data.eval_examples.len() {
        for draft in 1..=3 {
            target.push(format!("Eval {item} summary, draft {draft}."));
        }
    }

    DemoScript { data, chat, target, user_messages: users }
}
