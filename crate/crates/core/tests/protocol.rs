use std::time::{Duration, Instant};

use cpe_core::protocol::{parse_model_response, render_api_call, ApiCall, ApiFunction, Arg, DiagnosticKind, ParamKind};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    input: String,
    kind: DiagnosticKind,
}

fn corpus() -> Vec<Case> {
    include_str!("fixtures/malformed_corpus.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn arb_call() -> impl Strategy<Value = ApiCall> {
    (prop::sample::select(ApiFunction::ALL.to_vec()), any::<String>(), any::<u32>()).prop_map(|(f, text, index)| {
        let args = f
            .params()
            .iter()
            .map(|(_, kind)| match kind {
                ParamKind::Text => Arg::Text(text.clone()),
                ParamKind::Index => Arg::Index(index),
            })
            .collect();
        ApiCall::new(f, args).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_then_parse_is_identity(call in arb_call()) {
        let parsed = parse_model_response(&render_api_call(&call)).unwrap();
        prop_assert_eq!(parsed, vec![call]);
    }

    #[test]
    fn calls_survive_surrounding_prose(calls in prop::collection::vec(arb_call(), 1..4)) {
        let text = calls
            .iter()
            .map(render_api_call)
            .collect::<Vec<_>>()
            .join("\nand then, as planned,\n");
        let wrapped = format!("Sure.\n```\n{text}\n```\nDone.");
        prop_assert_eq!(parse_model_response(&wrapped).unwrap(), calls);
    }

    #[test]
    fn parser_never_panics(raw in any::<String>()) {
        let _ = parse_model_response(&raw);
    }
}

#[test]
fn malformed_corpus_kinds() {
    let cases = corpus();
    assert_eq!(cases.len(), 50);
    for case in cases {
        let diag = parse_model_response(&case.input).expect_err(&case.input);
        assert_eq!(diag.kind, case.kind, "input {:?}: {}", case.input, diag);
        assert!(diag.position <= case.input.chars().count());
    }
}

#[test]
fn later_malformed_call_dropped() {
    let calls = parse_model_response("switch_to_example(2)\noutput_accepted(x)").unwrap();
    assert_eq!(calls, vec![ApiCall::switch_to_example(2)]);
}

#[test]
fn fence_inside_string_kept() {
    let call = ApiCall::message_to_user("```\ncode\n```");
    assert_eq!(parse_model_response(&render_api_call(&call)).unwrap(), vec![call]);
}

fn time_parse(input: &str) -> Duration {
    let start = Instant::now();
    let _ = parse_model_response(input);
    start.elapsed()
}

#[test]
fn large_inputs_parse_quickly() {
    let size = 100 * 1024;
    let inputs = [
        "a".repeat(size),
        "submit_prompt(".repeat(size / 14),
        format!("submit_prompt(\"{}", "x".repeat(size)),
        format!("submit_message_to_user(\"{}\")", "\\\"".repeat(size / 2)),
        "foo( ".repeat(size / 5),
        "switch_to_example(1) ".repeat(size / 21),
        "(((((".repeat(size / 5),
    ];
    for input in &inputs {
        let took = time_parse(input);
        assert!(took < Duration::from_millis(if cfg!(debug_assertions) { 100 } else { 10 }), "{took:?}");
    }
}
