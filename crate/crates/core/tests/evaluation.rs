use cpe_core::backend::{BackendError, ChatBackend, ChatRequest, Completion, ScriptedBackend};
use cpe_core::demo::demo_script;
use cpe_core::evalsuite::{
    aggregate, instruction_distance, Candidate, EvalError, EvalOpError, EvaluationItem, Provenance, Ranking,
    SurveyResponse,
};
use cpe_core::templates::TemplateSet;
use cpe_core::{Runtime, Session};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference Levenshtein distance over the full (n+1)x(m+1) table.
fn oracle_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

const TRAJECTORY_FIRST: &str =
    "Generate a list of main claims for each debate, grouped by topic, in 1-2 concise sentences per claim.";
const TRAJECTORY_FINAL: &str = "Generate a list of main claims for each debate, grouped by topic, in 1-2 concise sentences per claim, without specific examples, breaking down complex or multi-topic claims into simpler separate ones, and avoiding redundant or repetitive claims.";

#[test]
fn oracle_goldens() {
    assert_eq!(oracle_distance("kitten", "sitting"), 3);
    assert_eq!(oracle_distance("", "abcd"), 4);
    assert_eq!(oracle_distance(TRAJECTORY_FIRST, TRAJECTORY_FINAL), 144);
}

#[test]
fn distance_matches_goldens() {
    assert_eq!(instruction_distance("abc", "abc"), 0);
    assert_eq!(instruction_distance("kitten", "sitting"), 3);
    assert_eq!(instruction_distance("", "abcd"), 4);
    assert_eq!(instruction_distance(TRAJECTORY_FIRST, TRAJECTORY_FINAL), 144);
}

proptest! {
    #[test]
    fn distance_agrees_with_oracle(a in "[a-c]{0,12}", b in ".{0,12}") {
        prop_assert_eq!(instruction_distance(&a, &b), oracle_distance(&a, &b));
    }

    #[test]
    fn distance_is_a_metric(a in "[ab ]{0,10}", b in "[ab ]{0,10}", c in "[ab ]{0,10}") {
        prop_assert_eq!(instruction_distance(&a, &a), 0);
        prop_assert_eq!(instruction_distance(&a, &b), instruction_distance(&b, &a));
        prop_assert!(instruction_distance(&a, &c) <= instruction_distance(&a, &b) + instruction_distance(&b, &c));
        prop_assert_eq!(instruction_distance(&a, &b) == 0, a == b);
    }
}

pub fn synthetic_items(n: u32, seed: u64) -> Vec<EvaluationItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|id| {
            let mut order = [0u8, 1, 2];
            order.shuffle(&mut rng);
            let best = rng.gen_range(0..3u8);
            let worst = (best + rng.gen_range(1..3u8)) % 3;
            EvaluationItem {
                item_id: id,
                input_text: format!("input {id}"),
                candidates: Provenance::ALL
                    .iter()
                    .map(|&p| Candidate { provenance: p, text: format!("{p:?} {id}") })
                    .collect(),
                display_order: order,
                ranking: Some(Ranking { best, worst }),
            }
        })
        .collect()
}

#[test]
fn tally_conserves_counts() {
    let mut items = synthetic_items(112, 3);
    let tally = aggregate(&items).unwrap();
    let rows = Provenance::ALL.map(|p| *tally.get(p));
    assert_eq!(rows.iter().map(|r| r.best).sum::<u32>(), 112);
    assert_eq!(rows.iter().map(|r| r.middle).sum::<u32>(), 112);
    assert_eq!(rows.iter().map(|r| r.worst).sum::<u32>(), 112);
    assert!(rows.iter().all(|r| r.total() == 112));
    items.reverse();
    items.swap(3, 90);
    assert_eq!(aggregate(&items).unwrap(), tally);
}

fn ended(iterations: u32) -> (Session, ScriptedBackend) {
    let script = demo_script(iterations);
    let templates = TemplateSet::default();
    let mut s = Session::create("e", script.config());
    let mut chat = ScriptedBackend::new(script.chat.clone());
    let mut target = ScriptedBackend::new(script.target.clone());
    let mut rt = Runtime { chat: &mut chat, target: &mut target, templates: &templates };
    s.start_session(script.data.clone(), &mut rt).unwrap();
    for m in &script.user_messages {
        s.post_user_message(m, &mut rt).unwrap();
    }
    (s, target)
}

#[test]
fn evaluation_built_blind_and_ranked() {
    let (mut s, mut target) = ended(1);
    let templates = TemplateSet::default();
    let eval = s.build_evaluation(&mut target, &templates, 11).unwrap().clone();
    assert_eq!(eval.items.len(), 8);
    assert!(eval.skipped.is_empty());
    assert_eq!(target.recorded_requests().len(), 3 + 24);
    assert_eq!(target.remaining(), 0);

    let json = serde_json::to_string(&eval.blind_items()).unwrap();
    assert!(!json.contains("provenance"));
    assert!(!json.contains("Baseline") && !json.contains("baseline\""));

    for item in &eval.items {
        let mut sorted = item.display_order;
        sorted.sort();
        assert_eq!(sorted, [0, 1, 2]);
        let baseline_req = &target.recorded_requests()[3 + 3 * (item.item_id as usize - 1)];
        assert!(baseline_req.messages()[0].content.contains("Summarize the main points"));
    }

    for item in &eval.items {
        s.record_ranking(item.item_id, 0, 2, false).unwrap();
    }
    assert_eq!(s.record_ranking(1, 0, 1, false), Err(EvalOpError::Eval(EvalError::AlreadyRanked(1))));
    s.record_ranking(1, 1, 0, true).unwrap();
    let tally = s.rank_tally().unwrap();
    assert_eq!(tally.baseline.total(), 8);

    let replayed = Session::replay(s.log().iter().cloned()).unwrap();
    assert_eq!(replayed, s);
}

#[test]
fn same_seed_same_orders() {
    let (mut a, mut ta) = ended(1);
    let (mut b, mut tb) = ended(1);
    let templates = TemplateSet::default();
    let ea = a.build_evaluation(&mut ta, &templates, 5).unwrap().clone();
    let eb = b.build_evaluation(&mut tb, &templates, 5).unwrap().clone();
    assert_eq!(ea, eb);
}

#[test]
fn evaluation_requires_end() {
    let script = demo_script(1);
    let mut s = Session::create("x", script.config());
    let mut target = ScriptedBackend::new(["a"]);
    let r = s.build_evaluation(&mut target, &TemplateSet::default(), 1);
    assert_eq!(r.unwrap_err(), EvalOpError::Eval(EvalError::NotEnded));
}

struct Flaky {
    inner: ScriptedBackend,
    fail_on: usize,
    calls: usize,
}

impl ChatBackend for Flaky {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError> {
        self.calls += 1;
        if self.calls == self.fail_on {
            return Err(BackendError::Timeout);
        }
        self.inner.complete(req)
    }
}

#[test]
fn failing_item_is_skipped() {
    let (mut s, target) = ended(1);
    let mut flaky = Flaky { inner: target, fail_on: 5, calls: 0 };
    let eval = s.build_evaluation(&mut flaky, &TemplateSet::default(), 1).unwrap();
    assert_eq!(eval.items.len(), 7);
    assert_eq!(eval.skipped.len(), 1);
    assert_eq!(eval.skipped[0].item_id, 2);
}

#[test]
fn survey_once_after_end() {
    let (mut s, _) = ended(1);
    let ok = SurveyResponse { satisfaction: 5, thinking_process: 5, pleasantness: 5, convergence_time: 4 };
    assert_eq!(
        s.record_survey(SurveyResponse { satisfaction: 6, ..ok }),
        Err(EvalOpError::Eval(EvalError::ScoreOutOfRange(6)))
    );
    s.record_survey(ok).unwrap();
    assert_eq!(s.record_survey(ok), Err(EvalOpError::Eval(EvalError::DuplicateSurvey)));
    assert_eq!(s.survey(), Some(&ok));
}
