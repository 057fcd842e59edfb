//! Blind best/worst ranking of baseline, zero-shot and few-shot outputs, the
//! user survey and per-session statistics.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, Role};
use crate::chatstore::{Author, Channel};
use crate::orchestrator::{BackendRole, Session, SessionError, SessionEvent, Stage};
use crate::promptkit::{build_fs_prompt, build_zs_prompt, render_prompt, PromptBundle, PromptError, PromptInput};
use crate::templates::{TemplateId, TemplateSet};

/// Candidates per evaluation item.
pub const CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Baseline,
    Zs,
    Fs,
}

impl Provenance {
    /// Canonical candidate order.
    pub const ALL: [Provenance; CANDIDATES] = [Provenance::Baseline, Provenance::Zs, Provenance::Fs];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub provenance: Provenance,
    pub text: String,
}

/// Display positions (0..=2) picked as best and worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub best: u8,
    pub worst: u8,
}

impl Ranking {
    pub fn middle(self) -> u8 {
        3 - self.best - self.worst
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationItem {
    pub item_id: u32,
    pub input_text: String,
    /// In canonical order: baseline, zero-shot, few-shot.
    pub candidates: Vec<Candidate>,
    /// `display_order[p]` is the index into `candidates` shown at position `p`.
    pub display_order: [u8; CANDIDATES],
    pub ranking: Option<Ranking>,
}

impl EvaluationItem {
    pub fn provenance_at(&self, position: u8) -> Option<Provenance> {
        let idx = *self.display_order.get(usize::from(position))?;
        self.candidates.get(usize::from(idx)).map(|c| c.provenance)
    }

    /// The item as a ranking client may see it.
    pub fn blind(&self) -> BlindItem {
        BlindItem {
            item_id: self.item_id,
            input_text: self.input_text.clone(),
            outputs: self.display_order.iter().map(|&i| self.candidates[usize::from(i)].text.clone()).collect(),
            ranking: self.ranking,
        }
    }
}

/// An evaluation item without provenance, outputs in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindItem {
    pub item_id: u32,
    pub input_text: String,
    pub outputs: Vec<String>,
    pub ranking: Option<Ranking>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub items: Vec<EvaluationItem>,
    pub skipped: Vec<SkippedItem>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("the session has no evaluation examples")]
    NoEvalExamples,
    #[error("the session has not ended")]
    NotEnded,
    #[error("an evaluation was already built for this session")]
    AlreadyBuilt,
    #[error("no evaluation has been built")]
    NoEvaluation,
    #[error("best and worst must be different outputs")]
    SamePosition,
    #[error("position {0} is out of range 0..=2")]
    PositionOutOfRange(u8),
    #[error("item {0} is already ranked")]
    AlreadyRanked(u32),
    #[error("no item with id {0}")]
    UnknownItem(u32),
    #[error("items not ranked yet: {0:?}")]
    UnrankedItems(Vec<u32>),
    #[error("survey score {0} is outside 1..=5")]
    ScoreOutOfRange(u8),
    #[error("a survey response was already recorded")]
    DuplicateSurvey,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl Evaluation {
    pub fn item(&self, item_id: u32) -> Option<&EvaluationItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn blind_items(&self) -> Vec<BlindItem> {
        self.items.iter().map(EvaluationItem::blind).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.items.iter().all(|i| i.ranking.is_some())
    }

    /// Checks a ranking without storing it.
    pub fn check_ranking(&self, item_id: u32, best: u8, worst: u8, overwrite: bool) -> Result<(), EvalError> {
        for p in [best, worst] {
            if usize::from(p) >= CANDIDATES {
                return Err(EvalError::PositionOutOfRange(p));
            }
        }
        if best == worst {
            return Err(EvalError::SamePosition);
        }
        let item = self.item(item_id).ok_or(EvalError::UnknownItem(item_id))?;
        if item.ranking.is_some() && !overwrite {
            return Err(EvalError::AlreadyRanked(item_id));
        }
        Ok(())
    }

    pub fn record_ranking(&mut self, item_id: u32, best: u8, worst: u8, overwrite: bool) -> Result<(), EvalError> {
        self.check_ranking(item_id, best, worst, overwrite)?;
        if let Some(item) = self.items.iter_mut().find(|i| i.item_id == item_id) {
            item.ranking = Some(Ranking { best, worst });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankCounts {
    pub best: u32,
    pub middle: u32,
    pub worst: u32,
}

impl RankCounts {
    pub fn total(&self) -> u32 {
        self.best + self.middle + self.worst
    }
}

/// Best/middle/worst counts per provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankTally {
    pub baseline: RankCounts,
    pub zs: RankCounts,
    pub fs: RankCounts,
}

impl RankTally {
    pub fn get(&self, p: Provenance) -> &RankCounts {
        match p {
            Provenance::Baseline => &self.baseline,
            Provenance::Zs => &self.zs,
            Provenance::Fs => &self.fs,
        }
    }

    fn get_mut(&mut self, p: Provenance) -> &mut RankCounts {
        match p {
            Provenance::Baseline => &mut self.baseline,
            Provenance::Zs => &mut self.zs,
            Provenance::Fs => &mut self.fs,
        }
    }
}

/// Maps each ranking back to provenance and counts. Every item must be ranked.
pub fn aggregate(items: &[EvaluationItem]) -> Result<RankTally, EvalError> {
    let unranked: Vec<u32> = items.iter().filter(|i| i.ranking.is_none()).map(|i| i.item_id).collect();
    if !unranked.is_empty() {
        return Err(EvalError::UnrankedItems(unranked));
    }
    let mut tally = RankTally::default();
    for item in items {
        let Some(r) = item.ranking else { continue };
        let at = |pos: u8| item.provenance_at(pos).ok_or(EvalError::PositionOutOfRange(pos));
        tally.get_mut(at(r.best)?).best += 1;
        tally.get_mut(at(r.middle())?).middle += 1;
        tally.get_mut(at(r.worst)?).worst += 1;
    }
    Ok(tally)
}

/// Character-level Levenshtein distance.
pub fn instruction_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(ca != cb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub turns: usize,
    pub instruction_distance_chars: usize,
    pub iterations: usize,
}

/// Turns count main-channel user and model messages; system messages are
/// not part of the conversation the user sees as turns.
pub fn session_stats(session: &Session) -> Result<SessionStats, EvalError> {
    if session.stage() != Stage::Ended {
        return Err(EvalError::NotEnded);
    }
    let turns = session
        .transcript()
        .messages()
        .iter()
        .filter(|m| m.tags.channel == Channel::Main && matches!(m.author, Author::User | Author::Model))
        .count();
    let history = session.instruction_history();
    let instruction_distance_chars = match (history.first(), history.last()) {
        (Some(first), Some(last)) => instruction_distance(&first.text, &last.text),
        _ => 0,
    };
    Ok(SessionStats { turns, instruction_distance_chars, iterations: history.len() })
}

/// Likert scores (1..=5) for the four survey statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub satisfaction: u8,
    pub thinking_process: u8,
    pub pleasantness: u8,
    pub convergence_time: u8,
}

impl SurveyResponse {
    pub fn scores(&self) -> [u8; 4] {
        [self.satisfaction, self.thinking_process, self.pleasantness, self.convergence_time]
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        match self.scores().into_iter().find(|s| !(1..=5).contains(s)) {
            Some(bad) => Err(EvalError::ScoreOutOfRange(bad)),
            None => Ok(()),
        }
    }
}

fn single_prompt_request(prompt: String) -> Result<ChatRequest, SessionError> {
    Ok(ChatRequest::new(vec![ChatMessage { role: Role::System, content: prompt }])?)
}

impl Session {
    /// Generates baseline, zero-shot and few-shot outputs for every
    /// evaluation example and stores the shuffled items. An item whose
    /// generation fails is skipped and listed in `skipped`.
    pub fn build_evaluation(
        &mut self,
        target: &mut dyn ChatBackend,
        templates: &TemplateSet,
        seed: u64,
    ) -> Result<&Evaluation, EvalOpError> {
        if self.stage() != Stage::Ended {
            return Err(EvalError::NotEnded.into());
        }
        if self.evaluation().is_some() {
            return Err(EvalError::AlreadyBuilt.into());
        }
        let inputs: Vec<String> = self.data().map(|d| d.eval_examples.clone()).unwrap_or_default();
        if inputs.is_empty() {
            return Err(EvalError::NoEvalExamples.into());
        }
        let bundle = PromptBundle {
            instruction: self.current_instruction().cloned().ok_or(EvalError::NotEnded)?,
            examples: self.accepted().to_vec(),
            template: self.config().template.clone(),
        };
        let baseline = templates.body(TemplateId::BaselinePrompt).to_string();

        self.transact(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut evaluation = Evaluation { seed, ..Evaluation::default() };
            for (idx, input) in inputs.iter().enumerate() {
                let item_id = idx as u32 + 1;
                let mut display_order = [0u8, 1, 2];
                display_order.shuffle(&mut rng);
                let prompts = [
                    render_prompt(&bundle.template, &baseline, &[], PromptInput::Text(input))?,
                    build_zs_prompt(&bundle, PromptInput::Text(input))?,
                    build_fs_prompt(&bundle, PromptInput::Text(input))?,
                ];
                let mut candidates = Vec::with_capacity(CANDIDATES);
                let mut failure = None;
                for (provenance, prompt) in Provenance::ALL.into_iter().zip(prompts) {
                    let request = single_prompt_request(prompt)?;
                    match target.complete(&request) {
                        Ok(c) => {
                            s.emit(SessionEvent::CompletionReceived {
                                backend: BackendRole::Target,
                                content: c.content.clone(),
                                usage: c.usage.clone(),
                                latency_ms: u64::try_from(c.latency.as_millis()).unwrap_or(u64::MAX),
                            })?;
                            candidates.push(Candidate { provenance, text: c.content });
                        }
                        Err(e) => {
                            failure = Some(e.to_string());
                            break;
                        }
                    }
                }
                match failure {
                    Some(reason) => evaluation.skipped.push(SkippedItem { item_id, reason }),
                    None => evaluation.items.push(EvaluationItem {
                        item_id,
                        input_text: input.clone(),
                        candidates,
                        display_order,
                        ranking: None,
                    }),
                }
            }
            s.emit(SessionEvent::EvaluationBuilt { evaluation })?;
            Ok(())
        })?;
        Ok(self.evaluation().expect("just built"))
    }

    /// Stores a best/worst choice. Re-ranking an item needs `overwrite`.
    pub fn record_ranking(&mut self, item_id: u32, best: u8, worst: u8, overwrite: bool) -> Result<(), EvalOpError> {
        let evaluation = self.evaluation().ok_or(EvalError::NoEvaluation)?;
        evaluation.check_ranking(item_id, best, worst, overwrite)?;
        self.transact(|s| s.emit(SessionEvent::RankingRecorded { item_id, best, worst }))?;
        Ok(())
    }

    pub fn rank_tally(&self) -> Result<RankTally, EvalError> {
        aggregate(&self.evaluation().ok_or(EvalError::NoEvaluation)?.items)
    }

    /// Stores the survey answers; once per session, only after it ended.
    pub fn record_survey(&mut self, response: SurveyResponse) -> Result<(), EvalOpError> {
        if self.stage() != Stage::Ended {
            return Err(EvalError::NotEnded.into());
        }
        response.validate()?;
        if self.survey().is_some() {
            return Err(EvalError::DuplicateSurvey.into());
        }
        self.transact(|s| s.emit(SessionEvent::SurveyRecorded { response }))?;
        Ok(())
    }
}

/// Failure of an evaluation operation on a session.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalOpError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl From<PromptError> for EvalOpError {
    fn from(e: PromptError) -> Self {
        EvalOpError::Eval(EvalError::Prompt(e))
    }
}
