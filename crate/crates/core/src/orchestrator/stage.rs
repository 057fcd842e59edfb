use core::fmt;

use serde::{Deserialize, Serialize};

/// Where a session is in the workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Stage {
    #[default]
    Setup,
    InitialDiscussion,
    OutputGeneration,
    /// Discussing the output of one example (1..=3).
    OutputDiscussion(u8),
    FeedbackAnalysis,
    Refinement,
    Ended,
}

impl Stage {
    /// The example under discussion, if any.
    pub fn current_example(self) -> Option<u8> {
        match self {
            Stage::OutputDiscussion(i) => Some(i),
            _ => None,
        }
    }

    pub fn is_active(self) -> bool {
        !matches!(self, Stage::Setup | Stage::Ended)
    }

    /// The complete transition table.
    pub fn can_transition(self, to: Stage) -> bool {
        use Stage::*;
        match (self, to) {
            (Setup, InitialDiscussion) => true,
            (InitialDiscussion, OutputGeneration) => true,
            (OutputGeneration, OutputDiscussion(_)) => true,
            (OutputDiscussion(i), OutputDiscussion(j)) => i != j,
            (OutputDiscussion(_), FeedbackAnalysis) => true,
            (FeedbackAnalysis, Refinement) => true,
            (Refinement, OutputGeneration) => true,
            (Refinement, Ended) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::OutputDiscussion(i) => write!(f, "OutputDiscussion({i})"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_edges() {
        assert!(Stage::Setup.can_transition(Stage::InitialDiscussion));
        assert!(Stage::Refinement.can_transition(Stage::OutputGeneration));
        assert!(Stage::OutputDiscussion(1).can_transition(Stage::OutputDiscussion(2)));
        assert!(!Stage::OutputDiscussion(2).can_transition(Stage::OutputDiscussion(2)));
        assert!(!Stage::InitialDiscussion.can_transition(Stage::Ended));
        assert!(!Stage::OutputDiscussion(3).can_transition(Stage::Refinement));
        assert!(!Stage::Ended.can_transition(Stage::Refinement));
    }
}
