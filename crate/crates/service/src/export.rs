//! Downloadable text exports.

use std::fmt::Write;

use cpe_core::evalsuite::{aggregate, EvalError, Evaluation, Provenance, SurveyResponse};
use cpe_core::Session;

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Baseline => "baseline",
        Provenance::Zs => "zs",
        Provenance::Fs => "fs",
    }
}

/// Every transcript message, main and side channels, one JSON object per line.
pub fn transcript_jsonl(session: &Session) -> String {
    let mut out = String::new();
    for m in session.transcript().messages() {
        out.push_str(&serde_json::to_string(m).expect("messages serialize"));
        out.push('\n');
    }
    out
}

/// The tally per provenance and rank, then each item's ranking.
pub fn results_text(evaluation: &Evaluation) -> Result<String, EvalError> {
    let tally = aggregate(&evaluation.items)?;
    let mut out = String::new();
    writeln!(out, "items\t{}", evaluation.items.len()).unwrap();
    writeln!(out, "skipped\t{}", evaluation.skipped.len()).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "provenance\tbest\tmiddle\tworst").unwrap();
    for p in Provenance::ALL {
        let c = tally.get(p);
        writeln!(out, "{}\t{}\t{}\t{}", provenance_name(p), c.best, c.middle, c.worst).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "item\tbest\tmiddle\tworst").unwrap();
    for item in &evaluation.items {
        if let Some(r) = item.ranking {
            let name = |pos| item.provenance_at(pos).map_or("?", provenance_name);
            writeln!(out, "{}\t{}\t{}\t{}", item.item_id, name(r.best), name(r.middle()), name(r.worst)).unwrap();
        }
    }
    for s in &evaluation.skipped {
        writeln!(out, "{}\tskipped: {}", s.item_id, s.reason).unwrap();
    }
    Ok(out)
}

pub fn survey_text(response: &SurveyResponse) -> String {
    format!(
        "satisfaction\t{}\nthinking_process\t{}\npleasantness\t{}\nconvergence_time\t{}\n",
        response.satisfaction, response.thinking_process, response.pleasantness, response.convergence_time
    )
}
