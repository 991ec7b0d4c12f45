//! Reviewer guideline checks on a post-edit, relative to the original.

use serde::{Deserialize, Serialize};

use crate::model::{validate_dialogue, Dialogue, Rule, ValidationReport, MIN_TURNS};
use crate::postedit::{align_and_classify, PostEditRecord};

/// Validates an edited dialogue against its original.
///
/// On top of the structural rules, deleted original turns must come in
/// runs of even length unless the run touches the first or last turn, and
/// added turns may only sit before the first or after the last kept turn.
pub fn validate_postedit(orig: &Dialogue, edited: &Dialogue) -> (ValidationReport, PostEditRecord) {
    let mut report = validate_dialogue(edited);
    let record = align_and_classify(orig, Some(edited));
    let n = orig.len();

    let deleted: Vec<usize> = record.alignment.deleted().collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &i in &deleted {
        match runs.last_mut() {
            Some((_, end)) if *end + 1 == i => *end = i,
            _ => runs.push((i, i)),
        }
    }
    for (start, end) in runs {
        let at_boundary = start == 0 || end + 1 == n;
        let len = end - start + 1;
        if !at_boundary && len % 2 == 1 {
            report.push(
                Rule::PairDeletion,
                Some(start),
                format!("{len} turn(s) deleted mid-dialogue at {start}..={end}; mid-dialogue deletions come in pairs"),
            );
        }
    }

    let pairs = &record.alignment.pairs;
    let first_kept = pairs.iter().position(|p| p.original.is_some() && p.postedited.is_some());
    let last_kept = pairs.iter().rposition(|p| p.original.is_some() && p.postedited.is_some());
    if let (Some(first), Some(last)) = (first_kept, last_kept) {
        for p in &pairs[first..=last] {
            if let (None, Some(j)) = (p.original, p.postedited) {
                report.push(
                    Rule::BoundaryInsertion,
                    Some(j),
                    "turns may only be added at the beginning or the end",
                );
            }
        }
    }
    (report, record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub name: Rule,
    pub description: String,
}

/// Machine-readable description of every rule, for clients that validate
/// drafts locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesManifest {
    pub min_turns: usize,
    pub speakers: usize,
    pub merge_separator: String,
    pub tokenizer_punctuation: String,
    pub rules: Vec<RuleSpec>,
}

pub fn rules_manifest() -> RulesManifest {
    let spec = |name, d: &str| RuleSpec { name, description: d.to_string() };
    RulesManifest {
        min_turns: MIN_TURNS,
        speakers: 2,
        merge_separator: " ".into(),
        tokenizer_punctuation: ".,;:!?…\"'«»’‘“”".into(),
        rules: vec![
            spec(Rule::EmptyTurn, "every turn has non-blank text"),
            spec(Rule::TwoSpeakers, "exactly two distinct speaker labels"),
            spec(Rule::Alternation, "no speaker takes two consecutive turns"),
            spec(Rule::MinTurns, "at least min_turns turns"),
            spec(
                Rule::PairDeletion,
                "original turns deleted away from the first/last turn form runs of even length",
            ),
            spec(Rule::BoundaryInsertion, "new turns only before the first or after the last kept turn"),
        ],
    }
}
