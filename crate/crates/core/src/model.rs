//! Dialogue data model, corpus file format and the structural rules every
//! curated dialogue has to satisfy.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CorpusError, Result};

/// Minimum number of turns a curated dialogue must have.
pub const MIN_TURNS: usize = 3;

/// Which author produced a dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    /// Excerpt extracted from a human-written script.
    #[serde(rename = "H")]
    Human,
    /// Script excerpt rewritten by a language model.
    #[serde(rename = "H+LLM")]
    HumanLlm,
    /// Dialogue generated by a language model from a context.
    #[serde(rename = "LLM")]
    Llm,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Human, Source::HumanLlm, Source::Llm];

    pub fn label(self) -> &'static str {
        match self {
            Source::Human => "H",
            Source::HumanLlm => "H+LLM",
            Source::Llm => "LLM",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(Source::Human),
            "H+LLM" => Ok(Source::HumanLlm),
            "LLM" => Ok(Source::Llm),
            other => Err(CorpusError::Invalid(format!("unknown source {other:?}"))),
        }
    }
}

/// A single utterance. Its position is implied by its index in
/// [`Dialogue::turns`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// Free-form metadata attached to a dialogue (script title, prompt id,
/// context id, original speaker names...).
pub type Provenance = serde_json::Map<String, serde_json::Value>;

/// An ordered two-speaker conversation.
///
/// Fields are declared in alphabetical order so that serialization emits
/// canonical key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deleted: Option<bool>,
    pub id: String,
    #[serde(default)]
    pub provenance: Provenance,
    pub source: Source,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, source: Source, turns: Vec<Turn>) -> Self {
        Dialogue {
            deleted: None,
            id: id.into(),
            provenance: Provenance::new(),
            source,
            turns,
        }
    }

    /// Builds a dialogue from `(speaker, text)` pairs. Mostly useful in tests.
    pub fn from_pairs<S: AsRef<str>, T: AsRef<str>>(
        id: impl Into<String>,
        source: Source,
        pairs: &[(S, T)],
    ) -> Self {
        let turns = pairs
            .iter()
            .map(|(s, t)| Turn::new(s.as_ref(), t.as_ref()))
            .collect();
        Dialogue::new(id, source, turns)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Distinct speaker labels, in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for t in &self.turns {
            if !seen.contains(&t.speaker.as_str()) {
                seen.push(t.speaker.as_str());
            }
        }
        seen
    }

    pub fn is_deleted(&self) -> bool {
        self.deleted.unwrap_or(false)
    }

    /// Copy of this dialogue keeping only the first `n` turns.
    pub fn truncated(&self, n: usize) -> Dialogue {
        let mut d = self.clone();
        d.turns.truncate(n);
        d
    }
}

/// Guideline rule a dialogue can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    MinTurns,
    Alternation,
    TwoSpeakers,
    EmptyTurn,
    PairDeletion,
    BoundaryInsertion,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::MinTurns => "min-turns",
            Rule::Alternation => "alternation",
            Rule::TwoSpeakers => "two-speakers",
            Rule::EmptyTurn => "empty-turn",
            Rule::PairDeletion => "pair-deletion",
            Rule::BoundaryInsertion => "boundary-insertion",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Offending turn, when the rule is about a specific turn.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn rules(&self) -> BTreeSet<Rule> {
        self.violations.iter().map(|v| v.rule).collect()
    }

    pub(crate) fn push(&mut self, rule: Rule, turn: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            turn,
            message: message.into(),
        });
    }
}

/// Checks the structural guideline rules: non-empty turns, exactly two
/// speakers, strict alternation and at least [`MIN_TURNS`] turns.
pub fn validate_dialogue(d: &Dialogue) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, t) in d.turns.iter().enumerate() {
        if t.text.trim().is_empty() {
            report.push(Rule::EmptyTurn, Some(i), "turn text is empty");
        }
    }
    let speakers = d.speakers().len();
    if speakers != 2 {
        report.push(
            Rule::TwoSpeakers,
            None,
            format!("expected exactly 2 speakers, found {speakers}"),
        );
    }
    for (i, pair) in d.turns.windows(2).enumerate() {
        if pair[0].speaker == pair[1].speaker {
            report.push(
                Rule::Alternation,
                Some(i + 1),
                format!("speaker {:?} takes two consecutive turns", pair[1].speaker),
            );
        }
    }
    if d.turns.len() < MIN_TURNS {
        report.push(
            Rule::MinTurns,
            None,
            format!("{} turns, at least {MIN_TURNS} required", d.turns.len()),
        );
    }
    report
}

/// Merges runs of consecutive turns by the same speaker into one turn whose
/// text is the run's texts joined with a single space.
pub fn merge_consecutive_turns(d: &Dialogue) -> Dialogue {
    let mut turns: Vec<Turn> = Vec::with_capacity(d.turns.len());
    for t in &d.turns {
        match turns.last_mut() {
            Some(last) if last.speaker == t.speaker => {
                last.text.push(' ');
                last.text.push_str(&t.text);
            }
            _ => turns.push(t.clone()),
        }
    }
    Dialogue {
        turns,
        ..d.clone()
    }
}

/// Reads a line-delimited JSON corpus. Blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if !ids.insert(d.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: d.id,
                line: line_no,
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_corpus(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus_to(dialogues, &mut w).map_err(|e| CorpusError::io(path, e))?;
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn write_corpus_to(dialogues: &[Dialogue], w: &mut impl Write) -> std::io::Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut *w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Serializes a corpus into a string in the on-disk format.
pub fn corpus_to_string(dialogues: &[Dialogue]) -> String {
    let mut buf = Vec::new();
    write_corpus_to(dialogues, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
