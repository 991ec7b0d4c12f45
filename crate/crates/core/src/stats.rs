//! Descriptive corpus statistics and annotator productivity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;
use crate::model::{Dialogue, Source};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("mode {0:?} has zero total seconds")]
    ZeroSeconds(WorkMode),
    #[error("timing entry for {id:?} has non-positive seconds {seconds}")]
    BadSeconds { id: String, seconds: f64 },
    #[error("timing log line {line}: {message}")]
    BadLine { line: usize, message: String },
}

/// Raw sums for one group of dialogues. Merging is element-wise addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSums {
    pub dialogues: u64,
    pub turns: u64,
    pub tokens: u64,
}

impl CountSums {
    pub fn add_dialogue(&mut self, d: &Dialogue) {
        self.dialogues += 1;
        self.turns += d.turns.len() as u64;
        self.tokens += d.turns.iter().map(|t| tokenize(&t.text).len() as u64).sum::<u64>();
    }

    pub fn merge(&mut self, o: &CountSums) {
        self.dialogues += o.dialogues;
        self.turns += o.turns;
        self.tokens += o.tokens;
    }

    pub fn summary(&self) -> GroupStats {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        GroupStats {
            dialogues: self.dialogues,
            turns: self.turns,
            tokens: self.tokens,
            turns_per_dialogue: ratio(self.turns, self.dialogues),
            tokens_per_dialogue: ratio(self.tokens, self.dialogues),
            tokens_per_turn: ratio(self.tokens, self.turns),
        }
    }
}

/// Counts and full-precision averages for one column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub dialogues: u64,
    pub turns: u64,
    pub tokens: u64,
    pub turns_per_dialogue: f64,
    pub tokens_per_dialogue: f64,
    pub tokens_per_turn: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub by_source: BTreeMap<Source, GroupStats>,
    pub total: GroupStats,
}

pub fn corpus_sums(corpus: &[Dialogue]) -> BTreeMap<Source, CountSums> {
    let mut groups: BTreeMap<Source, CountSums> = BTreeMap::new();
    for d in corpus.iter().filter(|d| !d.is_deleted()) {
        groups.entry(d.source).or_default().add_dialogue(d);
    }
    groups
}

pub fn stats_from_sums(groups: &BTreeMap<Source, CountSums>) -> CorpusStats {
    let mut total = CountSums::default();
    for g in groups.values() {
        total.merge(g);
    }
    CorpusStats {
        by_source: groups.iter().map(|(s, c)| (*s, c.summary())).collect(),
        total: total.summary(),
    }
}

/// Per-source and total counts. Dialogues flagged `deleted` are skipped.
pub fn corpus_stats(corpus: &[Dialogue]) -> Result<CorpusStats, StatsError> {
    let groups = corpus_sums(corpus);
    if groups.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    Ok(stats_from_sums(&groups))
}

/// Half away from zero, unlike `{:.0}` which rounds half to even.
fn rounded(x: f64) -> String {
    format!("{}", x.round())
}

/// Table with averages rounded to integers, sources as columns.
pub fn stats_markdown(s: &CorpusStats) -> String {
    let mut cols: Vec<(String, GroupStats)> =
        s.by_source.iter().map(|(k, v)| (k.label().to_string(), *v)).collect();
    cols.push(("Total".into(), s.total));
    let mut out = String::from("|");
    for (name, _) in &cols {
        write!(out, " | {name}").unwrap();
    }
    out.push_str(" |\n|---");
    for _ in &cols {
        out.push_str("|---:");
    }
    out.push_str("|\n");
    type Getter = fn(&GroupStats) -> String;
    let rows: [(&str, Getter); 6] = [
        ("Dial", |g| g.dialogues.to_string()),
        ("Turns", |g| g.turns.to_string()),
        ("Tok", |g| g.tokens.to_string()),
        ("Turns/Dial", |g| rounded(g.turns_per_dialogue)),
        ("Tok/Dial", |g| rounded(g.tokens_per_dialogue)),
        ("Tok/Turn", |g| rounded(g.tokens_per_turn)),
    ];
    for (label, get) in rows {
        out.push_str("| ");
        out.push_str(label);
        for (_, g) in &cols {
            write!(out, " | {}", get(g)).unwrap();
        }
        out.push_str(" |\n");
    }
    out
}

// ---------------------------------------------------------------------------
// Productivity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkMode {
    Scratch,
    Postedit,
}

/// One timed unit of annotator work. `dialogues` defaults to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub dialogue_id: String,
    pub mode: WorkMode,
    pub seconds: f64,
    #[serde(default = "one")]
    pub dialogues: u64,
    pub turns: u64,
    pub tokens: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub dialogues_per_hour: f64,
    pub turns_per_hour: f64,
    pub tokens_per_hour: f64,
    pub seconds: f64,
}

pub fn read_timing_log(reader: impl BufRead) -> Result<Vec<TimingEntry>, StatsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let bad = |message: String| StatsError::BadLine { line: i + 1, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

/// Per-mode hourly rates: `3600 * sum(count) / sum(seconds)`. Modes without
/// entries are absent from the result.
pub fn productivity(log: &[TimingEntry]) -> Result<BTreeMap<WorkMode, Rates>, StatsError> {
    let mut sums: BTreeMap<WorkMode, (f64, u64, u64, u64)> = BTreeMap::new();
    for e in log {
        if !(e.seconds > 0.0) {
            return Err(StatsError::BadSeconds { id: e.dialogue_id.clone(), seconds: e.seconds });
        }
        let s = sums.entry(e.mode).or_default();
        s.0 += e.seconds;
        s.1 += e.dialogues;
        s.2 += e.turns;
        s.3 += e.tokens;
    }
    sums.into_iter()
        .map(|(mode, (secs, d, t, k))| {
            if secs <= 0.0 {
                return Err(StatsError::ZeroSeconds(mode));
            }
            let per_hour = |c: u64| 3600.0 * c as f64 / secs;
            Ok((
                mode,
                Rates {
                    dialogues_per_hour: per_hour(d),
                    turns_per_hour: per_hour(t),
                    tokens_per_hour: per_hour(k),
                    seconds: secs,
                },
            ))
        })
        .collect()
}
