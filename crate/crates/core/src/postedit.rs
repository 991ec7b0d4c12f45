//! Post-edit analysis: word-level edit distance, HTER, turn alignment
//! between an original dialogue and its post-edited version, and the
//! unchanged/deleted/edited breakdown aggregated per author source.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;
use crate::model::{Dialogue, Source};

#[derive(Debug, Error, PartialEq)]
pub enum PostEditError {
    #[error("HTER reference turn has no tokens")]
    EmptyReference,
    #[error("no post-edit records to aggregate")]
    NoRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditStatus {
    Unchanged,
    Deleted,
    Edited,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditBreakdown {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal number of unit-cost substitutions, insertions and deletions
/// turning `hyp` into `reference`. No block shifts.
///
/// Insertions are tokens present only in `reference`, deletions tokens
/// present only in `hyp`.
pub fn word_edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditBreakdown {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut b = EditBreakdown::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if here == dp[(i - 1) * w + j - 1] + usize::from(!same) {
                if !same {
                    b.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            b.deletions += 1;
            i -= 1;
        } else {
            b.insertions += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(b.total(), dp[n * w + m]);
    b
}

/// Edit distance from `original` to `postedited`, divided by the token
/// count of the post-edited (reference) turn.
pub fn hter(original: &str, postedited: &str) -> Result<f64, PostEditError> {
    hter_tokens(tokenize(original).tokens(), tokenize(postedited).tokens())
}

pub fn hter_tokens<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64, PostEditError> {
    if reference.is_empty() {
        return Err(PostEditError::EmptyReference);
    }
    Ok(word_edit_distance(hyp, reference).total() as f64 / reference.len() as f64)
}

/// One step of a turn alignment. `None` on a side is a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub original: Option<usize>,
    pub postedited: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnAlignment {
    pub pairs: Vec<AlignedPair>,
    /// Sum of pair costs: word edit distance for matched pairs, token count
    /// of the gapped turn otherwise.
    pub cost: usize,
}

impl TurnAlignment {
    pub fn deleted(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs
            .iter()
            .filter(|p| p.postedited.is_none())
            .filter_map(|p| p.original)
    }

    pub fn inserted(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs
            .iter()
            .filter(|p| p.original.is_none())
            .filter_map(|p| p.postedited)
    }
}

/// Monotone alignment of two turn sequences minimizing total cost.
///
/// Ties prefer matching, then deleting an original turn, then inserting.
pub fn align_turns<T: PartialEq>(orig: &[Vec<T>], pe: &[Vec<T>]) -> TurnAlignment {
    let (n, m) = (orig.len(), pe.len());
    let w = m + 1;
    let mut dist = vec![0usize; n * m];
    for i in 0..n {
        for j in 0..m {
            dist[i * m + j] = word_edit_distance(&orig[i], &pe[j]).total();
        }
    }
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 1..=n {
        dp[i * w] = dp[(i - 1) * w] + orig[i - 1].len();
    }
    for j in 1..=m {
        dp[j] = dp[j - 1] + pe[j - 1].len();
    }
    for i in 1..=n {
        for j in 1..=m {
            let mat = dp[(i - 1) * w + j - 1] + dist[(i - 1) * m + j - 1];
            let del = dp[(i - 1) * w + j] + orig[i - 1].len();
            let ins = dp[i * w + j - 1] + pe[j - 1].len();
            dp[i * w + j] = mat.min(del).min(ins);
        }
    }

    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * w + j - 1] + dist[(i - 1) * m + j - 1] {
            pairs.push(AlignedPair { original: Some(i - 1), postedited: Some(j - 1) });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == dp[(i - 1) * w + j] + orig[i - 1].len() {
            pairs.push(AlignedPair { original: Some(i - 1), postedited: None });
            i -= 1;
        } else {
            pairs.push(AlignedPair { original: None, postedited: Some(j - 1) });
            j -= 1;
        }
    }
    pairs.reverse();
    TurnAlignment { pairs, cost: dp[n * w + m] }
}

/// Outcome of post-editing one original dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostEditRecord {
    pub original_id: String,
    /// `None` when the reviewer deleted the whole dialogue.
    pub postedited_id: Option<String>,
    pub source: Source,
    pub dialogue_status: EditStatus,
    /// One status per original turn.
    pub turn_statuses: Vec<EditStatus>,
    /// HTER of each edited turn, in original turn order.
    pub hter_per_edited_turn: Vec<f64>,
    pub deleted_turn_count: usize,
    pub inserted_turn_count: usize,
    pub alignment: TurnAlignment,
}

impl PostEditRecord {
    pub fn count(&self, status: EditStatus) -> usize {
        self.turn_statuses.iter().filter(|s| **s == status).count()
    }

    pub fn mean_hter(&self) -> f64 {
        if self.hter_per_edited_turn.is_empty() {
            0.0
        } else {
            self.hter_per_edited_turn.iter().sum::<f64>() / self.hter_per_edited_turn.len() as f64
        }
    }

    pub fn deleted_fraction(&self) -> f64 {
        if self.turn_statuses.is_empty() {
            0.0
        } else {
            self.deleted_turn_count as f64 / self.turn_statuses.len() as f64
        }
    }
}

fn turn_tokens(d: &Dialogue) -> Vec<Vec<String>> {
    d.turns.iter().map(|t| tokenize(&t.text).0).collect()
}

/// Aligns `orig` with its post-edited counterpart (`None` = deleted) and
/// classifies every original turn.
pub fn align_and_classify(orig: &Dialogue, pe: Option<&Dialogue>) -> PostEditRecord {
    let Some(pe) = pe else {
        return PostEditRecord {
            original_id: orig.id.clone(),
            postedited_id: None,
            source: orig.source,
            dialogue_status: EditStatus::Deleted,
            turn_statuses: vec![EditStatus::Deleted; orig.len()],
            hter_per_edited_turn: Vec::new(),
            deleted_turn_count: orig.len(),
            inserted_turn_count: 0,
            alignment: TurnAlignment {
                pairs: (0..orig.len())
                    .map(|i| AlignedPair { original: Some(i), postedited: None })
                    .collect(),
                cost: 0,
            },
        };
    };

    let ot = turn_tokens(orig);
    let pt = turn_tokens(pe);
    let alignment = align_turns(&ot, &pt);
    let mut turn_statuses = vec![EditStatus::Deleted; orig.len()];
    let mut hters = Vec::new();
    let mut inserted = 0;
    for p in &alignment.pairs {
        match (p.original, p.postedited) {
            (Some(i), Some(j)) => {
                let d = word_edit_distance(&ot[i], &pt[j]).total();
                if d == 0 {
                    turn_statuses[i] = EditStatus::Unchanged;
                } else {
                    turn_statuses[i] = EditStatus::Edited;
                    hters.push(d as f64 / pt[j].len().max(1) as f64);
                }
            }
            (Some(_), None) => {}
            (None, Some(_)) => inserted += 1,
            (None, None) => unreachable!("alignment pair with two gaps"),
        }
    }
    let deleted = turn_statuses.iter().filter(|s| **s == EditStatus::Deleted).count();
    let all_unchanged = turn_statuses.iter().all(|s| *s == EditStatus::Unchanged);
    let dialogue_status = if all_unchanged && orig.len() == pe.len() {
        EditStatus::Unchanged
    } else {
        EditStatus::Edited
    };
    PostEditRecord {
        original_id: orig.id.clone(),
        postedited_id: Some(pe.id.clone()),
        source: orig.source,
        dialogue_status,
        turn_statuses,
        hter_per_edited_turn: hters,
        deleted_turn_count: deleted,
        inserted_turn_count: inserted,
        alignment,
    }
}

/// Pairs originals with post-edited dialogues by id; an original with no
/// post-edited counterpart counts as deleted. Output follows `originals`.
pub fn diff_corpora(originals: &[Dialogue], postedited: &[Dialogue]) -> Vec<PostEditRecord> {
    let by_id: BTreeMap<&str, &Dialogue> = postedited
        .iter()
        .filter(|d| !d.is_deleted())
        .map(|d| (d.id.as_str(), d))
        .collect();
    originals
        .iter()
        .map(|o| align_and_classify(o, by_id.get(o.id.as_str()).copied()))
        .collect()
}

/// Unchanged/deleted/edited fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusFractions {
    pub unchanged: f64,
    pub deleted: f64,
    pub edited: f64,
}

impl StatusFractions {
    fn from_counts(c: &[usize; 3]) -> Self {
        let total = (c[0] + c[1] + c[2]) as f64;
        if total == 0.0 {
            return StatusFractions::default();
        }
        StatusFractions {
            unchanged: c[0] as f64 / total,
            deleted: c[1] as f64 / total,
            edited: c[2] as f64 / total,
        }
    }

    pub fn sum(&self) -> f64 {
        self.unchanged + self.deleted + self.edited
    }
}

/// Raw counts behind one column of the post-edit report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostEditCounts {
    /// unchanged, deleted, edited
    pub dialogues: [usize; 3],
    pub turns: [usize; 3],
    pub inserted_turns: usize,
    pub hter_sum: f64,
    pub hter_turns: usize,
}

fn slot(s: EditStatus) -> usize {
    match s {
        EditStatus::Unchanged => 0,
        EditStatus::Deleted => 1,
        EditStatus::Edited => 2,
    }
}

impl PostEditCounts {
    pub fn add(&mut self, r: &PostEditRecord) {
        self.dialogues[slot(r.dialogue_status)] += 1;
        for s in &r.turn_statuses {
            self.turns[slot(*s)] += 1;
        }
        self.inserted_turns += r.inserted_turn_count;
        self.hter_sum += r.hter_per_edited_turn.iter().sum::<f64>();
        self.hter_turns += r.hter_per_edited_turn.len();
    }

    pub fn summary(&self) -> PostEditSummary {
        PostEditSummary {
            dialogues: self.dialogues.iter().sum(),
            dial: StatusFractions::from_counts(&self.dialogues),
            turns: StatusFractions::from_counts(&self.turns),
            original_turns: self.turns.iter().sum(),
            inserted_turns: self.inserted_turns,
            hter_edit: (self.hter_turns > 0).then(|| self.hter_sum / self.hter_turns as f64),
            edited_turns: self.hter_turns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostEditSummary {
    pub dialogues: usize,
    pub dial: StatusFractions,
    pub original_turns: usize,
    /// Fractions over original turns; inserted turns are reported apart.
    pub turns: StatusFractions,
    pub inserted_turns: usize,
    /// Mean HTER over all edited turns, `None` if there are none.
    pub hter_edit: Option<f64>,
    pub edited_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostEditReport {
    pub by_source: BTreeMap<Source, PostEditSummary>,
    pub total: PostEditSummary,
}

pub fn aggregate_postedit_stats(records: &[PostEditRecord]) -> Result<PostEditReport, PostEditError> {
    if records.is_empty() {
        return Err(PostEditError::NoRecords);
    }
    let mut groups: BTreeMap<Source, PostEditCounts> = BTreeMap::new();
    let mut total = PostEditCounts::default();
    for r in records {
        groups.entry(r.source).or_default().add(r);
        total.add(r);
    }
    Ok(PostEditReport {
        by_source: groups.into_iter().map(|(s, c)| (s, c.summary())).collect(),
        total: total.summary(),
    })
}
