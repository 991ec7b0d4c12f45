//! Human evaluation support: length-stratified survey bundles, rating
//! import and micro-averaged aggregation, and the low/high edit-intensity
//! split of post-edited dialogues.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Dialogue;
use crate::postedit::PostEditRecord;

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("pool of {pool} dialogues is too small for one survey of {size}")]
    PoolTooSmall { pool: usize, size: usize },
    #[error("pool of {pool} does not divide into surveys of {size}")]
    Remainder { pool: usize, size: usize },
    #[error("dialogue {0:?} appears twice in the pool")]
    DuplicateId(String),
    #[error("cannot separate twins {0:?} and {1:?}")]
    Twins(String, String),
    #[error("rating for {dialogue:?} by {evaluator:?}: score {score} outside 1..=5")]
    ScoreRange { dialogue: String, evaluator: String, score: u8 },
    #[error("ratings CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthStratum {
    Short,
    Medium,
    Long,
}

/// Short up to 10 turns, medium 11 to 15, long from 16.
pub fn length_stratum(turns: usize) -> LengthStratum {
    match turns {
        0..=10 => LengthStratum::Short,
        11..=15 => LengthStratum::Medium,
        _ => LengthStratum::Long,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub id: String,
    pub stratum: LengthStratum,
    /// Id of the other version of the same dialogue (original or
    /// post-edited), if it is in the pool too.
    pub twin: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemainderPolicy {
    /// Pool size must be a multiple of the survey size.
    Reject,
    /// Leave the surplus dialogues out.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub size: usize,
    pub evaluators: usize,
    pub seed: u64,
    pub remainder: RemainderPolicy,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig { size: 8, evaluators: 3, seed: 0, remainder: RemainderPolicy::Reject }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Survey {
    pub id: String,
    pub dialogue_ids: Vec<String>,
    pub evaluator_slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub surveys: Vec<Survey>,
    pub dropped: Vec<String>,
}

/// Bundles the pool into surveys.
///
/// Items are shuffled within each stratum, laid out stratum after stratum
/// and dealt round-robin, so every survey gets within one of its
/// proportional share of each stratum. Twins dealt into the same survey are
/// then separated by swapping one of them with a same-stratum item of
/// another survey.
pub fn build_surveys(pool: &[PoolItem], cfg: &SurveyConfig) -> Result<SurveyPlan, SurveyError> {
    let mut seen = HashSet::new();
    for it in pool {
        if !seen.insert(it.id.as_str()) {
            return Err(SurveyError::DuplicateId(it.id.clone()));
        }
    }
    if cfg.size == 0 || pool.len() < cfg.size {
        return Err(SurveyError::PoolTooSmall { pool: pool.len(), size: cfg.size });
    }
    let surplus = pool.len() % cfg.size;
    if surplus != 0 && cfg.remainder == RemainderPolicy::Reject {
        return Err(SurveyError::Remainder { pool: pool.len(), size: cfg.size });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_stratum: BTreeMap<LengthStratum, Vec<&PoolItem>> = BTreeMap::new();
    let mut sorted: Vec<&PoolItem> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for it in sorted {
        by_stratum.entry(it.stratum).or_default().push(it);
    }
    let mut layout: Vec<&PoolItem> = Vec::with_capacity(pool.len());
    for items in by_stratum.values_mut() {
        items.shuffle(&mut rng);
        layout.extend(items.iter().copied());
    }
    let mut dropped = Vec::new();
    if surplus != 0 {
        // Leave out a random surplus, then restore stratum order.
        let mut idx: Vec<usize> = (0..layout.len()).collect();
        idx.shuffle(&mut rng);
        let mut gone: Vec<usize> = idx[..surplus].to_vec();
        gone.sort_unstable();
        for &i in gone.iter().rev() {
            dropped.push(layout.remove(i).id.clone());
        }
        dropped.sort();
    }

    let count = layout.len() / cfg.size;
    let mut bins: Vec<Vec<&PoolItem>> = vec![Vec::with_capacity(cfg.size); count];
    for (k, it) in layout.into_iter().enumerate() {
        bins[k % count].push(it);
    }
    separate_twins(&mut bins)?;

    let surveys = bins
        .into_iter()
        .enumerate()
        .map(|(i, items)| {
            let id = format!("survey-{:03}", i + 1);
            Survey {
                evaluator_slots: (1..=cfg.evaluators).map(|e| format!("{id}/evaluator-{e}")).collect(),
                dialogue_ids: items.iter().map(|it| it.id.clone()).collect(),
                id,
            }
        })
        .collect();
    Ok(SurveyPlan { surveys, dropped })
}

fn separate_twins(bins: &mut [Vec<&PoolItem>]) -> Result<(), SurveyError> {
    let conflict = |bin: &[&PoolItem], it: &PoolItem, skip: usize| {
        bin.iter()
            .enumerate()
            .any(|(k, o)| k != skip && (it.twin.as_deref() == Some(&o.id) || o.twin.as_deref() == Some(&it.id)))
    };
    for b in 0..bins.len() {
        let mut i = 0;
        while i < bins[b].len() {
            let it = bins[b][i];
            if !conflict(&bins[b], it, i) {
                i += 1;
                continue;
            }
            // Find a same-stratum item elsewhere that can trade places.
            let mut swapped = false;
            'search: for c in (0..bins.len()).filter(|c| *c != b) {
                for j in 0..bins[c].len() {
                    let other = bins[c][j];
                    if other.stratum != it.stratum {
                        continue;
                    }
                    if !conflict(&bins[c], it, j) && !conflict(&bins[b], other, i) {
                        bins[b][i] = other;
                        bins[c][j] = it;
                        swapped = true;
                        break 'search;
                    }
                }
            }
            if !swapped {
                let twin = it.twin.clone().unwrap_or_default();
                return Err(SurveyError::Twins(it.id.clone(), twin));
            }
            i += 1;
        }
    }
    Ok(())
}

/// Survey export: dialogue texts inlined, author source left out so that
/// evaluators are blind to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyExport {
    pub survey_id: String,
    pub evaluator_slots: Vec<String>,
    pub dialogues: Vec<BlindDialogue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindDialogue {
    pub dialogue_id: String,
    pub turns: Vec<BlindTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindTurn {
    pub speaker: String,
    pub text: String,
}

pub fn export_survey(s: &Survey, dialogues: &HashMap<&str, &Dialogue>) -> Option<SurveyExport> {
    let mut out = Vec::with_capacity(s.dialogue_ids.len());
    for id in &s.dialogue_ids {
        let d = dialogues.get(id.as_str())?;
        out.push(BlindDialogue {
            dialogue_id: id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| BlindTurn { speaker: t.speaker.clone(), text: t.text.clone() })
                .collect(),
        });
    }
    Some(SurveyExport { survey_id: s.id.clone(), evaluator_slots: s.evaluator_slots.clone(), dialogues: out })
}

// ---------------------------------------------------------------------------
// Ratings

/// One evaluator's answers for one dialogue: `q1` understandability,
/// `q2` likelihood of machine authorship, both on a 1-5 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub survey_id: String,
    pub dialogue_id: String,
    pub evaluator_id: String,
    #[serde(rename = "q1")]
    pub understandability: u8,
    #[serde(rename = "q2")]
    pub machine_probability: u8,
}

pub fn read_ratings(reader: impl Read) -> Result<Vec<Rating>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: Rating = row?;
        for score in [r.understandability, r.machine_probability] {
            if !(1..=5).contains(&score) {
                return Err(SurveyError::ScoreRange {
                    dialogue: r.dialogue_id.clone(),
                    evaluator: r.evaluator_id.clone(),
                    score,
                });
            }
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Version {
    Orig,
    PostEdited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditIntensity {
    Low,
    High,
}

/// Group membership of a rated dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedDialogue {
    pub version: Version,
    pub intensity: Option<EditIntensity>,
    /// Shared key of the original/post-edited pair.
    pub pair: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub understandability: f64,
    pub machine_probability: f64,
    pub ratings: usize,
}

#[derive(Default)]
struct Acc {
    q1: u64,
    q2: u64,
    n: usize,
}

impl Acc {
    fn add(&mut self, r: &Rating) {
        self.q1 += u64::from(r.understandability);
        self.q2 += u64::from(r.machine_probability);
        self.n += 1;
    }

    fn mean(&self) -> Option<CellMean> {
        (self.n > 0).then(|| CellMean {
            understandability: self.q1 as f64 / self.n as f64,
            machine_probability: self.q2 as f64 / self.n as f64,
            ratings: self.n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub pair: String,
    /// Post-edited mean minus original mean.
    pub understandability: f64,
    pub machine_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    /// Keys `"orig"`, `"p-e"`, and `"orig/low"`-style intensity cells.
    /// Cells without ratings are absent.
    pub cells: BTreeMap<String, CellMean>,
    pub per_dialogue: BTreeMap<String, CellMean>,
    pub paired_deltas: Vec<PairDelta>,
    /// Ratings whose dialogue has no group information.
    pub ungrouped: usize,
}

fn version_key(v: Version) -> &'static str {
    match v {
        Version::Orig => "orig",
        Version::PostEdited => "p-e",
    }
}

/// Micro-averages (mean over individual ratings) per version and per
/// version × edit intensity, plus per-dialogue means and paired deltas.
pub fn aggregate_ratings(ratings: &[Rating], groups: &HashMap<String, RatedDialogue>) -> RatingTable {
    let mut cells: BTreeMap<String, Acc> = BTreeMap::new();
    let mut per_dialogue: BTreeMap<String, Acc> = BTreeMap::new();
    let mut ungrouped = 0;
    for r in ratings {
        per_dialogue.entry(r.dialogue_id.clone()).or_default().add(r);
        let Some(g) = groups.get(&r.dialogue_id) else {
            ungrouped += 1;
            continue;
        };
        let v = version_key(g.version);
        cells.entry(v.to_string()).or_default().add(r);
        if let Some(i) = g.intensity {
            let i = match i {
                EditIntensity::Low => "low",
                EditIntensity::High => "high",
            };
            cells.entry(format!("{v}/{i}")).or_default().add(r);
        }
    }
    let per_dialogue: BTreeMap<String, CellMean> =
        per_dialogue.into_iter().filter_map(|(k, a)| a.mean().map(|m| (k, m))).collect();

    let mut pairs: BTreeMap<&str, [Option<&CellMean>; 2]> = BTreeMap::new();
    for (id, g) in groups {
        if let Some(m) = per_dialogue.get(id) {
            let slot = match g.version {
                Version::Orig => 0,
                Version::PostEdited => 1,
            };
            pairs.entry(g.pair.as_str()).or_default()[slot] = Some(m);
        }
    }
    let paired_deltas = pairs
        .into_iter()
        .filter_map(|(pair, [o, p])| {
            let (o, p) = (o?, p?);
            Some(PairDelta {
                pair: pair.to_string(),
                understandability: p.understandability - o.understandability,
                machine_probability: p.machine_probability - o.machine_probability,
            })
        })
        .collect();

    RatingTable {
        cells: cells.into_iter().filter_map(|(k, a)| a.mean().map(|m| (k, m))).collect(),
        per_dialogue,
        paired_deltas,
        ungrouped,
    }
}

// ---------------------------------------------------------------------------
// Edit intensity

/// Ranks scaled to [0, 1]; tied values share their average rank.
pub fn normalized_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg / (n - 1) as f64;
        }
        i = j + 1;
    }
    ranks
}

/// Composite edit score per record: the mean of the normalized ranks of
/// mean edited-turn HTER and of the deleted-turn fraction.
pub fn edit_scores(records: &[PostEditRecord]) -> Vec<f64> {
    let hter: Vec<f64> = records.iter().map(PostEditRecord::mean_hter).collect();
    let del: Vec<f64> = records.iter().map(PostEditRecord::deleted_fraction).collect();
    normalized_ranks(&hter)
        .into_iter()
        .zip(normalized_ranks(&del))
        .map(|(a, b)| (a + b) / 2.0)
        .collect()
}

/// Median split on the composite score. Records scoring at or below the
/// `ceil(n/2)`-th smallest score are low.
pub fn edit_intensity_split(records: &[PostEditRecord]) -> BTreeMap<String, EditIntensity> {
    let scores = edit_scores(records);
    if scores.is_empty() {
        return BTreeMap::new();
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[records.len().div_ceil(2) - 1];
    records
        .iter()
        .zip(scores)
        .map(|(r, s)| {
            let label = if s > median { EditIntensity::High } else { EditIntensity::Low };
            (r.original_id.clone(), label)
        })
        .collect()
}
