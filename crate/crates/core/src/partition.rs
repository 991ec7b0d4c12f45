//! Stratified train/validation/test split and the size-matched sample of
//! original dialogues used to train comparison models.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dialogue, Source};
use crate::postedit::PostEditRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("ratios must be positive and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),
    #[error("stratum {stratum} has {size} dialogues, fewer than the {splits} splits")]
    StratumTooSmall { stratum: Source, size: usize, splits: usize },
    #[error("stratum {stratum} needs {needed} deleted originals but only {available} are available")]
    NotEnoughDeleted { stratum: Source, needed: usize, available: usize },
    #[error("dialogue {0:?} is not in the partition")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPartition {
    pub seed: u64,
    pub ratios: Vec<f64>,
    /// Ids per split, in output order: sources H, H+LLM, LLM, each in its
    /// shuffled order.
    pub splits: BTreeMap<Split, Vec<String>>,
    pub stratum: BTreeMap<String, Source>,
}

impl CorpusPartition {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits
            .iter()
            .find(|(_, ids)| ids.iter().any(|i| i == id))
            .map(|(s, _)| *s)
    }

    pub fn ids(&self, split: Split) -> &[String] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn counts(&self) -> BTreeMap<Split, BTreeMap<Source, usize>> {
        self.splits
            .iter()
            .map(|(split, ids)| {
                let mut m: BTreeMap<Source, usize> = BTreeMap::new();
                for id in ids {
                    *m.entry(self.stratum[id]).or_default() += 1;
                }
                (*split, m)
            })
            .collect()
    }
}

/// Splits `n` items by `ratios` with largest-remainder rounding. Ties in
/// the remainder go to the earlier split.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn check_ratios(ratios: &[f64]) -> Result<(), PartitionError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.len() != 3 || ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(PartitionError::BadRatios(ratios.to_vec()));
    }
    Ok(())
}

/// Stratified split over author sources. Within a stratum the ids are
/// sorted, shuffled with a ChaCha8 generator seeded by `seed`, then cut at
/// the largest-remainder boundaries. The generator is shared across strata
/// in source order, so the result depends only on the id set and the seed.
pub fn stratified_split(corpus: &[Dialogue], ratios: &[f64], seed: u64) -> Result<CorpusPartition, PartitionError> {
    check_ratios(ratios)?;
    let mut strata: BTreeMap<Source, Vec<String>> = BTreeMap::new();
    for d in corpus {
        strata.entry(d.source).or_default().push(d.id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: BTreeMap<Split, Vec<String>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut stratum = BTreeMap::new();
    for (source, mut ids) in strata {
        if ids.len() < ratios.len() {
            return Err(PartitionError::StratumTooSmall { stratum: source, size: ids.len(), splits: ratios.len() });
        }
        ids.sort();
        ids.shuffle(&mut rng);
        let sizes = largest_remainder(ids.len(), ratios);
        let mut rest = ids.as_slice();
        for (split, size) in Split::ALL.iter().zip(sizes) {
            let (head, tail) = rest.split_at(size);
            splits.get_mut(split).expect("all splits present").extend(head.iter().cloned());
            rest = tail;
        }
        for id in ids {
            stratum.insert(id, source);
        }
    }
    Ok(CorpusPartition { seed, ratios: ratios.to_vec(), splits, stratum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    /// Selected original ids: matched counterparts first, then deleted fill.
    pub selected: Vec<String>,
    pub matched: usize,
    pub from_deleted: usize,
    pub matched_fraction: f64,
    pub deleted_fraction: f64,
}

/// Original-side sample the same size and source mix as `pe_ids`.
///
/// Each post-edited dialogue contributes its original counterpart (once,
/// even if several post-edited dialogues point at the same original). The
/// rest of each stratum's quota is drawn with a seeded shuffle from
/// originals that were deleted during post-editing and are not yet used.
pub fn matched_original_sample(
    pe_ids: &[String],
    pe_source: &dyn Fn(&str) -> Option<Source>,
    records: &[PostEditRecord],
    seed: u64,
) -> Result<MatchedSample, PartitionError> {
    let counterpart: HashMap<&str, &PostEditRecord> = records
        .iter()
        .filter_map(|r| r.postedited_id.as_deref().map(|p| (p, r)))
        .collect();

    let mut quota: BTreeMap<Source, usize> = BTreeMap::new();
    let mut selected = Vec::new();
    let mut used = BTreeSet::new();
    let mut matched_per: BTreeMap<Source, usize> = BTreeMap::new();
    for id in pe_ids {
        let source = pe_source(id).ok_or_else(|| PartitionError::UnknownId(id.clone()))?;
        *quota.entry(source).or_default() += 1;
        if let Some(r) = counterpart.get(id.as_str()) {
            if used.insert(r.original_id.clone()) {
                selected.push(r.original_id.clone());
                *matched_per.entry(source).or_default() += 1;
            }
        }
    }
    let matched = selected.len();

    let mut deleted: BTreeMap<Source, Vec<String>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.postedited_id.is_none()) {
        if !used.contains(&r.original_id) {
            deleted.entry(r.source).or_default().push(r.original_id.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (source, want) in &quota {
        let needed = want - matched_per.get(source).copied().unwrap_or(0);
        if needed == 0 {
            continue;
        }
        let pool = deleted.entry(*source).or_default();
        if pool.len() < needed {
            return Err(PartitionError::NotEnoughDeleted { stratum: *source, needed, available: pool.len() });
        }
        pool.sort();
        pool.shuffle(&mut rng);
        selected.extend(pool.iter().take(needed).cloned());
    }

    let total = selected.len();
    let frac = |k: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    Ok(MatchedSample {
        matched,
        from_deleted: total - matched,
        matched_fraction: frac(matched),
        deleted_fraction: frac(total - matched),
        selected,
    })
}
