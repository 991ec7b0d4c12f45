//! Shared tokenizer and surface text metrics: Repetition Rate, sentence
//! BLEU, derailment detection and tail truncation.
//!
//! The tokenizer defined here is the single tokenizer used by the edit
//! distance, corpus statistics and repetition rate code.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MetricConfig;
use crate::model::Dialogue;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("repetition rate needs at least one token")]
    EmptyText,
    #[error("BLEU needs non-empty candidate and reference")]
    EmptyBleuInput,
}

const PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '…', '"', '\'', '«', '»', '’', '‘', '“', '”',
];

/// Lowercased word tokens with punctuation marks split off as their own
/// tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().map(Into::into).collect())
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if PUNCT.contains(&c) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    TokenSequence(tokens)
}

/// Tokens of every turn of every dialogue, concatenated in corpus order.
pub fn corpus_tokens<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Vec<String> {
    dialogues
        .into_iter()
        .flat_map(|d| d.turns.iter())
        .flat_map(|t| tokenize(&t.text).0)
        .collect()
}

// ---------------------------------------------------------------------------
// Repetition rate

/// Pooled counts for one n-gram order: repeated (non-singleton) types over
/// all types, summed across windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderCounts {
    pub repeated_types: u64,
    pub total_types: u64,
}

impl OrderCounts {
    pub fn rate(&self) -> f64 {
        if self.total_types == 0 {
            0.0
        } else {
            self.repeated_types as f64 / self.total_types as f64
        }
    }
}

/// Window statistics that merge associatively, so partial results from
/// separate slices of a corpus can be combined before computing the rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RrAccumulator {
    pub orders: Vec<(usize, OrderCounts)>,
    pub window_count: usize,
}

impl RrAccumulator {
    pub fn new(cfg: &MetricConfig) -> Self {
        RrAccumulator {
            orders: (cfg.rr_ngram_min..=cfg.rr_ngram_max)
                .map(|n| (n, OrderCounts::default()))
                .collect(),
            window_count: 0,
        }
    }

    pub fn add_window<T: Eq + Hash>(&mut self, window: &[T]) {
        for (n, counts) in &mut self.orders {
            if window.len() < *n {
                continue;
            }
            let mut freq: HashMap<&[T], u32> = HashMap::new();
            for gram in window.windows(*n) {
                *freq.entry(gram).or_default() += 1;
            }
            counts.total_types += freq.len() as u64;
            counts.repeated_types += freq.values().filter(|&&c| c > 1).count() as u64;
        }
        self.window_count += 1;
    }

    pub fn merge(&mut self, other: &RrAccumulator) {
        for ((n, a), (m, b)) in self.orders.iter_mut().zip(&other.orders) {
            debug_assert_eq!(n, m);
            a.repeated_types += b.repeated_types;
            a.total_types += b.total_types;
        }
        self.window_count += other.window_count;
    }

    pub fn finish(&self) -> RrResult {
        let per_order_rate: Vec<(usize, f64)> =
            self.orders.iter().map(|(n, c)| (*n, c.rate())).collect();
        let rr = if per_order_rate.iter().all(|(_, r)| *r > 0.0) {
            let mean_log = per_order_rate.iter().map(|(_, r)| r.ln()).sum::<f64>()
                / per_order_rate.len() as f64;
            100.0 * mean_log.exp()
        } else {
            0.0
        };
        RrResult {
            per_order_rate,
            rr,
            window_count: self.window_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrResult {
    /// `(n, rate)` for every configured order.
    pub per_order_rate: Vec<(usize, f64)>,
    /// 100 times the geometric mean of the per-order rates; 0 if any rate is 0.
    pub rr: f64,
    pub window_count: usize,
}

/// Splits `len` tokens into `[start, end)` windows. A trailing partial
/// window is kept when it holds at least `rr_ngram_max` tokens, or when it is
/// the only window.
fn rr_windows(len: usize, cfg: &MetricConfig) -> Vec<(usize, usize)> {
    let size = cfg.rr_window;
    let stride = cfg.rr_stride();
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        let full = end - start == size;
        if full || end - start >= cfg.rr_ngram_max || out.is_empty() {
            out.push((start, end));
        }
        if end == len {
            break;
        }
        start += stride;
    }
    out
}

/// Repetition rate over a token stream.
pub fn repetition_rate<T: Eq + Hash>(tokens: &[T], cfg: &MetricConfig) -> Result<RrResult, MetricError> {
    Ok(repetition_counts(tokens, cfg)?.finish())
}

pub fn repetition_counts<T: Eq + Hash>(
    tokens: &[T],
    cfg: &MetricConfig,
) -> Result<RrAccumulator, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let mut acc = RrAccumulator::new(cfg);
    for (s, e) in rr_windows(tokens.len(), cfg) {
        acc.add_window(&tokens[s..e]);
    }
    Ok(acc)
}

pub fn repetition_rate_text(text: &str, cfg: &MetricConfig) -> Result<RrResult, MetricError> {
    repetition_rate(tokenize(text).tokens(), cfg)
}

pub fn corpus_repetition_rate(dialogues: &[Dialogue], cfg: &MetricConfig) -> Result<RrResult, MetricError> {
    repetition_rate(&corpus_tokens(dialogues), cfg)
}

// ---------------------------------------------------------------------------
// BLEU

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub value: f64,
    /// Precision per order actually used (length `min(max_order, |candidate|)`).
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence-level BLEU with clipped n-gram precision.
///
/// Orders longer than the candidate are left out. An order with zero
/// matches gets precision `1 / (2 * candidate n-grams)`, except unigrams:
/// no unigram overlap scores 0.
pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], max_order: usize) -> Result<BleuScore, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyBleuInput);
    }
    let orders = max_order.min(candidate.len());
    let mut precisions = Vec::with_capacity(orders);
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total = candidate.len() + 1 - n;
        let matched: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = match (matched, n) {
            (0, 1) => 0.0,
            (0, _) => 1.0 / (2.0 * total as f64),
            (m, _) => m as f64 / total as f64,
        };
        precisions.push(p);
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let brevity_penalty = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    let value = if precisions.iter().any(|p| *p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
        brevity_penalty * mean_log.exp()
    };
    Ok(BleuScore {
        value: value.min(1.0),
        precisions,
        brevity_penalty,
    })
}

pub fn bleu_text(candidate: &str, reference: &str, cfg: &MetricConfig) -> Result<BleuScore, MetricError> {
    bleu(tokenize(candidate).tokens(), tokenize(reference).tokens(), cfg.bleu_max_order)
}

// ---------------------------------------------------------------------------
// Derailment and truncation

/// Number of turns to keep before the dialogue starts repeating itself.
///
/// Returns the smallest `t >= 1` whose turn reaches `threshold` BLEU against
/// any earlier turn, or the turn count when no turn does. Turns without
/// tokens are never flagged.
pub fn detect_derailment(d: &Dialogue, threshold: f64, max_order: usize) -> usize {
    let toks: Vec<TokenSequence> = d.turns.iter().map(|t| tokenize(&t.text)).collect();
    for t in 1..toks.len() {
        if toks[t].is_empty() {
            continue;
        }
        let hit = toks[..t].iter().any(|earlier| {
            !earlier.is_empty()
                && bleu(toks[t].tokens(), earlier.tokens(), max_order)
                    .map(|b| b.value >= threshold)
                    .unwrap_or(false)
        });
        if hit {
            return t;
        }
    }
    toks.len()
}

/// Post-processing for model generations: cut at the derailment point, then
/// keep at most `max_turns_for_eval` turns.
pub fn clean_generation(d: &Dialogue, cfg: &MetricConfig) -> Dialogue {
    let cut = detect_derailment(d, cfg.derail_threshold, cfg.bleu_max_order);
    d.truncated(cut.min(cfg.max_turns_for_eval))
}

/// Drops the last `floor(f * n)` turns, always keeping at least one.
pub fn truncate_last_fraction(d: &Dialogue, fraction: f64) -> Dialogue {
    d.truncated(kept_after_truncation(d.len(), fraction))
}

pub fn kept_after_truncation(n: usize, fraction: f64) -> usize {
    // Guards against products such as 0.29 * 100 = 28.999999999999996.
    let removed = (fraction * n as f64 + 1e-9).floor() as usize;
    n.saturating_sub(removed).max(1.min(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Ciao, come va?").0, ["ciao", ",", "come", "va", "?"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("E’ qui").0, ["e", "’", "qui"]);
        assert_eq!(tokenize("«Dai...»").0, ["«", "dai", ".", ".", ".", "»"]);
        assert_eq!(tokenize("l'accesso").0, ["l", "'", "accesso"]);
    }

    #[test]
    fn rr_distinct_is_zero() {
        let cfg = MetricConfig::default();
        let r = repetition_rate(&toks("a b c d e f g h"), &cfg).unwrap();
        assert_eq!(r.rr, 0.0);
        assert_eq!(r.window_count, 1);
    }

    #[test]
    fn rr_all_same_is_hundred() {
        let r = repetition_rate(&toks("a a a a a"), &MetricConfig::default()).unwrap();
        assert!(r.per_order_rate.iter().all(|(_, x)| *x == 1.0));
        assert!((r.rr - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rr_empty_is_error() {
        let empty: [&str; 0] = [];
        assert_eq!(repetition_rate(&empty, &MetricConfig::default()), Err(MetricError::EmptyText));
    }

    #[test]
    fn rr_windows_tile_and_keep_tail() {
        let cfg = MetricConfig { rr_window: 10, ..Default::default() };
        assert_eq!(rr_windows(25, &cfg), vec![(0, 10), (10, 20), (20, 25)]);
        assert_eq!(rr_windows(23, &cfg), vec![(0, 10), (10, 20)]);
        assert_eq!(rr_windows(3, &cfg), vec![(0, 3)]);
        let sliding = MetricConfig { rr_window: 4, rr_stride: Some(2), ..Default::default() };
        assert_eq!(rr_windows(8, &sliding), vec![(0, 4), (2, 6), (4, 8)]);
    }

    #[test]
    fn rr_hand_counted() {
        // one window "a b a b c": unigrams a,b repeated / {a,b,c}; bigrams ab
        // repeated / {ab,ba,bc}; trigrams {aba,bab,abc} none repeated.
        let r = repetition_rate(&toks("a b a b c"), &MetricConfig::default()).unwrap();
        assert_eq!(r.per_order_rate[0], (1, 2.0 / 3.0));
        assert_eq!(r.per_order_rate[1], (2, 1.0 / 3.0));
        assert_eq!(r.per_order_rate[2], (3, 0.0));
        assert_eq!(r.rr, 0.0);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let x = toks("il gatto dorme sul divano");
        assert_eq!(bleu(&x, &x, 4).unwrap().value, 1.0);
        assert_eq!(bleu(&["a"], &["b"], 4).unwrap().value, 0.0);
        assert_eq!(bleu(&["a"], &["a"], 4).unwrap().value, 1.0);
        assert_eq!(bleu::<&str>(&[], &["a"], 4), Err(MetricError::EmptyBleuInput));
    }

    #[test]
    fn bleu_brevity_penalty() {
        let r = toks("a b c d e f g h");
        let c = toks("a b c d");
        let b = bleu(&c, &r, 4).unwrap();
        assert!((b.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
        assert!((b.value - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn derailment_cuts_at_repeat() {
        let d = Dialogue::from_pairs(
            "d",
            Source::Llm,
            &[
                ("A", "oggi piove molto forte qui"),
                ("B", "prendi allora un ombrello"),
                ("A", "oggi piove molto forte qui"),
            ],
        );
        assert_eq!(detect_derailment(&d, 0.9, 4), 2);
        let distinct = d.truncated(2);
        assert_eq!(detect_derailment(&distinct, 0.9, 4), 2);
    }

    #[test]
    fn truncation_arithmetic() {
        assert_eq!(kept_after_truncation(10, 0.2), 8);
        assert_eq!(kept_after_truncation(9, 0.2), 8);
        assert_eq!(kept_after_truncation(1, 0.3), 1);
        assert_eq!(kept_after_truncation(10, 0.3), 7);
        assert_eq!(kept_after_truncation(100, 0.29), 71);
        assert_eq!(kept_after_truncation(0, 0.5), 0);
    }
}
