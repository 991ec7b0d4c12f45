mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_dialogue, random_words};
use dialcurate_core::metrics::{
    bleu, clean_generation, detect_derailment, kept_after_truncation, repetition_counts, repetition_rate,
    repetition_rate_text, tokenize, truncate_last_fraction, RrAccumulator,
};
use dialcurate_core::model::{Dialogue, Source, Turn};
use dialcurate_core::MetricConfig;

/// Per-order rates recounted from scratch for a single window.
fn rr_recount(tokens: &[&str], orders: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    orders
        .map(|n| {
            let mut freq: HashMap<Vec<&str>, usize> = HashMap::new();
            for i in 0..=tokens.len().saturating_sub(n) {
                if i + n <= tokens.len() {
                    *freq.entry(tokens[i..i + n].to_vec()).or_default() += 1;
                }
            }
            let repeated = freq.values().filter(|c| **c >= 2).count();
            if freq.is_empty() { 0.0 } else { repeated as f64 / freq.len() as f64 }
        })
        .collect()
}

#[test]
fn rr_reference_cases() {
    let cfg = MetricConfig::default();
    let distinct: Vec<String> = (0..3000).map(|i| format!("w{i}")).collect();
    assert_eq!(repetition_rate(&distinct, &cfg).unwrap().rr, 0.0);
    let r = repetition_rate_text("a a a a a", &cfg).unwrap();
    assert!((r.rr - 100.0).abs() < 1e-9);
    assert_eq!(r.window_count, 1);
    assert!(repetition_rate_text("", &cfg).is_err());
}

#[test]
fn rr_matches_recount_on_single_window() {
    let cfg = MetricConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let words = random_words(&mut rng, 4, 200, 6);
        let toks: Vec<&str> = words.iter().map(String::as_str).collect();
        let got = repetition_rate(&toks, &cfg).unwrap();
        let want = rr_recount(&toks, 1..=4);
        for ((_, g), w) in got.per_order_rate.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        let geo = if want.iter().all(|r| *r > 0.0) {
            100.0 * want.iter().product::<f64>().powf(0.25)
        } else {
            0.0
        };
        assert!((got.rr - geo).abs() < 1e-9);
    }
}

#[test]
fn rr_invariant_under_renaming() {
    let cfg = MetricConfig { rr_window: 50, ..MetricConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let words = random_words(&mut rng, 1, 400, 12);
        let mut targets: Vec<String> = (0..12).map(|i| format!("x{i}")).collect();
        targets.shuffle(&mut rng);
        let rename: HashMap<&str, &str> =
            common::WORDS.iter().copied().zip(targets.iter().map(String::as_str)).collect();
        let renamed: Vec<&str> = words.iter().map(|w| rename[w.as_str()]).collect();
        assert_eq!(repetition_rate(&words, &cfg).unwrap(), repetition_rate(&renamed, &cfg).unwrap());
    }
}

#[test]
fn rr_windows_pool_associatively() {
    let cfg = MetricConfig { rr_window: 100, ..MetricConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let words = random_words(&mut rng, 1000, 1000, 12);
    let whole = repetition_counts(&words, &cfg).unwrap();
    let mut merged = RrAccumulator::new(&cfg);
    for part in words.chunks(300) {
        // chunk boundaries on window boundaries
        merged.merge(&repetition_counts(part, &MetricConfig { rr_window: 100, ..cfg.clone() }).unwrap());
    }
    assert_eq!(whole.finish().window_count, 10);
    assert_eq!(whole, merged);
}

#[test]
fn bleu_hand_expanded_case() {
    let c = ["a", "b", "c", "d", "e", "x"];
    let r = ["a", "b", "c", "d", "e", "f"];
    let s = bleu(&c, &r, 4).unwrap();
    // precisions 5/6, 4/5, 3/4, 2/3; BP = 1
    let want = ((5.0f64 / 6.0) * (4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0)).powf(0.25);
    assert!((s.value - want).abs() < 1e-9);
    assert!((s.value - 0.759_835_685_651_592_5).abs() < 1e-9);
    assert_eq!(s.brevity_penalty, 1.0);
}

#[test]
fn bleu_brevity_and_disjoint() {
    let s = bleu(&["a", "b", "c"], &["a", "b", "c", "d", "e", "f"], 4).unwrap();
    assert!((s.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    assert!(bleu(&["a"], &["b"], 4).unwrap().value < 1e-9);
    assert!(bleu::<&str>(&[], &["b"], 4).is_err());
}

proptest! {
    #[test]
    fn bleu_identity_and_bounds(
        x in prop::collection::vec(0u8..6, 1..25),
        y in prop::collection::vec(0u8..6, 1..25),
    ) {
        prop_assert!((bleu(&x, &x, 4).unwrap().value - 1.0).abs() < 1e-12);
        let v = bleu(&x, &y, 4).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn truncation_formula(n in 1usize..60, f in 0.01f64..0.99) {
        let d = Dialogue::new(
            "t",
            Source::Llm,
            (0..n).map(|i| Turn::new(if i % 2 == 0 { "A" } else { "B" }, "x")).collect(),
        );
        let kept = truncate_last_fraction(&d, f).len();
        prop_assert_eq!(kept, (n - (f * n as f64 + 1e-9).floor() as usize).max(1));
    }
}

#[test]
fn truncation_examples() {
    assert_eq!(kept_after_truncation(10, 0.2), 8);
    assert_eq!(kept_after_truncation(9, 0.2), 8);
    assert_eq!(kept_after_truncation(1, 0.3), 1);
    assert_eq!(kept_after_truncation(100, 0.29), 71);
}

/// Cut index by comparing every pair of turns.
fn derail_oracle(d: &Dialogue, threshold: f64) -> usize {
    let toks: Vec<Vec<String>> = d.turns.iter().map(|t| tokenize(&t.text).0).collect();
    let mut cut = toks.len();
    for t in (1..toks.len()).rev() {
        for s in 0..t {
            if !toks[t].is_empty() && !toks[s].is_empty() && bleu(&toks[t], &toks[s], 4).unwrap().value >= threshold {
                cut = t;
            }
        }
    }
    cut
}

#[test]
fn derailment_monotone_and_matches_pairwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..100 {
        let n = rng.gen_range(1..15);
        let mut d = random_dialogue(&mut rng, &format!("g{i}"), Source::Llm, n);
        if n > 4 && rng.gen_bool(0.5) {
            let src = rng.gen_range(0..n - 2);
            let dst = rng.gen_range(src + 1..n);
            d.turns[dst].text = d.turns[src].text.clone();
        }
        let mut prev = 0;
        for th in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let cut = detect_derailment(&d, th, 4);
            assert!(cut <= d.len());
            assert!(cut >= prev, "cut shrank when raising threshold to {th}");
            assert_eq!(cut, derail_oracle(&d, th));
            prev = cut;
        }
    }
}

#[test]
fn verbatim_repeat_is_cut() {
    let x = "questa frase si ripete sempre uguale";
    let d = Dialogue::from_pairs("r", Source::Llm, &[("A", x), ("B", "una risposta diversa"), ("A", x)]);
    assert_eq!(detect_derailment(&d, 0.9, 4), 2);
    let d = Dialogue::from_pairs("r", Source::Llm, &[("A", "uno due tre"), ("B", "quattro cinque"), ("A", "sei")]);
    assert_eq!(detect_derailment(&d, 0.9, 4), 3);
}

#[test]
fn generation_cleanup_caps_turns() {
    let cfg = MetricConfig::default();
    let turns: Vec<Turn> = (0..30)
        .map(|i| Turn::new(if i % 2 == 0 { "A" } else { "B" }, format!("turno numero {i} senza ripetizioni")))
        .collect();
    let d = Dialogue::new("long", Source::Llm, turns);
    let cut = detect_derailment(&d, cfg.derail_threshold, 4);
    assert_eq!(clean_generation(&d, &cfg).len(), cut.min(20));
    let distinct: Vec<Turn> = (0..30)
        .map(|i| Turn::new(if i % 2 == 0 { "A" } else { "B" }, format!("w{i}a w{i}b w{i}c")))
        .collect();
    assert_eq!(clean_generation(&Dialogue::new("d", Source::Llm, distinct), &cfg).len(), 20);
}
