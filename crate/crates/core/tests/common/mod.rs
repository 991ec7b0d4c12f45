//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use dialcurate_core::model::{Dialogue, Source, Turn};
use dialcurate_core::script::Scene;

/// Greedy left-to-right extraction by exhaustive enumeration: from the
/// current position, the first start whose right-maximal span (no third
/// speaker) holds exactly two speakers and at least `min` lines wins.
pub fn extraction_oracle(speakers: &[String], min: usize) -> Vec<(usize, usize)> {
    let n = speakers.len();
    let distinct = |b: usize, e: usize| speakers[b..e].iter().collect::<BTreeSet<_>>().len();
    let mut out = Vec::new();
    let mut pos = 0;
    'outer: while pos < n {
        for b in pos..n {
            let candidates: Vec<usize> = (b + 1..=n)
                .filter(|&e| distinct(b, e) <= 2 && (e == n || distinct(b, e + 1) > 2))
                .collect();
            for e in candidates {
                if e - b >= min && distinct(b, e) == 2 {
                    out.push((b, e));
                    pos = e;
                    continue 'outer;
                }
            }
        }
        break;
    }
    out
}

pub fn random_scene(rng: &mut impl Rng, max_lines: usize, max_speakers: usize) -> Scene {
    let n = rng.gen_range(0..=max_lines);
    let k = rng.gen_range(1..=max_speakers);
    let labels: Vec<String> = (0..n).map(|_| format!("S{}", rng.gen_range(0..k))).collect();
    Scene::from_speakers(&labels)
}

pub fn scene_speakers(s: &Scene) -> Vec<String> {
    s.lines.iter().map(|l| l.speaker.clone()).collect()
}

/// Unit-cost Levenshtein distance by memoized recursion over suffixes.
pub fn edit_distance_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo.get(&(i, j)) {
            return *v;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Minimum cost over every monotone turn alignment, by full enumeration.
pub fn alignment_oracle(orig: &[Vec<String>], pe: &[Vec<String>]) -> usize {
    fn go(o: &[Vec<String>], p: &[Vec<String>], i: usize, j: usize) -> usize {
        if i == o.len() {
            return p[j..].iter().map(Vec::len).sum();
        }
        if j == p.len() {
            return o[i..].iter().map(Vec::len).sum();
        }
        let m = go(o, p, i + 1, j + 1) + edit_distance_oracle(&o[i], &p[j]);
        let d = go(o, p, i + 1, j) + o[i].len();
        let s = go(o, p, i, j + 1) + p[j].len();
        m.min(d).min(s)
    }
    go(orig, pe, 0, 0)
}

pub const WORDS: [&str; 12] = [
    "ciao", "come", "stai", "oggi", "bene", "grazie", "casa", "mare", "sole", "notte", "pane", "vino",
];

pub fn random_words(rng: &mut impl Rng, min: usize, max: usize, vocab: usize) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| WORDS[rng.gen_range(0..vocab.min(WORDS.len()))].to_string()).collect()
}

pub fn random_text(rng: &mut impl Rng, min: usize, max: usize) -> String {
    random_words(rng, min, max, WORDS.len()).join(" ")
}

/// Alternating A/B dialogue with random word turns.
pub fn random_dialogue(rng: &mut impl Rng, id: &str, source: Source, turns: usize) -> Dialogue {
    let turns = (0..turns)
        .map(|i| Turn::new(if i % 2 == 0 { "A" } else { "B" }, random_text(rng, 1, 8)))
        .collect();
    Dialogue::new(id, source, turns)
}

/// A valid post-edit of `orig` in the spirit of the guidelines: edits words,
/// optionally drops a boundary turn or a mid pair, optionally appends a turn.
pub fn random_postedit(rng: &mut impl Rng, orig: &Dialogue) -> Dialogue {
    let mut d = orig.clone();
    for t in d.turns.iter_mut() {
        if rng.gen_bool(0.4) {
            let mut w: Vec<String> = t.text.split_whitespace().map(str::to_string).collect();
            let i = rng.gen_range(0..w.len());
            w[i] = WORDS.choose(rng).unwrap().to_string();
            if rng.gen_bool(0.3) {
                w.push("davvero".into());
            }
            t.text = w.join(" ");
        }
    }
    if d.turns.len() >= 6 && rng.gen_bool(0.3) {
        let at = rng.gen_range(1..d.turns.len() - 2);
        d.turns.drain(at..at + 2);
    }
    if rng.gen_bool(0.3) {
        let last = d.turns.last().unwrap().speaker.clone();
        let next = if last == "A" { "B" } else { "A" };
        d.turns.push(Turn::new(next, "una battuta finale aggiunta"));
    }
    d
}
