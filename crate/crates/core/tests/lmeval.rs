mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_dialogue;
use dialcurate_core::lmeval::{
    accuracy_at_n, aggregate, conditional_turn_perplexity, eval_suite, score_dialogue, BigramScorer, EvalError,
    EvalOptions, LookupScorer, ProcessScorer, TokenScorer, UniformScorer,
};
use dialcurate_core::metrics::tokenize;
use dialcurate_core::model::{Dialogue, Source};

fn vocab(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn corpus_vocab() -> Vec<String> {
    common::WORDS.iter().map(|w| w.to_string()).collect()
}

fn random_corpus(seed: u64, n: usize) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let turns = rng.gen_range(1..10);
            random_dialogue(&mut rng, &format!("d{i}"), Source::Llm, turns)
        })
        .collect()
}

#[test]
fn uniform_cppl_equals_vocabulary_size() {
    let s = UniformScorer::new(corpus_vocab());
    let corpus = random_corpus(1, 20);
    let r = eval_suite(&corpus, &s, &[0.2, 0.3], &EvalOptions::default()).unwrap();
    assert!((r.all_turns.cppl - 12.0).abs() < 1e-9);
    for t in &r.truncated {
        assert!((t.metrics.cppl - 12.0).abs() < 1e-9);
    }
    let micro = eval_suite(&corpus, &s, &[], &EvalOptions { micro: true, ..Default::default() }).unwrap();
    assert!((micro.all_turns.cppl - 12.0).abs() < 1e-9);

    let ten: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let d = Dialogue::from_pairs("u", Source::Human, &[("A", "t0 t1"), ("B", "t2 t3 t4"), ("A", "t9")]);
    let (_, mean) = conditional_turn_perplexity(&d, &UniformScorer::new(ten)).unwrap();
    assert!((mean.unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn two_token_closed_form() {
    let mut s = LookupScorer::new(vocab(&["a", "b", "c", "d"]));
    s.insert(vocab(&["c"]), vec![0.5, 0.25, 0.125, 0.125]);
    s.insert(vocab(&["c", "a"]), vec![0.5, 0.125, 0.25, 0.125]);
    let d = Dialogue::from_pairs("x", Source::Human, &[("A", "c"), ("B", "a b")]);
    let (per_turn, _) = conditional_turn_perplexity(&d, &s).unwrap();
    assert_eq!(per_turn.len(), 1);
    assert!((per_turn[0] - 4.0).abs() < 1e-12);
}

#[test]
fn oracle_scorer_is_perfect() {
    let corpus = random_corpus(2, 10);
    for d in &corpus {
        let s = LookupScorer::oracle(corpus_vocab(), std::slice::from_ref(d));
        let acc = accuracy_at_n(d, &s, &[1, 5, 10]).unwrap();
        for v in acc.values() {
            assert_eq!(*v, 1.0);
        }
        if let (_, Some(c)) = conditional_turn_perplexity(d, &s).unwrap() {
            assert_eq!(c, 1.0);
        }
    }
}

#[test]
fn uniform_accuracy_follows_tie_order() {
    // Under uniform ties the rank of a token is its vocabulary position + 1,
    // so Acc@N over tokens drawn evenly from 100 words is exactly N/100.
    let words: Vec<String> = (0..100).map(|i| format!("v{i:02}")).collect();
    let text: Vec<&str> = words.iter().map(String::as_str).collect();
    let d = Dialogue::from_pairs("u", Source::Human, &[("A", "v00"), ("B", &text.join(" "))]);
    let s = UniformScorer::new(words.clone());
    let acc = accuracy_at_n(&d, &s, &[1, 5, 10]).unwrap();
    assert_eq!(acc[&1], 0.01);
    assert_eq!(acc[&5], 0.05);
    assert_eq!(acc[&10], 0.10);
}

#[test]
fn suite_equals_hand_aggregation() {
    let corpus = random_corpus(3, 5);
    let s = BigramScorer::train(&corpus, 0.5);
    let opts = EvalOptions::default();
    let report = eval_suite(&corpus, &s, &[0.2], &opts).unwrap();
    let evals: Vec<_> = corpus.iter().map(|d| score_dialogue(d, &s, &opts).unwrap()).collect();
    let scored: Vec<_> = evals.iter().filter(|e| !e.turns.is_empty()).collect();
    let mean = scored.iter().map(|e| e.cppl().unwrap()).sum::<f64>() / scored.len() as f64;
    assert_eq!(report.all_turns.cppl, mean);
    assert_eq!(report.all_turns, aggregate(&evals, &opts.acc_n, false).unwrap());
    let single = eval_suite(&corpus[..1], &s, &[], &opts);
    if let Ok(r) = single {
        assert_eq!(r.all_turns.cppl, score_dialogue(&corpus[0], &s, &opts).unwrap().cppl().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn accuracy_is_monotone_in_n(seed in 0u64..10_000, k in 0.01f64..2.0) {
        let corpus = random_corpus(seed, 4);
        let s = BigramScorer::train(&corpus[..2], k);
        let opts = EvalOptions { acc_n: vec![1, 5, 10], unk: Some("<unk>".into()), ..Default::default() };
        if let Ok(r) = eval_suite(&corpus, &s, &[0.3], &opts) {
            for m in std::iter::once(&r.all_turns).chain(r.truncated.iter().map(|t| &t.metrics)) {
                prop_assert!(m.acc_at[&10] >= m.acc_at[&5]);
                prop_assert!(m.acc_at[&5] >= m.acc_at[&1]);
            }
        }
    }

    #[test]
    fn boosting_gold_never_hurts(p in prop::collection::vec(0.01f64..1.0, 6), gold in 0usize..6, boost in 0.0f64..0.5) {
        let v = vocab(&["a", "b", "c", "d", "e", "f"]);
        let total: f64 = p.iter().sum();
        let base: Vec<f64> = p.iter().map(|x| x / total).collect();
        // Move mass onto the gold token, scaling the others uniformly so their order is kept.
        let mut boosted: Vec<f64> = base.iter().map(|x| x * (1.0 - boost)).collect();
        boosted[gold] += boost;
        let d = Dialogue::from_pairs("g", Source::Human, &[("A", "a"), ("B", &v[gold])]);
        let eval = |dist: Vec<f64>| {
            let mut s = LookupScorer::new(v.clone());
            s.insert(vocab(&["a"]), dist);
            let e = score_dialogue(&d, &s, &EvalOptions { acc_n: vec![1, 2, 3], ..Default::default() }).unwrap();
            (e.cppl().unwrap(), e.acc_at(1).unwrap(), e.acc_at(2).unwrap(), e.acc_at(3).unwrap())
        };
        let (c0, a1, a2, a3) = eval(base);
        let (c1, b1, b2, b3) = eval(boosted);
        prop_assert!(c1 <= c0 + 1e-12);
        prop_assert!(b1 >= a1 && b2 >= a2 && b3 >= a3);
    }
}

#[test]
fn out_of_vocabulary_is_an_error_unless_mapped() {
    let s = UniformScorer::new(vocab(&["a", "b", "<unk>"]));
    let d = Dialogue::from_pairs("o", Source::Human, &[("A", "a"), ("B", "zzz")]);
    match score_dialogue(&d, &s, &EvalOptions::default()) {
        Err(EvalError::OutOfVocabulary { token }) => assert_eq!(token, "zzz"),
        other => panic!("{other:?}"),
    }
    let opts = EvalOptions { unk: Some("<unk>".into()), ..Default::default() };
    assert!(score_dialogue(&d, &s, &opts).is_ok());
}

#[test]
fn external_process_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("scorer.py");
    std::fs::write(
        &script,
        r#"import json, math, sys
vocab = ["a", "b", "c", "d"]
for line in sys.stdin:
    ctx = json.loads(line)["context"]
    if ctx and ctx[-1] == "a":
        out = {"top": [["a", 0.125], ["b", 0.5], ["c", 0.25], ["d", 0.125]]}
    else:
        out = {"logprobs": {t: math.log(0.25) for t in vocab}}
    print(json.dumps(out), flush=True)
"#,
    )
    .unwrap();
    let s = ProcessScorer::spawn(&format!("python3 {}", script.display())).unwrap();
    assert_eq!(s.vocabulary(), vocab(&["a", "b", "c", "d"]).as_slice());
    let d = Dialogue::from_pairs("p", Source::Human, &[("A", "c"), ("B", "a b")]);
    let (per_turn, _) = conditional_turn_perplexity(&d, &s).unwrap();
    // p(a | c) = 0.25, p(b | c a) = 0.5
    assert!((per_turn[0] - (-(0.25f64.ln() + 0.5f64.ln()) / 2.0).exp()).abs() < 1e-12);
    let gold: Vec<String> = tokenize("a b").0;
    assert_eq!(gold, s.tokenize("a b"));
}
