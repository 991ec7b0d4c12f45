//! Fixed test vectors that client-side validators must reproduce.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dialcurate_core::metrics::tokenize;
use dialcurate_core::model::{Dialogue, Rule, Source, Turn};
use dialcurate_core::postedit::{hter, word_edit_distance};
use dialcurate_core::review::validate_postedit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HterVector {
    pub original: String,
    pub postedited: String,
    pub distance: usize,
    pub postedited_tokens: usize,
    pub hter: f64,
}

const HTER_PAIRS: [(&str, &str); 10] = [
    ("ciao come stai", "ciao come stai"),
    ("ciao come stai", "ciao come va"),
    ("ciao come stai", "ciao, come stai?"),
    ("ho fame", "ho molta fame adesso"),
    ("oggi piove tanto a Roma", "oggi piove"),
    ("andiamo al mare domani", "domani andiamo al mare"),
    ("non lo so", "lo so benissimo"),
    ("perché no?", "perché sì!"),
    ("È l'ora di cena.", "è l'ora della cena"),
    ("uno due tre", "quattro cinque sei sette"),
];

pub fn hter_vectors() -> Vec<HterVector> {
    HTER_PAIRS
        .iter()
        .map(|(o, p)| {
            let (ot, pt) = (tokenize(o), tokenize(p));
            HterVector {
                original: o.to_string(),
                postedited: p.to_string(),
                distance: word_edit_distance(ot.tokens(), pt.tokens()).total(),
                postedited_tokens: pt.len(),
                hter: hter(o, p).expect("non-empty post-edit"),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub name: String,
    pub original: Dialogue,
    pub edited: Dialogue,
    pub valid: bool,
    pub rules: Vec<Rule>,
}

const LINES: [&str; 10] = [
    "ciao, come stai?",
    "bene grazie, e tu?",
    "insomma, potrebbe andare meglio",
    "cosa è successo?",
    "ho perso il treno stamattina",
    "che sfortuna, mi dispiace",
    "domani ci riprovo",
    "vuoi un passaggio?",
    "sì, volentieri",
    "allora a domani",
];

fn base(rng: &mut ChaCha8Rng, n: usize) -> Dialogue {
    let turns = (0..n)
        .map(|i| Turn::new(if i % 2 == 0 { "A" } else { "B" }, *LINES.choose(rng).expect("non-empty")))
        .collect();
    Dialogue::new("case", Source::Llm, turns)
}

const KINDS: [&str; 10] = [
    "identity",
    "word-edit",
    "mid-single-deletion",
    "mid-pair-deletion",
    "boundary-deletion",
    "closing-turn",
    "mid-insertion",
    "repeated-speaker",
    "third-speaker",
    "blank-turn",
];

fn mutate(rng: &mut ChaCha8Rng, kind: &str, orig: &Dialogue) -> Dialogue {
    let mut d = orig.clone();
    let n = d.turns.len();
    match kind {
        "identity" => {}
        "word-edit" => {
            let i = rng.gen_range(0..n);
            d.turns[i].text.push_str(" davvero");
        }
        "mid-single-deletion" => {
            d.turns.remove(rng.gen_range(1..n - 1));
        }
        "mid-pair-deletion" => {
            let at = rng.gen_range(1..n - 2);
            d.turns.drain(at..at + 2);
        }
        "boundary-deletion" => {
            d.turns.remove(0);
        }
        "closing-turn" => {
            let next = if d.turns[n - 1].speaker == "A" { "B" } else { "A" };
            d.turns.push(Turn::new(next, "una battuta finale aggiunta"));
        }
        "mid-insertion" => {
            let at = rng.gen_range(1..n - 1);
            let a = d.turns[at - 1].speaker.clone();
            let b = d.turns[at].speaker.clone();
            d.turns.insert(at, Turn::new(b, "frase nuova in mezzo"));
            d.turns.insert(at + 1, Turn::new(a, "e una risposta nuova"));
        }
        "repeated-speaker" => {
            let i = rng.gen_range(1..n);
            d.turns[i].speaker = d.turns[i - 1].speaker.clone();
        }
        "third-speaker" => {
            let i = rng.gen_range(0..n);
            d.turns[i].speaker = "C".into();
        }
        "blank-turn" => {
            let i = rng.gen_range(0..n);
            d.turns[i].text = "   ".into();
        }
        other => unreachable!("unknown mutation {other}"),
    }
    d
}

/// Seeded validation cases, five per mutation kind. The expected verdicts
/// come from the reference validator.
pub fn validation_cases() -> Vec<ValidationCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for round in 0..5 {
        for kind in KINDS {
            let n = rng.gen_range(6..=10);
            let original = base(&mut rng, n);
            let edited = mutate(&mut rng, kind, &original);
            let (report, _) = validate_postedit(&original, &edited);
            out.push(ValidationCase {
                name: format!("{kind}-{round}"),
                original,
                edited,
                valid: report.is_valid(),
                rules: report.rules().into_iter().collect(),
            });
        }
    }
    out
}
