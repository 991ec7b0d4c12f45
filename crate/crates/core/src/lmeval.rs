//! Conditional turn perplexity (CPPL) and Acc@N over gold dialogues, with
//! any next-token probability source plugged in through [`TokenScorer`].
//!
//! Turn 0 only provides context. Every later turn is scored token by token
//! given all previous gold turns plus the turn prefix. Dialogue values are
//! means over scored turns; corpus values are means over dialogues, or
//! token-level pools when `micro` is set.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::MetricConfig;
use crate::metrics::{tokenize, truncate_last_fraction};
use crate::model::Dialogue;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("token {token:?} is not in the scorer vocabulary")]
    OutOfVocabulary { token: String },
    #[error("scorer returned {got} probabilities for a vocabulary of {expected}")]
    DistributionSize { expected: usize, got: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("scorer process: {0}")]
    Process(String),
    #[error("{0}")]
    Config(String),
}

/// Next-token probability source.
pub trait TokenScorer: Send + Sync {
    fn vocabulary(&self) -> &[String];

    /// Probabilities aligned with [`TokenScorer::vocabulary`].
    fn next_distribution(&self, context: &[String]) -> Result<Vec<f64>, EvalError>;

    /// Splits gold text into the scorer's own units.
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text).0
    }

    /// Whether calls from several threads at once are fine.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub acc_n: Vec<usize>,
    /// Map out-of-vocabulary gold tokens to this token instead of failing.
    pub unk: Option<String>,
    /// Pool tokens across turns and dialogues instead of macro-averaging.
    pub micro: bool,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { acc_n: vec![1, 5, 10], unk: None, micro: false, threads: 1 }
    }
}

impl EvalOptions {
    pub fn from_config(cfg: &MetricConfig) -> Self {
        EvalOptions { acc_n: cfg.acc_n_values.clone(), ..Default::default() }
    }
}

struct Vocab<'a> {
    index: HashMap<&'a str, usize>,
    unk: Option<usize>,
}

impl<'a> Vocab<'a> {
    fn new(scorer: &'a dyn TokenScorer, unk: Option<&str>) -> Result<Self, EvalError> {
        let index: HashMap<&str, usize> = scorer
            .vocabulary()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let unk = match unk {
            Some(u) => Some(*index.get(u).ok_or_else(|| EvalError::OutOfVocabulary { token: u.to_string() })?),
            None => None,
        };
        Ok(Vocab { index, unk })
    }

    fn lookup(&self, token: &str) -> Result<usize, EvalError> {
        self.index
            .get(token)
            .copied()
            .or(self.unk)
            .ok_or_else(|| EvalError::OutOfVocabulary { token: token.to_string() })
    }
}

/// 1-based rank of `gold` in `dist`; ties go to the earlier vocabulary entry.
pub fn gold_rank(dist: &[f64], gold: usize) -> usize {
    let p = dist[gold];
    1 + dist
        .iter()
        .enumerate()
        .filter(|(j, q)| **q > p || (**q == p && *j < gold))
        .count()
}

/// Scores of one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEval {
    pub turn: usize,
    pub tokens: usize,
    /// Sum of natural-log probabilities of the gold tokens.
    pub logprob_sum: f64,
    pub ppl: f64,
    /// Gold tokens ranked within the top N, per N.
    pub hits: BTreeMap<usize, usize>,
}

impl TurnEval {
    pub fn acc(&self, n: usize) -> f64 {
        self.hits[&n] as f64 / self.tokens as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEval {
    pub id: String,
    pub turns: Vec<TurnEval>,
}

impl DialogueEval {
    /// Mean per-turn perplexity; `None` when no turn was scored.
    pub fn cppl(&self) -> Option<f64> {
        (!self.turns.is_empty())
            .then(|| self.turns.iter().map(|t| t.ppl).sum::<f64>() / self.turns.len() as f64)
    }

    pub fn acc_at(&self, n: usize) -> Option<f64> {
        (!self.turns.is_empty())
            .then(|| self.turns.iter().map(|t| t.acc(n)).sum::<f64>() / self.turns.len() as f64)
    }
}

/// Scores every turn after the first.
pub fn score_dialogue(d: &Dialogue, scorer: &dyn TokenScorer, opts: &EvalOptions) -> Result<DialogueEval, EvalError> {
    let vocab = Vocab::new(scorer, opts.unk.as_deref())?;
    score_with(d, scorer, &vocab, &opts.acc_n)
}

fn score_with(d: &Dialogue, scorer: &dyn TokenScorer, vocab: &Vocab<'_>, acc_n: &[usize]) -> Result<DialogueEval, EvalError> {
    let vsize = scorer.vocabulary().len();
    let mut history: Vec<String> = Vec::new();
    let mut turns = Vec::new();
    for (t, turn) in d.turns.iter().enumerate() {
        let gold = scorer.tokenize(&turn.text);
        if t > 0 && !gold.is_empty() {
            let mut logprob_sum = 0.0;
            let mut hits: BTreeMap<usize, usize> = acc_n.iter().map(|n| (*n, 0)).collect();
            for tok in &gold {
                let idx = vocab.lookup(tok)?;
                let dist = scorer.next_distribution(&history)?;
                if dist.len() != vsize {
                    return Err(EvalError::DistributionSize { expected: vsize, got: dist.len() });
                }
                logprob_sum += dist[idx].ln();
                let rank = gold_rank(&dist, idx);
                for (n, h) in hits.iter_mut() {
                    if rank <= *n {
                        *h += 1;
                    }
                }
                history.push(tok.clone());
            }
            turns.push(TurnEval {
                turn: t,
                tokens: gold.len(),
                logprob_sum,
                ppl: (-logprob_sum / gold.len() as f64).exp(),
                hits,
            });
        } else {
            history.extend(gold);
        }
    }
    Ok(DialogueEval { id: d.id.clone(), turns })
}

/// Per-turn perplexities of a dialogue and their mean.
pub fn conditional_turn_perplexity(
    d: &Dialogue,
    scorer: &dyn TokenScorer,
) -> Result<(Vec<f64>, Option<f64>), EvalError> {
    let e = score_dialogue(d, scorer, &EvalOptions { acc_n: vec![], ..Default::default() })?;
    Ok((e.turns.iter().map(|t| t.ppl).collect(), e.cppl()))
}

pub fn accuracy_at_n(d: &Dialogue, scorer: &dyn TokenScorer, ns: &[usize]) -> Result<BTreeMap<usize, f64>, EvalError> {
    let e = score_dialogue(d, scorer, &EvalOptions { acc_n: ns.to_vec(), ..Default::default() })?;
    Ok(ns.iter().filter_map(|n| e.acc_at(*n).map(|a| (*n, a))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub cppl: f64,
    pub acc_at: BTreeMap<usize, f64>,
    pub dialogues: usize,
    pub turns: usize,
    pub tokens: usize,
}

/// Combines dialogue results. Dialogues without any scored turn are left
/// out of the averages.
pub fn aggregate(evals: &[DialogueEval], acc_n: &[usize], micro: bool) -> Result<EvalMetrics, EvalError> {
    let scored: Vec<&DialogueEval> = evals.iter().filter(|e| !e.turns.is_empty()).collect();
    if scored.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let turns: usize = scored.iter().map(|e| e.turns.len()).sum();
    let tokens: usize = scored.iter().flat_map(|e| &e.turns).map(|t| t.tokens).sum();
    let (cppl, acc_at) = if micro {
        let lp: f64 = scored.iter().flat_map(|e| &e.turns).map(|t| t.logprob_sum).sum();
        let acc = acc_n
            .iter()
            .map(|n| {
                let h: usize = scored.iter().flat_map(|e| &e.turns).map(|t| t.hits[n]).sum();
                (*n, h as f64 / tokens as f64)
            })
            .collect();
        ((-lp / tokens as f64).exp(), acc)
    } else {
        let k = scored.len() as f64;
        let cppl = scored.iter().filter_map(|e| e.cppl()).sum::<f64>() / k;
        let acc = acc_n
            .iter()
            .map(|n| (*n, scored.iter().filter_map(|e| e.acc_at(*n)).sum::<f64>() / k))
            .collect();
        (cppl, acc)
    };
    Ok(EvalMetrics { cppl, acc_at, dialogues: scored.len(), turns, tokens })
}

fn score_corpus(corpus: &[Dialogue], scorer: &dyn TokenScorer, opts: &EvalOptions) -> Result<Vec<DialogueEval>, EvalError> {
    let vocab = Vocab::new(scorer, opts.unk.as_deref())?;
    let threads = if scorer.concurrent_safe() { opts.threads.max(1) } else { 1 };
    if threads == 1 || corpus.len() < 2 {
        return corpus.iter().map(|d| score_with(d, scorer, &vocab, &opts.acc_n)).collect();
    }
    let chunk = corpus.len().div_ceil(threads);
    let parts: Vec<Result<Vec<DialogueEval>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = corpus
            .chunks(chunk)
            .map(|part| {
                let vocab = &vocab;
                s.spawn(move || part.iter().map(|d| score_with(d, scorer, vocab, &opts.acc_n)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(corpus.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMetrics {
    pub fraction: f64,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all_turns: EvalMetrics,
    pub truncated: Vec<TruncatedMetrics>,
    pub micro: bool,
}

/// Full-corpus metrics plus one variant per truncation fraction, where the
/// last `floor(f * n)` turns of each dialogue are removed first.
pub fn eval_suite(
    corpus: &[Dialogue],
    scorer: &dyn TokenScorer,
    fractions: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(EvalError::Config(format!("truncation fraction {f} outside (0, 1)")));
    }
    let all = score_corpus(corpus, scorer, opts)?;
    let all_turns = aggregate(&all, &opts.acc_n, opts.micro)?;
    let mut truncated = Vec::new();
    for &f in fractions {
        let cut: Vec<Dialogue> = corpus.iter().map(|d| truncate_last_fraction(d, f)).collect();
        let evals = score_corpus(&cut, scorer, opts)?;
        truncated.push(TruncatedMetrics { fraction: f, metrics: aggregate(&evals, &opts.acc_n, opts.micro)? });
    }
    Ok(EvalReport { all_turns, truncated, micro: opts.micro })
}

// ---------------------------------------------------------------------------
// Reference scorers

/// Every token equally likely.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocab: Vec<String>,
}

impl UniformScorer {
    pub fn new(vocab: Vec<String>) -> Self {
        UniformScorer { vocab }
    }
}

impl TokenScorer for UniformScorer {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(&self, _context: &[String]) -> Result<Vec<f64>, EvalError> {
        Ok(vec![1.0 / self.vocab.len() as f64; self.vocab.len()])
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Distributions looked up by exact context; unknown contexts fall back to
/// uniform.
#[derive(Debug, Clone)]
pub struct LookupScorer {
    vocab: Vec<String>,
    table: HashMap<Vec<String>, Vec<f64>>,
}

impl LookupScorer {
    pub fn new(vocab: Vec<String>) -> Self {
        LookupScorer { vocab, table: HashMap::new() }
    }

    pub fn insert(&mut self, context: Vec<String>, dist: Vec<f64>) {
        assert_eq!(dist.len(), self.vocab.len(), "distribution must cover the vocabulary");
        self.table.insert(context, dist);
    }

    /// Scorer that gives each gold token of `corpus` probability 1 in its
    /// own history.
    pub fn oracle(vocab: Vec<String>, corpus: &[Dialogue]) -> Self {
        let mut s = LookupScorer::new(vocab);
        let index: HashMap<String, usize> = s.vocab.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for d in corpus {
            let mut history: Vec<String> = Vec::new();
            for turn in &d.turns {
                for tok in tokenize(&turn.text).0 {
                    if let Some(&i) = index.get(&tok) {
                        let mut dist = vec![0.0; s.vocab.len()];
                        dist[i] = 1.0;
                        s.table.insert(history.clone(), dist);
                    }
                    history.push(tok);
                }
            }
        }
        s
    }
}

impl TokenScorer for LookupScorer {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(&self, context: &[String]) -> Result<Vec<f64>, EvalError> {
        Ok(self
            .table
            .get(context)
            .cloned()
            .unwrap_or_else(|| vec![1.0 / self.vocab.len() as f64; self.vocab.len()]))
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Add-k smoothed bigram model trained on a corpus. The vocabulary is the
/// sorted training tokens plus `<unk>`.
#[derive(Debug, Clone)]
pub struct BigramScorer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    unigram: Vec<f64>,
    bigram: HashMap<usize, HashMap<usize, f64>>,
    context_totals: HashMap<usize, f64>,
    k: f64,
}

impl BigramScorer {
    pub const UNK: &'static str = "<unk>";

    pub fn train(corpus: &[Dialogue], k: f64) -> Self {
        let streams: Vec<Vec<String>> = corpus
            .iter()
            .map(|d| d.turns.iter().flat_map(|t| tokenize(&t.text).0).collect())
            .collect();
        let mut vocab: Vec<String> = streams.iter().flatten().cloned().collect();
        vocab.push(Self::UNK.to_string());
        vocab.sort();
        vocab.dedup();
        let index: HashMap<String, usize> = vocab.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        let mut unigram = vec![0.0; vocab.len()];
        let mut bigram: HashMap<usize, HashMap<usize, f64>> = HashMap::new();
        let mut context_totals: HashMap<usize, f64> = HashMap::new();
        for s in &streams {
            let ids: Vec<usize> = s.iter().map(|t| index[t]).collect();
            for &i in &ids {
                unigram[i] += 1.0;
            }
            for w in ids.windows(2) {
                *bigram.entry(w[0]).or_default().entry(w[1]).or_default() += 1.0;
                *context_totals.entry(w[0]).or_default() += 1.0;
            }
        }
        BigramScorer { vocab, index, unigram, bigram, context_totals, k }
    }
}

impl TokenScorer for BigramScorer {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(&self, context: &[String]) -> Result<Vec<f64>, EvalError> {
        let v = self.vocab.len() as f64;
        let prev = context.last().map(|t| self.index.get(t).copied().unwrap_or(self.index[Self::UNK]));
        let dist = match prev {
            None => {
                let total: f64 = self.unigram.iter().sum();
                self.unigram.iter().map(|c| (c + self.k) / (total + self.k * v)).collect()
            }
            Some(p) => {
                let total = self.context_totals.get(&p).copied().unwrap_or(0.0);
                let row = self.bigram.get(&p);
                (0..self.vocab.len())
                    .map(|w| {
                        let c = row.and_then(|r| r.get(&w)).copied().unwrap_or(0.0);
                        (c + self.k) / (total + self.k * v)
                    })
                    .collect()
            }
        };
        Ok(dist)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Out-of-process scorer speaking newline-delimited JSON over stdin/stdout.
///
/// Each request is `{"context": [tokens]}`; the reply is either
/// `{"logprobs": {token: logprob, ...}}` or `{"top": [[token, p], ...]}`.
/// The vocabulary is fixed at startup from the reply to an empty context
/// (keys sorted for `logprobs`, listed order for `top`). Tokens a later reply
/// leaves out get probability 0.
pub struct ProcessScorer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

#[derive(Deserialize)]
struct ScorerReply {
    logprobs: Option<BTreeMap<String, f64>>,
    top: Option<Vec<(String, f64)>>,
}

impl ScorerReply {
    fn pairs(self) -> Result<Vec<(String, f64)>, EvalError> {
        match (self.logprobs, self.top) {
            (Some(lp), _) => Ok(lp.into_iter().map(|(t, l)| (t, l.exp())).collect()),
            (None, Some(top)) => Ok(top),
            (None, None) => Err(EvalError::Process("reply has neither logprobs nor top".into())),
        }
    }
}

impl ProcessScorer {
    pub fn spawn(command: &str) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EvalError::Process(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut io = (child, stdin, stdout);
        let first = Self::request(&mut io, &[])?;
        let vocab: Vec<String> = first.into_iter().map(|(t, _)| t).collect();
        if vocab.is_empty() {
            return Err(EvalError::Process("scorer reported an empty vocabulary".into()));
        }
        let index = vocab.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(ProcessScorer { vocab, index, io: Mutex::new(io) })
    }

    fn request(
        io: &mut (Child, ChildStdin, BufReader<ChildStdout>),
        context: &[String],
    ) -> Result<Vec<(String, f64)>, EvalError> {
        let perr = |e: std::io::Error| EvalError::Process(e.to_string());
        let line = json!({ "context": context }).to_string();
        io.1.write_all(line.as_bytes()).map_err(perr)?;
        io.1.write_all(b"\n").map_err(perr)?;
        io.1.flush().map_err(perr)?;
        let mut reply = String::new();
        if io.2.read_line(&mut reply).map_err(perr)? == 0 {
            return Err(EvalError::Process("scorer closed its output".into()));
        }
        let reply: ScorerReply =
            serde_json::from_str(&reply).map_err(|e| EvalError::Process(format!("bad reply: {e}")))?;
        reply.pairs()
    }
}

impl TokenScorer for ProcessScorer {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(&self, context: &[String]) -> Result<Vec<f64>, EvalError> {
        let mut io = self.io.lock().map_err(|_| EvalError::Process("scorer lock poisoned".into()))?;
        let pairs = Self::request(&mut io, context)?;
        let mut dist = vec![0.0; self.vocab.len()];
        for (t, p) in pairs {
            if let Some(&i) = self.index.get(&t) {
                dist[i] = p;
            }
        }
        Ok(dist)
    }
}

impl Drop for ProcessScorer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.0.kill();
            let _ = io.0.wait();
        }
    }
}
