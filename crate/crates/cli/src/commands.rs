use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use dialcurate_core::authoring::{
    dialogue_payload, generate_batch, read_contexts, ChatClient, DecodingConfig, GenerationInput, HttpChatClient,
    Language, PromptKind, PromptTemplate, ReplayClient, RetryPolicy,
};
use dialcurate_core::lmeval::{eval_suite, BigramScorer, EvalOptions, ProcessScorer, TokenScorer, UniformScorer};
use dialcurate_core::metrics::{clean_generation, corpus_repetition_rate, corpus_tokens, detect_derailment};
use dialcurate_core::model::{read_corpus, write_corpus, Dialogue};
use dialcurate_core::partition::{matched_original_sample, stratified_split, Split};
use dialcurate_core::postedit::{aggregate_postedit_stats, diff_corpora, PostEditRecord};
use dialcurate_core::script::{extract_corpus, ExtractionConfig};
use dialcurate_core::stats::{corpus_stats, productivity, read_timing_log, stats_markdown};
use dialcurate_core::MetricConfig;
use dialcurate_service::{AppState, Store};

use crate::{Format, Lang, Template};

pub fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} value {p:?}")))
        .collect()
}

pub fn extract(min_window: usize, out: &Path, files: &[PathBuf]) -> Result<()> {
    let (corpus, summary) = extract_corpus(files, &ExtractionConfig { min_window })?;
    write_corpus(&corpus, out)?;
    print_json(&summary)
}

pub struct GenerateArgs {
    pub template: Template,
    pub lang: Lang,
    pub template_file: Option<PathBuf>,
    pub decoding: String,
    pub contexts: PathBuf,
    pub out: PathBuf,
    pub replay: Option<PathBuf>,
    pub rejections: Option<PathBuf>,
    pub concurrency: usize,
    pub max_attempts: u32,
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let kind = match a.template {
        Template::Context => PromptKind::ContextGenerate,
        Template::Rewrite => PromptKind::Rewrite,
    };
    let lang = match a.lang {
        Lang::It => Language::Italian,
        Lang::En => Language::English,
    };
    let template = match &a.template_file {
        Some(p) => PromptTemplate::new(kind, fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => PromptTemplate::builtin(kind, lang),
    };
    let cfg: DecodingConfig = a.decoding.parse()?;
    let inputs: Vec<GenerationInput> = match kind {
        PromptKind::ContextGenerate => {
            read_contexts(&a.contexts).with_context(|| format!("reading {}", a.contexts.display()))?
        }
        PromptKind::Rewrite => load_corpus(&a.contexts)?
            .iter()
            .map(|d| GenerationInput { id: d.id.clone(), payload: dialogue_payload(d) })
            .collect(),
    };
    let client: Box<dyn ChatClient> = match &a.replay {
        Some(p) => Box::new(ReplayClient::from_file(p).with_context(|| format!("reading replay {}", p.display()))?),
        None => Box::new(HttpChatClient::from_env()?),
    };
    let policy = RetryPolicy {
        max_attempts: a.max_attempts.max(1),
        initial_backoff: Duration::from_secs(1),
        concurrency: a.concurrency,
    };
    let outcome = generate_batch(&inputs, &template, &cfg, client.as_ref(), &policy);
    write_corpus(&outcome.dialogues, &a.out)?;
    if let Some(p) = &a.rejections {
        write_jsonl(p, &outcome.rejections)?;
    }
    print_json(&json!({
        "inputs": inputs.len(),
        "dialogues": outcome.dialogues.len(),
        "rejections": outcome.rejections.len(),
        "errors": outcome.errors,
    }))
}

pub fn diff(orig: &Path, post: &Path, out: &Path, report: Option<&Path>) -> Result<()> {
    let originals = load_corpus(orig)?;
    let postedited = load_corpus(post)?;
    let records = diff_corpora(&originals, &postedited);
    write_jsonl(out, &records)?;
    let agg = aggregate_postedit_stats(&records)?;
    if let Some(p) = report {
        write_json(p, &agg)?;
    }
    print_json(&agg)
}

pub fn rr(file: &Path, window: usize, stride: Option<usize>, ngram_min: usize, ngram_max: usize) -> Result<()> {
    let cfg = MetricConfig { rr_window: window, rr_stride: stride, rr_ngram_min: ngram_min, rr_ngram_max: ngram_max, ..Default::default() };
    cfg.validate()?;
    let corpus = load_corpus(file)?;
    let live: Vec<Dialogue> = corpus.into_iter().filter(|d| !d.is_deleted()).collect();
    let r = corpus_repetition_rate(&live, &cfg)?;
    print_json(&json!({
        "rr": r.rr,
        "per_order_rate": r.per_order_rate,
        "windows": r.window_count,
        "tokens": corpus_tokens(&live).len(),
        "window": window,
        "stride": cfg.rr_stride(),
    }))
}

pub fn derail(file: &Path, threshold: f64, out: &Path, max_turns: Option<usize>) -> Result<()> {
    let cfg = MetricConfig {
        derail_threshold: threshold,
        max_turns_for_eval: max_turns.unwrap_or(usize::MAX),
        ..Default::default()
    };
    cfg.validate()?;
    let corpus = load_corpus(file)?;
    let mut cut = Vec::with_capacity(corpus.len());
    let mut derailed = 0;
    let mut removed = 0;
    for d in &corpus {
        let at = detect_derailment(d, cfg.derail_threshold, cfg.bleu_max_order);
        if at < d.len() {
            derailed += 1;
        }
        let c = clean_generation(d, &cfg);
        removed += d.len() - c.len();
        cut.push(c);
    }
    write_corpus(&cut, out)?;
    print_json(&json!({
        "dialogues": corpus.len(),
        "derailed": derailed,
        "turns_removed": removed,
        "threshold": threshold,
    }))
}

pub fn stats(files: &[PathBuf], format: Format, timing: Option<&Path>) -> Result<()> {
    let mut corpus = Vec::new();
    for f in files {
        corpus.extend(load_corpus(f)?);
    }
    let s = corpus_stats(&corpus)?;
    let prod = match timing {
        Some(p) => {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(productivity(&read_timing_log(BufReader::new(file))?)?)
        }
        None => None,
    };
    match format {
        Format::Json => print_json(&json!({ "corpus": s, "productivity": prod })),
        Format::Markdown => {
            print!("{}", stats_markdown(&s));
            if let Some(prod) = prod {
                println!("\n| Mode | Dial/hour | Turns/hour | Tok/hour |\n|---|---:|---:|---:|");
                for (mode, r) in prod {
                    println!(
                        "| {} | {:.1} | {:.1} | {:.1} |",
                        serde_json::to_value(mode)?.as_str().unwrap_or_default(),
                        r.dialogues_per_hour,
                        r.turns_per_hour,
                        r.tokens_per_hour
                    );
                }
            }
            Ok(())
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct SplitFile {
    file: String,
    dialogues: usize,
    sha256: String,
}

pub fn split(corpus: &Path, ratios: &str, seed: u64, out_dir: &Path, matched: Option<(&Path, &Path)>) -> Result<()> {
    let ratios: Vec<f64> = parse_list(ratios, "ratio")?;
    if ratios.len() != 3 {
        bail!("expected three ratios (train, validation, test), got {}", ratios.len());
    }
    let dialogues: Vec<Dialogue> = load_corpus(corpus)?.into_iter().filter(|d| !d.is_deleted()).collect();
    let part = stratified_split(&dialogues, &ratios, seed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let by_id: HashMap<&str, &Dialogue> = dialogues.iter().map(|d| (d.id.as_str(), d)).collect();

    let mut files = BTreeMap::new();
    for split in Split::ALL {
        let items: Vec<Dialogue> = part.ids(split).iter().map(|id| by_id[id.as_str()].clone()).collect();
        let name = format!("{}.jsonl", split.name());
        let path = out_dir.join(&name);
        write_corpus(&items, &path)?;
        files.insert(split, SplitFile { file: name, dialogues: items.len(), sha256: sha256_file(&path)? });
    }

    let mut matched_files = BTreeMap::new();
    if let Some((records_path, originals_path)) = matched {
        let records: Vec<PostEditRecord> = read_jsonl(records_path)?;
        let originals = load_corpus(originals_path)?;
        let orig_by_id: HashMap<&str, &Dialogue> = originals.iter().map(|d| (d.id.as_str(), d)).collect();
        for split in Split::ALL {
            let source_of = |id: &str| part.stratum.get(id).copied();
            let sample = matched_original_sample(part.ids(split), &source_of, &records, seed)?;
            let items = sample
                .selected
                .iter()
                .map(|id| {
                    orig_by_id
                        .get(id.as_str())
                        .map(|d| (*d).clone())
                        .with_context(|| format!("original {id:?} is not in {}", originals_path.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let name = format!("matched-{}.jsonl", split.name());
            let path = out_dir.join(&name);
            write_corpus(&items, &path)?;
            matched_files.insert(
                split,
                json!({
                    "file": name,
                    "dialogues": items.len(),
                    "sha256": sha256_file(&path)?,
                    "matched": sample.matched,
                    "from_deleted": sample.from_deleted,
                    "matched_fraction": sample.matched_fraction,
                    "deleted_fraction": sample.deleted_fraction,
                }),
            );
        }
    }

    let mut manifest = json!({
        "seed": seed,
        "ratios": ratios,
        "input_sha256": sha256_file(corpus)?,
        "counts": part.counts(),
        "files": files,
    });
    if !matched_files.is_empty() {
        manifest["matched"] = json!(matched_files);
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    print_json(&manifest)
}

fn build_scorer(spec: &str, corpus: &[Dialogue]) -> Result<Box<dyn TokenScorer>> {
    if spec == "uniform" {
        let mut vocab = corpus_tokens(corpus);
        vocab.sort();
        vocab.dedup();
        return Ok(Box::new(UniformScorer::new(vocab)));
    }
    if let Some(path) = spec.strip_prefix("bigram:") {
        let train = load_corpus(Path::new(path))?;
        return Ok(Box::new(BigramScorer::train(&train, 1.0)));
    }
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        return Ok(Box::new(ProcessScorer::spawn(cmd)?));
    }
    bail!("unknown scorer {spec:?}; use uniform, bigram:FILE or cmd:COMMAND")
}

pub fn eval(
    corpus: &Path,
    scorer: &str,
    acc: &str,
    truncate: &str,
    unk: Option<String>,
    micro: bool,
    threads: usize,
) -> Result<()> {
    let dialogues: Vec<Dialogue> = load_corpus(corpus)?.into_iter().filter(|d| !d.is_deleted()).collect();
    let scorer = build_scorer(scorer, &dialogues)?;
    let opts = EvalOptions { acc_n: parse_list(acc, "Acc@N")?, unk, micro, threads };
    let fractions: Vec<f64> = parse_list(truncate, "truncation fraction")?;
    let report = eval_suite(&dialogues, scorer.as_ref(), &fractions, &opts)?;
    print_json(&report)
}

pub fn serve(data: &Path, host: &str, port: u16, roster: Option<&Path>, snapshot_every: u64) -> Result<()> {
    let store = Store::open(data, snapshot_every)?;
    let mut app = AppState::new(store);
    if let Some(p) = roster {
        let text = fs::read_to_string(p).with_context(|| format!("reading roster {}", p.display()))?;
        app = app.with_roster(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    let addr: std::net::SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
    eprintln!("listening on http://{addr}");
    tokio::runtime::Runtime::new()?.block_on(dialcurate_service::serve(app, addr))?;
    Ok(())
}

pub fn import(data: &Path, file: &Path) -> Result<()> {
    let dialogues = load_corpus(file)?;
    let mut store = Store::open(data, 0)?;
    let n = store.import(dialogues)?;
    store.write_snapshot()?;
    let mut out = std::io::stdout();
    writeln!(out, "{}", json!({ "imported": n, "tasks": store.state().tasks.len() }))?;
    Ok(())
}
