//! Machine-side dialogue authoring: prompt templates, a pluggable chat
//! completion client, reply parsing and batch generation with retries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{merge_consecutive_turns, validate_dialogue, Dialogue, Source, Turn};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template body must contain exactly one {placeholder} placeholder, found {found}")]
    Placeholder { placeholder: &'static str, found: usize },
    #[error("prompt payload is empty")]
    EmptyPayload,
    #[error("invalid decoding setting: {0}")]
    Decoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Rewrite an extracted script excerpt.
    Rewrite,
    /// Invent two characters from a context and write their dialogue.
    ContextGenerate,
}

impl PromptKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            PromptKind::Rewrite => "{{DIALOGUE}}",
            PromptKind::ContextGenerate => "[[CONTEXT]]",
        }
    }

    /// Source label of dialogues produced with this kind of prompt.
    pub fn output_source(self) -> Source {
        match self {
            PromptKind::Rewrite => Source::HumanLlm,
            PromptKind::ContextGenerate => Source::Llm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    Italian,
    English,
}

const REWRITE_IT: &str = "Riscrivi interamente il seguente dialogo in modo che sia significativo, \
naturale, realistico, coerente, comprensibile e autoconclusivo.\n{{DIALOGUE}}";

const REWRITE_EN: &str = "Rewrite the following dialogue in its entirety in a way that is \
meaningful, natural, realistic, coherent, comprehensible and self-conclusive.\n{{DIALOGUE}}";

const CONTEXT_IT: &str = "Dato il testo che segue >>>, inventa due personaggi collegati ad esso e \
descrivi la loro personalità. Crea poi un dialogo tra i due che sia naturale, realistico, coerente, \
comprensibile e autocontenuto. Nel dialogo ci possono essere solo i due attori e i loro turni. \
I due attori non devono necessariamente essere d'accordo tra loro. Il dialogo non deve essere \
artificiale ed eccessivamente amichevole.

La struttura dell'output è:

Descrizione dei personaggi:

Speaker1: descrizione
Speaker2: descrizione

Dialogo:

Speaker1: turno
Speaker2: turno

>>> [[CONTEXT]]";

const CONTEXT_EN: &str = "Given the text that follows >>>, come up with two characters connected \
to it and describe their personality. Make then a dialogue between the two that is natural, \
realistic, coherent, comprehensible and self-contained. In the dialogue, there can be only the two \
actors and their turns. The two actors do not necessarily have to agree with each other. The \
dialogue must not be artificial and excessively friendly.

The output structure is:

Character description:

Speaker1: description
Speaker2: description

Dialogue:

Speaker1: turn
Speaker2: turn

>>> [[CONTEXT]]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    kind: PromptKind,
    body: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let placeholder = kind.placeholder();
        let found = body.matches(placeholder).count();
        if found != 1 {
            return Err(PromptError::Placeholder { placeholder, found });
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn builtin(kind: PromptKind, lang: Language) -> Self {
        let body = match (kind, lang) {
            (PromptKind::Rewrite, Language::Italian) => REWRITE_IT,
            (PromptKind::Rewrite, Language::English) => REWRITE_EN,
            (PromptKind::ContextGenerate, Language::Italian) => CONTEXT_IT,
            (PromptKind::ContextGenerate, Language::English) => CONTEXT_EN,
        };
        PromptTemplate { kind, body: body.to_string() }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// Substitutes `payload` for the template's placeholder.
pub fn render_prompt(t: &PromptTemplate, payload: &str) -> Result<String, PromptError> {
    if payload.is_empty() {
        return Err(PromptError::EmptyPayload);
    }
    Ok(t.body.replacen(t.kind.placeholder(), payload, 1))
}

/// Dialogue text as fed to the rewrite prompt: one `speaker: text` per line.
pub fn dialogue_payload(d: &Dialogue) -> String {
    d.turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub top_p: f64,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_penalty: Option<f64>,
}

impl DecodingConfig {
    /// Settings used to author dialogues with the chat model.
    pub const AUTHORING: DecodingConfig = DecodingConfig {
        top_p: 0.9,
        temperature: 0.8,
        repetition_penalty: None,
    };

    /// Settings used when sampling continuations from fine-tuned models.
    pub const MODEL_GENERATION: DecodingConfig = DecodingConfig {
        top_p: 0.9,
        temperature: 1.0,
        repetition_penalty: Some(2.0),
    };

    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PromptError::Decoding(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(PromptError::Decoding(format!("temperature {} not positive", self.temperature)));
        }
        if let Some(p) = self.repetition_penalty {
            if !(p > 0.0) {
                return Err(PromptError::Decoding(format!("repetition_penalty {p} not positive")));
            }
        }
        Ok(())
    }
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig::AUTHORING
    }
}

impl std::str::FromStr for DecodingConfig {
    type Err = PromptError;

    /// Parses `top_p=0.9,temperature=0.8[,repetition_penalty=2]`; keys not
    /// given keep their authoring defaults.
    fn from_str(s: &str) -> Result<Self, PromptError> {
        let mut cfg = DecodingConfig::AUTHORING;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| PromptError::Decoding(format!("expected key=value, got {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| PromptError::Decoding(format!("bad number in {part:?}")))?;
            match k.trim() {
                "top_p" => cfg.top_p = v,
                "temperature" => cfg.temperature = v,
                "repetition_penalty" => cfg.repetition_penalty = Some(v),
                other => return Err(PromptError::Decoding(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Chat clients

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ChatError {
    /// Worth retrying (network hiccup, rate limit, 5xx).
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
}

/// Source of chat completions. Implementations must tolerate concurrent
/// calls.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, cfg: &DecodingConfig) -> Result<String, ChatError>;
}

/// Key of a prompt in a replay file: hex SHA-256 of its UTF-8 bytes.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Answers from a recorded map of prompt hash to reply.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    replies: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(replies: HashMap<String, String>) -> Self {
        ReplayClient { replies }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let replies = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(ReplayClient { replies })
    }

    pub fn insert(&mut self, prompt: &str, reply: impl Into<String>) {
        self.replies.insert(prompt_hash(prompt), reply.into());
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, prompt: &str, _cfg: &DecodingConfig) -> Result<String, ChatError> {
        let key = prompt_hash(prompt);
        self.replies
            .get(&key)
            .cloned()
            .ok_or_else(|| ChatError::Permanent(format!("no replay entry for prompt {key}")))
    }
}

/// Client that fails every call; exercises retry and error paths.
#[derive(Debug, Clone)]
pub struct FailingClient {
    pub error: ChatError,
    calls: std::sync::Arc<AtomicUsize>,
}

impl FailingClient {
    pub fn transient() -> Self {
        FailingClient {
            error: ChatError::Transient("service unavailable".into()),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for FailingClient {
    fn complete(&self, _prompt: &str, _cfg: &DecodingConfig) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
}

/// HTTP endpoint speaking `POST {prompt, top_p, temperature}` → `{text}`.
pub struct HttpChatClient {
    url: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub const URL_ENV: &'static str = "DIALCURATE_CHAT_URL";
    pub const TOKEN_ENV: &'static str = "DIALCURATE_CHAT_TOKEN";

    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Permanent(e.to_string()))?;
        Ok(HttpChatClient { url: url.into(), token, http })
    }

    pub fn from_env() -> Result<Self, ChatError> {
        let url = std::env::var(Self::URL_ENV)
            .map_err(|_| ChatError::Permanent(format!("{} is not set", Self::URL_ENV)))?;
        let token = std::env::var(Self::TOKEN_ENV).ok();
        Self::new(url, token, Duration::from_secs(120))
    }
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient").field("url", &self.url).finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str, cfg: &DecodingConfig) -> Result<String, ChatError> {
        let mut body = json!({
            "prompt": prompt,
            "top_p": cfg.top_p,
            "temperature": cfg.temperature,
        });
        if let Some(p) = cfg.repetition_penalty {
            body["repetition_penalty"] = json!(p);
        }
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ChatError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ChatError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ChatError::Permanent(format!("HTTP {status}")));
        }
        resp.json::<ChatReply>()
            .map(|r| r.text)
            .map_err(|e| ChatError::Permanent(format!("malformed reply: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Reply parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    TooFewSpeakers,
    TooManySpeakers,
    TooFewTurns,
    /// Structurally invalid after merging.
    InvalidDialogue,
}

/// A reply that could not be turned into a valid dialogue. The raw text is
/// kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseRejection {
    pub id: String,
    pub reason: RejectionReason,
    pub detail: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDialogue {
    /// `(label, description)` from the character description section.
    pub characters: Option<Vec<(String, String)>>,
    pub dialogue: Dialogue,
}

fn header_kind(line: &str) -> Option<&'static str> {
    let l = line.trim().trim_matches(|c| c == '*' || c == '#' || c == ' ').to_lowercase();
    let l = l.trim_end_matches(':').trim();
    match l {
        "dialogue" | "dialogo" => Some("dialogue"),
        "character description" | "character descriptions" | "descrizione dei personaggi"
        | "descrizione personaggi" | "personaggi" | "characters" => Some("characters"),
        _ => None,
    }
}

fn turn_line_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[\s\-\*]*([^:\*\n]{1,40}?)[\s\*]*:[\s\*]*(\S.*)$").expect("static regex")
    })
}

fn split_turn_line(line: &str) -> Option<(String, String)> {
    let caps = turn_line_regex().captures(line)?;
    let label = caps[1].split_whitespace().collect::<Vec<_>>().join(" ");
    if label.is_empty() {
        return None;
    }
    Some((label, caps[2].trim().to_string()))
}

/// Parses a chat reply into a dialogue.
///
/// Takes the section after a `Dialogue:` / `Dialogo:` header, or the whole
/// reply when there is none. Each `Name: text` line is a turn; other
/// non-empty lines continue the previous turn. Labels are compared
/// case-insensitively and renamed to `S1`/`S2` by order of appearance, with
/// the originals kept under `provenance.speakers`.
pub fn parse_generated(raw: &str, id: &str, source: Source) -> Result<GeneratedDialogue, ParseRejection> {
    let reject = |reason, detail: String| ParseRejection {
        id: id.to_string(),
        reason,
        detail,
        raw: raw.to_string(),
    };

    let lines: Vec<&str> = raw.lines().collect();
    let dialogue_at = lines.iter().position(|l| header_kind(l) == Some("dialogue"));
    let characters_at = lines.iter().position(|l| header_kind(l) == Some("characters"));
    let (body, characters) = match dialogue_at {
        Some(d) => {
            let start = characters_at.filter(|c| *c < d).map_or(0, |c| c + 1);
            let chars: Vec<(String, String)> =
                lines[start..d].iter().filter_map(|l| split_turn_line(l)).collect();
            (&lines[d + 1..], (!chars.is_empty()).then_some(chars))
        }
        None => (&lines[..], None),
    };

    let mut turns: Vec<(String, String)> = Vec::new();
    for line in body {
        if line.trim().is_empty() {
            continue;
        }
        match split_turn_line(line) {
            Some(t) => turns.push(t),
            None => {
                if let Some(last) = turns.last_mut() {
                    last.1.push(' ');
                    last.1.push_str(line.trim());
                }
            }
        }
    }

    let mut labels: Vec<(String, String)> = Vec::new(); // (key, first spelling)
    for (label, _) in &turns {
        let key = label.to_lowercase();
        if !labels.iter().any(|(k, _)| *k == key) {
            labels.push((key, label.clone()));
        }
    }
    match labels.len() {
        0 | 1 => {
            return Err(reject(
                RejectionReason::TooFewSpeakers,
                format!("{} speaker label(s)", labels.len()),
            ))
        }
        2 => {}
        n => {
            let names: Vec<&str> = labels.iter().map(|(_, l)| l.as_str()).collect();
            return Err(reject(
                RejectionReason::TooManySpeakers,
                format!("{n} speaker labels: {}", names.join(", ")),
            ));
        }
    }

    let canon = |label: &str| {
        let key = label.to_lowercase();
        if labels[0].0 == key { "S1" } else { "S2" }
    };
    let mut d = Dialogue::new(
        id,
        source,
        turns.iter().map(|(l, t)| Turn::new(canon(l), t.clone())).collect(),
    );
    d.provenance.insert(
        "speakers".into(),
        json!({ "S1": labels[0].1, "S2": labels[1].1 }),
    );
    let d = merge_consecutive_turns(&d);
    let report = validate_dialogue(&d);
    if !report.is_valid() {
        let reason = if report.has(crate::model::Rule::MinTurns) {
            RejectionReason::TooFewTurns
        } else {
            RejectionReason::InvalidDialogue
        };
        let rules: Vec<&str> = report.violations.iter().map(|v| v.rule.name()).collect();
        return Err(reject(reason, rules.join(", ")));
    }
    Ok(GeneratedDialogue { characters, dialogue: d })
}

// ---------------------------------------------------------------------------
// Batch generation

/// One prompt payload (context text, or rendered excerpt for rewrites).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub id: String,
    pub payload: String,
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub concurrency: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            concurrency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    pub dialogues: Vec<Dialogue>,
    pub rejections: Vec<ParseRejection>,
    pub errors: Vec<ItemError>,
}

enum ItemResult {
    Ok(Box<Dialogue>),
    Rejected(ParseRejection),
    Failed(ItemError),
}

fn call_with_retry(
    client: &dyn ChatClient,
    prompt: &str,
    cfg: &DecodingConfig,
    policy: &RetryPolicy,
) -> Result<String, (u32, ChatError)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(prompt, cfg) {
            Ok(text) => return Ok(text),
            Err(e @ ChatError::Permanent(_)) => return Err((attempt, e)),
            Err(e) if attempt >= policy.max_attempts => return Err((attempt, e)),
            Err(_) => {
                let wait = policy.initial_backoff.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(wait);
            }
        }
    }
}

fn generate_one(
    input: &GenerationInput,
    template: &PromptTemplate,
    cfg: &DecodingConfig,
    client: &dyn ChatClient,
    policy: &RetryPolicy,
) -> ItemResult {
    let prompt = match render_prompt(template, &input.payload) {
        Ok(p) => p,
        Err(e) => {
            return ItemResult::Failed(ItemError { id: input.id.clone(), attempts: 0, error: e.to_string() })
        }
    };
    let raw = match call_with_retry(client, &prompt, cfg, policy) {
        Ok(raw) => raw,
        Err((attempts, e)) => {
            return ItemResult::Failed(ItemError { id: input.id.clone(), attempts, error: e.to_string() })
        }
    };
    match parse_generated(&raw, &input.id, template.kind().output_source()) {
        Ok(g) => {
            let mut d = g.dialogue;
            d.provenance.insert("context_id".into(), json!(input.id));
            d.provenance.insert("prompt_hash".into(), json!(prompt_hash(&prompt)));
            if let Some(chars) = g.characters {
                let map: BTreeMap<String, String> = chars.into_iter().collect();
                d.provenance.insert("characters".into(), json!(map));
            }
            ItemResult::Ok(Box::new(d))
        }
        Err(r) => ItemResult::Rejected(r),
    }
}

/// Runs one prompt per input. Failures and rejections are collected per
/// item; the batch itself never aborts. Output order is input order.
pub fn generate_batch(
    inputs: &[GenerationInput],
    template: &PromptTemplate,
    cfg: &DecodingConfig,
    client: &dyn ChatClient,
    policy: &RetryPolicy,
) -> BatchOutcome {
    let slots: Vec<Mutex<Option<ItemResult>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = policy.concurrency.clamp(1, inputs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(input) = inputs.get(i) else { break };
                let r = generate_one(input, template, cfg, client, policy);
                *slots[i].lock().expect("slot lock poisoned") = Some(r);
            });
        }
    });

    let mut out = BatchOutcome::default();
    for slot in slots {
        match slot.into_inner().expect("slot lock poisoned") {
            Some(ItemResult::Ok(d)) => out.dialogues.push(*d),
            Some(ItemResult::Rejected(r)) => out.rejections.push(r),
            Some(ItemResult::Failed(e)) => out.errors.push(e),
            None => unreachable!("every input is processed"),
        }
    }
    out
}

/// Reads contexts, one per line. A line `id<TAB>text` carries its own id;
/// otherwise the id is `<file stem>:<line number>`.
pub fn read_contexts(path: impl AsRef<Path>) -> std::io::Result<Vec<GenerationInput>> {
    let path = path.as_ref();
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split_once('\t') {
            Some((id, payload)) if !id.trim().is_empty() => GenerationInput {
                id: id.trim().to_string(),
                payload: payload.trim().to_string(),
            },
            _ => GenerationInput { id: format!("{stem}:{}", i + 1), payload: l.trim().to_string() },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_have_one_placeholder() {
        for kind in [PromptKind::Rewrite, PromptKind::ContextGenerate] {
            for lang in [Language::Italian, Language::English] {
                let t = PromptTemplate::builtin(kind, lang);
                assert!(PromptTemplate::new(kind, t.body()).is_ok());
            }
        }
    }

    #[test]
    fn render_rewrite() {
        let t = PromptTemplate::builtin(PromptKind::Rewrite, Language::English);
        let p = render_prompt(&t, "A: ciao\nB: ciao").unwrap();
        assert!(p.starts_with("Rewrite the following dialogue in its entirety"));
        assert!(p.ends_with("self-conclusive.\nA: ciao\nB: ciao"));
    }

    #[test]
    fn render_context_only_body() {
        let t = PromptTemplate::new(PromptKind::ContextGenerate, "[[CONTEXT]]").unwrap();
        assert_eq!(render_prompt(&t, "tweet text").unwrap(), "tweet text");
        assert_eq!(render_prompt(&t, ""), Err(PromptError::EmptyPayload));
    }

    #[test]
    fn template_placeholder_checks() {
        assert!(matches!(
            PromptTemplate::new(PromptKind::Rewrite, "no slot"),
            Err(PromptError::Placeholder { found: 0, .. })
        ));
        assert!(matches!(
            PromptTemplate::new(PromptKind::ContextGenerate, "[[CONTEXT]] [[CONTEXT]]"),
            Err(PromptError::Placeholder { found: 2, .. })
        ));
        // payload containing the placeholder is inserted verbatim, once
        let t = PromptTemplate::new(PromptKind::Rewrite, "x {{DIALOGUE}} y").unwrap();
        assert_eq!(render_prompt(&t, "{{DIALOGUE}}").unwrap(), "x {{DIALOGUE}} y");
    }

    #[test]
    fn decoding_parse() {
        let c: DecodingConfig = "top_p=0.9,temperature=0.8".parse().unwrap();
        assert_eq!(c, DecodingConfig::AUTHORING);
        let c: DecodingConfig = "temperature=1,repetition_penalty=2".parse().unwrap();
        assert_eq!(c, DecodingConfig::MODEL_GENERATION);
        assert!("top_p=1.5".parse::<DecodingConfig>().is_err());
        assert!("temperature=0".parse::<DecodingConfig>().is_err());
        assert!("beam=3".parse::<DecodingConfig>().is_err());
    }

    #[test]
    fn parse_minimal_reply() {
        let g = parse_generated(
            "Dialogue:\nSpeaker1: ciao\nSpeaker2: ciao\nSpeaker1: come va?",
            "c1",
            Source::Llm,
        )
        .unwrap();
        assert_eq!(g.dialogue.len(), 3);
        assert_eq!(g.dialogue.turns[2], Turn::new("S1", "come va?"));
        assert_eq!(g.characters, None);
    }

    #[test]
    fn parse_full_structure_in_italian() {
        let raw = "Descrizione dei personaggi:\n\nMarco: un pensionato brontolone\n\
                   Alice: una studentessa curiosa\n\nDialogo:\n\n**Marco:** Ancora questi treni in ritardo!\n\
                   Alice: Succede spesso?\nMarco: Ogni giorno.\nNe ho abbastanza.\nAlice: Capisco.";
        let g = parse_generated(raw, "c2", Source::Llm).unwrap();
        let chars = g.characters.unwrap();
        assert_eq!(chars[0], ("Marco".to_string(), "un pensionato brontolone".to_string()));
        assert_eq!(g.dialogue.len(), 4);
        assert_eq!(g.dialogue.turns[2].text, "Ogni giorno. Ne ho abbastanza.");
        assert_eq!(g.dialogue.provenance["speakers"], json!({"S1": "Marco", "S2": "Alice"}));
    }

    #[test]
    fn parse_rejects_three_speakers() {
        let raw = "Dialogue:\nA: uno\nB: due\nC: tre\nA: quattro";
        let r = parse_generated(raw, "c3", Source::Llm).unwrap_err();
        assert_eq!(r.reason, RejectionReason::TooManySpeakers);
        assert_eq!(r.raw, raw);
    }

    #[test]
    fn parse_rewrite_without_header() {
        let raw = "A: uno\nB: due\nA: tre\nB: quattro";
        let g = parse_generated(raw, "r", Source::HumanLlm).unwrap();
        assert_eq!(g.dialogue.len(), 4);
        assert_eq!(g.dialogue.source, Source::HumanLlm);
    }

    #[test]
    fn parse_rejects_short_and_monologue() {
        let r = parse_generated("A: uno\nB: due", "x", Source::Llm).unwrap_err();
        assert_eq!(r.reason, RejectionReason::TooFewTurns);
        let r = parse_generated("A: uno\nA: due\nA: tre", "x", Source::Llm).unwrap_err();
        assert_eq!(r.reason, RejectionReason::TooFewSpeakers);
        let r = parse_generated("just prose", "x", Source::Llm).unwrap_err();
        assert_eq!(r.reason, RejectionReason::TooFewSpeakers);
    }

    #[test]
    fn failing_client_exhausts_retries() {
        let client = FailingClient::transient();
        let policy = RetryPolicy { initial_backoff: Duration::ZERO, ..Default::default() };
        let inputs = vec![GenerationInput { id: "a".into(), payload: "ctx".into() }];
        let t = PromptTemplate::builtin(PromptKind::ContextGenerate, Language::Italian);
        let out = generate_batch(&inputs, &t, &DecodingConfig::AUTHORING, &client, &policy);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].attempts, 3);
        assert_eq!(client.calls(), 3);
    }
}
