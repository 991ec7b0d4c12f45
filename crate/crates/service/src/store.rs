//! Event-sourced task store.
//!
//! Every accepted write is one line in `events.jsonl`; the in-memory
//! [`State`] is a fold over those events. `snapshot.json` holds the state
//! at some sequence number and is only a startup shortcut: replaying the
//! log up to that number reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dialcurate_core::metrics::tokenize;
use dialcurate_core::model::{validate_dialogue, Dialogue, ValidationReport};
use dialcurate_core::postedit::{aggregate_postedit_stats, align_and_classify, PostEditCounts, PostEditRecord, PostEditReport};
use dialcurate_core::review::validate_postedit;
use dialcurate_core::stats::{corpus_sums, productivity, stats_from_sums, CorpusStats, Rates, TimingEntry, WorkMode};

pub const EVENT_LOG: &str = "events.jsonl";
pub const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("task {0:?} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("task {id:?} is at version {current}, submission was based on {base}")]
    Stale { id: String, base: u64, current: u64 },
    #[error("edit of {id:?} breaks the guidelines")]
    Rejected { id: String, report: ValidationReport },
    #[error("{0}")]
    BadRequest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    InProgress,
    Done,
    DialogueDeleted,
}

impl TaskState {
    pub const ALL: [TaskState; 4] =
        [TaskState::Pending, TaskState::InProgress, TaskState::Done, TaskState::DialogueDeleted];

    pub fn is_finished(self) -> bool {
        matches!(self, TaskState::Done | TaskState::DialogueDeleted)
    }
}

impl std::str::FromStr for TaskState {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(TaskState::Pending),
            "in_progress" => Ok(TaskState::InProgress),
            "done" => Ok(TaskState::Done),
            "dialogue_deleted" => Ok(TaskState::DialogueDeleted),
            other => Err(StoreError::BadRequest(format!("unknown task state {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub state: TaskState,
    pub assignee: Option<String>,
    pub version: u64,
    /// Active seconds reported by the annotator.
    pub seconds: f64,
    pub original: Dialogue,
    /// Accepted post-edit, once the task is done.
    pub edited: Option<Dialogue>,
    pub record: Option<PostEditRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Imported {
        dialogue: Dialogue,
    },
    Claimed {
        id: String,
        annotator: String,
    },
    Submitted {
        id: String,
        annotator: String,
        base_version: u64,
        edited: Dialogue,
        seconds: f64,
    },
    Deleted {
        id: String,
        annotator: String,
        base_version: u64,
        seconds: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    /// Wall-clock milliseconds, for auditing only; not part of the state.
    ts_ms: u64,
    event: Event,
}

/// Body of `PUT /tasks/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSubmission {
    pub base_version: u64,
    pub edited: Dialogue,
    pub seconds: f64,
}

/// Body of `POST /tasks/{id}/delete`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeleteSubmission {
    pub base_version: u64,
    pub seconds: f64,
}

/// Everything the log determines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Sequence number of the last applied event.
    pub seq: u64,
    pub tasks: BTreeMap<String, Task>,
    pub timing: Vec<TimingEntry>,
}

impl State {
    fn task(&self, id: &str) -> Result<&Task> {
        self.tasks.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    fn check_owner(&self, id: &str, annotator: &str, base: u64) -> Result<&Task> {
        let t = self.task(id)?;
        if t.state != TaskState::InProgress || t.assignee.as_deref() != Some(annotator) {
            return Err(StoreError::Conflict(format!("task {id:?} is not in progress for {annotator:?}")));
        }
        if t.version != base {
            return Err(StoreError::Stale { id: id.to_string(), base, current: t.version });
        }
        Ok(t)
    }

    fn check_seconds(seconds: f64) -> Result<()> {
        if !(seconds.is_finite() && seconds > 0.0) {
            return Err(StoreError::BadRequest(format!("elapsed seconds must be positive, got {seconds}")));
        }
        Ok(())
    }

    /// Whether `e` may be applied to the current state.
    pub fn check(&self, e: &Event) -> Result<()> {
        match e {
            Event::Imported { dialogue } => {
                if dialogue.id.trim().is_empty() {
                    return Err(StoreError::BadRequest("dialogue id is empty".into()));
                }
                if self.tasks.contains_key(&dialogue.id) {
                    return Err(StoreError::Conflict(format!("task {:?} already exists", dialogue.id)));
                }
            }
            Event::Claimed { id, annotator } => {
                if annotator.trim().is_empty() {
                    return Err(StoreError::BadRequest("annotator id is empty".into()));
                }
                let t = self.task(id)?;
                if t.state != TaskState::Pending {
                    return Err(StoreError::Conflict(format!(
                        "task {id:?} is already {}",
                        serde_json::to_value(t.state).expect("state serializes").as_str().unwrap_or("taken")
                    )));
                }
            }
            Event::Submitted { id, annotator, base_version, edited, seconds } => {
                let t = self.check_owner(id, annotator, *base_version)?;
                Self::check_seconds(*seconds)?;
                if edited.id != *id {
                    return Err(StoreError::BadRequest(format!("edited dialogue id {:?} is not {id:?}", edited.id)));
                }
                let (report, _) = validate_postedit(&t.original, edited);
                if !report.is_valid() {
                    return Err(StoreError::Rejected { id: id.clone(), report });
                }
            }
            Event::Deleted { id, annotator, base_version, seconds } => {
                self.check_owner(id, annotator, *base_version)?;
                Self::check_seconds(*seconds)?;
            }
        }
        Ok(())
    }

    /// Applies a checked event.
    pub fn apply(&mut self, e: &Event) {
        self.seq += 1;
        match e {
            Event::Imported { dialogue } => {
                self.tasks.insert(
                    dialogue.id.clone(),
                    Task {
                        id: dialogue.id.clone(),
                        state: TaskState::Pending,
                        assignee: None,
                        version: 1,
                        seconds: 0.0,
                        original: dialogue.clone(),
                        edited: None,
                        record: None,
                    },
                );
            }
            Event::Claimed { id, annotator } => {
                let t = self.tasks.get_mut(id).expect("checked");
                t.state = TaskState::InProgress;
                t.assignee = Some(annotator.clone());
                t.version += 1;
            }
            Event::Submitted { id, edited, seconds, .. } => {
                let t = self.tasks.get_mut(id).expect("checked");
                t.state = TaskState::Done;
                t.version += 1;
                t.seconds += seconds;
                t.record = Some(align_and_classify(&t.original, Some(edited)));
                t.edited = Some(edited.clone());
                self.timing.push(TimingEntry {
                    dialogue_id: id.clone(),
                    mode: WorkMode::Postedit,
                    seconds: *seconds,
                    dialogues: 1,
                    turns: edited.len() as u64,
                    tokens: edited.turns.iter().map(|t| tokenize(&t.text).len() as u64).sum(),
                });
            }
            Event::Deleted { id, seconds, .. } => {
                let t = self.tasks.get_mut(id).expect("checked");
                t.state = TaskState::DialogueDeleted;
                t.version += 1;
                t.seconds += seconds;
                t.record = Some(align_and_classify(&t.original, None));
                self.timing.push(TimingEntry {
                    dialogue_id: id.clone(),
                    mode: WorkMode::Postedit,
                    seconds: *seconds,
                    dialogues: 1,
                    turns: 0,
                    tokens: 0,
                });
            }
        }
    }

    fn finished(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values().filter(|t| t.state.is_finished())
    }

    /// Post-edited corpus of finished tasks in id order. Deleted dialogues
    /// appear as their original with `deleted: true`.
    pub fn export(&self) -> Vec<Dialogue> {
        self.finished()
            .map(|t| match &t.edited {
                Some(d) => d.clone(),
                None => Dialogue { deleted: Some(true), ..t.original.clone() },
            })
            .collect()
    }

    /// Originals of finished tasks, in the same order as [`State::export`].
    pub fn export_originals(&self) -> Vec<Dialogue> {
        self.finished().map(|t| t.original.clone()).collect()
    }

    pub fn records(&self) -> Vec<PostEditRecord> {
        self.finished().filter_map(|t| t.record.clone()).collect()
    }

    pub fn report(&self) -> LiveReport {
        let mut tasks: BTreeMap<TaskState, usize> = TaskState::ALL.iter().map(|s| (*s, 0)).collect();
        for t in self.tasks.values() {
            *tasks.get_mut(&t.state).expect("all states present") += 1;
        }
        let records = self.records();
        let postedit = aggregate_postedit_stats(&records).unwrap_or_else(|_| PostEditReport {
            by_source: BTreeMap::new(),
            total: PostEditCounts::default().summary(),
        });
        LiveReport {
            tasks,
            corpus: stats_from_sums(&corpus_sums(&self.export())),
            postedit,
            productivity: productivity(&self.timing).expect("seconds are checked before acceptance"),
        }
    }

    /// Canonical serialization, used for snapshot files.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("state serializes");
        v.push(b'\n');
        v
    }
}

/// Metrics recomputed from the store on every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveReport {
    pub tasks: BTreeMap<TaskState, usize>,
    pub corpus: CorpusStats,
    pub postedit: PostEditReport,
    pub productivity: BTreeMap<WorkMode, Rates>,
}

/// Task as returned by fetch: the original, the accepted edit if any, and
/// the validation state of the current text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: Task,
    pub validation: ValidationReport,
}

impl TaskView {
    pub fn new(task: &Task) -> Self {
        let validation = match &task.edited {
            Some(e) => validate_postedit(&task.original, e).0,
            None => validate_dialogue(&task.original),
        };
        TaskView { task: task.clone(), validation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub id: String,
    pub state: TaskState,
    pub assignee: Option<String>,
    pub version: u64,
    pub turns: usize,
}

/// Reads the event log, applying (and re-checking) events up to `upto`.
pub fn replay(log: &Path, upto: Option<u64>) -> Result<State> {
    let mut state = State::default();
    if !log.exists() {
        return Ok(state);
    }
    replay_into(&mut state, log, upto)?;
    Ok(state)
}

fn replay_into(state: &mut State, log: &Path, upto: Option<u64>) -> Result<()> {
    let file = File::open(log).map_err(io_err(log))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(log))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt { line: i + 1, message };
        let entry: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if entry.seq <= state.seq {
            continue;
        }
        if upto.is_some_and(|u| entry.seq > u) {
            break;
        }
        if entry.seq != state.seq + 1 {
            return Err(corrupt(format!("expected seq {}, found {}", state.seq + 1, entry.seq)));
        }
        state.check(&entry.event).map_err(|e| corrupt(e.to_string()))?;
        state.apply(&entry.event);
    }
    Ok(())
}

struct Persistence {
    dir: PathBuf,
    log: File,
    snapshot_every: u64,
}

/// The single writer over a [`State`].
pub struct Store {
    state: State,
    disk: Option<Persistence>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { state: State::default(), disk: None }
    }

    /// Opens (or creates) a data directory: loads the snapshot if present,
    /// then replays the rest of the log. A snapshot is written every
    /// `snapshot_every` events (0 disables automatic snapshots).
    pub fn open(dir: impl AsRef<Path>, snapshot_every: u64) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let snap = dir.join(SNAPSHOT);
        let mut state = if snap.exists() {
            let bytes = fs::read(&snap).map_err(io_err(&snap))?;
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt { line: 0, message: e.to_string() })?
        } else {
            State::default()
        };
        let log_path = dir.join(EVENT_LOG);
        if log_path.exists() {
            replay_into(&mut state, &log_path, None)?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err(&log_path))?;
        Ok(Store { state, disk: Some(Persistence { dir, log, snapshot_every }) })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn dir(&self) -> Option<&Path> {
        self.disk.as_ref().map(|p| p.dir.as_path())
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        self.state.check(&event)?;
        if let Some(p) = &mut self.disk {
            let ts_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
            let line = LogLine { seq: self.state.seq + 1, ts_ms, event: event.clone() };
            let mut bytes = serde_json::to_vec(&line).expect("event serializes");
            bytes.push(b'\n');
            let path = p.dir.join(EVENT_LOG);
            p.log.write_all(&bytes).map_err(io_err(&path))?;
            p.log.sync_data().map_err(io_err(&path))?;
        }
        self.state.apply(&event);
        if let Some(p) = &self.disk {
            if p.snapshot_every > 0 && self.state.seq % p.snapshot_every == 0 {
                self.write_snapshot()?;
            }
        }
        Ok(())
    }

    /// Writes the current state to `snapshot.json` (atomically).
    pub fn write_snapshot(&self) -> Result<()> {
        let Some(p) = &self.disk else { return Ok(()) };
        let tmp = p.dir.join("snapshot.json.tmp");
        let dst = p.dir.join(SNAPSHOT);
        fs::write(&tmp, self.state.snapshot_bytes()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &dst).map_err(io_err(&dst))
    }

    /// Adds dialogues as pending tasks. All ids are checked before any is
    /// written.
    pub fn import(&mut self, dialogues: Vec<Dialogue>) -> Result<usize> {
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.state.tasks {
            seen.insert(d.0.clone());
        }
        for d in &dialogues {
            self.state.check(&Event::Imported { dialogue: d.clone() })?;
            if !seen.insert(d.id.clone()) {
                return Err(StoreError::Conflict(format!("duplicate id {:?} in import", d.id)));
            }
        }
        let n = dialogues.len();
        for d in dialogues {
            self.commit(Event::Imported { dialogue: Dialogue { deleted: None, ..d } })?;
        }
        Ok(n)
    }

    pub fn list(&self, state: Option<TaskState>) -> Vec<TaskSummary> {
        self.state
            .tasks
            .values()
            .filter(|t| state.is_none_or(|s| t.state == s))
            .map(|t| TaskSummary {
                id: t.id.clone(),
                state: t.state,
                assignee: t.assignee.clone(),
                version: t.version,
                turns: t.original.len(),
            })
            .collect()
    }

    pub fn fetch(&self, id: &str) -> Result<TaskView> {
        self.state.task(id).map(TaskView::new)
    }

    pub fn claim(&mut self, id: &str, annotator: &str) -> Result<TaskView> {
        self.commit(Event::Claimed { id: id.to_string(), annotator: annotator.to_string() })?;
        self.fetch(id)
    }

    /// Accepts a post-edit. The edited dialogue takes the task id and the
    /// original's source.
    pub fn submit(&mut self, id: &str, annotator: &str, s: EditSubmission) -> Result<PostEditRecord> {
        let original = &self.state.task(id)?.original;
        let edited = Dialogue { id: id.to_string(), source: original.source, deleted: None, ..s.edited };
        self.commit(Event::Submitted {
            id: id.to_string(),
            annotator: annotator.to_string(),
            base_version: s.base_version,
            edited,
            seconds: s.seconds,
        })?;
        Ok(self.state.tasks[id].record.clone().expect("set on submit"))
    }

    pub fn delete(&mut self, id: &str, annotator: &str, s: DeleteSubmission) -> Result<PostEditRecord> {
        self.commit(Event::Deleted {
            id: id.to_string(),
            annotator: annotator.to_string(),
            base_version: s.base_version,
            seconds: s.seconds,
        })?;
        Ok(self.state.tasks[id].record.clone().expect("set on delete"))
    }
}
