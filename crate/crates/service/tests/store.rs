#[path = "../../core/tests/common/mod.rs"]
mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dialcurate_core::model::{parse_corpus, Dialogue, Rule, Source, Turn};
use dialcurate_core::postedit::{aggregate_postedit_stats, diff_corpora, EditStatus, PostEditCounts};
use dialcurate_core::stats::{corpus_sums, productivity, read_timing_log, stats_from_sums};
use dialcurate_service::store::{replay, DeleteSubmission, EditSubmission, Store, StoreError, TaskState, EVENT_LOG, SNAPSHOT};

fn dialogue(id: &str) -> Dialogue {
    Dialogue::from_pairs(
        id,
        Source::Llm,
        &[
            ("A", "ciao come stai"),
            ("B", "bene grazie e tu"),
            ("A", "tutto bene oggi"),
            ("B", "che bello sentirlo"),
            ("A", "andiamo al mare"),
            ("B", "sì volentieri"),
        ],
    )
}

fn edit(edited: Dialogue, base_version: u64) -> EditSubmission {
    EditSubmission { base_version, edited, seconds: 60.0 }
}

#[test]
fn lifecycle_and_versions() {
    let mut s = Store::in_memory();
    s.import(vec![dialogue("d1"), dialogue("d2")]).unwrap();
    assert_eq!(s.list(Some(TaskState::Pending)).len(), 2);
    let v = s.claim("d1", "ann").unwrap();
    assert_eq!(v.task.version, 2);
    assert_eq!(v.task.assignee.as_deref(), Some("ann"));
    assert!(matches!(s.claim("d1", "other"), Err(StoreError::Conflict(_))));
    assert!(matches!(s.claim("nope", "ann"), Err(StoreError::NotFound(_))));

    // Stale base version and the wrong annotator are both refused.
    assert!(matches!(s.submit("d1", "ann", edit(dialogue("d1"), 1)), Err(StoreError::Stale { current: 2, .. })));
    assert!(matches!(s.submit("d1", "bob", edit(dialogue("d1"), 2)), Err(StoreError::Conflict(_))));
    let bad_secs = EditSubmission { seconds: 0.0, ..edit(dialogue("d1"), 2) };
    assert!(matches!(s.submit("d1", "ann", bad_secs), Err(StoreError::BadRequest(_))));

    let r = s.submit("d1", "ann", edit(dialogue("d1"), 2)).unwrap();
    assert_eq!(r.dialogue_status, EditStatus::Unchanged);
    assert_eq!(s.fetch("d1").unwrap().task.state, TaskState::Done);
    assert_eq!(s.fetch("d1").unwrap().task.version, 3);

    s.claim("d2", "ann").unwrap();
    let r = s.delete("d2", "ann", DeleteSubmission { base_version: 2, seconds: 5.0 }).unwrap();
    assert_eq!(r.dialogue_status, EditStatus::Deleted);
    assert!(s.list(Some(TaskState::Pending)).is_empty());
    assert!(s.list(Some(TaskState::InProgress)).is_empty());

    let export = s.state().export();
    assert_eq!(export.len(), 2);
    assert!(!export[0].is_deleted());
    assert!(export[1].is_deleted());
    assert_eq!(s.state().timing.len(), 2);
    assert_eq!(s.state().timing[1].turns, 0);
}

#[test]
fn duplicate_import_is_refused_atomically() {
    let mut s = Store::in_memory();
    s.import(vec![dialogue("d1")]).unwrap();
    assert!(s.import(vec![dialogue("d2"), dialogue("d1")]).is_err());
    assert!(s.import(vec![dialogue("d3"), dialogue("d3")]).is_err());
    assert_eq!(s.list(None).len(), 1);
}

#[test]
fn single_mid_deletion_is_rejected() {
    let mut s = Store::in_memory();
    s.import(vec![dialogue("d")]).unwrap();
    s.claim("d", "ann").unwrap();
    let mut e = dialogue("d");
    e.turns.remove(2);
    match s.submit("d", "ann", edit(e, 2)) {
        Err(StoreError::Rejected { report, .. }) => assert!(report.has(Rule::PairDeletion)),
        other => panic!("expected rejection, got {other:?}"),
    }
    // Nothing was recorded; the task is still open at the same version.
    let t = s.fetch("d").unwrap().task;
    assert_eq!((t.state, t.version), (TaskState::InProgress, 2));
    assert_eq!(s.state().seq, 2);
}

#[test]
fn mid_insertion_is_rejected() {
    let mut s = Store::in_memory();
    s.import(vec![dialogue("d")]).unwrap();
    s.claim("d", "ann").unwrap();
    let mut e = dialogue("d");
    e.turns.insert(2, Turn::new("A", "nuovo"));
    e.turns.insert(3, Turn::new("B", "anche questo"));
    match s.submit("d", "ann", edit(e, 2)) {
        Err(StoreError::Rejected { report, .. }) => assert!(report.has(Rule::BoundaryInsertion)),
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn closing_turn_and_substitution_accepted() {
    let mut s = Store::in_memory();
    s.import(vec![dialogue("d")]).unwrap();
    s.claim("d", "ann").unwrap();
    let mut e = dialogue("d");
    e.turns[1].text = "bene grazie e lei".into();
    e.turns.push(Turn::new("A", "a domani allora"));
    // Id and source of the submission are overridden by the task's.
    e.id = "whatever".into();
    e.source = Source::Human;
    let r = s.submit("d", "ann", edit(e, 2)).unwrap();
    assert_eq!(r.count(EditStatus::Edited), 1);
    assert_eq!(r.count(EditStatus::Unchanged), 5);
    assert_eq!(r.inserted_turn_count, 1);
    assert_eq!(r.hter_per_edited_turn, vec![0.25]);
    let out = &s.state().export()[0];
    assert_eq!((out.id.as_str(), out.source), ("d", Source::Llm));
}

#[test]
fn fresh_report_is_zeros() {
    let mut s = Store::in_memory();
    let r = s.state().report();
    assert!(r.tasks.values().all(|&n| n == 0));
    assert_eq!(r.corpus.total.dialogues, 0);
    assert!(r.postedit.by_source.is_empty());
    assert_eq!(r.postedit.total, PostEditCounts::default().summary());
    assert!(r.productivity.is_empty());
    s.import(vec![dialogue("a")]).unwrap();
    assert_eq!(s.state().report().tasks[&TaskState::Pending], 1);
    assert_eq!(s.state().report().postedit.total.dialogues, 0);
}

fn random_session(dir: &std::path::Path, seed: u64, tasks: usize, snapshot_every: u64) -> Store {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Store::open(dir, snapshot_every).unwrap();
    let sources = [Source::Human, Source::HumanLlm, Source::Llm];
    let originals: Vec<Dialogue> = (0..tasks)
        .map(|i| {
            let n = rng.gen_range(4..=10);
            common::random_dialogue(&mut rng, &format!("t{i:04}"), sources[i % 3], n)
        })
        .collect();
    s.import(originals.clone()).unwrap();
    for o in &originals {
        let who = format!("ann{}", rng.gen_range(0..3));
        let v = s.claim(&o.id, &who).unwrap().task.version;
        let seconds = rng.gen_range(20.0..400.0);
        if rng.gen_bool(0.1) {
            s.delete(&o.id, &who, DeleteSubmission { base_version: v, seconds }).unwrap();
            continue;
        }
        let mut accepted = false;
        for _ in 0..20 {
            let e = common::random_postedit(&mut rng, o);
            match s.submit(&o.id, &who, EditSubmission { base_version: v, edited: e, seconds }) {
                Ok(_) => {
                    accepted = true;
                    break;
                }
                Err(StoreError::Rejected { .. }) => continue,
                Err(e) => panic!("{e}"),
            }
        }
        if !accepted {
            s.submit(&o.id, &who, EditSubmission { base_version: v, edited: o.clone(), seconds }).unwrap();
        }
    }
    s
}

#[test]
fn live_report_matches_offline_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let s = random_session(dir.path(), 7, 220, 50);
    let report = s.state().report();
    assert_eq!(report.tasks[&TaskState::Done] + report.tasks[&TaskState::DialogueDeleted], 220);
    assert!(report.tasks[&TaskState::Done] >= 180);

    // Offline: serialize the exports, parse them back, run diff and stats.
    let export = dialcurate_core::model::corpus_to_string(&s.state().export());
    let originals = dialcurate_core::model::corpus_to_string(&s.state().export_originals());
    let post = parse_corpus(export.as_bytes()).unwrap();
    let orig = parse_corpus(originals.as_bytes()).unwrap();
    let records = diff_corpora(&orig, &post);
    assert_eq!(records, s.state().records());
    assert_eq!(aggregate_postedit_stats(&records).unwrap(), report.postedit);
    assert_eq!(stats_from_sums(&corpus_sums(&post)), report.corpus);
    let timing: String = s
        .state()
        .timing
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    let timing = read_timing_log(timing.as_bytes()).unwrap();
    assert_eq!(productivity(&timing).unwrap(), report.productivity);
}

#[test]
fn replay_reproduces_snapshot_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let s = random_session(dir.path(), 11, 120, 0);
    s.write_snapshot().unwrap();
    let snap = std::fs::read(dir.path().join(SNAPSHOT)).unwrap();
    let replayed = replay(&dir.path().join(EVENT_LOG), None).unwrap();
    assert_eq!(replayed.snapshot_bytes(), snap);
    assert_eq!(&replayed, s.state());
    drop(s);

    // Reopening after a snapshot gives the same state as a full replay.
    let reopened = Store::open(dir.path(), 0).unwrap();
    assert_eq!(reopened.state(), &replayed);
}

#[test]
fn intermediate_snapshot_plus_log_tail() {
    let dir = tempfile::tempdir().unwrap();
    let s = random_session(dir.path(), 3, 40, 25);
    let last_snapshot: dialcurate_service::State =
        serde_json::from_slice(&std::fs::read(dir.path().join(SNAPSHOT)).unwrap()).unwrap();
    assert_eq!(last_snapshot.seq % 25, 0);
    let partial = replay(&dir.path().join(EVENT_LOG), Some(last_snapshot.seq)).unwrap();
    assert_eq!(partial.snapshot_bytes(), std::fs::read(dir.path().join(SNAPSHOT)).unwrap());
    let expected = s.state().clone();
    drop(s);
    assert_eq!(Store::open(dir.path(), 25).unwrap().state(), &expected);
}

#[test]
fn corrupt_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = Store::open(dir.path(), 0).unwrap();
        s.import(vec![dialogue("d")]).unwrap();
    }
    std::fs::write(dir.path().join(EVENT_LOG), "{\"seq\": 5}\n").unwrap();
    assert!(matches!(Store::open(dir.path(), 0), Err(StoreError::Corrupt { line: 1, .. })));
}
