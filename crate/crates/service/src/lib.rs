//! Reviewer workflow: a task queue of dialogues to post-edit, guideline
//! checks on submission, an append-only event log and live reports.

pub mod api;
pub mod golden;
pub mod store;

pub use api::{router, serve, AppState};
pub use store::{replay, DeleteSubmission, EditSubmission, LiveReport, State, Store, StoreError, TaskState};
