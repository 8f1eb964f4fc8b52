//! Deadline bookkeeping for stage timeouts and mute expiry.
//!
//! The armed set lives in memory and is rebuilt from the event store by
//! [`Scheduler::recover`]. Firing hands each due deadline to a
//! [`DeadlineSink`]; the sink appends with `expected_version =
//! armed_for_version`, so a deadline fires at most once per version and a
//! timer that lost a race with a stakeholder is dropped as stale.

use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::engine::{next_deadline, DeadlineKind};
use crate::ids::CaseId;
use crate::store::{EventStore, StreamVersion};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deadline {
    pub case_id: CaseId,
    pub kind: DeadlineKind,
    pub at: DateTime<Utc>,
    pub armed_for_version: StreamVersion,
}

/// Outcome of handing one due deadline to the dispatcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Applied,
    /// The case moved on (or closed) since the deadline was armed.
    Stale,
    /// Transient failure; try again later.
    Retry,
}

pub trait DeadlineSink {
    fn deliver(&self, deadline: &Deadline, now: DateTime<Utc>) -> Delivery;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FireReport {
    pub applied: usize,
    pub stale: usize,
    pub retried: usize,
}

#[derive(Debug, Clone)]
struct Armed {
    deadline: Deadline,
    due: DateTime<Utc>,
    attempts: u32,
}

const MAX_BACKOFF_SECS: i64 = 60;

#[derive(Debug, Default)]
pub struct Scheduler {
    armed: Mutex<BTreeMap<(CaseId, DeadlineKind), Armed>>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Arms a deadline, replacing any earlier one of the same kind.
    pub fn arm(&self, deadline: Deadline) {
        let key = (deadline.case_id.clone(), deadline.kind);
        let due = deadline.at;
        self.armed.lock().unwrap().insert(key, Armed { deadline, due, attempts: 0 });
    }

    pub fn cancel(&self, case_id: &CaseId, kind: DeadlineKind) {
        self.armed.lock().unwrap().remove(&(case_id.clone(), kind));
    }

    pub fn cancel_case(&self, case_id: &CaseId) {
        self.armed.lock().unwrap().retain(|(id, _), _| id != case_id);
    }

    /// Snapshot of armed deadlines ordered by case then kind.
    pub fn armed(&self) -> Vec<Deadline> {
        self.armed.lock().unwrap().values().map(|a| a.deadline.clone()).collect()
    }

    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.armed.lock().unwrap().values().map(|a| a.due).min()
    }

    /// Removes and returns deadlines due at `now`, earliest first.
    fn take_due(&self, now: DateTime<Utc>) -> Vec<Armed> {
        let mut armed = self.armed.lock().unwrap();
        let keys: Vec<_> = armed
            .iter()
            .filter(|(_, a)| a.due <= now)
            .map(|(k, _)| k.clone())
            .collect();
        let mut due: Vec<Armed> = keys.into_iter().filter_map(|k| armed.remove(&k)).collect();
        due.sort_by(|a, b| {
            (a.due, &a.deadline.case_id, a.deadline.kind).cmp(&(b.due, &b.deadline.case_id, b.deadline.kind))
        });
        due
    }

    /// Delivers every deadline due at `now`. Retries are re-armed with
    /// exponential backoff unless a newer deadline replaced them meanwhile.
    pub fn fire_due(&self, now: DateTime<Utc>, sink: &dyn DeadlineSink) -> FireReport {
        let mut report = FireReport::default();
        for mut entry in self.take_due(now) {
            match sink.deliver(&entry.deadline, now) {
                Delivery::Applied => report.applied += 1,
                Delivery::Stale => {
                    debug!(case_id = %entry.deadline.case_id, kind = %entry.deadline.kind, "stale deadline dropped");
                    report.stale += 1;
                }
                Delivery::Retry => {
                    report.retried += 1;
                    let backoff = (1i64 << entry.attempts.min(6)).min(MAX_BACKOFF_SECS);
                    entry.attempts += 1;
                    entry.due = now + Duration::seconds(backoff);
                    let key = (entry.deadline.case_id.clone(), entry.deadline.kind);
                    self.armed.lock().unwrap().entry(key).or_insert(entry);
                }
            }
        }
        report
    }

    /// Re-arms `next_deadline` for every open case in the store. Idempotent.
    pub fn recover(&self, store: &EventStore) -> Vec<Deadline> {
        let mut out = Vec::new();
        for case in store.all_cases() {
            if let Some(next) = next_deadline(&case) {
                let deadline = Deadline {
                    case_id: case.case_id.clone(),
                    kind: next.kind,
                    at: next.at,
                    armed_for_version: StreamVersion(case.version),
                };
                // only one kind is live per case
                self.cancel_case(&case.case_id);
                self.arm(deadline.clone());
                out.push(deadline);
            }
        }
        out.sort_by(|a, b| (&a.case_id, a.kind).cmp(&(&b.case_id, b.kind)));
        out
    }
}
