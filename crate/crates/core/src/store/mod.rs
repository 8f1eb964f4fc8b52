//! Append-only per-case event log.
//!
//! On disk every case is one newline-delimited JSON file,
//! `<dir>/cases/<case_id>.ndjson`, and `<dir>/index.ndjson` lists the case
//! files. One line per event:
//!
//! ```json
//! {"v":1,"case_id":"5","seq":2,"at":"2024-05-01T12:01:00Z","actor":"1234",
//!  "kind":"victim_requested","payload":{"text":"..."},
//!  "persisted_at":"2024-05-01T12:01:00.120Z","commit":true}
//! ```
//!
//! `commit` is true on the last record of each append batch. On open,
//! records after the last committed one (a batch torn by a crash) are
//! discarded and the file is truncated, so a batch is either fully present
//! or absent. Unknown schema versions mark the case corrupt.
//!
//! Appends to one case are serialised by a per-case mutex and guarded by the
//! caller's expected version; readers take the same mutex briefly and always
//! observe a committed prefix.

mod window;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::{error, warn};

pub use window::{TimeWindow, WindowParseError};

use crate::engine::{
    open_from_event, transition, Actor, CaseEvent, CaseState, ClosureReason, EngineError,
    EventKind, MediationCase,
};
use crate::ids::{CaseId, CommunityId, UserId};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamVersion(pub u64);

impl std::fmt::Display for StreamVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub case_id: CaseId,
    pub event: CaseEvent,
    pub persisted_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("version conflict on case {case_id}: expected {expected}, stream is at {actual}")]
    VersionConflict { case_id: CaseId, expected: StreamVersion, actual: StreamVersion },
    #[error("non-contiguous event sequence: expected {expected}, got {got}")]
    CorruptSequence { expected: u64, got: u64 },
    #[error("case {case_id} cannot be replayed: {detail}")]
    CorruptStream { case_id: CaseId, detail: String },
    #[error("event rejected by the engine: {0}")]
    Rejected(#[source] EngineError),
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
}

/// Exact on-disk line layout.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    v: u32,
    case_id: CaseId,
    seq: u64,
    at: DateTime<Utc>,
    actor: Actor,
    #[serde(flatten)]
    kind: EventKind,
    persisted_at: DateTime<Utc>,
    commit: bool,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    v: u32,
    case_id: CaseId,
    path: String,
}

#[derive(Default)]
struct Stream {
    records: Vec<EventRecord>,
    case: Option<MediationCase>,
    corrupt: Option<String>,
    file: Option<File>,
    file_len: u64,
}

/// Folds events into a case, mapping engine errors to `CorruptStream`.
pub fn fold(case_id: &CaseId, events: &[CaseEvent]) -> Result<MediationCase, StoreError> {
    crate::engine::replay(case_id.clone(), events).map_err(|e| StoreError::CorruptStream {
        case_id: case_id.clone(),
        detail: e.to_string(),
    })
}

pub struct EventStore {
    dir: Option<PathBuf>,
    fsync: bool,
    streams: RwLock<HashMap<CaseId, Arc<Mutex<Stream>>>>,
    index: Mutex<Option<File>>,
    next_number: AtomicU64,
}

impl std::fmt::Debug for EventStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl EventStore {
    /// Volatile store for simulations and tests.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            fsync: false,
            streams: RwLock::new(HashMap::new()),
            index: Mutex::new(None),
            next_number: AtomicU64::new(1),
        }
    }

    /// Opens (creating if needed) a data directory and replays every case.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("cases"))?;
        let index_path = dir.join("index.ndjson");
        let mut known: Vec<CaseId> = Vec::new();
        let mut seen = BTreeSet::new();
        if index_path.exists() {
            let (lines, valid_len) = read_lines(&index_path)?;
            for line in lines {
                match serde_json::from_str::<IndexLine>(&line) {
                    Ok(entry) if entry.v == SCHEMA_VERSION => {
                        if seen.insert(entry.case_id.clone()) {
                            known.push(entry.case_id);
                        }
                    }
                    Ok(entry) => {
                        error!(case_id = %entry.case_id, v = entry.v, "unsupported index schema version");
                    }
                    Err(e) => error!("unreadable index line: {e}"),
                }
            }
            truncate_to(&index_path, valid_len)?;
        }
        let mut index = OpenOptions::new().create(true).append(true).open(&index_path)?;

        // Case files written before their index line (crash in between).
        let mut orphans = Vec::new();
        for entry in fs::read_dir(dir.join("cases"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if let Ok(id) = CaseId::parse(stem) {
                if !seen.contains(&id) {
                    orphans.push(id);
                }
            }
        }
        orphans.sort();
        for id in orphans {
            warn!(case_id = %id, "case file missing from index; re-indexing");
            write_index_line(&mut index, &id, true)?;
            seen.insert(id.clone());
            known.push(id);
        }

        let mut streams = HashMap::new();
        let mut max_number = 0;
        for case_id in known {
            let path = case_path(&dir, &case_id);
            if !path.exists() {
                continue;
            }
            let stream = load_stream(&case_id, &path)?;
            if let Some(case) = &stream.case {
                max_number = max_number.max(case.case_number);
            }
            if let Ok(n) = case_id.as_str().parse::<u64>() {
                max_number = max_number.max(n);
            }
            streams.insert(case_id, Arc::new(Mutex::new(stream)));
        }
        Ok(Self {
            dir: Some(dir),
            fsync: true,
            streams: RwLock::new(streams),
            index: Mutex::new(Some(index)),
            next_number: AtomicU64::new(max_number + 1),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Reserves a fresh case number and the matching id.
    pub fn allocate_case_id(&self) -> (CaseId, u64) {
        let n = self.next_number.fetch_add(1, Ordering::SeqCst);
        (CaseId::from_number(n), n)
    }

    fn stream(&self, case_id: &CaseId) -> Option<Arc<Mutex<Stream>>> {
        self.streams.read().unwrap().get(case_id).cloned()
    }

    /// Appends events atomically if the stream is at `expected`.
    pub fn append(
        &self,
        case_id: &CaseId,
        expected: StreamVersion,
        events: &[CaseEvent],
    ) -> Result<StreamVersion, StoreError> {
        let stream = match self.stream(case_id) {
            Some(s) => s,
            None if expected.0 == 0 => self
                .streams
                .write()
                .unwrap()
                .entry(case_id.clone())
                .or_default()
                .clone(),
            None => {
                return Err(StoreError::VersionConflict {
                    case_id: case_id.clone(),
                    expected,
                    actual: StreamVersion(0),
                })
            }
        };
        let mut stream = stream.lock().unwrap();
        if let Some(detail) = &stream.corrupt {
            return Err(StoreError::CorruptStream { case_id: case_id.clone(), detail: detail.clone() });
        }
        let actual = StreamVersion(stream.records.len() as u64);
        if actual != expected {
            return Err(StoreError::VersionConflict { case_id: case_id.clone(), expected, actual });
        }
        if events.is_empty() {
            return Ok(actual);
        }
        for (i, event) in events.iter().enumerate() {
            let want = expected.0 + 1 + i as u64;
            if event.event_seq != want {
                return Err(StoreError::CorruptSequence { expected: want, got: event.event_seq });
            }
        }

        // Validate against the engine before anything touches disk.
        let mut case = stream.case.clone();
        for event in events {
            let next = match &case {
                None => open_from_event(case_id.clone(), event).map(|(c, _)| c),
                Some(c) => transition(c, event).map(|t| t.case),
            };
            case = Some(next.map_err(StoreError::Rejected)?);
        }

        let persisted_at = Utc::now();
        let records: Vec<EventRecord> = events
            .iter()
            .map(|e| EventRecord { case_id: case_id.clone(), event: e.clone(), persisted_at })
            .collect();

        if let Some(dir) = &self.dir {
            let mut buf = Vec::new();
            for (i, r) in records.iter().enumerate() {
                let line = RecordLine {
                    v: SCHEMA_VERSION,
                    case_id: case_id.clone(),
                    seq: r.event.event_seq,
                    at: r.event.occurred_at,
                    actor: r.event.actor.clone(),
                    kind: r.event.kind.clone(),
                    persisted_at,
                    commit: i + 1 == records.len(),
                };
                serde_json::to_writer(&mut buf, &line).map_err(io::Error::other)?;
                buf.push(b'\n');
            }
            let new_case = stream.file.is_none();
            if new_case {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(case_path(dir, case_id))?;
                stream.file_len = file.metadata()?.len();
                stream.file = Some(file);
            }
            let fsync = self.fsync;
            let file_len = stream.file_len;
            let file = stream.file.as_mut().expect("file opened above");
            let written = file.write_all(&buf).and_then(|_| if fsync { file.sync_data() } else { Ok(()) });
            if let Err(e) = written {
                // roll back whatever part of the batch reached the file
                let _ = file.set_len(file_len);
                return Err(e.into());
            }
            stream.file_len += buf.len() as u64;
            if new_case {
                let mut index = self.index.lock().unwrap();
                if let Some(index) = index.as_mut() {
                    write_index_line(index, case_id, fsync)?;
                }
            }
        }

        stream.records.extend(records);
        stream.case = case;
        Ok(StreamVersion(stream.records.len() as u64))
    }

    /// Current case value and version, or `None` for an unknown case.
    pub fn load(&self, case_id: &CaseId) -> Result<Option<(MediationCase, StreamVersion)>, StoreError> {
        let Some(stream) = self.stream(case_id) else { return Ok(None) };
        let stream = stream.lock().unwrap();
        if let Some(detail) = &stream.corrupt {
            return Err(StoreError::CorruptStream { case_id: case_id.clone(), detail: detail.clone() });
        }
        Ok(stream
            .case
            .clone()
            .map(|c| (c, StreamVersion(stream.records.len() as u64))))
    }

    /// Ordered event records of a case (empty for an unknown case).
    pub fn events(&self, case_id: &CaseId) -> Vec<EventRecord> {
        self.stream(case_id)
            .map(|s| s.lock().unwrap().records.clone())
            .unwrap_or_default()
    }

    pub fn version(&self, case_id: &CaseId) -> StreamVersion {
        self.stream(case_id)
            .map(|s| StreamVersion(s.lock().unwrap().records.len() as u64))
            .unwrap_or_default()
    }

    /// Every readable case, unordered.
    pub fn all_cases(&self) -> Vec<MediationCase> {
        let streams: Vec<_> = self.streams.read().unwrap().values().cloned().collect();
        streams
            .into_iter()
            .filter_map(|s| s.lock().unwrap().case.clone())
            .collect()
    }

    pub fn case_ids(&self) -> Vec<CaseId> {
        let mut ids: Vec<_> = self.streams.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Filtered, paged listing ordered by `(created_at, case_id)`.
    pub fn list_cases(&self, filter: &CaseFilter, page: PageRequest) -> Page<CaseSummary> {
        list_cases(self.all_cases(), filter, page)
    }
}

pub fn list_cases(
    cases: impl IntoIterator<Item = MediationCase>,
    filter: &CaseFilter,
    page: PageRequest,
) -> Page<CaseSummary> {
    let mut matching: Vec<CaseSummary> = cases
        .into_iter()
        .filter(|c| filter.matches(c))
        .map(|c| CaseSummary::from(&c))
        .collect();
    matching.sort_by(|a, b| (a.created_at, &a.case_id).cmp(&(b.created_at, &b.case_id)));
    let total = matching.len();
    let per_page = page.per_page.max(1);
    let start = page.page.saturating_sub(1).saturating_mul(per_page);
    let items = matching.into_iter().skip(start).take(per_page).collect();
    Page { items, page: page.page.max(1), per_page, total }
}

fn case_path(dir: &Path, case_id: &CaseId) -> PathBuf {
    dir.join("cases").join(format!("{case_id}.ndjson"))
}

fn write_index_line(index: &mut File, case_id: &CaseId, fsync: bool) -> io::Result<()> {
    let line = IndexLine {
        v: SCHEMA_VERSION,
        case_id: case_id.clone(),
        path: format!("cases/{case_id}.ndjson"),
    };
    let mut buf = serde_json::to_vec(&line).map_err(io::Error::other)?;
    buf.push(b'\n');
    index.write_all(&buf)?;
    if fsync {
        index.sync_data()?;
    }
    Ok(())
}

/// Complete (newline-terminated) lines and the byte length they cover.
fn read_lines(path: &Path) -> io::Result<(Vec<String>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    let mut len = 0u64;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        len += n as u64;
        line.pop();
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok((lines, len))
}

fn truncate_to(path: &Path, len: u64) -> io::Result<()> {
    let file = OpenOptions::new().write(true).open(path)?;
    if file.metadata()?.len() > len {
        warn!(path = %path.display(), "dropping torn tail");
        file.set_len(len)?;
        file.sync_data()?;
    }
    Ok(())
}

fn parse_record(case_id: &CaseId, line: &str) -> Result<(EventRecord, bool), String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        other => return Err(format!("unsupported record schema version {other:?}")),
    }
    let rec: RecordLine = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if rec.case_id != *case_id {
        return Err(format!("record for case {} found in file of case {case_id}", rec.case_id));
    }
    Ok((
        EventRecord {
            case_id: rec.case_id,
            event: CaseEvent { event_seq: rec.seq, occurred_at: rec.at, actor: rec.actor, kind: rec.kind },
            persisted_at: rec.persisted_at,
        },
        rec.commit,
    ))
}

fn load_stream(case_id: &CaseId, path: &Path) -> Result<Stream, StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut committed = Vec::new();
    let mut pending = Vec::new();
    let mut committed_len = 0u64;
    let mut offset = 0u64;
    let mut corrupt = None;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        offset += n as u64;
        if !line.ends_with('\n') {
            break; // torn final write
        }
        match parse_record(case_id, line.trim_end()) {
            Ok((rec, commit)) => {
                pending.push(rec);
                if commit {
                    committed.append(&mut pending);
                    committed_len = offset;
                }
            }
            Err(detail) => {
                // Garbage mid-file is tampering, not a torn write.
                let rest_empty = reader.fill_buf()?.is_empty();
                if !rest_empty {
                    corrupt = Some(detail);
                }
                break;
            }
        }
    }
    if corrupt.is_none() {
        truncate_to(path, committed_len)?;
    }
    let mut stream = Stream { file_len: committed_len, ..Default::default() };
    let events: Vec<CaseEvent> = committed.iter().map(|r| r.event.clone()).collect();
    if corrupt.is_none() && !events.is_empty() {
        match fold(case_id, &events) {
            Ok(case) => stream.case = Some(case),
            Err(e) => corrupt = Some(e.to_string()),
        }
    }
    if let Some(detail) = &corrupt {
        error!(case_id = %case_id, %detail, "case stream is corrupt");
    } else {
        stream.file = Some(OpenOptions::new().append(true).open(path)?);
    }
    stream.records = committed;
    stream.corrupt = corrupt;
    Ok(stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Open,
    Terminal,
    Restored,
    Punitive,
    Exact(CaseState),
}

impl StateClass {
    pub fn matches(self, state: CaseState) -> bool {
        match self {
            StateClass::Open => !state.is_terminal(),
            StateClass::Terminal => state.is_terminal(),
            StateClass::Restored => state == CaseState::ResolvedRestored,
            StateClass::Punitive => state == CaseState::ClosedPunitive,
            StateClass::Exact(s) => state == s,
        }
    }
}

impl std::str::FromStr for StateClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "open" => StateClass::Open,
            "terminal" | "closed" => StateClass::Terminal,
            "restored" => StateClass::Restored,
            "punitive" => StateClass::Punitive,
            other => StateClass::Exact(other.parse()?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseFilter {
    pub community: Option<CommunityId>,
    pub state: Option<StateClass>,
    pub offender: Option<UserId>,
    pub window: Option<TimeWindow>,
}

impl CaseFilter {
    pub fn matches(&self, case: &MediationCase) -> bool {
        self.community.as_ref().is_none_or(|c| *c == case.community_id)
            && self.state.is_none_or(|s| s.matches(case.state))
            && self.offender.as_ref().is_none_or(|o| *o == case.offender_id)
            && self.window.as_ref().is_none_or(|w| w.contains(case.created_at))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    /// 1-based.
    pub page: usize,
    pub per_page: usize,
}

impl Default for PageRequest {
    fn default() -> Self {
        Self { page: 1, per_page: DEFAULT_PAGE_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: CaseId,
    pub case_number: u64,
    pub community_id: CommunityId,
    pub offender_id: UserId,
    pub victim_id: UserId,
    pub state: CaseState,
    pub closure_reason: Option<ClosureReason>,
    pub created_at: DateTime<Utc>,
    pub version: u64,
}

impl From<&MediationCase> for CaseSummary {
    fn from(c: &MediationCase) -> Self {
        Self {
            case_id: c.case_id.clone(),
            case_number: c.case_number,
            community_id: c.community_id.clone(),
            offender_id: c.offender_id.clone(),
            victim_id: c.victim_id.clone(),
            state: c.state,
            closure_reason: c.closure.as_ref().map(|x| x.reason),
            created_at: c.created_at,
            version: c.version,
        }
    }
}
