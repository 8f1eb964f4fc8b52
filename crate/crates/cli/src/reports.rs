//! The offline subcommands: enumeration, simulation, case dumps and exports.
//! Each returns the text to print so tests can call them directly.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use clap::ValueEnum;
use serde::Serialize;

use apolo_core::engine::paths::{enumerate_terminal_paths, PathEnumeration, MIN_DEPTH};
use apolo_core::engine::{next_deadline, CasePolicy, EventKind};
use apolo_core::metrics::export::{funnel_csv, outcomes_csv, recidivism_csv, to_json};
use apolo_core::metrics::sim::{simulate, SimReport, SimSetup};
use apolo_core::metrics::{classify_outcome, funnel, recidivism_table, FunnelReport};
use apolo_core::store::{EventRecord, EventStore, TimeWindow};
use apolo_core::{CaseId, CommunityId, MediationCase, UserId};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn enumerate(policy: CasePolicy, review_request: bool, max_depth: usize) -> Result<PathEnumeration, CliError> {
    if max_depth < MIN_DEPTH {
        return Err(CliError::Config(format!("--max-depth must be at least {MIN_DEPTH}")));
    }
    if policy.max_attempts == 0 {
        return Err(CliError::Config("--max-attempts must be at least 1".into()));
    }
    Ok(enumerate_terminal_paths(policy, review_request, max_depth))
}

pub fn render_enumeration(e: &PathEnumeration, format: Format) -> String {
    if format == Format::Json {
        return to_json(e);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "review_request={} max_attempts={} auto_unmute={} max_depth={}",
        e.review_request, e.policy.max_attempts, e.policy.auto_unmute, e.max_depth
    );
    let _ = writeln!(out, "{:>4}  {:<18}  {:<24}  events", "#", "terminal", "reason");
    for (i, p) in e.paths.iter().enumerate() {
        let events: Vec<&str> = p.events.iter().map(|t| t.as_str()).collect();
        let _ = writeln!(out, "{:>4}  {:<18}  {:<24}  {}", i + 1, p.state.as_str(), p.reason.as_str(), events.join(" > "));
    }
    let restored = e.restored().count();
    let _ = writeln!(
        out,
        "paths={} restored={} punitive={} truncated={}",
        e.paths.len(),
        restored,
        e.paths.len() - restored,
        e.truncated
    );
    out
}

/// Reads a [`SimSetup`] from TOML, or JSON when the file ends in `.json`.
pub fn load_setup(path: &Path) -> Result<SimSetup, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let setup: SimSetup = if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&raw).map_err(CliError::config)?
    } else {
        toml::from_str(&raw).map_err(|e| CliError::Config(e.message().to_owned()))?
    };
    setup.validate().map_err(CliError::Config)?;
    Ok(setup)
}

pub fn run_simulation(setup: &SimSetup, trials: u64, seed: u64) -> Result<SimReport, CliError> {
    if trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    Ok(simulate(setup, trials, seed))
}

/// Opens an existing data directory; a missing one is a configuration
/// mistake rather than an empty store.
pub fn open_store(dir: &Path) -> Result<EventStore, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("data directory {} does not exist", dir.display())));
    }
    EventStore::open(dir).map_err(CliError::other)
}

fn find_case(store: &EventStore, id: &str) -> Result<MediationCase, CliError> {
    let missing = || CliError::NotFound(format!("no case {id}"));
    let case_id = CaseId::parse(id).map_err(|_| missing())?;
    store.load(&case_id).map_err(CliError::other)?.map(|(c, _)| c).ok_or_else(missing)
}

#[derive(Serialize)]
struct CaseDump<'a> {
    #[serde(flatten)]
    case: &'a MediationCase,
    outcome: Option<String>,
}

pub fn case_show(store: &EventStore, id: &str, format: Format) -> Result<String, CliError> {
    let case = find_case(store, id)?;
    let outcome = classify_outcome(&case).ok().map(|o| o.name().to_owned());
    if format == Format::Json {
        return Ok(to_json(&CaseDump { case: &case, outcome }));
    }
    let mut out = String::new();
    let mut row = |k: &str, v: String| {
        let _ = writeln!(out, "{:<14} {v}", format!("{k}:"));
    };
    row("case", format!("{} (#{})", case.case_id, case.case_number));
    row("community", case.community_id.to_string());
    row("state", format!("{} ({})", case.state.as_str(), case.state.label()));
    row("offender", case.offender_id.to_string());
    row("victim", case.victim_id.to_string());
    row("moderator", case.moderator_id.to_string());
    row("reason", case.reason.clone());
    if let Some(p) = &case.proof_ref {
        row("proof", p.clone());
    }
    row("mute", format!("{} until {}", case.mute_duration, ts(case.mute_until)));
    row("review", if case.review_request { "requested".into() } else { "no".into() });
    row("created", ts(case.created_at));
    row("stage since", ts(case.stage_entered_at));
    row("attempts", format!("{}/{}", case.attempt_count, case.policy.max_attempts));
    if let Some(t) = &case.apology_request {
        row("request", t.clone());
    }
    if let Some(t) = &case.apology_response {
        row("response", t.clone());
    }
    row("furthest", case.furthest_stage.as_str().into());
    if let Some(c) = &case.closure {
        row("closure", format!("{} at {} in {}", c.reason, ts(c.closed_at), c.closed_in.as_str()));
    }
    if let Some(o) = &outcome {
        row("outcome", o.clone());
    }
    if let Some(d) = next_deadline(&case) {
        row("next deadline", format!("{} at {}", d.kind, ts(d.at)));
    }
    for s in &case.satisfaction {
        row("satisfaction", format!("{} rated {} ({})", s.actor, s.rating, s.role.as_str()));
    }
    row("version", case.version.to_string());
    Ok(out)
}

fn detail(kind: &EventKind) -> String {
    match kind {
        EventKind::CaseOpened(o) => format!("offender={} victim={} duration={}", o.offender_id, o.victim_id, o.mute_duration),
        EventKind::VictimRequested { text } | EventKind::OffenderApologized { text } => format!("{text:?}"),
        EventKind::StageTimedOut { stage } => stage.as_str().to_owned(),
        EventKind::ModeratorCancelled { note } => note.as_deref().map(|n| format!("{n:?}")).unwrap_or_default(),
        EventKind::SatisfactionRecorded { role, rating } => format!("{} rated {rating}", role.as_str()),
        _ => String::new(),
    }
}

pub fn case_events(store: &EventStore, id: &str, format: Format) -> Result<String, CliError> {
    let case = find_case(store, id)?;
    let records: Vec<EventRecord> = store.events(&case.case_id);
    if format == Format::Json {
        return Ok(to_json(&records));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<20}  {:<16}  {:<20}  detail", "seq", "occurred_at", "actor", "event");
    for r in &records {
        let e = &r.event;
        let _ = writeln!(
            out,
            "{:>4}  {:<20}  {:<16}  {:<20}  {}",
            e.event_seq,
            ts(e.occurred_at),
            e.actor.to_string(),
            e.kind.tag().as_str(),
            detail(&e.kind)
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportReport {
    pub window: TimeWindow,
    pub community: Option<CommunityId>,
    pub cases: usize,
    pub funnel: FunnelReport,
    pub recidivism: std::collections::BTreeMap<UserId, u64>,
}

pub fn build_export(store: &EventStore, window: TimeWindow, community: Option<CommunityId>) -> (ExportReport, Vec<MediationCase>) {
    let cases: Vec<MediationCase> = store
        .all_cases()
        .into_iter()
        .filter(|c| window.contains(c.created_at) && community.as_ref().is_none_or(|x| *x == c.community_id))
        .collect();
    let report = ExportReport {
        window,
        community,
        cases: cases.len(),
        funnel: funnel(&cases),
        recidivism: recidivism_table(&cases, &window),
    };
    (report, cases)
}

/// Writes `funnel.csv`, `recidivism.csv` and `outcomes.csv` (or
/// `report.json`) into `dir`, returning the written paths.
pub fn write_export(
    dir: &Path,
    report: &ExportReport,
    cases: &[MediationCase],
    format: ExportFormat,
) -> Result<Vec<std::path::PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let files: Vec<(&str, String)> = match format {
        ExportFormat::Json => vec![("report.json", to_json(report))],
        ExportFormat::Csv => vec![
            ("funnel.csv", funnel_csv(&report.funnel).map_err(CliError::other)?),
            ("recidivism.csv", recidivism_csv(&report.recidivism).map_err(CliError::other)?),
            ("outcomes.csv", outcomes_csv(cases).map_err(CliError::other)?),
        ],
    };
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Stdout rendering: JSON, or the funnel CSV and the recidivism CSV
/// separated by one blank line.
pub fn render_export(report: &ExportReport, format: ExportFormat) -> Result<String, CliError> {
    match format {
        ExportFormat::Json => Ok(to_json(report)),
        ExportFormat::Csv => {
            let f = funnel_csv(&report.funnel).map_err(CliError::other)?;
            let r = recidivism_csv(&report.recidivism).map_err(CliError::other)?;
            Ok(format!("{f}\n{r}"))
        }
    }
}

/// Default policy with command-line overrides.
pub fn policy(max_attempts: Option<u32>, auto_unmute: bool) -> CasePolicy {
    let base = CasePolicy::default();
    CasePolicy { max_attempts: max_attempts.unwrap_or(base.max_attempts), auto_unmute, ..base }
}
