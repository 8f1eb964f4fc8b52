//! JSON and CSV renderings of reports.
//!
//! Funnel CSV columns, in order:
//! `stage,entered,advanced,dropped,bypassed,open,drop_reasons`, where
//! `drop_reasons` is `reason=count` pairs joined by `;` in reason order.
//!
//! Recidivism CSV columns: `offender_id,cases`.
//!
//! Outcome CSV columns: `case_id,case_number,community_id,offender_id,victim_id,state,outcome,closure_reason,furthest_stage,created_at,closed_at`.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{classify_outcome, FunnelReport};
use crate::engine::MediationCase;
use crate::ids::UserId;

pub const FUNNEL_COLUMNS: [&str; 7] =
    ["stage", "entered", "advanced", "dropped", "bypassed", "open", "drop_reasons"];
pub const RECIDIVISM_COLUMNS: [&str; 2] = ["offender_id", "cases"];
pub const OUTCOME_COLUMNS: [&str; 11] = [
    "case_id",
    "case_number",
    "community_id",
    "offender_id",
    "victim_id",
    "state",
    "outcome",
    "closure_reason",
    "furthest_stage",
    "created_at",
    "closed_at",
];

fn finish(w: csv::Writer<Vec<u8>>) -> csv::Result<String> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn funnel_csv(report: &FunnelReport) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FUNNEL_COLUMNS)?;
    for s in &report.stages {
        let reasons = s
            .drop_reasons
            .iter()
            .map(|(r, n)| format!("{r}={n}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            s.stage.as_str().to_owned(),
            s.entered.to_string(),
            s.advanced.to_string(),
            s.dropped.to_string(),
            s.bypassed.to_string(),
            s.open.to_string(),
            reasons,
        ])?;
    }
    finish(w)
}

pub fn recidivism_csv(table: &BTreeMap<UserId, u64>) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECIDIVISM_COLUMNS)?;
    for (user, n) in table {
        w.write_record([user.as_str(), &n.to_string()])?;
    }
    finish(w)
}

pub fn outcomes_csv<'a>(cases: impl IntoIterator<Item = &'a MediationCase>) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OUTCOME_COLUMNS)?;
    for c in cases {
        let outcome = classify_outcome(c).map(|o| o.to_string()).unwrap_or_else(|_| "open".into());
        let closure = c.closure.as_ref();
        w.write_record([
            c.case_id.to_string(),
            c.case_number.to_string(),
            c.community_id.to_string(),
            c.offender_id.to_string(),
            c.victim_id.to_string(),
            c.state.to_string(),
            outcome,
            closure.map(|x| x.reason.to_string()).unwrap_or_default(),
            c.furthest_stage.to_string(),
            c.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            closure.map(|x| x.closed_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)).unwrap_or_default(),
        ])?;
    }
    finish(w)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
