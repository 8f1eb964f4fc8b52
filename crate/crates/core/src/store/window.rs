use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::MuteDuration;

/// Half-open time interval `[start, end)`; either side may be open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid window {0:?}: expected `all`, a duration like `30d`, or `<rfc3339>..<rfc3339>` (either side optional)")]
pub struct WindowParseError(pub String);

impl TimeWindow {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn between(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self { start: Some(start), end: Some(end) }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }

    /// Parses `all`, a trailing duration (`30d` = the last 30 days up to
    /// `now`), or an explicit `start..end` range.
    pub fn parse(input: &str, now: DateTime<Utc>) -> Result<Self, WindowParseError> {
        let err = || WindowParseError(input.to_owned());
        let input = input.trim();
        if input.is_empty() || input.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        if let Some((a, b)) = input.split_once("..") {
            let side = |s: &str| -> Result<Option<DateTime<Utc>>, WindowParseError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    DateTime::parse_from_rfc3339(s)
                        .map(|d| Some(d.with_timezone(&Utc)))
                        .map_err(|_| err())
                }
            };
            return Ok(Self { start: side(a)?, end: side(b)? });
        }
        // Windows can reach further back than a mute can last.
        let secs = parse_span(input).ok_or_else(err)?;
        Ok(Self { start: Some(now - chrono::Duration::seconds(secs as i64)), end: None })
    }
}

fn parse_span(input: &str) -> Option<u64> {
    if let Ok(d) = MuteDuration::parse(input) {
        return Some(d.secs());
    }
    let (digits, unit) = input.split_at(input.len().checked_sub(1)?);
    let n: u64 = digits.parse().ok()?;
    if unit.eq_ignore_ascii_case("d") {
        n.checked_mul(86_400)
    } else {
        None
    }
}
