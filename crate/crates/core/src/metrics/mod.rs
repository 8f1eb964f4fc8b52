//! Outcome classification, funnel, recidivism and satisfaction reporting
//! over immutable case lists, plus Monte-Carlo simulation in [`sim`].

pub mod export;
pub mod sim;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use sim::{analytic_restoration_probability, run_trial, simulate, SimReport, SimSetup, Trial};

use crate::engine::{CaseState, ClosureReason, MediationCase, Role};
use crate::ids::UserId;
use crate::store::TimeWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum OutcomeClass {
    FullRestoration,
    PartialEngagement { furthest_stage: CaseState },
    NoEngagement,
    PunitiveFallback { reason: ClosureReason },
}

impl OutcomeClass {
    pub fn name(&self) -> &'static str {
        match self {
            OutcomeClass::FullRestoration => "full_restoration",
            OutcomeClass::PartialEngagement { .. } => "partial_engagement",
            OutcomeClass::NoEngagement => "no_engagement",
            OutcomeClass::PunitiveFallback { .. } => "punitive_fallback",
        }
    }

    pub const NAMES: [&'static str; 4] =
        ["full_restoration", "partial_engagement", "no_engagement", "punitive_fallback"];
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeClass::PartialEngagement { furthest_stage } => {
                write!(f, "partial_engagement({furthest_stage})")
            }
            OutcomeClass::PunitiveFallback { reason } => write!(f, "punitive_fallback({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("case {0} is still open")]
pub struct NonTerminalCase(pub String);

/// Classifies a closed case.
///
/// Restored cases are full restorations. A case that never got past the
/// victim's first decision is "no engagement" when the victim declined or
/// let it time out, and a plain punitive fallback otherwise (cancelled, or
/// the mute ran out first). Anything that got further is partial engagement.
pub fn classify_outcome(case: &MediationCase) -> Result<OutcomeClass, NonTerminalCase> {
    let closure = case.closure.as_ref().ok_or_else(|| NonTerminalCase(case.case_id.to_string()))?;
    if case.state == CaseState::ResolvedRestored {
        return Ok(OutcomeClass::FullRestoration);
    }
    if case.furthest_stage > CaseState::AwaitVictimRequest {
        return Ok(OutcomeClass::PartialEngagement { furthest_stage: case.furthest_stage });
    }
    Ok(match closure.reason {
        ClosureReason::VictimDeclined | ClosureReason::VictimTimeout => OutcomeClass::NoEngagement,
        reason => OutcomeClass::PunitiveFallback { reason },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFunnel {
    pub stage: CaseState,
    pub entered: u64,
    pub advanced: u64,
    pub dropped: u64,
    /// Cases counted as entering and advancing without waiting here: the
    /// review gates when review was not requested, and the unmute step when
    /// unmuting was automatic.
    pub bypassed: u64,
    /// Entered but not yet resolved (only for open cases).
    pub open: u64,
    pub drop_reasons: BTreeMap<ClosureReason, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub total: u64,
    pub restored: u64,
    pub restoration_rate: f64,
    pub stages: Vec<StageFunnel>,
}

impl Default for FunnelReport {
    fn default() -> Self {
        Self {
            total: 0,
            restored: 0,
            restoration_rate: 0.0,
            stages: CaseState::STAGES.iter().map(|&stage| StageFunnel { stage, ..Default::default() }).collect(),
        }
    }
}

impl FunnelReport {
    fn finish(mut self) -> Self {
        self.restoration_rate = if self.total == 0 { 0.0 } else { self.restored as f64 / self.total as f64 };
        self
    }

    /// Sum of two reports; `funnel(a ++ b) == funnel(a).merge(funnel(b))`.
    pub fn merge(mut self, other: &FunnelReport) -> Self {
        self.total += other.total;
        self.restored += other.restored;
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            a.entered += b.entered;
            a.advanced += b.advanced;
            a.dropped += b.dropped;
            a.bypassed += b.bypassed;
            a.open += b.open;
            for (r, n) in &b.drop_reasons {
                *a.drop_reasons.entry(*r).or_default() += n;
            }
        }
        self.finish()
    }

    pub fn stage(&self, stage: CaseState) -> Option<&StageFunnel> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

fn waited_in(case: &MediationCase, stage: CaseState) -> bool {
    match stage {
        CaseState::AwaitRequestReview => case.review_request,
        CaseState::AwaitUnmute => case.furthest_stage >= CaseState::AwaitUnmute,
        _ => true,
    }
}

/// Per-stage drop-off. A case enters every stage up to its furthest one;
/// restored cases pass every stage. A punitive case drops at its furthest
/// stage with its closure reason, so `entered(k+1) == advanced(k)` and
/// `entered == advanced + dropped + open` at every stage.
pub fn funnel<'a>(cases: impl IntoIterator<Item = &'a MediationCase>) -> FunnelReport {
    let mut report = FunnelReport::default();
    for case in cases {
        report.total += 1;
        let restored = case.state == CaseState::ResolvedRestored;
        if restored {
            report.restored += 1;
        }
        for slot in report.stages.iter_mut() {
            let stage = slot.stage;
            let entered = restored || case.furthest_stage >= stage;
            if !entered {
                continue;
            }
            slot.entered += 1;
            if !waited_in(case, stage) {
                slot.bypassed += 1;
            }
            if restored || case.furthest_stage > stage {
                slot.advanced += 1;
            } else if let Some(closure) = &case.closure {
                slot.dropped += 1;
                *slot.drop_reasons.entry(closure.reason).or_default() += 1;
            } else {
                slot.open += 1;
            }
        }
    }
    report.finish()
}

/// Cases in `window` naming `offender` as the offender. Both restored and
/// punitive outcomes count.
pub fn recidivism<'a>(
    cases: impl IntoIterator<Item = &'a MediationCase>,
    offender: &UserId,
    window: &TimeWindow,
) -> u64 {
    cases
        .into_iter()
        .filter(|c| c.offender_id == *offender && window.contains(c.created_at))
        .count() as u64
}

/// Offender -> case count in `window`, for every offender with a case.
pub fn recidivism_table<'a>(
    cases: impl IntoIterator<Item = &'a MediationCase>,
    window: &TimeWindow,
) -> BTreeMap<UserId, u64> {
    let mut out = BTreeMap::new();
    for c in cases {
        if window.contains(c.created_at) {
            *out.entry(c.offender_id.clone()).or_default() += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionMean {
    pub role: Role,
    pub outcome: String,
    pub count: u64,
    pub mean: f64,
}

/// Mean rating per (role, outcome class name). Open cases are skipped.
pub fn satisfaction<'a>(cases: impl IntoIterator<Item = &'a MediationCase>) -> Vec<SatisfactionMean> {
    let mut acc: BTreeMap<(Role, &'static str), (u64, u64)> = BTreeMap::new();
    for case in cases {
        let Ok(class) = classify_outcome(case) else { continue };
        for s in &case.satisfaction {
            let e = acc.entry((s.role, class.name())).or_default();
            e.0 += 1;
            e.1 += u64::from(s.rating);
        }
    }
    acc.into_iter()
        .map(|((role, outcome), (count, sum))| SatisfactionMean {
            role,
            outcome: outcome.to_owned(),
            count,
            mean: sum as f64 / count as f64,
        })
        .collect()
}
