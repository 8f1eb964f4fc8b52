//! Exhaustive enumeration of terminal event paths through the workflow.
//!
//! Texts are abstracted away: every candidate event is tried against the real
//! [`transition`] function from every reachable state, so the enumeration
//! reflects exactly what the engine accepts.

use chrono::{TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::{
    open_from_event, transition, Actor, CaseEvent, CaseOpened, CasePolicy, CaseState,
    ClosureReason, EngineError, EventKind, EventTag, MediationCase, MuteDuration,
};
use crate::ids::{CaseId, CommunityId, UserId};

pub const MIN_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TerminalPath {
    pub events: Vec<EventTag>,
    pub state: CaseState,
    pub reason: ClosureReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEnumeration {
    pub policy: CasePolicy,
    pub review_request: bool,
    pub max_depth: usize,
    pub paths: Vec<TerminalPath>,
    /// Number of branches cut off at `max_depth` before reaching a terminal
    /// state. Zero means the enumeration is complete.
    pub truncated: usize,
}

impl PathEnumeration {
    pub fn restored(&self) -> impl Iterator<Item = &TerminalPath> {
        self.paths.iter().filter(|p| p.state == CaseState::ResolvedRestored)
    }
}

const VICTIM: &str = "victim";
const OFFENDER: &str = "offender";
const MODERATOR: &str = "moderator";

/// Candidate events in the order they are tried. Satisfaction ratings are
/// post-terminal and never part of a path.
const CANDIDATES: [EventTag; 14] = [
    EventTag::VictimRequested,
    EventTag::VictimDeclined,
    EventTag::RequestApproved,
    EventTag::RequestRejected,
    EventTag::OffenderApologized,
    EventTag::OffenderDeclined,
    EventTag::ResponseApproved,
    EventTag::ResponseRejected,
    EventTag::VictimAccepted,
    EventTag::VictimRejected,
    EventTag::UnmuteExecuted,
    EventTag::StageTimedOut,
    EventTag::MuteElapsed,
    EventTag::ModeratorCancelled,
];

/// A well-formed event of kind `tag` for `case`, attributed to the party
/// allowed to produce it.
pub fn synthetic_event(case: &MediationCase, tag: EventTag) -> CaseEvent {
    let (actor, kind) = match tag {
        EventTag::VictimRequested => (VICTIM, EventKind::VictimRequested { text: "request".into() }),
        EventTag::VictimDeclined => (VICTIM, EventKind::VictimDeclined),
        EventTag::RequestApproved => (MODERATOR, EventKind::RequestApproved),
        EventTag::RequestRejected => (MODERATOR, EventKind::RequestRejected),
        EventTag::OffenderApologized => (OFFENDER, EventKind::OffenderApologized { text: "apology".into() }),
        EventTag::OffenderDeclined => (OFFENDER, EventKind::OffenderDeclined),
        EventTag::ResponseApproved => (MODERATOR, EventKind::ResponseApproved),
        EventTag::ResponseRejected => (MODERATOR, EventKind::ResponseRejected),
        EventTag::VictimAccepted => (VICTIM, EventKind::VictimAccepted),
        EventTag::VictimRejected => (VICTIM, EventKind::VictimRejected),
        EventTag::UnmuteExecuted => (MODERATOR, EventKind::UnmuteExecuted),
        EventTag::StageTimedOut => ("", EventKind::StageTimedOut { stage: case.state }),
        EventTag::MuteElapsed => ("", EventKind::MuteElapsed),
        EventTag::ModeratorCancelled => (MODERATOR, EventKind::ModeratorCancelled { note: None }),
        EventTag::CaseOpened | EventTag::SatisfactionRecorded => {
            unreachable!("not a path candidate")
        }
    };
    CaseEvent {
        event_seq: case.version + 1,
        occurred_at: case.stage_entered_at,
        actor: if actor.is_empty() { Actor::System } else { Actor::user(actor) },
        kind,
    }
}

/// The case every enumeration starts from: freshly opened, waiting for the
/// victim.
pub fn seed_case(policy: CasePolicy, review_request: bool) -> MediationCase {
    let opened = CaseEvent {
        event_seq: 1,
        occurred_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        actor: Actor::user(MODERATOR),
        kind: EventKind::CaseOpened(CaseOpened {
            case_number: 1,
            community_id: CommunityId::new("enumeration"),
            offender_id: UserId::new(OFFENDER),
            victim_id: UserId::new(VICTIM),
            moderator_id: UserId::new(MODERATOR),
            mute_duration: MuteDuration::from_secs(7 * 86_400).unwrap(),
            reason: "enumeration".into(),
            proof_ref: None,
            review_request,
            policy,
        }),
    };
    open_from_event(CaseId::from_number(1), &opened)
        .expect("seed case is valid")
        .0
}

/// Replays a tag sequence from [`seed_case`], returning the case after the
/// last event.
pub fn walk_tags(
    policy: CasePolicy,
    review_request: bool,
    tags: &[EventTag],
) -> Result<MediationCase, EngineError> {
    let mut case = seed_case(policy, review_request);
    for &tag in tags {
        case = transition(&case, &synthetic_event(&case, tag))?.case;
    }
    Ok(case)
}

/// Depth-first enumeration of every legal event sequence from
/// `AwaitVictimRequest` to a terminal state, in a fixed order.
pub fn enumerate_terminal_paths(
    policy: CasePolicy,
    review_request: bool,
    max_depth: usize,
) -> PathEnumeration {
    let max_depth = max_depth.max(MIN_DEPTH);
    let mut out = PathEnumeration {
        policy,
        review_request,
        max_depth,
        paths: Vec::new(),
        truncated: 0,
    };
    let mut prefix = Vec::new();
    walk(&seed_case(policy, review_request), &mut prefix, &mut out);
    out
}

fn walk(case: &MediationCase, prefix: &mut Vec<EventTag>, out: &mut PathEnumeration) {
    if let Some(closure) = &case.closure {
        out.paths.push(TerminalPath {
            events: prefix.clone(),
            state: case.state,
            reason: closure.reason,
        });
        return;
    }
    if prefix.len() >= out.max_depth {
        out.truncated += 1;
        return;
    }
    for tag in CANDIDATES {
        let event = synthetic_event(case, tag);
        if let Ok(t) = transition(case, &event) {
            prefix.push(tag);
            walk(&t.case, prefix, out);
            prefix.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_single_restored_path() {
        let e = enumerate_terminal_paths(CasePolicy::default(), false, MIN_DEPTH);
        assert_eq!(e.truncated, 0);
        let restored: Vec<_> = e.restored().collect();
        assert_eq!(restored.len(), 1);
        assert_eq!(
            restored[0].events,
            vec![
                EventTag::VictimRequested,
                EventTag::OffenderApologized,
                EventTag::ResponseApproved,
                EventTag::VictimAccepted,
                EventTag::UnmuteExecuted
            ]
        );
        assert!(e
            .paths
            .iter()
            .filter(|p| p.state != CaseState::ResolvedRestored)
            .all(|p| p.state == CaseState::ClosedPunitive && p.reason != ClosureReason::Restored));
    }

    #[test]
    fn deterministic() {
        let a = enumerate_terminal_paths(CasePolicy::default(), true, 10);
        let b = enumerate_terminal_paths(CasePolicy::default(), true, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn depth_floor_applies() {
        let e = enumerate_terminal_paths(CasePolicy::default(), false, 2);
        assert_eq!(e.max_depth, MIN_DEPTH);
    }
}
