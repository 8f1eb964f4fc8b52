//! The mediation state machine.
//!
//! Everything in here is pure: functions take explicit instants, return the
//! next case value plus the [`Effect`]s an adapter should perform, and never
//! touch I/O. A case is the left fold of its [`CaseEvent`]s through
//! [`open_from_event`] and [`transition`].
//!
//! Stage order, used for `furthest_stage` and the funnel:
//!
//! ```text
//! AwaitVictimRequest < AwaitRequestReview < AwaitOffenderApology
//!     < AwaitResponseReview < AwaitVictimVerdict < AwaitUnmute
//! ```

pub mod config;
pub mod duration;
pub mod paths;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use config::{CasePolicy, ConfigError, MediationConfig};
pub use duration::{DurationError, MuteDuration};

use crate::ids::{CaseId, CommunityId, RoleId, UserId};

pub const MAX_REASON_CHARS: usize = 512;
pub const MAX_TEXT_CHARS: usize = 1000;
pub const MAX_NOTE_CHARS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseState {
    #[default]
    AwaitVictimRequest,
    AwaitRequestReview,
    AwaitOffenderApology,
    AwaitResponseReview,
    AwaitVictimVerdict,
    AwaitUnmute,
    ResolvedRestored,
    ClosedPunitive,
}

impl CaseState {
    /// The six waiting stages in workflow order.
    pub const STAGES: [CaseState; 6] = [
        CaseState::AwaitVictimRequest,
        CaseState::AwaitRequestReview,
        CaseState::AwaitOffenderApology,
        CaseState::AwaitResponseReview,
        CaseState::AwaitVictimVerdict,
        CaseState::AwaitUnmute,
    ];

    pub const ALL: [CaseState; 8] = [
        CaseState::AwaitVictimRequest,
        CaseState::AwaitRequestReview,
        CaseState::AwaitOffenderApology,
        CaseState::AwaitResponseReview,
        CaseState::AwaitVictimVerdict,
        CaseState::AwaitUnmute,
        CaseState::ResolvedRestored,
        CaseState::ClosedPunitive,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, CaseState::ResolvedRestored | CaseState::ClosedPunitive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseState::AwaitVictimRequest => "await_victim_request",
            CaseState::AwaitRequestReview => "await_request_review",
            CaseState::AwaitOffenderApology => "await_offender_apology",
            CaseState::AwaitResponseReview => "await_response_review",
            CaseState::AwaitVictimVerdict => "await_victim_verdict",
            CaseState::AwaitUnmute => "await_unmute",
            CaseState::ResolvedRestored => "resolved_restored",
            CaseState::ClosedPunitive => "closed_punitive",
        }
    }

    /// Human label used in log messages.
    pub fn label(self) -> &'static str {
        match self {
            CaseState::AwaitVictimRequest => "Waiting for victim's decision",
            CaseState::AwaitRequestReview => "Moderator review of apology request",
            CaseState::AwaitOffenderApology => "Waiting for offender's apology",
            CaseState::AwaitResponseReview => "Moderator review of apology",
            CaseState::AwaitVictimVerdict => "Waiting for victim's verdict",
            CaseState::AwaitUnmute => "Everyone approved - ready to unmute",
            CaseState::ResolvedRestored => "Resolved - offender unmuted early",
            CaseState::ClosedPunitive => "Closed - mute stays in place",
        }
    }
}

impl fmt::Display for CaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CaseState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown case state {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureReason {
    VictimDeclined,
    VictimTimeout,
    RequestRejected,
    RequestReviewTimeout,
    OffenderDeclined,
    OffenderTimeout,
    ResponseRejectedFinal,
    ResponseReviewTimeout,
    VictimRejected,
    VerdictTimeout,
    UnmuteWindowElapsed,
    MuteElapsed,
    ModeratorCancelled,
    Restored,
}

impl ClosureReason {
    pub const ALL: [ClosureReason; 14] = [
        ClosureReason::VictimDeclined,
        ClosureReason::VictimTimeout,
        ClosureReason::RequestRejected,
        ClosureReason::RequestReviewTimeout,
        ClosureReason::OffenderDeclined,
        ClosureReason::OffenderTimeout,
        ClosureReason::ResponseRejectedFinal,
        ClosureReason::ResponseReviewTimeout,
        ClosureReason::VictimRejected,
        ClosureReason::VerdictTimeout,
        ClosureReason::UnmuteWindowElapsed,
        ClosureReason::MuteElapsed,
        ClosureReason::ModeratorCancelled,
        ClosureReason::Restored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClosureReason::VictimDeclined => "victim_declined",
            ClosureReason::VictimTimeout => "victim_timeout",
            ClosureReason::RequestRejected => "request_rejected",
            ClosureReason::RequestReviewTimeout => "request_review_timeout",
            ClosureReason::OffenderDeclined => "offender_declined",
            ClosureReason::OffenderTimeout => "offender_timeout",
            ClosureReason::ResponseRejectedFinal => "response_rejected_final",
            ClosureReason::ResponseReviewTimeout => "response_review_timeout",
            ClosureReason::VictimRejected => "victim_rejected",
            ClosureReason::VerdictTimeout => "verdict_timeout",
            ClosureReason::UnmuteWindowElapsed => "unmute_window_elapsed",
            ClosureReason::MuteElapsed => "mute_elapsed",
            ClosureReason::ModeratorCancelled => "moderator_cancelled",
            ClosureReason::Restored => "restored",
        }
    }

    /// The reason recorded when `stage` runs out of time.
    pub fn timeout_for(stage: CaseState) -> Option<ClosureReason> {
        Some(match stage {
            CaseState::AwaitVictimRequest => ClosureReason::VictimTimeout,
            CaseState::AwaitRequestReview => ClosureReason::RequestReviewTimeout,
            CaseState::AwaitOffenderApology => ClosureReason::OffenderTimeout,
            CaseState::AwaitResponseReview => ClosureReason::ResponseReviewTimeout,
            CaseState::AwaitVictimVerdict => ClosureReason::VerdictTimeout,
            CaseState::AwaitUnmute => ClosureReason::UnmuteWindowElapsed,
            CaseState::ResolvedRestored | CaseState::ClosedPunitive => return None,
        })
    }
}

impl fmt::Display for ClosureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClosureReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClosureReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown closure reason {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub reason: ClosureReason,
    /// Furthest waiting stage the case reached.
    pub furthest_stage: CaseState,
    /// Stage the case was in when it closed. Differs from `furthest_stage`
    /// only when a rejected apology sent the case back for another attempt.
    pub closed_in: CaseState,
    pub closed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Victim,
    Offender,
    Moderator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Victim => "victim",
            Role::Offender => "offender",
            Role::Moderator => "moderator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionEntry {
    pub role: Role,
    pub rating: u8,
    pub actor: UserId,
}

/// Who produced an event: a platform user, or the service itself (timers).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Actor {
    System,
    User(UserId),
}

pub const SYSTEM_ACTOR: &str = "SYSTEM";

impl Actor {
    pub fn user(id: impl Into<UserId>) -> Self {
        Actor::User(id.into())
    }

    pub fn user_id(&self) -> Option<&UserId> {
        match self {
            Actor::User(u) => Some(u),
            Actor::System => None,
        }
    }
}

impl TryFrom<String> for Actor {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if value == SYSTEM_ACTOR {
            Ok(Actor::System)
        } else if value.is_empty() {
            Err("empty actor".to_owned())
        } else {
            Ok(Actor::User(UserId::new(value)))
        }
    }
}

impl From<Actor> for String {
    fn from(value: Actor) -> Self {
        match value {
            Actor::System => SYSTEM_ACTOR.to_owned(),
            Actor::User(u) => u.as_str().to_owned(),
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::System => f.write_str(SYSTEM_ACTOR),
            Actor::User(u) => f.write_str(u.as_str()),
        }
    }
}

/// Payload of the first event of every case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOpened {
    pub case_number: u64,
    pub community_id: CommunityId,
    pub offender_id: UserId,
    pub victim_id: UserId,
    pub moderator_id: UserId,
    pub mute_duration: MuteDuration,
    pub reason: String,
    pub proof_ref: Option<String>,
    pub review_request: bool,
    pub policy: CasePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    CaseOpened(CaseOpened),
    VictimDeclined,
    VictimRequested { text: String },
    RequestApproved,
    RequestRejected,
    OffenderDeclined,
    OffenderApologized { text: String },
    ResponseApproved,
    ResponseRejected,
    VictimAccepted,
    VictimRejected,
    UnmuteExecuted,
    StageTimedOut { stage: CaseState },
    MuteElapsed,
    ModeratorCancelled { note: Option<String> },
    SatisfactionRecorded { role: Role, rating: u8 },
}

/// Payload-free event kind, used for path enumeration and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTag {
    CaseOpened,
    VictimDeclined,
    VictimRequested,
    RequestApproved,
    RequestRejected,
    OffenderDeclined,
    OffenderApologized,
    ResponseApproved,
    ResponseRejected,
    VictimAccepted,
    VictimRejected,
    UnmuteExecuted,
    StageTimedOut,
    MuteElapsed,
    ModeratorCancelled,
    SatisfactionRecorded,
}

impl EventTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EventTag::CaseOpened => "CaseOpened",
            EventTag::VictimDeclined => "VictimDeclined",
            EventTag::VictimRequested => "VictimRequested",
            EventTag::RequestApproved => "RequestApproved",
            EventTag::RequestRejected => "RequestRejected",
            EventTag::OffenderDeclined => "OffenderDeclined",
            EventTag::OffenderApologized => "OffenderApologized",
            EventTag::ResponseApproved => "ResponseApproved",
            EventTag::ResponseRejected => "ResponseRejected",
            EventTag::VictimAccepted => "VictimAccepted",
            EventTag::VictimRejected => "VictimRejected",
            EventTag::UnmuteExecuted => "UnmuteExecuted",
            EventTag::StageTimedOut => "StageTimedOut",
            EventTag::MuteElapsed => "MuteElapsed",
            EventTag::ModeratorCancelled => "ModeratorCancelled",
            EventTag::SatisfactionRecorded => "SatisfactionRecorded",
        }
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl EventKind {
    pub fn tag(&self) -> EventTag {
        match self {
            EventKind::CaseOpened(_) => EventTag::CaseOpened,
            EventKind::VictimDeclined => EventTag::VictimDeclined,
            EventKind::VictimRequested { .. } => EventTag::VictimRequested,
            EventKind::RequestApproved => EventTag::RequestApproved,
            EventKind::RequestRejected => EventTag::RequestRejected,
            EventKind::OffenderDeclined => EventTag::OffenderDeclined,
            EventKind::OffenderApologized { .. } => EventTag::OffenderApologized,
            EventKind::ResponseApproved => EventTag::ResponseApproved,
            EventKind::ResponseRejected => EventTag::ResponseRejected,
            EventKind::VictimAccepted => EventTag::VictimAccepted,
            EventKind::VictimRejected => EventTag::VictimRejected,
            EventKind::UnmuteExecuted => EventTag::UnmuteExecuted,
            EventKind::StageTimedOut { .. } => EventTag::StageTimedOut,
            EventKind::MuteElapsed => EventTag::MuteElapsed,
            EventKind::ModeratorCancelled { .. } => EventTag::ModeratorCancelled,
            EventKind::SatisfactionRecorded { .. } => EventTag::SatisfactionRecorded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEvent {
    pub event_seq: u64,
    pub occurred_at: DateTime<Utc>,
    pub actor: Actor,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineKind {
    StageTimeout,
    MuteElapsed,
}

impl DeadlineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeadlineKind::StageTimeout => "stage_timeout",
            DeadlineKind::MuteElapsed => "mute_elapsed",
        }
    }
}

impl fmt::Display for DeadlineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextDeadline {
    pub kind: DeadlineKind,
    pub at: DateTime<Utc>,
}

/// Side-effect instruction for an adapter. Transitions emit these in a fixed
/// order; deadline effects always come last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    MuteOffender { until: DateTime<Utc> },
    CreateVictimThread,
    PromptVictimRequest,
    CreateOffenderThread,
    PromptOffenderApology { quoted_request: String, retry: bool },
    ForwardApologyToVictim { response_text: String },
    PostLogUpdate { stage: CaseState, summary: String },
    OfferUnmuteButton,
    UnmuteOffender,
    ArchiveThreads,
    ArmDeadline { kind: DeadlineKind, at: DateTime<Utc> },
    CancelDeadline { kind: DeadlineKind },
}

impl Effect {
    pub fn is_deadline(&self) -> bool {
        matches!(self, Effect::ArmDeadline { .. } | Effect::CancelDeadline { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediationCase {
    pub case_id: CaseId,
    pub case_number: u64,
    pub community_id: CommunityId,
    pub offender_id: UserId,
    pub victim_id: UserId,
    pub moderator_id: UserId,
    pub mute_duration: MuteDuration,
    pub mute_until: DateTime<Utc>,
    pub reason: String,
    pub proof_ref: Option<String>,
    pub review_request: bool,
    pub created_at: DateTime<Utc>,
    pub state: CaseState,
    pub stage_entered_at: DateTime<Utc>,
    pub apology_request: Option<String>,
    pub apology_response: Option<String>,
    pub attempt_count: u32,
    pub furthest_stage: CaseState,
    pub closure: Option<ClosureRecord>,
    pub policy: CasePolicy,
    pub satisfaction: Vec<SatisfactionEntry>,
    pub version: u64,
}

impl MediationCase {
    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn role_of(&self, user: &UserId) -> Option<Role> {
        if *user == self.victim_id {
            Some(Role::Victim)
        } else if *user == self.offender_id {
            Some(Role::Offender)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("offender and victim must be different users")]
    SelfTarget,
    #[error("the bot itself cannot be a party to a case")]
    BotTarget,
    #[error("bad duration: {0}")]
    BadDuration(#[from] DurationError),
    #[error("invoker does not hold a moderator role")]
    NotModerator,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{event} is not legal in state {state}")]
    IllegalEvent { state: CaseState, event: EventTag },
    #[error("case is closed ({state}); only satisfaction ratings are accepted")]
    TerminalCase { state: CaseState },
    #[error("timer for {stage} fired after the case moved on to {current}")]
    StaleStage { stage: CaseState, current: CaseState },
    #[error("{event} cannot be performed by {actor}")]
    ActorMismatch { event: EventTag, actor: String },
    #[error("expected event_seq {expected}, got {got}")]
    SequenceMismatch { expected: u64, got: u64 },
}

/// A validated `/apolomute` invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApolomuteCommand {
    pub community_id: CommunityId,
    pub invoker_id: UserId,
    #[serde(default)]
    pub invoker_roles: Vec<RoleId>,
    pub offender_id: UserId,
    pub victim_id: UserId,
    pub duration: String,
    pub reason: String,
    #[serde(default)]
    pub proof_ref: Option<String>,
    #[serde(default)]
    pub review_request: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Opened {
    pub case: MediationCase,
    pub event: CaseEvent,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub case: MediationCase,
    pub effects: Vec<Effect>,
}

fn check_text(field: &str, text: &str, max: usize) -> Result<(), EngineError> {
    let n = text.chars().count();
    if text.trim().is_empty() || n > max {
        return Err(EngineError::InvalidInput(format!(
            "{field} must be 1..={max} characters (got {n})"
        )));
    }
    Ok(())
}

/// Validates an `/apolomute` invocation and builds the opening event.
pub fn open_case(
    command: &ApolomuteCommand,
    config: &MediationConfig,
    case_id: CaseId,
    case_number: u64,
    now: DateTime<Utc>,
) -> Result<Opened, EngineError> {
    if !config.is_moderator(&command.invoker_roles) {
        return Err(EngineError::NotModerator);
    }
    if command.offender_id == command.victim_id {
        return Err(EngineError::SelfTarget);
    }
    if let Some(bot) = &config.bot_user_id {
        if *bot == command.offender_id || *bot == command.victim_id {
            return Err(EngineError::BotTarget);
        }
    }
    let mute_duration = MuteDuration::parse(command.duration.trim())?;
    check_text("reason", &command.reason, MAX_REASON_CHARS)?;
    if let Some(proof) = &command.proof_ref {
        if !(proof.starts_with("https://") || proof.starts_with("http://")) {
            return Err(EngineError::InvalidInput("proof must be an attachment URL".into()));
        }
    }
    let event = CaseEvent {
        event_seq: 1,
        occurred_at: now,
        actor: Actor::User(command.invoker_id.clone()),
        kind: EventKind::CaseOpened(CaseOpened {
            case_number,
            community_id: command.community_id.clone(),
            offender_id: command.offender_id.clone(),
            victim_id: command.victim_id.clone(),
            moderator_id: command.invoker_id.clone(),
            mute_duration,
            reason: command.reason.clone(),
            proof_ref: command.proof_ref.clone(),
            review_request: command.review_request,
            policy: config.policy(),
        }),
    };
    let (case, effects) = open_from_event(case_id, &event)?;
    Ok(Opened { case, event, effects })
}

/// Builds a case from its `CaseOpened` event. Shared by [`open_case`] and
/// replay so both produce identical values.
pub fn open_from_event(
    case_id: CaseId,
    event: &CaseEvent,
) -> Result<(MediationCase, Vec<Effect>), EngineError> {
    let EventKind::CaseOpened(opened) = &event.kind else {
        return Err(EngineError::IllegalEvent {
            state: CaseState::AwaitVictimRequest,
            event: event.kind.tag(),
        });
    };
    if event.event_seq != 1 {
        return Err(EngineError::SequenceMismatch { expected: 1, got: event.event_seq });
    }
    if opened.offender_id == opened.victim_id {
        return Err(EngineError::SelfTarget);
    }
    if opened.policy.stage_timeout_secs == 0 || opened.policy.max_attempts == 0 {
        return Err(EngineError::InvalidInput("case policy out of range".into()));
    }
    let now = event.occurred_at;
    let mute_until = now + opened.mute_duration.as_chrono();
    let case = MediationCase {
        case_id,
        case_number: opened.case_number,
        community_id: opened.community_id.clone(),
        offender_id: opened.offender_id.clone(),
        victim_id: opened.victim_id.clone(),
        moderator_id: opened.moderator_id.clone(),
        mute_duration: opened.mute_duration,
        mute_until,
        reason: opened.reason.clone(),
        proof_ref: opened.proof_ref.clone(),
        review_request: opened.review_request,
        created_at: now,
        state: CaseState::AwaitVictimRequest,
        stage_entered_at: now,
        apology_request: None,
        apology_response: None,
        attempt_count: 0,
        furthest_stage: CaseState::AwaitVictimRequest,
        closure: None,
        policy: opened.policy,
        satisfaction: Vec::new(),
        version: 1,
    };
    let mut effects = vec![
        Effect::MuteOffender { until: mute_until },
        Effect::CreateVictimThread,
        Effect::PromptVictimRequest,
        Effect::PostLogUpdate {
            stage: CaseState::AwaitVictimRequest,
            summary: format!(
                "Offender muted for {}. Reason: {}. Asking the victim whether they want an apology.",
                opened.mute_duration, opened.reason
            ),
        },
    ];
    if let Some(d) = next_deadline(&case) {
        effects.push(Effect::ArmDeadline { kind: d.kind, at: d.at });
    }
    Ok((case, effects))
}

/// The next instant at which the scheduler must act on this case, or `None`
/// once the case is closed. Never later than `mute_until`; on a tie the
/// stage timeout wins so the closure names the stage that ran out.
pub fn next_deadline(case: &MediationCase) -> Option<NextDeadline> {
    if case.is_terminal() {
        return None;
    }
    let stage_at =
        case.stage_entered_at + chrono::Duration::seconds(case.policy.stage_timeout_secs as i64);
    if case.mute_until < stage_at {
        Some(NextDeadline { kind: DeadlineKind::MuteElapsed, at: case.mute_until })
    } else {
        Some(NextDeadline { kind: DeadlineKind::StageTimeout, at: stage_at })
    }
}

enum Party {
    Victim,
    Offender,
    Moderator,
    System,
    Any,
}

fn required_party(kind: &EventKind) -> Party {
    match kind {
        EventKind::VictimDeclined
        | EventKind::VictimRequested { .. }
        | EventKind::VictimAccepted
        | EventKind::VictimRejected => Party::Victim,
        EventKind::OffenderDeclined | EventKind::OffenderApologized { .. } => Party::Offender,
        EventKind::RequestApproved
        | EventKind::RequestRejected
        | EventKind::ResponseApproved
        | EventKind::ResponseRejected
        | EventKind::UnmuteExecuted
        | EventKind::ModeratorCancelled { .. } => Party::Moderator,
        EventKind::StageTimedOut { .. } | EventKind::MuteElapsed => Party::System,
        EventKind::CaseOpened(_) | EventKind::SatisfactionRecorded { .. } => Party::Any,
    }
}

fn check_actor(case: &MediationCase, event: &CaseEvent) -> Result<(), EngineError> {
    let user = event.actor.user_id();
    let ok = match required_party(&event.kind) {
        Party::Victim => user == Some(&case.victim_id),
        Party::Offender => user == Some(&case.offender_id),
        // Moderators are recognised by role at the adapter boundary; here we
        // only keep the parties from approving their own case.
        Party::Moderator => user.is_some_and(|u| case.role_of(u).is_none()),
        Party::System => user.is_none(),
        Party::Any => true,
    };
    if ok {
        Ok(())
    } else {
        Err(EngineError::ActorMismatch {
            event: event.kind.tag(),
            actor: event.actor.to_string(),
        })
    }
}

/// Applies one event to a case.
pub fn transition(case: &MediationCase, event: &CaseEvent) -> Result<Transition, EngineError> {
    let tag = event.kind.tag();
    if tag == EventTag::CaseOpened {
        return Err(EngineError::IllegalEvent { state: case.state, event: tag });
    }
    if event.event_seq != case.version + 1 {
        return Err(EngineError::SequenceMismatch {
            expected: case.version + 1,
            got: event.event_seq,
        });
    }

    if let EventKind::SatisfactionRecorded { role, rating } = &event.kind {
        return record_satisfaction(case, event, *role, *rating);
    }
    if case.is_terminal() {
        return Err(EngineError::TerminalCase { state: case.state });
    }
    if let EventKind::StageTimedOut { stage } = &event.kind {
        if *stage != case.state {
            return Err(if !stage.is_terminal() && *stage <= case.furthest_stage {
                EngineError::StaleStage { stage: *stage, current: case.state }
            } else {
                EngineError::IllegalEvent { state: case.state, event: tag }
            });
        }
    }
    check_actor(case, event)?;

    let at = event.occurred_at;
    let before = next_deadline(case);
    let mut next = case.clone();
    next.version = event.event_seq;
    let mut effects = Vec::new();
    let illegal = || EngineError::IllegalEvent { state: case.state, event: tag };

    use CaseState as S;
    match (case.state, &event.kind) {
        (_, EventKind::StageTimedOut { .. }) => {
            let reason = ClosureReason::timeout_for(case.state).ok_or_else(illegal)?;
            close(&mut next, reason, at, &mut effects, "The stage deadline expired.".into());
        }
        (_, EventKind::MuteElapsed) => {
            let reason = if case.state == S::AwaitUnmute {
                ClosureReason::UnmuteWindowElapsed
            } else {
                ClosureReason::MuteElapsed
            };
            close(&mut next, reason, at, &mut effects, "The mute term ended before the process completed.".into());
        }
        (_, EventKind::ModeratorCancelled { note }) => {
            if let Some(n) = note {
                check_text("note", n, MAX_NOTE_CHARS)?;
            }
            let summary = match note {
                Some(n) => format!("A moderator cancelled the process: {n}"),
                None => "A moderator cancelled the process.".to_owned(),
            };
            close(&mut next, ClosureReason::ModeratorCancelled, at, &mut effects, summary);
        }

        (S::AwaitVictimRequest, EventKind::VictimDeclined) => {
            close(&mut next, ClosureReason::VictimDeclined, at, &mut effects, "The victim declined to request an apology.".into());
        }
        (S::AwaitVictimRequest, EventKind::VictimRequested { text }) => {
            check_text("apology request", text, MAX_TEXT_CHARS)?;
            next.apology_request = Some(text.clone());
            if case.review_request {
                advance(&mut next, S::AwaitRequestReview, at);
                effects.push(Effect::PostLogUpdate {
                    stage: S::AwaitRequestReview,
                    summary: format!("Victim request:\n> {text}\nPlease approve or reject the request before it reaches the offender."),
                });
            } else {
                advance(&mut next, S::AwaitOffenderApology, at);
                effects.push(Effect::CreateOffenderThread);
                effects.push(Effect::PromptOffenderApology { quoted_request: text.clone(), retry: false });
                effects.push(Effect::PostLogUpdate {
                    stage: S::AwaitOffenderApology,
                    summary: format!("Victim request:\n> {text}\nForwarded to the offender."),
                });
            }
        }
        (S::AwaitRequestReview, EventKind::RequestApproved) => {
            let request = case.apology_request.clone().ok_or_else(illegal)?;
            advance(&mut next, S::AwaitOffenderApology, at);
            effects.push(Effect::CreateOffenderThread);
            effects.push(Effect::PromptOffenderApology { quoted_request: request, retry: false });
            effects.push(Effect::PostLogUpdate {
                stage: S::AwaitOffenderApology,
                summary: "Request approved and forwarded to the offender.".into(),
            });
        }
        (S::AwaitRequestReview, EventKind::RequestRejected) => {
            close(&mut next, ClosureReason::RequestRejected, at, &mut effects, "A moderator rejected the apology request.".into());
        }
        (S::AwaitOffenderApology, EventKind::OffenderDeclined) => {
            close(&mut next, ClosureReason::OffenderDeclined, at, &mut effects, "The offender declined to apologize.".into());
        }
        (S::AwaitOffenderApology, EventKind::OffenderApologized { text }) => {
            check_text("apology", text, MAX_TEXT_CHARS)?;
            if case.attempt_count >= case.policy.max_attempts {
                return Err(illegal());
            }
            next.apology_response = Some(text.clone());
            next.attempt_count += 1;
            advance(&mut next, S::AwaitResponseReview, at);
            effects.push(Effect::PostLogUpdate {
                stage: S::AwaitResponseReview,
                summary: format!(
                    "Offender response (attempt {}/{}):\n> {text}\nPlease review it before it is forwarded to the victim.",
                    next.attempt_count, case.policy.max_attempts
                ),
            });
        }
        (S::AwaitResponseReview, EventKind::ResponseApproved) => {
            let response = case.apology_response.clone().ok_or_else(illegal)?;
            advance(&mut next, S::AwaitVictimVerdict, at);
            effects.push(Effect::ForwardApologyToVictim { response_text: response });
            effects.push(Effect::PostLogUpdate {
                stage: S::AwaitVictimVerdict,
                summary: "Apology approved and forwarded to the victim.".into(),
            });
        }
        (S::AwaitResponseReview, EventKind::ResponseRejected) => {
            if case.attempt_count < case.policy.max_attempts {
                let request = case.apology_request.clone().ok_or_else(illegal)?;
                next.apology_response = None;
                advance(&mut next, S::AwaitOffenderApology, at);
                effects.push(Effect::PromptOffenderApology { quoted_request: request, retry: true });
                effects.push(Effect::PostLogUpdate {
                    stage: S::AwaitOffenderApology,
                    summary: format!(
                        "Apology rejected; the offender may try again ({} of {} attempts used).",
                        case.attempt_count, case.policy.max_attempts
                    ),
                });
            } else {
                close(&mut next, ClosureReason::ResponseRejectedFinal, at, &mut effects, "A moderator rejected the apology.".into());
            }
        }
        (S::AwaitVictimVerdict, EventKind::VictimAccepted) => {
            if case.policy.auto_unmute {
                next.furthest_stage = next.furthest_stage.max(case.state);
                effects.push(Effect::UnmuteOffender);
                close_as(&mut next, S::ResolvedRestored, ClosureReason::Restored, at, &mut effects,
                    "The victim accepted the apology. The offender was unmuted automatically.".into());
            } else {
                advance(&mut next, S::AwaitUnmute, at);
                effects.push(Effect::PostLogUpdate {
                    stage: S::AwaitUnmute,
                    summary: "The victim accepted the apology. Everyone has approved; the offender can be unmuted.".into(),
                });
                effects.push(Effect::OfferUnmuteButton);
            }
        }
        (S::AwaitVictimVerdict, EventKind::VictimRejected) => {
            close(&mut next, ClosureReason::VictimRejected, at, &mut effects, "The victim did not accept the apology.".into());
        }
        (S::AwaitUnmute, EventKind::UnmuteExecuted) => {
            effects.push(Effect::UnmuteOffender);
            close_as(&mut next, S::ResolvedRestored, ClosureReason::Restored, at, &mut effects,
                "A moderator unmuted the offender. Case resolved.".into());
        }
        _ => return Err(illegal()),
    }

    let after = next_deadline(&next);
    match (before, after) {
        (Some(b), Some(a)) => {
            if b.kind != a.kind {
                effects.push(Effect::CancelDeadline { kind: b.kind });
            }
            effects.push(Effect::ArmDeadline { kind: a.kind, at: a.at });
        }
        (Some(b), None) => effects.push(Effect::CancelDeadline { kind: b.kind }),
        (None, Some(a)) => effects.push(Effect::ArmDeadline { kind: a.kind, at: a.at }),
        (None, None) => {}
    }
    Ok(Transition { case: next, effects })
}

fn record_satisfaction(
    case: &MediationCase,
    event: &CaseEvent,
    role: Role,
    rating: u8,
) -> Result<Transition, EngineError> {
    let tag = EventTag::SatisfactionRecorded;
    if !case.is_terminal() {
        return Err(EngineError::IllegalEvent { state: case.state, event: tag });
    }
    if !(1..=5).contains(&rating) {
        return Err(EngineError::InvalidInput(format!("rating must be 1..=5 (got {rating})")));
    }
    let mismatch = || EngineError::ActorMismatch { event: tag, actor: event.actor.to_string() };
    let user = event.actor.user_id().ok_or_else(mismatch)?;
    let matches_role = match role {
        Role::Victim => *user == case.victim_id,
        Role::Offender => *user == case.offender_id,
        Role::Moderator => case.role_of(user).is_none(),
    };
    if !matches_role {
        return Err(mismatch());
    }
    if case.satisfaction.iter().any(|s| s.actor == *user && s.role == role) {
        return Err(EngineError::IllegalEvent { state: case.state, event: tag });
    }
    let mut next = case.clone();
    next.version = event.event_seq;
    next.satisfaction.push(SatisfactionEntry { role, rating, actor: user.clone() });
    Ok(Transition { case: next, effects: Vec::new() })
}

fn advance(case: &mut MediationCase, to: CaseState, at: DateTime<Utc>) {
    case.state = to;
    case.stage_entered_at = at;
    case.furthest_stage = case.furthest_stage.max(to);
}

fn close(
    case: &mut MediationCase,
    reason: ClosureReason,
    at: DateTime<Utc>,
    effects: &mut Vec<Effect>,
    summary: String,
) {
    close_as(case, CaseState::ClosedPunitive, reason, at, effects, summary);
}

fn close_as(
    case: &mut MediationCase,
    terminal: CaseState,
    reason: ClosureReason,
    at: DateTime<Utc>,
    effects: &mut Vec<Effect>,
    summary: String,
) {
    let closed_in = case.state;
    case.furthest_stage = case.furthest_stage.max(closed_in);
    case.state = terminal;
    case.stage_entered_at = at;
    case.closure = Some(ClosureRecord {
        reason,
        furthest_stage: case.furthest_stage,
        closed_in,
        closed_at: at,
    });
    let summary = if terminal == CaseState::ClosedPunitive {
        format!("{summary} Closure: {reason}. The offender stays muted for the full term.")
    } else {
        summary
    };
    effects.push(Effect::PostLogUpdate { stage: terminal, summary });
    effects.push(Effect::ArchiveThreads);
}

/// Folds a complete event list into a case. The first event must be
/// `CaseOpened` with `event_seq` 1.
pub fn replay<'a>(
    case_id: CaseId,
    events: impl IntoIterator<Item = &'a CaseEvent>,
) -> Result<MediationCase, EngineError> {
    let mut iter = events.into_iter();
    let first = iter.next().ok_or_else(|| EngineError::InvalidInput("empty event stream".into()))?;
    let (mut case, _) = open_from_event(case_id, first)?;
    for event in iter {
        case = transition(&case, event)?.case;
    }
    Ok(case)
}
