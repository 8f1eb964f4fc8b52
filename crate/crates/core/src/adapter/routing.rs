//! Inbound interactions to engine events.
//!
//! Authorization is checked before staleness, so a bystander pressing an
//! old button learns only that it is not theirs.

use serde::{Deserialize, Serialize};

use super::custom_id::{Action, Gate, InteractionCustomId};
use super::{InboundInteraction, MODAL_TEXT_FIELD};
use crate::engine::{Actor, ApolomuteCommand, EventKind, MediationCase, MediationConfig, MAX_TEXT_CHARS};
use crate::ids::{CaseId, RoleId, UserId};
use crate::store::StreamVersion;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalSpec {
    pub custom_id: String,
    pub title: String,
    pub label: String,
    pub field: String,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routed {
    OpenCase(ApolomuteCommand),
    /// Append `kind` if the stream is still at `expected`.
    Submit { case_id: CaseId, expected: StreamVersion, actor: Actor, kind: EventKind },
    /// The platform should show a text modal; nothing is recorded yet.
    OpenModal(ModalSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("malformed interaction: {0}")]
    Malformed(String),
    #[error("no case {0}")]
    UnknownCase(CaseId),
    #[error("this button is not yours to press")]
    Unauthorized,
    #[error("this prompt is no longer active")]
    StaleInteraction,
}

/// Whether `actor` may trigger `action` on `case`. Moderator actions need a
/// configured role and the actor must not be a party to the case.
pub fn authorized(
    action: Action,
    case: &MediationCase,
    config: &MediationConfig,
    actor: &UserId,
    roles: &[RoleId],
) -> bool {
    match action.gate() {
        Gate::Victim => *actor == case.victim_id,
        Gate::Offender => *actor == case.offender_id,
        Gate::Moderator => config.is_moderator(roles) && case.role_of(actor).is_none(),
    }
}

/// The event an action records. `text` is required for the two modal
/// submissions and ignored otherwise.
pub fn action_event(action: Action, text: Option<String>) -> Result<EventKind, RouteError> {
    let need_text = || -> Result<String, RouteError> {
        let t = text.clone().unwrap_or_default();
        if t.trim().is_empty() {
            return Err(RouteError::Malformed("text is required".into()));
        }
        Ok(t)
    };
    Ok(match action {
        Action::VreqYes => EventKind::VictimRequested { text: need_text()? },
        Action::VreqNo => EventKind::VictimDeclined,
        Action::OapoYes => EventKind::OffenderApologized { text: need_text()? },
        Action::OapoNo => EventKind::OffenderDeclined,
        Action::MreqOk => EventKind::RequestApproved,
        Action::MreqNo => EventKind::RequestRejected,
        Action::MresOk => EventKind::ResponseApproved,
        Action::MresNo => EventKind::ResponseRejected,
        Action::VfinOk => EventKind::VictimAccepted,
        Action::VfinNo => EventKind::VictimRejected,
        Action::Unmute => EventKind::UnmuteExecuted,
    })
}

pub fn modal_for(id: &InteractionCustomId) -> ModalSpec {
    let (title, label) = match id.action {
        Action::VreqYes => ("Request an apology", "What would you like them to apologize for?"),
        _ => ("Write your apology", "Your apology"),
    };
    ModalSpec {
        custom_id: id.to_string(),
        title: title.into(),
        label: label.into(),
        field: MODAL_TEXT_FIELD.into(),
        max_len: MAX_TEXT_CHARS,
    }
}

/// Routes one inbound interaction. `lookup` returns the current case for an
/// id; the caller should hold the case lock so the returned version is the
/// one the submission will be checked against.
pub fn route_interaction(
    inbound: &InboundInteraction,
    config: &MediationConfig,
    lookup: impl FnOnce(&CaseId) -> Option<MediationCase>,
) -> Result<Routed, RouteError> {
    let (custom_id, actor, roles, text) = match inbound {
        InboundInteraction::CommandInvoked(cmd) => return Ok(Routed::OpenCase(cmd.clone())),
        InboundInteraction::ButtonPressed { custom_id, actor, actor_roles } => {
            (custom_id, actor, actor_roles, None)
        }
        InboundInteraction::ModalSubmitted { custom_id, text_fields, actor, actor_roles } => {
            let text = text_fields
                .get(MODAL_TEXT_FIELD)
                .or_else(|| text_fields.values().next())
                .cloned()
                .unwrap_or_default();
            (custom_id, actor, actor_roles, Some(text))
        }
    };
    let id = InteractionCustomId::parse(custom_id).map_err(|e| RouteError::Malformed(e.to_string()))?;
    let case = lookup(&id.case_id).ok_or_else(|| RouteError::UnknownCase(id.case_id.clone()))?;
    if !authorized(id.action, &case, config, actor, roles) {
        return Err(RouteError::Unauthorized);
    }
    if case.state != id.action.state() {
        return Err(RouteError::StaleInteraction);
    }
    if id.action.needs_text() && text.is_none() {
        return Ok(Routed::OpenModal(modal_for(&id)));
    }
    if text.is_some() && !id.action.needs_text() {
        return Err(RouteError::Malformed(format!("{} does not take text", id.action)));
    }
    Ok(Routed::Submit {
        case_id: id.case_id,
        expected: StreamVersion(case.version),
        actor: Actor::User(actor.clone()),
        kind: action_event(id.action, text)?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::{TimeZone, Utc};

    use super::*;
    use crate::engine::{open_case, transition, CaseEvent, CaseState};

    fn config() -> MediationConfig {
        MediationConfig {
            moderator_role_ids: [RoleId::new("mods")].into(),
            ..MediationConfig::default()
        }
    }

    fn case() -> MediationCase {
        let cmd = ApolomuteCommand {
            community_id: "g".into(),
            invoker_id: "mod".into(),
            invoker_roles: vec![RoleId::new("mods")],
            offender_id: "off".into(),
            victim_id: "vic".into(),
            duration: "7d".into(),
            reason: "insults".into(),
            proof_ref: None,
            review_request: false,
        };
        let now = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        open_case(&cmd, &config(), CaseId::from_number(1), 1, now).unwrap().case
    }

    fn press(action: Action, actor: &str, roles: &[&str]) -> InboundInteraction {
        InboundInteraction::ButtonPressed {
            custom_id: InteractionCustomId::new(CaseId::from_number(1), action).to_string(),
            actor: actor.into(),
            actor_roles: roles.iter().map(|r| RoleId::new(*r)).collect(),
        }
    }

    #[test]
    fn yes_opens_modal_and_modal_submits() {
        let c = case();
        let r = route_interaction(&press(Action::VreqYes, "vic", &[]), &config(), |_| Some(c.clone())).unwrap();
        let Routed::OpenModal(spec) = r else { panic!("{r:?}") };
        assert_eq!(spec.custom_id, "apolo.v1.1.vreq_yes");
        let modal = InboundInteraction::ModalSubmitted {
            custom_id: spec.custom_id,
            text_fields: BTreeMap::from([("text".to_owned(), "say sorry".to_owned())]),
            actor: "vic".into(),
            actor_roles: vec![],
        };
        let r = route_interaction(&modal, &config(), |_| Some(c.clone())).unwrap();
        assert_eq!(
            r,
            Routed::Submit {
                case_id: CaseId::from_number(1),
                expected: StreamVersion(1),
                actor: Actor::user("vic"),
                kind: EventKind::VictimRequested { text: "say sorry".into() },
            }
        );
    }

    #[test]
    fn authorization_matrix() {
        let c = case();
        let cfg = config();
        let cases = [
            ("vic", &[][..], Gate::Victim),
            ("off", &[][..], Gate::Offender),
            ("mod", &["mods"][..], Gate::Moderator),
            ("bystander", &[][..], Gate::Moderator),
        ];
        for action in Action::ALL {
            for (actor, roles, gate) in cases {
                let roles: Vec<RoleId> = roles.iter().map(|r| RoleId::new(*r)).collect();
                let expect = action.gate() == gate && actor != "bystander";
                assert_eq!(authorized(action, &c, &cfg, &actor.into(), &roles), expect, "{action} by {actor}");
            }
        }
        // A moderator who is also the victim cannot approve their own case.
        assert!(!authorized(Action::MreqOk, &c, &cfg, &"vic".into(), &[RoleId::new("mods")]));
    }

    #[test]
    fn unauthorized_beats_stale() {
        let c = case();
        let err = route_interaction(&press(Action::VfinOk, "off", &[]), &config(), |_| Some(c.clone()));
        assert_eq!(err, Err(RouteError::Unauthorized));
        let err = route_interaction(&press(Action::VfinOk, "vic", &[]), &config(), |_| Some(c.clone()));
        assert_eq!(err, Err(RouteError::StaleInteraction));
    }

    #[test]
    fn stale_after_transition() {
        let c = case();
        let ev = CaseEvent {
            event_seq: 2,
            occurred_at: c.created_at,
            actor: Actor::user("vic"),
            kind: EventKind::VictimDeclined,
        };
        let closed = transition(&c, &ev).unwrap().case;
        assert_eq!(closed.state, CaseState::ClosedPunitive);
        let err = route_interaction(&press(Action::VreqNo, "vic", &[]), &config(), |_| Some(closed.clone()));
        assert_eq!(err, Err(RouteError::StaleInteraction));
    }

    #[test]
    fn unknown_and_malformed() {
        let err = route_interaction(&press(Action::VreqNo, "vic", &[]), &config(), |_| None);
        assert_eq!(err, Err(RouteError::UnknownCase(CaseId::from_number(1))));
        let bad = InboundInteraction::ButtonPressed {
            custom_id: "apolo.v1.1.bogus".into(),
            actor: "vic".into(),
            actor_roles: vec![],
        };
        assert!(matches!(route_interaction(&bad, &config(), |_| None), Err(RouteError::Malformed(_))));
    }
}
