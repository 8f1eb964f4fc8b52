//! Interaction payloads in, interaction responses out.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde_json::{json, Value};
use tracing::warn;

use apolo_core::adapter::{InboundInteraction, ModalSpec, RouteError};
use apolo_core::engine::ApolomuteCommand;
use apolo_core::runtime::{Mediator, MediatorError, Reply};
use apolo_core::{CommunityId, RoleId, UserId};

use crate::commands::APOLOMUTE;
use crate::verify::InteractionVerifier;

const PING: u64 = 1;
const APPLICATION_COMMAND: u64 = 2;
const MESSAGE_COMPONENT: u64 = 3;
const MODAL_SUBMIT: u64 = 5;

const PONG: u64 = 1;
const CHANNEL_MESSAGE: u64 = 4;
const UPDATE_MESSAGE: u64 = 7;
const MODAL: u64 = 9;
const EPHEMERAL: u64 = 1 << 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InteractionError {
    #[error("interaction is missing {0}")]
    Missing(&'static str),
    #[error("unknown command {0}")]
    UnknownCommand(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Ping,
    Inbound(InboundInteraction),
    /// Interaction types the bot does not handle (autocomplete and so on).
    Unsupported(u64),
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    path.iter().try_fold(v, |v, k| v.get(*k)).and_then(Value::as_str)
}

fn actor(body: &Value) -> Result<(UserId, Vec<RoleId>), InteractionError> {
    let id = str_at(body, &["member", "user", "id"]).ok_or(InteractionError::Missing("member.user.id"))?;
    let roles = body
        .pointer("/member/roles")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).map(RoleId::new).collect())
        .unwrap_or_default();
    Ok((UserId::new(id), roles))
}

fn command(body: &Value) -> Result<ApolomuteCommand, InteractionError> {
    let data = body.get("data").ok_or(InteractionError::Missing("data"))?;
    let name = data.get("name").and_then(Value::as_str).unwrap_or_default();
    if name != APOLOMUTE {
        return Err(InteractionError::UnknownCommand(name.to_owned()));
    }
    let guild = body.get("guild_id").and_then(Value::as_str).ok_or(InteractionError::Missing("guild_id"))?;
    let (invoker, roles) = actor(body)?;
    let options: BTreeMap<&str, &Value> = data
        .get("options")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|o| Some((o.get("name")?.as_str()?, o.get("value")?)))
        .collect();
    let text = |name: &'static str| options.get(name).and_then(|v| v.as_str()).map(str::to_owned).ok_or(InteractionError::Missing(name));
    let proof_ref = options
        .get("proof")
        .and_then(|v| v.as_str())
        .and_then(|id| data.pointer(&format!("/resolved/attachments/{id}/url")))
        .and_then(Value::as_str)
        .map(str::to_owned);
    Ok(ApolomuteCommand {
        community_id: CommunityId::new(guild),
        invoker_id: invoker,
        invoker_roles: roles,
        offender_id: UserId::new(text("offender")?),
        victim_id: UserId::new(text("victim")?),
        duration: text("duration")?,
        reason: text("reason")?,
        proof_ref,
        review_request: options.get("review_request").and_then(|v| v.as_bool()).unwrap_or(false),
    })
}

pub fn parse_interaction(body: &Value) -> Result<Parsed, InteractionError> {
    let kind = body.get("type").and_then(Value::as_u64).ok_or(InteractionError::Missing("type"))?;
    match kind {
        PING => Ok(Parsed::Ping),
        APPLICATION_COMMAND => Ok(Parsed::Inbound(InboundInteraction::CommandInvoked(command(body)?))),
        MESSAGE_COMPONENT => {
            let custom_id = str_at(body, &["data", "custom_id"]).ok_or(InteractionError::Missing("data.custom_id"))?;
            let (actor, actor_roles) = actor(body)?;
            Ok(Parsed::Inbound(InboundInteraction::ButtonPressed { custom_id: custom_id.to_owned(), actor, actor_roles }))
        }
        MODAL_SUBMIT => {
            let custom_id = str_at(body, &["data", "custom_id"]).ok_or(InteractionError::Missing("data.custom_id"))?;
            let (actor, actor_roles) = actor(body)?;
            let text_fields = body
                .pointer("/data/components")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .flat_map(|row| row.get("components").and_then(Value::as_array).into_iter().flatten())
                .filter_map(|c| Some((c.get("custom_id")?.as_str()?.to_owned(), c.get("value")?.as_str()?.to_owned())))
                .collect();
            Ok(Parsed::Inbound(InboundInteraction::ModalSubmitted {
                custom_id: custom_id.to_owned(),
                text_fields,
                actor,
                actor_roles,
            }))
        }
        other => Ok(Parsed::Unsupported(other)),
    }
}

fn ephemeral(content: impl Into<String>) -> Value {
    json!({ "type": CHANNEL_MESSAGE, "data": { "content": content.into(), "flags": EPHEMERAL } })
}

fn modal(spec: &ModalSpec) -> Value {
    json!({
        "type": MODAL,
        "data": {
            "custom_id": spec.custom_id,
            "title": spec.title,
            "components": [{
                "type": 1,
                "components": [{
                    "type": 4,
                    "custom_id": spec.field,
                    "label": spec.label,
                    "style": 2,
                    "min_length": 1,
                    "max_length": spec.max_len,
                    "required": true
                }]
            }]
        }
    })
}

/// Interaction response for the mediator's answer to `inbound`.
pub fn respond(inbound: &InboundInteraction, result: &Result<Reply, MediatorError>) -> Value {
    match result {
        Ok(Reply::OpenModal(spec)) => modal(spec),
        Ok(Reply::Applied(a)) => match inbound {
            InboundInteraction::CommandInvoked(_) => ephemeral(format!(
                "Case #{} opened. {} has been muted and {} has been invited to a private thread.",
                a.case.case_number, a.case.offender_id, a.case.victim_id
            )),
            // replace the prompt's buttons so the choice cannot be repeated
            _ => json!({ "type": UPDATE_MESSAGE, "data": { "components": [] } }),
        },
        Err(MediatorError::Route(RouteError::Unauthorized)) => ephemeral("This is not your decision."),
        Err(MediatorError::Route(RouteError::StaleInteraction)) => ephemeral("This step was already handled."),
        Err(MediatorError::Route(RouteError::UnknownCase(_))) => ephemeral("This case no longer exists."),
        Err(e) => match e.engine() {
            Some(engine) => ephemeral(format!("Could not do that: {engine}.")),
            None => {
                warn!(error = %e, "interaction failed");
                ephemeral("Something went wrong; please try again shortly.")
            }
        },
    }
}

/// Verifies, parses and dispatches one raw request to the interactions
/// endpoint. Returns the HTTP status and JSON body to send back.
pub fn handle_request(
    verifier: &InteractionVerifier,
    mediator: &Mediator,
    timestamp: &str,
    signature: &str,
    body: &[u8],
    now: DateTime<Utc>,
) -> (u16, Value) {
    if verifier.verify(timestamp, body, signature).is_err() {
        return (401, json!({ "error": "invalid request signature" }));
    }
    let Ok(value) = serde_json::from_slice::<Value>(body) else {
        return (400, json!({ "error": "body is not JSON" }));
    };
    match parse_interaction(&value) {
        Ok(Parsed::Ping) => (200, json!({ "type": PONG })),
        Ok(Parsed::Unsupported(kind)) => (400, json!({ "error": format!("unsupported interaction type {kind}") })),
        Ok(Parsed::Inbound(inbound)) => {
            let result = mediator.handle(&inbound, now);
            (200, respond(&inbound, &result))
        }
        Err(e) => (200, ephemeral(format!("Could not read that interaction: {e}."))),
    }
}
