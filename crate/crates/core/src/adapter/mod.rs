//! Boundary between the engine and a chat platform.
//!
//! Outbound, [`Platform`] is the contract every binding implements; the
//! [`executor`] maps engine [`Effect`](crate::engine::Effect)s onto it with
//! per-effect idempotency keys. Inbound, [`routing`] turns normalized
//! interactions into engine events under the authorization matrix. The
//! [`sim`] module is the deterministic in-memory binding.

pub mod custom_id;
pub mod executor;
pub mod routing;
pub mod sim;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use custom_id::{Action, Gate, InteractionCustomId};
pub use executor::{Ack, AckOutcome, CaseRefs, EffectExecutor, EffectLedger, ExecError};
pub use routing::{route_interaction, ModalSpec, RouteError, Routed};

use crate::engine::ApolomuteCommand;
use crate::ids::{ChannelId, CommunityId, RoleId, UserId};

/// `"{case_id}:{event_seq}:{ordinal}"`, optionally with a `/suffix` when one
/// effect expands to several platform calls.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdempotencyKey(pub String);

impl IdempotencyKey {
    pub fn sub(&self, suffix: &str) -> Self {
        Self(format!("{}/{suffix}", self.0))
    }
}

impl fmt::Display for IdempotencyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadRef(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageRef(pub String);

impl fmt::Display for ThreadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ButtonStyle {
    Primary,
    Success,
    Danger,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Button {
    pub custom_id: String,
    pub label: String,
    pub style: ButtonStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template: String,
    pub params: BTreeMap<String, String>,
    pub text: String,
}

/// Where a case's moderator log goes. `thread` is `None` until the first
/// update creates the per-case thread named `thread_name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTarget {
    pub channel: ChannelId,
    pub thread: Option<ThreadRef>,
    pub thread_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogPosted {
    pub thread: ThreadRef,
    pub message: MessageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlatformError {
    /// Transient; the call may be retried with the same idempotency key.
    #[error("platform unavailable: {0}")]
    Unavailable(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("platform rejected the call: {0}")]
    Rejected(String),
}

/// Outbound operations a chat platform binding must provide. Every call that
/// changes platform state carries an idempotency key; a binding must not
/// repeat the side effect when it sees a key twice.
pub trait Platform: Send + Sync {
    /// How a user is named inside rendered templates.
    fn mention(&self, user: &UserId) -> String {
        user.to_string()
    }

    fn ensure_commands_registered(&self, community: &CommunityId) -> Result<(), PlatformError>;

    fn mute(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        member: &UserId,
        until: DateTime<Utc>,
    ) -> Result<(), PlatformError>;

    fn unmute(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        member: &UserId,
    ) -> Result<(), PlatformError>;

    fn create_private_thread(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        parent: &ChannelId,
        member: &UserId,
        name: &str,
    ) -> Result<ThreadRef, PlatformError>;

    fn post_prompt(
        &self,
        key: &IdempotencyKey,
        thread: &ThreadRef,
        prompt: &RenderedPrompt,
        buttons: &[Button],
    ) -> Result<MessageRef, PlatformError>;

    fn post_log(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        target: &LogTarget,
        text: &str,
        buttons: &[Button],
        attachments: &[String],
    ) -> Result<LogPosted, PlatformError>;

    fn archive_thread(&self, key: &IdempotencyKey, thread: &ThreadRef) -> Result<(), PlatformError>;
}

/// Inbound events, normalized across bindings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundInteraction {
    CommandInvoked(ApolomuteCommand),
    ButtonPressed {
        custom_id: String,
        actor: UserId,
        #[serde(default)]
        actor_roles: Vec<RoleId>,
    },
    ModalSubmitted {
        custom_id: String,
        text_fields: BTreeMap<String, String>,
        actor: UserId,
        #[serde(default)]
        actor_roles: Vec<RoleId>,
    },
}

/// Field name of the single paragraph input in every modal.
pub const MODAL_TEXT_FIELD: &str = "text";

pub fn victim_thread_name(case_id: &crate::ids::CaseId) -> String {
    format!("apolo-victim-{case_id}")
}

pub fn offender_thread_name(case_id: &crate::ids::CaseId) -> String {
    format!("apolo-offender-{case_id}")
}

pub fn log_thread_name(case_number: u64) -> String {
    format!("update-case-{case_number}")
}
