//! Restorative apology mediation for chat communities.
//!
//! A moderator mutes an offender with `/apolomute`; the victim may request an
//! apology, the offender may respond, moderators review, and the victim has
//! the final say. Any decline or expired deadline falls back to the ordinary
//! mute. The crate is organised as:
//!
//! - [`engine`]: pure state machine over [`engine::CaseEvent`]s
//! - [`store`]: append-only per-case event log with optimistic concurrency
//! - [`scheduler`]: stage-timeout and mute-elapsed deadlines
//! - [`adapter`]: platform contract, effect execution, interaction routing and
//!   the simulated binding
//! - [`runtime`]: the [`runtime::Mediator`] tying the above together
//! - [`metrics`]: outcome classes, funnel, recidivism and Monte-Carlo runs

pub mod adapter;
pub mod clock;
pub mod engine;
pub mod ids;
pub mod metrics;
pub mod runtime;
pub mod scheduler;
pub mod store;

pub use engine::{
    ApolomuteCommand, CaseEvent, CaseState, ClosureReason, Effect, EventKind, MediationCase,
    MediationConfig,
};
pub use ids::{CaseId, ChannelId, CommunityId, RoleId, UserId};
