//! `/v1` HTTP API.
//!
//! Handlers are thin: they authenticate the bearer token, then run the
//! blocking [`Service`] call on the blocking pool. The service owns the
//! mediator and the registry of simulated communities.

mod auth;
mod error;
mod routes;
mod service;

pub use auth::{Scope, TokenTable};
pub use error::ApiError;
pub use routes::router;
pub use service::{
    ActionRequest, CancelRequest, CaseView, ConfigOverrides, OpenSimCase, SatisfactionRequest, Service, SimCommunityCreated,
    SimCommunityRequest, API_VERSION,
};
