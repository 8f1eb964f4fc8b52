//! Discord binding.
//!
//! [`DiscordPlatform`] implements the core [`Platform`](apolo_core::adapter::Platform)
//! contract over the Discord REST API. Inbound traffic arrives at the HTTP
//! interactions endpoint: [`InteractionVerifier`] checks the ed25519
//! signature, [`parse_interaction`] normalizes the payload and
//! [`respond`] turns the mediator's reply into an interaction response.
//! All REST traffic goes through the [`DiscordHttp`] trait so tests can
//! substitute a scripted transport.

pub mod commands;
pub mod http;
pub mod interaction;
pub mod permissions;
pub mod platform;
pub mod verify;

pub use commands::{apolomute_command, APOLOMUTE};
pub use http::{ApiRequest, ApiResponse, BotToken, DiscordHttp, FilePart, Method, ReqwestTransport, TransportError};
pub use interaction::{handle_request, parse_interaction, respond, InteractionError, Parsed};
pub use permissions::{MissingPermissions, Permission, REQUIRED};
pub use platform::{register_all, DiscordPlatform, DiscordSettings, MuteRelease, MAX_TIMEOUT_SECS};
pub use verify::{InteractionVerifier, VerifyError};
