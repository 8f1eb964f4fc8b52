use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use axum::http::HeaderMap;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Token scopes, ordered: a `moderate` token can do everything a `sim`
/// token can, which can do everything a `read` token can.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Read,
    Sim,
    Moderate,
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Scope::Read),
            "sim" => Ok(Scope::Sim),
            "moderate" => Ok(Scope::Moderate),
            other => Err(format!("unknown scope {other:?} (expected read, sim or moderate)")),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Read => "read",
            Scope::Sim => "sim",
            Scope::Moderate => "moderate",
        })
    }
}

#[derive(Clone, Default)]
pub struct TokenTable {
    tokens: HashMap<String, Scope>,
}

impl fmt::Debug for TokenTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenTable").field("tokens", &self.tokens.len()).finish()
    }
}

impl TokenTable {
    pub fn new(tokens: impl IntoIterator<Item = (String, Scope)>) -> Self {
        Self { tokens: tokens.into_iter().collect() }
    }

    /// Scope of the request's bearer token.
    pub fn scope(&self, headers: &HeaderMap) -> Result<Scope, ApiError> {
        let token = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthenticated)?;
        self.tokens.get(token.trim()).copied().ok_or(ApiError::Unauthenticated)
    }

    pub fn require(&self, headers: &HeaderMap, needed: Scope) -> Result<Scope, ApiError> {
        let scope = self.scope(headers)?;
        if scope < needed {
            return Err(ApiError::Scope { needed });
        }
        Ok(scope)
    }
}
