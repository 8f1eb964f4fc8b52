//! Identifier newtypes shared across the engine, store and adapters.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }
    };
}

string_id!(
    /// Platform user identifier (a snowflake on Discord, any token in simulation).
    UserId
);
string_id!(
    /// Guild / community identifier.
    CommunityId
);
string_id!(
    /// Role identifier.
    RoleId
);
string_id!(
    /// Channel identifier.
    ChannelId
);

/// Maximum length of a case identifier.
pub const CASE_ID_MAX_LEN: usize = 64;

/// Opaque case identifier.
///
/// Restricted to `[A-Za-z0-9_-]{1,64}` so it can be embedded verbatim in
/// interaction custom-ids, file names and URL paths.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CaseId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid case id {0:?}: expected 1-64 characters from [A-Za-z0-9_-]")]
pub struct InvalidCaseId(pub String);

impl CaseId {
    pub fn parse(value: impl Into<String>) -> Result<Self, InvalidCaseId> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.len() <= CASE_ID_MAX_LEN
            && value
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if ok {
            Ok(Self(value))
        } else {
            Err(InvalidCaseId(value))
        }
    }

    /// Case ids handed out by the store are the decimal case number.
    pub fn from_number(number: u64) -> Self {
        Self(number.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CaseId {
    type Error = InvalidCaseId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(value)
    }
}

impl From<CaseId> for String {
    fn from(value: CaseId) -> Self {
        value.0
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
