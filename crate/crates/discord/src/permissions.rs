//! Guild permission bits the bot needs.

use std::fmt;

use serde_json::Value;

use apolo_core::CommunityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Permission {
    pub name: &'static str,
    pub bit: u64,
}

const ADMINISTRATOR: u64 = 1 << 3;
pub const MANAGE_ROLES: Permission = Permission { name: "MANAGE_ROLES", bit: 1 << 28 };

pub const REQUIRED: [Permission; 8] = [
    Permission { name: "VIEW_CHANNEL", bit: 1 << 10 },
    Permission { name: "SEND_MESSAGES", bit: 1 << 11 },
    Permission { name: "ATTACH_FILES", bit: 1 << 15 },
    Permission { name: "MANAGE_THREADS", bit: 1 << 34 },
    Permission { name: "CREATE_PUBLIC_THREADS", bit: 1 << 35 },
    Permission { name: "CREATE_PRIVATE_THREADS", bit: 1 << 36 },
    Permission { name: "SEND_MESSAGES_IN_THREADS", bit: 1 << 38 },
    Permission { name: "MODERATE_MEMBERS", bit: 1 << 40 },
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct MissingPermissions {
    pub community: CommunityId,
    pub missing: Vec<&'static str>,
    /// Set when the permissions could not be read at all.
    pub detail: Option<String>,
}

impl fmt::Display for MissingPermissions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            Some(d) => write!(f, "cannot read permissions in community {}: {d}", self.community),
            None => write!(f, "missing permissions in community {}: {}", self.community, self.missing.join(", ")),
        }
    }
}

fn bits(role: &Value) -> u64 {
    role.get("permissions").and_then(Value::as_str).and_then(|p| p.parse().ok()).unwrap_or(0)
}

/// Union of `@everyone` (whose role id equals the guild id) and the member's
/// roles.
pub fn effective(guild_id: &str, roles: &Value, member: &Value) -> u64 {
    let held: Vec<&str> = member
        .get("roles")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    roles
        .as_array()
        .into_iter()
        .flatten()
        .filter(|r| r.get("id").and_then(Value::as_str).is_some_and(|id| id == guild_id || held.contains(&id)))
        .fold(0, |acc, r| acc | bits(r))
}

pub fn missing(granted: u64, needs_roles: bool) -> Vec<&'static str> {
    if granted & ADMINISTRATOR != 0 {
        return Vec::new();
    }
    let extra = needs_roles.then_some(MANAGE_ROLES);
    REQUIRED.iter().copied().chain(extra).filter(|p| granted & p.bit == 0).map(|p| p.name).collect()
}
