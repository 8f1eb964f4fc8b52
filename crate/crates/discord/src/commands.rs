//! The `/apolomute` application command.
//!
//! Option order and types are fixed: `offender` (user), `victim` (user),
//! `duration` (string), `reason` (string), `proof` (attachment) and
//! `review_request` (boolean). The first four are required.

use serde_json::{json, Value};

pub const APOLOMUTE: &str = "apolomute";

pub const OPT_USER: u8 = 6;
pub const OPT_STRING: u8 = 3;
pub const OPT_ATTACHMENT: u8 = 11;
pub const OPT_BOOLEAN: u8 = 5;

/// `MODERATE_MEMBERS`, so the command is hidden from ordinary members.
const DEFAULT_MEMBER_PERMISSIONS: &str = "1099511627776";

pub fn apolomute_command() -> Value {
    json!({
        "name": APOLOMUTE,
        "type": 1,
        "description": "Mute a member and offer the person they harmed an apology process",
        "default_member_permissions": DEFAULT_MEMBER_PERMISSIONS,
        "dm_permission": false,
        "options": [
            { "type": OPT_USER, "name": "offender", "description": "Member who caused harm", "required": true },
            { "type": OPT_USER, "name": "victim", "description": "Member who was harmed", "required": true },
            { "type": OPT_STRING, "name": "duration", "description": "Mute length, e.g. 30m, 12h, 7d", "required": true, "max_length": 8 },
            { "type": OPT_STRING, "name": "reason", "description": "What happened", "required": true, "max_length": 512 },
            { "type": OPT_ATTACHMENT, "name": "proof", "description": "Screenshot of the incident", "required": false },
            { "type": OPT_BOOLEAN, "name": "review_request", "description": "Review the victim's apology request before the offender sees it", "required": false }
        ]
    })
}

/// Body of the bulk-overwrite registration call. Re-sending it is a no-op.
pub fn registration_body() -> Value {
    Value::Array(vec![apolomute_command()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_types_and_order() {
        let cmd = apolomute_command();
        let opts = cmd["options"].as_array().unwrap();
        let types: Vec<u64> = opts.iter().map(|o| o["type"].as_u64().unwrap()).collect();
        assert_eq!(types, [6, 6, 3, 3, 11, 5]);
        let required: Vec<bool> = opts.iter().map(|o| o["required"].as_bool().unwrap()).collect();
        assert_eq!(required, [true, true, true, true, false, false]);
        let names: Vec<&str> = opts.iter().map(|o| o["name"].as_str().unwrap()).collect();
        assert_eq!(names, ["offender", "victim", "duration", "reason", "proof", "review_request"]);
    }
}
