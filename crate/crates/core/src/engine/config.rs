//! Community mediation policy and message templates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ChannelId, RoleId, UserId};

pub const DEFAULT_STAGE_TIMEOUT_SECS: u64 = 86_400;

pub const TEMPLATE_VICTIM_PROMPT: &str = "victim_prompt";
pub const TEMPLATE_OFFENDER_PROMPT: &str = "offender_prompt";
pub const TEMPLATE_OFFENDER_REPROMPT: &str = "offender_reprompt";
pub const TEMPLATE_VICTIM_VERDICT: &str = "victim_verdict";
pub const TEMPLATE_LOG_UPDATE: &str = "log_update";

/// Placeholders a template may reference.
pub const PLACEHOLDERS: &[&str] = &[
    "victim_name",
    "offender_name",
    "reason",
    "request_text",
    "response_text",
    "duration",
    "case_number",
    "stage",
    "summary",
];

/// Template id -> placeholders it must contain.
const REQUIRED: &[(&str, &[&str])] = &[
    (TEMPLATE_VICTIM_PROMPT, &["offender_name", "reason", "duration"]),
    (TEMPLATE_OFFENDER_PROMPT, &["victim_name", "request_text", "duration"]),
    (TEMPLATE_OFFENDER_REPROMPT, &["request_text"]),
    (TEMPLATE_VICTIM_VERDICT, &["offender_name", "response_text"]),
    (TEMPLATE_LOG_UPDATE, &["case_number", "victim_name", "offender_name", "stage", "summary"]),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("default_stage_timeout must be > 0")]
    ZeroTimeout,
    #[error("max_attempts must be >= 1")]
    ZeroAttempts,
    #[error("template {0:?} is missing")]
    MissingTemplate(String),
    #[error("template {template:?} must contain {{{placeholder}}}")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("template {template:?} references unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template: String, placeholder: String },
}

/// Per-community mediation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationConfig {
    /// Seconds a stakeholder has to act at each stage.
    pub default_stage_timeout: u64,
    pub max_attempts: u32,
    pub auto_unmute: bool,
    pub moderator_role_ids: BTreeSet<RoleId>,
    pub log_channel_id: ChannelId,
    /// The bot's own user id; cases may not target it.
    pub bot_user_id: Option<UserId>,
    pub templates: BTreeMap<String, String>,
}

impl Default for MediationConfig {
    fn default() -> Self {
        Self {
            default_stage_timeout: DEFAULT_STAGE_TIMEOUT_SECS,
            max_attempts: 1,
            auto_unmute: false,
            moderator_role_ids: BTreeSet::new(),
            log_channel_id: ChannelId::new("log"),
            bot_user_id: None,
            templates: default_templates(),
        }
    }
}

impl MediationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.default_stage_timeout == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::ZeroAttempts);
        }
        for (id, required) in REQUIRED {
            let text = self
                .templates
                .get(*id)
                .ok_or_else(|| ConfigError::MissingTemplate((*id).to_owned()))?;
            let used = placeholders_in(text);
            for p in *required {
                if !used.contains(*p) {
                    return Err(ConfigError::MissingPlaceholder {
                        template: (*id).to_owned(),
                        placeholder: (*p).to_owned(),
                    });
                }
            }
        }
        for (id, text) in &self.templates {
            for p in placeholders_in(text) {
                if !PLACEHOLDERS.contains(&p.as_str()) {
                    return Err(ConfigError::UnknownPlaceholder {
                        template: id.clone(),
                        placeholder: p,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_moderator(&self, roles: &[RoleId]) -> bool {
        roles.iter().any(|r| self.moderator_role_ids.contains(r))
    }

    pub fn policy(&self) -> CasePolicy {
        CasePolicy {
            stage_timeout_secs: self.default_stage_timeout,
            max_attempts: self.max_attempts,
            auto_unmute: self.auto_unmute,
        }
    }

    pub fn template(&self, id: &str) -> &str {
        self.templates.get(id).map(String::as_str).unwrap_or_default()
    }
}

/// The slice of [`MediationConfig`] that decides transitions. It is copied
/// into every case when it opens so replaying a case never depends on the
/// configuration in force at replay time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CasePolicy {
    pub stage_timeout_secs: u64,
    pub max_attempts: u32,
    pub auto_unmute: bool,
}

impl Default for CasePolicy {
    fn default() -> Self {
        MediationConfig::default().policy()
    }
}

pub fn default_templates() -> BTreeMap<String, String> {
    [
        (
            TEMPLATE_VICTIM_PROMPT,
            "Hi {victim_name}. {offender_name} has been muted for {duration} because of: {reason}\n\
             Would you like to request an apology from them? If they deliver an appropriate apology, \
             their mute may be lifted early.",
        ),
        (
            TEMPLATE_OFFENDER_PROMPT,
            "Hi {offender_name}. You have been muted for {duration}. {victim_name} has asked you for an apology:\n\
             > {request_text}\n\
             Your mute can be lifted if you deliver an appropriate apology. Would you like to respond?",
        ),
        (
            TEMPLATE_OFFENDER_REPROMPT,
            "The moderators did not approve your previous response. You may try again. The original request was:\n\
             > {request_text}\n\
             Would you like to respond?",
        ),
        (
            TEMPLATE_VICTIM_VERDICT,
            "{offender_name} has responded to your request with this apology:\n\
             > {response_text}\n\
             Do you accept it?",
        ),
        (
            TEMPLATE_LOG_UPDATE,
            "Case {case_number} | victim: {victim_name} | offender: {offender_name}\n\
             Step: {stage}\n\
             {summary}",
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect()
}

/// Names between `{` and `}` in a template.
pub fn placeholders_in(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                if !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    out.insert(name.to_owned());
                }
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// Substitutes `{name}` placeholders. Values are inserted verbatim and never
/// re-scanned, so user text containing braces is left alone.
pub fn render_template(text: &str, params: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if params.contains_key(&after[..end]) => {
                out.push_str(&params[&after[..end]]);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        MediationConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_policy_values() {
        let cfg = MediationConfig { default_stage_timeout: 0, ..Default::default() };
        assert_eq!(cfg.validate(), Err(ConfigError::ZeroTimeout));
        let cfg = MediationConfig { max_attempts: 0, ..Default::default() };
        assert_eq!(cfg.validate(), Err(ConfigError::ZeroAttempts));
    }

    #[test]
    fn offender_prompt_must_quote_request() {
        let mut cfg = MediationConfig::default();
        cfg.templates
            .insert(TEMPLATE_OFFENDER_PROMPT.into(), "{victim_name} {duration}".into());
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::MissingPlaceholder { placeholder, .. }) if placeholder == "request_text"
        ));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let mut cfg = MediationConfig::default();
        cfg.templates.insert("extra".into(), "{nope}".into());
        assert!(matches!(cfg.validate(), Err(ConfigError::UnknownPlaceholder { .. })));
    }

    #[test]
    fn render_is_verbatim() {
        let params: BTreeMap<String, String> = [("request_text".to_owned(), "{reason} }{".to_owned())]
            .into_iter()
            .collect();
        assert_eq!(render_template("> {request_text} {x}", &params), "> {reason} }{ {x}");
    }
}
