//! Service configuration file.
//!
//! ```toml
//! data_dir = "data"            # relative to the config file
//! binding = "discord"          # or "sim"
//! allow_sim = false
//!
//! [api]
//! bind = "127.0.0.1:8080"
//! [[api.tokens]]
//! token = "..."
//! scope = "moderate"           # read | sim | moderate
//!
//! [discord]
//! application_id = "..."
//! public_key = "..."           # hex, from the developer portal
//! bot_token = "..."
//! mute_role_id = "..."         # optional; used for mutes beyond 28 days
//!
//! [mediation]                  # defaults for every community
//! default_stage_timeout = 86400
//! max_attempts = 1
//! auto_unmute = false
//!
//! [[communities]]
//! id = "guild id"
//! log_channel_id = "..."
//! thread_parent_id = "..."     # defaults to log_channel_id
//! moderator_role_ids = ["..."]
//! overrides = { max_attempts = 2 }
//!
//! [scheduler]
//! tick_secs = 15
//! sim_clock_rate = 1.0
//! ```
//!
//! Secrets may instead come from `APOLO_DISCORD_BOT_TOKEN`,
//! `APOLO_DISCORD_PUBLIC_KEY`, `APOLO_DISCORD_APPLICATION_ID` and
//! `APOLO_API_TOKENS` (`scope:token,scope:token`). `APOLO_DATA_DIR` and
//! `APOLO_API_BIND` override the matching keys. Environment values win.

use std::collections::BTreeSet;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use apolo_api::{ConfigOverrides, Scope};
use apolo_core::{ChannelId, CommunityId, MediationConfig, RoleId};
use apolo_discord::InteractionVerifier;

use crate::error::CliError;

/// A value that must never reach logs or terminals.
#[derive(Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(transparent)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl Serialize for Secret {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("***")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingKind {
    #[default]
    Sim,
    Discord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiToken {
    pub token: Secret,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub bind: String,
    pub tokens: Vec<ApiToken>,
}

impl Default for ApiSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), tokens: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscordSection {
    pub application_id: String,
    pub public_key: Secret,
    pub bot_token: Secret,
    pub mute_role_id: Option<RoleId>,
    /// REST base URL; only changed for testing against a stand-in server.
    pub api_base: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunitySection {
    pub id: CommunityId,
    pub log_channel_id: ChannelId,
    pub thread_parent_id: Option<ChannelId>,
    #[serde(default)]
    pub moderator_role_ids: BTreeSet<RoleId>,
    #[serde(default)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub tick_secs: u64,
    /// Virtual-time speed-up for the simulated binding.
    pub sim_clock_rate: f64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self { tick_secs: 15, sim_clock_rate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data_dir: PathBuf,
    pub binding: BindingKind,
    pub allow_sim: bool,
    pub api: ApiSection,
    pub discord: Option<DiscordSection>,
    pub mediation: ConfigOverrides,
    pub communities: Vec<CommunitySection>,
    pub scheduler: SchedulerSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            binding: BindingKind::default(),
            allow_sim: false,
            api: ApiSection::default(),
            discord: None,
            mediation: ConfigOverrides::default(),
            communities: Vec::new(),
            scheduler: SchedulerSection::default(),
        }
    }
}

fn apply(config: &mut MediationConfig, o: &ConfigOverrides) {
    if let Some(v) = o.default_stage_timeout {
        config.default_stage_timeout = v;
    }
    if let Some(v) = o.max_attempts {
        config.max_attempts = v;
    }
    if let Some(v) = o.auto_unmute {
        config.auto_unmute = v;
    }
    if let Some(t) = &o.templates {
        config.templates.extend(t.clone());
    }
}

fn parse_tokens(raw: &str) -> Result<Vec<ApiToken>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (scope, token) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Config("APOLO_API_TOKENS entries must look like scope:token".into()))?;
            let scope = scope.parse::<Scope>().map_err(CliError::Config)?;
            Ok(ApiToken { token: Secret::new(token), scope })
        })
        .collect()
}

impl ConfigFile {
    /// Reads, applies `APOLO_*` overrides from the process environment and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&raw)?;
        config.apply_env(env)?;
        if config.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.data_dir = base.join(&config.data_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn parse(raw: &str) -> Result<Self, CliError> {
        toml::from_str(raw).map_err(|e| CliError::Config(e.message().to_owned()))
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(v) = env("APOLO_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = env("APOLO_API_BIND") {
            self.api.bind = v;
        }
        if let Some(v) = env("APOLO_API_TOKENS") {
            self.api.tokens = parse_tokens(&v)?;
        }
        let keys = ["APOLO_DISCORD_APPLICATION_ID", "APOLO_DISCORD_PUBLIC_KEY", "APOLO_DISCORD_BOT_TOKEN"];
        let values: Vec<Option<String>> = keys.iter().map(|k| env(k)).collect();
        if values.iter().any(Option::is_some) {
            let d = self.discord.get_or_insert_with(DiscordSection::default);
            if let Some(v) = &values[0] {
                d.application_id = v.clone();
            }
            if let Some(v) = &values[1] {
                d.public_key = Secret::new(v.clone());
            }
            if let Some(v) = &values[2] {
                d.bot_token = Secret::new(v.clone());
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bind_addr()?;
        if self.scheduler.tick_secs == 0 {
            return Err(CliError::Config("scheduler.tick_secs must be > 0".into()));
        }
        let rate = self.scheduler.sim_clock_rate;
        if !(rate.is_finite() && rate > 0.0) {
            return Err(CliError::Config("scheduler.sim_clock_rate must be > 0".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.api.tokens {
            if t.token.expose().trim().is_empty() {
                return Err(CliError::Config("api tokens must not be empty".into()));
            }
            if !seen.insert(t.token.expose()) {
                return Err(CliError::Config("api tokens must be unique".into()));
            }
        }
        let mut defaults = MediationConfig::default();
        apply(&mut defaults, &self.mediation);
        defaults.validate().map_err(|e| CliError::Config(format!("mediation: {e}")))?;
        let mut ids = BTreeSet::new();
        for c in &self.communities {
            if !ids.insert(&c.id) {
                return Err(CliError::Config(format!("community {} is listed twice", c.id)));
            }
            if c.moderator_role_ids.is_empty() {
                return Err(CliError::Config(format!("community {} needs at least one moderator role", c.id)));
            }
            self.mediation_config(c)
                .validate()
                .map_err(|e| CliError::Config(format!("community {}: {e}", c.id)))?;
        }
        if let Some(d) = &self.discord {
            if !d.public_key.expose().is_empty() {
                InteractionVerifier::from_hex(d.public_key.expose())
                    .map_err(|e| CliError::Config(format!("discord.public_key: {e}")))?;
            }
        }
        Ok(())
    }

    /// Checks what the Discord binding needs beyond [`ConfigFile::validate`].
    pub fn discord_ready(&self) -> Result<&DiscordSection, CliError> {
        let d = self
            .discord
            .as_ref()
            .ok_or_else(|| CliError::Config("the discord binding needs a [discord] section".into()))?;
        for (name, value) in [
            ("application_id", d.application_id.as_str()),
            ("public_key", d.public_key.expose()),
            ("bot_token", d.bot_token.expose()),
        ] {
            if value.trim().is_empty() {
                return Err(CliError::Config(format!("discord.{name} is required")));
            }
        }
        if self.communities.is_empty() {
            return Err(CliError::Config("the discord binding needs at least one [[communities]] entry".into()));
        }
        Ok(d)
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, CliError> {
        self.api
            .bind
            .parse()
            .map_err(|_| CliError::Config(format!("api.bind {:?} is not a socket address", self.api.bind)))
    }

    /// Effective policy for one community: defaults, then `[mediation]`,
    /// then the community's own overrides.
    pub fn mediation_config(&self, community: &CommunitySection) -> MediationConfig {
        let mut config = MediationConfig::default();
        apply(&mut config, &self.mediation);
        apply(&mut config, &community.overrides);
        config.moderator_role_ids = community.moderator_role_ids.clone();
        config.log_channel_id = community.log_channel_id.clone();
        config
    }

    pub fn token_table(&self) -> apolo_api::TokenTable {
        apolo_api::TokenTable::new(self.api.tokens.iter().map(|t| (t.token.expose().to_owned(), t.scope)))
    }
}
