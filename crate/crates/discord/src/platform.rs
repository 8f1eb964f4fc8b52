//! [`Platform`] over the Discord REST API.
//!
//! Discord has no request idempotency keys, so a crash between a call and
//! the ledger write can repeat one call after restart. Within a process the
//! binding caches results per key and never repeats a call it has seen
//! succeed; multi-step calls (thread creation plus membership) cache each
//! step separately.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use apolo_core::adapter::{
    Button, ButtonStyle, IdempotencyKey, LogPosted, LogTarget, MessageRef, Platform, PlatformError, RenderedPrompt,
    ThreadRef,
};
use apolo_core::clock::Clock;
use apolo_core::{ChannelId, CommunityId, RoleId, UserId};

use crate::commands::registration_body;
use crate::http::{ApiRequest, ApiResponse, DiscordHttp, FilePart, Method};
use crate::permissions::{self, MissingPermissions};

/// Longest communication timeout the platform accepts (28 days).
pub const MAX_TIMEOUT_SECS: i64 = 28 * 24 * 3600;
const MAX_CONTENT: usize = 2000;
const PRIVATE_THREAD: u8 = 12;
const PUBLIC_THREAD: u8 = 11;
const ARCHIVE_AFTER_MINUTES: u32 = 10080;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiscordSettings {
    pub application_id: String,
    /// Role assigned instead of a timeout for mutes beyond 28 days.
    pub mute_role_id: Option<RoleId>,
    /// Where pending mute-role removals are persisted.
    pub releases_path: Option<PathBuf>,
}

/// A mute-role assignment to lift when the mute ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuteRelease {
    pub community: CommunityId,
    pub member: UserId,
    pub role: RoleId,
    pub until: DateTime<Utc>,
}

#[derive(Debug, Clone)]
enum Cached {
    Done,
    Thread(ThreadRef),
    Message(MessageRef),
}

pub struct DiscordPlatform {
    http: Arc<dyn DiscordHttp>,
    clock: Arc<dyn Clock>,
    settings: DiscordSettings,
    cache: Mutex<HashMap<IdempotencyKey, Cached>>,
    releases: Mutex<Vec<MuteRelease>>,
}

impl std::fmt::Debug for DiscordPlatform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscordPlatform").field("settings", &self.settings).finish_non_exhaustive()
    }
}

fn error_message(resp: &ApiResponse) -> String {
    let msg = resp.body.get("message").and_then(Value::as_str).unwrap_or("");
    match resp.body.get("code").and_then(Value::as_u64) {
        Some(code) => format!("HTTP {} ({code}): {msg}", resp.status),
        None => format!("HTTP {}: {msg}", resp.status),
    }
}

fn truncate(text: &str) -> String {
    if text.chars().count() <= MAX_CONTENT {
        return text.to_owned();
    }
    let mut s: String = text.chars().take(MAX_CONTENT - 1).collect();
    s.push('…');
    s
}

fn components(buttons: &[Button]) -> Value {
    if buttons.is_empty() {
        return json!([]);
    }
    let row: Vec<Value> = buttons
        .iter()
        .map(|b| {
            let style = match b.style {
                ButtonStyle::Primary => 1,
                ButtonStyle::Success => 3,
                ButtonStyle::Danger => 4,
            };
            json!({ "type": 2, "style": style, "label": b.label, "custom_id": b.custom_id })
        })
        .collect();
    json!([{ "type": 1, "components": row }])
}

fn attachment_name(url: &str, index: usize) -> String {
    let path = url.split(['?', '#']).next().unwrap_or(url);
    match path.rsplit('/').next() {
        Some(name) if !name.is_empty() && name.contains('.') => name.to_owned(),
        _ => format!("proof-{index}.png"),
    }
}

impl DiscordPlatform {
    pub fn new(http: Arc<dyn DiscordHttp>, clock: Arc<dyn Clock>, settings: DiscordSettings) -> Self {
        let releases = settings
            .releases_path
            .as_ref()
            .and_then(|p| std::fs::read_to_string(p).ok())
            .and_then(|raw| serde_json::from_str(&raw).ok())
            .unwrap_or_default();
        Self { http, clock, settings, cache: Mutex::new(HashMap::new()), releases: Mutex::new(releases) }
    }

    pub fn settings(&self) -> &DiscordSettings {
        &self.settings
    }

    fn call(&self, request: ApiRequest) -> Result<Value, PlatformError> {
        let resp = self.http.send(&request).map_err(|e| PlatformError::Unavailable(e.to_string()))?;
        match resp.status {
            200..=299 => Ok(resp.body),
            401 | 403 => Err(PlatformError::PermissionDenied(error_message(&resp))),
            429 | 500..=599 => Err(PlatformError::Unavailable(error_message(&resp))),
            _ => Err(PlatformError::Rejected(error_message(&resp))),
        }
    }

    fn cached(&self, key: &IdempotencyKey) -> Option<Cached> {
        self.cache.lock().unwrap().get(key).cloned()
    }

    fn remember(&self, key: &IdempotencyKey, value: Cached) {
        self.cache.lock().unwrap().insert(key.clone(), value);
    }

    fn id_of(body: &Value) -> Result<String, PlatformError> {
        body.get("id")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| PlatformError::Rejected("response carried no id".into()))
    }

    fn create_thread(
        &self,
        key: &IdempotencyKey,
        parent: &ChannelId,
        name: &str,
        kind: u8,
    ) -> Result<ThreadRef, PlatformError> {
        if let Some(Cached::Thread(t)) = self.cached(key) {
            return Ok(t);
        }
        let mut body = json!({ "name": name, "type": kind, "auto_archive_duration": ARCHIVE_AFTER_MINUTES });
        if kind == PRIVATE_THREAD {
            body["invitable"] = json!(false);
        }
        let resp = self.call(ApiRequest::new(Method::Post, format!("/channels/{parent}/threads")).json(body))?;
        let thread = ThreadRef(Self::id_of(&resp)?);
        self.remember(key, Cached::Thread(thread.clone()));
        Ok(thread)
    }

    fn post_message(
        &self,
        key: &IdempotencyKey,
        channel: &str,
        content: &str,
        buttons: &[Button],
        files: Vec<FilePart>,
    ) -> Result<MessageRef, PlatformError> {
        if let Some(Cached::Message(m)) = self.cached(key) {
            return Ok(m);
        }
        let mut body = json!({
            "content": truncate(content),
            "components": components(buttons),
            "allowed_mentions": { "parse": ["users"] },
        });
        if !files.is_empty() {
            let meta: Vec<Value> =
                files.iter().enumerate().map(|(i, f)| json!({ "id": i, "filename": f.filename })).collect();
            body["attachments"] = Value::Array(meta);
        }
        let mut req = ApiRequest::new(Method::Post, format!("/channels/{channel}/messages")).json(body);
        req.files = files;
        let resp = self.call(req)?;
        let msg = MessageRef(Self::id_of(&resp)?);
        self.remember(key, Cached::Message(msg.clone()));
        Ok(msg)
    }

    fn save_releases(&self, releases: &[MuteRelease]) {
        let Some(path) = &self.settings.releases_path else { return };
        let raw = serde_json::to_string_pretty(releases).expect("releases serialize");
        let tmp = path.with_extension("tmp");
        if let Err(e) = std::fs::write(&tmp, raw).and_then(|_| std::fs::rename(&tmp, path)) {
            warn!(path = %path.display(), error = %e, "could not persist mute-role releases");
        }
    }

    pub fn pending_releases(&self) -> Vec<MuteRelease> {
        self.releases.lock().unwrap().clone()
    }

    /// Removes the mute role from members whose mute has ended. Failed
    /// removals stay queued for the next call.
    pub fn release_due(&self, now: DateTime<Utc>) -> Vec<MuteRelease> {
        let mut releases = self.releases.lock().unwrap();
        let mut lifted = Vec::new();
        let mut keep = Vec::new();
        for r in releases.drain(..) {
            if r.until > now {
                keep.push(r);
                continue;
            }
            let path = format!("/guilds/{}/members/{}/roles/{}", r.community, r.member, r.role);
            match self.call(ApiRequest::new(Method::Delete, path)) {
                Ok(_) => {
                    info!(community = %r.community, member = %r.member, "mute role lifted");
                    lifted.push(r);
                }
                Err(e) => {
                    warn!(community = %r.community, member = %r.member, error = %e, "mute role removal failed");
                    keep.push(r);
                }
            }
        }
        *releases = keep;
        self.save_releases(&releases);
        lifted
    }

    /// The bot's own user id.
    pub fn current_user_id(&self) -> Result<UserId, PlatformError> {
        let me = self.call(ApiRequest::new(Method::Get, "/users/@me"))?;
        Ok(UserId::new(Self::id_of(&me)?))
    }

    /// Checks the bot's guild-level grants. Channel overwrites are not
    /// inspected.
    pub fn check_permissions(&self, community: &CommunityId, bot: &UserId) -> Result<(), MissingPermissions> {
        let fail = |e: PlatformError| MissingPermissions { community: community.clone(), missing: vec![], detail: Some(e.to_string()) };
        let roles = self.call(ApiRequest::new(Method::Get, format!("/guilds/{community}/roles"))).map_err(fail)?;
        let member =
            self.call(ApiRequest::new(Method::Get, format!("/guilds/{community}/members/{bot}"))).map_err(fail)?;
        let granted = permissions::effective(community.as_str(), &roles, &member);
        let missing = permissions::missing(granted, self.settings.mute_role_id.is_some());
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MissingPermissions { community: community.clone(), missing, detail: None })
        }
    }
}

impl Platform for DiscordPlatform {
    fn mention(&self, user: &UserId) -> String {
        format!("<@{user}>")
    }

    fn ensure_commands_registered(&self, community: &CommunityId) -> Result<(), PlatformError> {
        let path = format!("/applications/{}/guilds/{community}/commands", self.settings.application_id);
        self.call(ApiRequest::new(Method::Put, path).json(registration_body()))?;
        Ok(())
    }

    fn mute(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        member: &UserId,
        until: DateTime<Utc>,
    ) -> Result<(), PlatformError> {
        if self.cached(key).is_some() {
            return Ok(());
        }
        let remaining = (until - self.clock.now()).num_seconds();
        if remaining <= MAX_TIMEOUT_SECS {
            let body = json!({ "communication_disabled_until": until.to_rfc3339_opts(SecondsFormat::Secs, true) });
            let mut req = ApiRequest::new(Method::Patch, format!("/guilds/{community}/members/{member}")).json(body);
            req.audit_reason = Some(format!("apology mediation {key}"));
            self.call(req)?;
        } else {
            let Some(role) = self.settings.mute_role_id.clone() else {
                return Err(PlatformError::Rejected("mutes beyond 28 days need a configured mute role".into()));
            };
            self.call(ApiRequest::new(Method::Put, format!("/guilds/{community}/members/{member}/roles/{role}")))?;
            let mut releases = self.releases.lock().unwrap();
            releases.retain(|r| !(r.community == *community && r.member == *member));
            releases.push(MuteRelease { community: community.clone(), member: member.clone(), role, until });
            self.save_releases(&releases);
        }
        self.remember(key, Cached::Done);
        Ok(())
    }

    fn unmute(&self, key: &IdempotencyKey, community: &CommunityId, member: &UserId) -> Result<(), PlatformError> {
        if self.cached(key).is_some() {
            return Ok(());
        }
        let role_release = {
            let releases = self.releases.lock().unwrap();
            releases.iter().find(|r| r.community == *community && r.member == *member).cloned()
        };
        match role_release {
            Some(r) => {
                self.call(ApiRequest::new(Method::Delete, format!("/guilds/{community}/members/{member}/roles/{}", r.role)))?;
                let mut releases = self.releases.lock().unwrap();
                releases.retain(|x| x != &r);
                self.save_releases(&releases);
            }
            None => {
                let body = json!({ "communication_disabled_until": Value::Null });
                self.call(ApiRequest::new(Method::Patch, format!("/guilds/{community}/members/{member}")).json(body))?;
            }
        }
        self.remember(key, Cached::Done);
        Ok(())
    }

    fn create_private_thread(
        &self,
        key: &IdempotencyKey,
        _community: &CommunityId,
        parent: &ChannelId,
        member: &UserId,
        name: &str,
    ) -> Result<ThreadRef, PlatformError> {
        let join_key = key.sub("member");
        let thread = self.create_thread(key, parent, name, PRIVATE_THREAD)?;
        if self.cached(&join_key).is_none() {
            self.call(ApiRequest::new(Method::Put, format!("/channels/{thread}/thread-members/{member}")))?;
            self.remember(&join_key, Cached::Done);
        }
        Ok(thread)
    }

    fn post_prompt(
        &self,
        key: &IdempotencyKey,
        thread: &ThreadRef,
        prompt: &RenderedPrompt,
        buttons: &[Button],
    ) -> Result<MessageRef, PlatformError> {
        self.post_message(key, &thread.0, &prompt.text, buttons, Vec::new())
    }

    fn post_log(
        &self,
        key: &IdempotencyKey,
        _community: &CommunityId,
        target: &LogTarget,
        text: &str,
        buttons: &[Button],
        attachments: &[String],
    ) -> Result<LogPosted, PlatformError> {
        let thread = match &target.thread {
            Some(t) => t.clone(),
            None => self.create_thread(&key.sub("thread"), &target.channel, &target.thread_name, PUBLIC_THREAD)?,
        };
        let mut content = text.to_owned();
        let mut files = Vec::new();
        for (i, url) in attachments.iter().enumerate() {
            match self.http.fetch(url) {
                Ok(bytes) => files.push(FilePart { filename: attachment_name(url, i), bytes }),
                Err(e) => {
                    warn!(%url, error = %e, "proof re-upload failed; linking instead");
                    content.push_str(&format!("\nProof: {url}"));
                }
            }
        }
        let message = self.post_message(key, &thread.0, &content, buttons, files)?;
        Ok(LogPosted { thread, message })
    }

    fn archive_thread(&self, key: &IdempotencyKey, thread: &ThreadRef) -> Result<(), PlatformError> {
        if self.cached(key).is_some() {
            return Ok(());
        }
        let body = json!({ "archived": true, "locked": true });
        self.call(ApiRequest::new(Method::Patch, format!("/channels/{thread}")).json(body))?;
        self.remember(key, Cached::Done);
        Ok(())
    }
}

/// Registers `/apolomute` in every listed community.
pub fn register_all(platform: &DiscordPlatform, communities: &[CommunityId]) -> BTreeMap<CommunityId, Result<(), PlatformError>> {
    communities.iter().map(|c| (c.clone(), platform.ensure_commands_registered(c))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attachment_names() {
        assert_eq!(attachment_name("https://cdn.example/a/b/shot.png?ex=1", 0), "shot.png");
        assert_eq!(attachment_name("https://cdn.example/a/b/", 2), "proof-2.png");
    }

    #[test]
    fn long_content_is_truncated() {
        let s = "x".repeat(2500);
        let t = truncate(&s);
        assert_eq!(t.chars().count(), MAX_CONTENT);
        assert!(t.ends_with('…'));
    }
}
