//! In-memory platform and scripted stakeholders.
//!
//! [`SimPlatform`] implements [`Platform`] by recording every call in a
//! transcript, deduplicating by idempotency key and handing out sequential
//! thread and message ids. [`SimulatedBinding`] watches what the platform
//! posted and answers prompts on behalf of victims, offenders and moderators
//! according to a [`BehaviorProfile`], using a seeded ChaCha8 stream so the
//! same seed always produces the same inbound sequence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::custom_id::{Action, Gate, InteractionCustomId};
use super::{
    Button, IdempotencyKey, InboundInteraction, LogPosted, LogTarget, MessageRef, Platform,
    PlatformError, RenderedPrompt, ThreadRef, MODAL_TEXT_FIELD,
};
use crate::clock::Clock;
use crate::ids::{CaseId, ChannelId, CommunityId, RoleId, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum PlatformCall {
    RegisterCommands {
        community: CommunityId,
    },
    Mute {
        key: IdempotencyKey,
        community: CommunityId,
        member: UserId,
        until: DateTime<Utc>,
    },
    Unmute {
        key: IdempotencyKey,
        community: CommunityId,
        member: UserId,
    },
    CreatePrivateThread {
        key: IdempotencyKey,
        community: CommunityId,
        parent: ChannelId,
        member: UserId,
        name: String,
        thread: ThreadRef,
    },
    PostPrompt {
        key: IdempotencyKey,
        thread: ThreadRef,
        template: String,
        text: String,
        buttons: Vec<String>,
        message: MessageRef,
    },
    PostLog {
        key: IdempotencyKey,
        community: CommunityId,
        channel: ChannelId,
        thread: ThreadRef,
        created_thread: bool,
        text: String,
        buttons: Vec<String>,
        attachments: Vec<String>,
        message: MessageRef,
    },
    ArchiveThread {
        key: IdempotencyKey,
        thread: ThreadRef,
    },
}

impl PlatformCall {
    pub fn op(&self) -> &'static str {
        match self {
            PlatformCall::RegisterCommands { .. } => "register_commands",
            PlatformCall::Mute { .. } => "mute",
            PlatformCall::Unmute { .. } => "unmute",
            PlatformCall::CreatePrivateThread { .. } => "create_private_thread",
            PlatformCall::PostPrompt { .. } => "post_prompt",
            PlatformCall::PostLog { .. } => "post_log",
            PlatformCall::ArchiveThread { .. } => "archive_thread",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub call: PlatformCall,
}

const MASK: &str = "<time>";

/// One JSON object per line. With `mask_times`, instants are replaced by a
/// placeholder so transcripts from differently clocked runs compare equal.
pub fn render_transcript(entries: &[TranscriptEntry], mask_times: bool) -> String {
    let mut out = String::new();
    for e in entries {
        let mut v = serde_json::to_value(e).expect("transcript entries serialize");
        if mask_times {
            if let Value::Object(map) = &mut v {
                for field in ["at", "until"] {
                    if let Some(slot) = map.get_mut(field) {
                        *slot = Value::String(MASK.into());
                    }
                }
            }
        }
        out.push_str(&serde_json::to_string(&v).expect("json values serialize"));
        out.push('\n');
    }
    out
}

/// A message that carries buttons, as seen by simulated stakeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostedMessage {
    pub at: DateTime<Utc>,
    pub thread: ThreadRef,
    /// The member a private thread was opened for; `None` in the log channel.
    pub member: Option<UserId>,
    pub buttons: Vec<Button>,
}

#[derive(Debug, Clone)]
struct Fault {
    op: String,
    error: PlatformError,
    persistent: bool,
}

#[derive(Debug, Clone)]
enum Cached {
    Unit,
    Thread(ThreadRef),
    Message(MessageRef),
    Log(LogPosted),
}

#[derive(Debug, Clone)]
struct SimThread {
    member: Option<UserId>,
    archived: bool,
}

#[derive(Default)]
struct SimState {
    transcript: Vec<TranscriptEntry>,
    seen: HashMap<IdempotencyKey, Cached>,
    next_thread: u64,
    next_message: u64,
    threads: BTreeMap<ThreadRef, SimThread>,
    log_threads: BTreeMap<(ChannelId, String), ThreadRef>,
    muted: BTreeMap<(CommunityId, UserId), DateTime<Utc>>,
    registered: BTreeSet<CommunityId>,
    feed: Vec<PostedMessage>,
    faults: Vec<Fault>,
    attempts: usize,
    duplicates: usize,
}

impl SimState {
    fn thread(&mut self) -> ThreadRef {
        self.next_thread += 1;
        ThreadRef(format!("thread-{}", self.next_thread))
    }

    fn message(&mut self) -> MessageRef {
        self.next_message += 1;
        MessageRef(format!("msg-{}", self.next_message))
    }

    fn fault(&mut self, op: &str) -> Result<(), PlatformError> {
        if let Some(i) = self.faults.iter().position(|f| f.op == op || f.op == "*") {
            let f = &self.faults[i];
            let err = f.error.clone();
            if !f.persistent {
                self.faults.remove(i);
            }
            return Err(err);
        }
        Ok(())
    }
}

/// Deterministic in-memory [`Platform`].
pub struct SimPlatform {
    clock: Arc<dyn Clock>,
    state: Mutex<SimState>,
}

impl std::fmt::Debug for SimPlatform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimPlatform").finish_non_exhaustive()
    }
}

impl SimPlatform {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock, state: Mutex::new(SimState::default()) }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.state.lock().unwrap().transcript.clone()
    }

    /// Number of platform calls attempted, including failed and duplicate ones.
    pub fn attempts(&self) -> usize {
        self.state.lock().unwrap().attempts
    }

    /// Calls that repeated an already completed idempotency key.
    pub fn duplicates(&self) -> usize {
        self.state.lock().unwrap().duplicates
    }

    pub fn feed(&self) -> Vec<PostedMessage> {
        self.state.lock().unwrap().feed.clone()
    }

    fn feed_from(&self, cursor: usize) -> Vec<PostedMessage> {
        let st = self.state.lock().unwrap();
        st.feed.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn muted_until(&self, community: &CommunityId, member: &UserId) -> Option<DateTime<Utc>> {
        self.state.lock().unwrap().muted.get(&(community.clone(), member.clone())).copied()
    }

    pub fn is_archived(&self, thread: &ThreadRef) -> bool {
        self.state.lock().unwrap().threads.get(thread).is_some_and(|t| t.archived)
    }

    /// Makes the next call of `op` fail once (`"*"` matches any op).
    pub fn fail_next(&self, op: &str, error: PlatformError) {
        self.state.lock().unwrap().faults.push(Fault { op: op.into(), error, persistent: false });
    }

    /// Makes every call of `op` fail until [`SimPlatform::clear_faults`].
    pub fn fail_always(&self, op: &str, error: PlatformError) {
        self.state.lock().unwrap().faults.push(Fault { op: op.into(), error, persistent: true });
    }

    pub fn clear_faults(&self) {
        self.state.lock().unwrap().faults.clear();
    }

    /// Runs one call: replays the cached result for a seen key, otherwise
    /// checks injected faults and performs `f`.
    fn call<T>(
        &self,
        key: Option<&IdempotencyKey>,
        op: &str,
        unwrap: impl Fn(&Cached) -> T,
        f: impl FnOnce(&mut SimState, DateTime<Utc>) -> (Cached, PlatformCall),
    ) -> Result<T, PlatformError> {
        let now = self.clock.now();
        let mut st = self.state.lock().unwrap();
        st.attempts += 1;
        if let Some(cached) = key.and_then(|k| st.seen.get(k)) {
            let out = unwrap(cached);
            st.duplicates += 1;
            return Ok(out);
        }
        st.fault(op)?;
        let (cached, call) = f(&mut st, now);
        st.transcript.push(TranscriptEntry { at: now, call });
        let out = unwrap(&cached);
        if let Some(k) = key {
            st.seen.insert(k.clone(), cached);
        }
        Ok(out)
    }
}

fn ids(buttons: &[Button]) -> Vec<String> {
    buttons.iter().map(|b| b.custom_id.clone()).collect()
}

impl Platform for SimPlatform {
    fn ensure_commands_registered(&self, community: &CommunityId) -> Result<(), PlatformError> {
        if self.state.lock().unwrap().registered.contains(community) {
            return Ok(());
        }
        self.call(None, "register_commands", |_| (), |st, _| {
            st.registered.insert(community.clone());
            (Cached::Unit, PlatformCall::RegisterCommands { community: community.clone() })
        })
    }

    fn mute(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        member: &UserId,
        until: DateTime<Utc>,
    ) -> Result<(), PlatformError> {
        self.call(Some(key), "mute", |_| (), |st, _| {
            st.muted.insert((community.clone(), member.clone()), until);
            let call = PlatformCall::Mute {
                key: key.clone(),
                community: community.clone(),
                member: member.clone(),
                until,
            };
            (Cached::Unit, call)
        })
    }

    fn unmute(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        member: &UserId,
    ) -> Result<(), PlatformError> {
        self.call(Some(key), "unmute", |_| (), |st, _| {
            st.muted.remove(&(community.clone(), member.clone()));
            let call = PlatformCall::Unmute {
                key: key.clone(),
                community: community.clone(),
                member: member.clone(),
            };
            (Cached::Unit, call)
        })
    }

    fn create_private_thread(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        parent: &ChannelId,
        member: &UserId,
        name: &str,
    ) -> Result<ThreadRef, PlatformError> {
        let unwrap = |c: &Cached| match c {
            Cached::Thread(t) => t.clone(),
            other => unreachable!("{other:?}"),
        };
        self.call(Some(key), "create_private_thread", unwrap, |st, _| {
            let thread = st.thread();
            st.threads.insert(thread.clone(), SimThread { member: Some(member.clone()), archived: false });
            let call = PlatformCall::CreatePrivateThread {
                key: key.clone(),
                community: community.clone(),
                parent: parent.clone(),
                member: member.clone(),
                name: name.to_owned(),
                thread: thread.clone(),
            };
            (Cached::Thread(thread), call)
        })
    }

    fn post_prompt(
        &self,
        key: &IdempotencyKey,
        thread: &ThreadRef,
        prompt: &RenderedPrompt,
        buttons: &[Button],
    ) -> Result<MessageRef, PlatformError> {
        let unwrap = |c: &Cached| match c {
            Cached::Message(m) => m.clone(),
            other => unreachable!("{other:?}"),
        };
        self.call(Some(key), "post_prompt", unwrap, |st, now| {
            let message = st.message();
            let member = st.threads.get(thread).and_then(|t| t.member.clone());
            if !buttons.is_empty() {
                st.feed.push(PostedMessage { at: now, thread: thread.clone(), member, buttons: buttons.to_vec() });
            }
            let call = PlatformCall::PostPrompt {
                key: key.clone(),
                thread: thread.clone(),
                template: prompt.template.clone(),
                text: prompt.text.clone(),
                buttons: ids(buttons),
                message: message.clone(),
            };
            (Cached::Message(message), call)
        })
    }

    fn post_log(
        &self,
        key: &IdempotencyKey,
        community: &CommunityId,
        target: &LogTarget,
        text: &str,
        buttons: &[Button],
        attachments: &[String],
    ) -> Result<LogPosted, PlatformError> {
        let unwrap = |c: &Cached| match c {
            Cached::Log(l) => l.clone(),
            other => unreachable!("{other:?}"),
        };
        self.call(Some(key), "post_log", unwrap, |st, now| {
            let by_name = (target.channel.clone(), target.thread_name.clone());
            let existing = target.thread.clone().or_else(|| st.log_threads.get(&by_name).cloned());
            let created_thread = existing.is_none();
            let thread = match existing {
                Some(t) => t,
                None => {
                    let t = st.thread();
                    st.threads.insert(t.clone(), SimThread { member: None, archived: false });
                    st.log_threads.insert(by_name, t.clone());
                    t
                }
            };
            let message = st.message();
            if !buttons.is_empty() {
                st.feed.push(PostedMessage { at: now, thread: thread.clone(), member: None, buttons: buttons.to_vec() });
            }
            let call = PlatformCall::PostLog {
                key: key.clone(),
                community: community.clone(),
                channel: target.channel.clone(),
                thread: thread.clone(),
                created_thread,
                text: text.to_owned(),
                buttons: ids(buttons),
                attachments: attachments.to_vec(),
                message: message.clone(),
            };
            (Cached::Log(LogPosted { thread, message }), call)
        })
    }

    fn archive_thread(&self, key: &IdempotencyKey, thread: &ThreadRef) -> Result<(), PlatformError> {
        self.call(Some(key), "archive_thread", |_| (), |st, _| {
            if let Some(t) = st.threads.get_mut(thread) {
                t.archived = true;
            }
            (Cached::Unit, PlatformCall::ArchiveThread { key: key.clone(), thread: thread.clone() })
        })
    }
}

/// Response latency distribution, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Fixed { secs: u64 },
    Uniform { min_secs: u64, max_secs: u64 },
    Exponential { mean_secs: f64 },
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Uniform { min_secs: 60, max_secs: 3_600 }
    }
}

impl DelaySpec {
    /// Always consumes exactly one draw from `rng`.
    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        let u: f64 = rng.random();
        let secs = match *self {
            DelaySpec::Fixed { secs } => secs as f64,
            DelaySpec::Uniform { min_secs, max_secs } => {
                let (lo, hi) = (min_secs.min(max_secs) as f64, min_secs.max(max_secs) as f64);
                lo + u * (hi - lo)
            }
            DelaySpec::Exponential { mean_secs } => -mean_secs.max(0.0) * (1.0 - u).ln(),
        };
        Duration::seconds(secs.round().max(0.0) as i64)
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            DelaySpec::Exponential { mean_secs } if !(mean_secs.is_finite() && mean_secs >= 0.0) => {
                Err("mean_secs must be finite and >= 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// How one kind of stakeholder behaves.
///
/// Victim and offender: engage with `p_engage` (request / apologize);
/// otherwise decline explicitly with `p_explicit_decline`, else stay silent
/// until the stage times out. The victim accepts an apology with
/// `p_approve`. Moderators act on a review or unmute prompt with
/// `p_engage` and approve with `p_approve`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StakeholderProfile {
    pub p_engage: f64,
    pub p_approve: f64,
    pub p_explicit_decline: f64,
    pub delay: DelaySpec,
}

impl Default for StakeholderProfile {
    fn default() -> Self {
        Self { p_engage: 1.0, p_approve: 1.0, p_explicit_decline: 0.0, delay: DelaySpec::default() }
    }
}

impl StakeholderProfile {
    pub fn silent() -> Self {
        Self { p_engage: 0.0, p_approve: 0.0, p_explicit_decline: 0.0, delay: DelaySpec::default() }
    }

    fn validate(&self, who: &str) -> Result<(), String> {
        for (name, p) in [
            ("p_engage", self.p_engage),
            ("p_approve", self.p_approve),
            ("p_explicit_decline", self.p_explicit_decline),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{who}.{name} must be within [0, 1] (got {p})"));
            }
        }
        self.delay.validate().map_err(|e| format!("{who}.delay: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorProfile {
    pub victim: StakeholderProfile,
    pub offender: StakeholderProfile,
    pub moderator: StakeholderProfile,
}

impl BehaviorProfile {
    pub fn silent() -> Self {
        Self {
            victim: StakeholderProfile::silent(),
            offender: StakeholderProfile::silent(),
            moderator: StakeholderProfile::silent(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.victim.validate("victim")?;
        self.offender.validate("offender")?;
        self.moderator.validate("moderator")
    }
}

/// Scripted stakeholders answering whatever the [`SimPlatform`] posted.
pub struct SimulatedBinding {
    platform: Arc<SimPlatform>,
    profile: BehaviorProfile,
    rng: ChaCha8Rng,
    moderator: UserId,
    moderator_roles: Vec<RoleId>,
    cursor: usize,
    seq: u64,
    queue: BTreeMap<(DateTime<Utc>, u64), InboundInteraction>,
    attempts: HashMap<CaseId, u32>,
}

impl SimulatedBinding {
    pub fn new(
        platform: Arc<SimPlatform>,
        profile: BehaviorProfile,
        seed: u64,
        moderator: UserId,
        moderator_roles: Vec<RoleId>,
    ) -> Self {
        Self::with_rng(platform, profile, ChaCha8Rng::seed_from_u64(seed), moderator, moderator_roles)
    }

    pub fn with_rng(
        platform: Arc<SimPlatform>,
        profile: BehaviorProfile,
        rng: ChaCha8Rng,
        moderator: UserId,
        moderator_roles: Vec<RoleId>,
    ) -> Self {
        Self {
            platform,
            profile,
            rng,
            moderator,
            moderator_roles,
            cursor: 0,
            seq: 0,
            queue: BTreeMap::new(),
            attempts: HashMap::new(),
        }
    }

    fn push(&mut self, at: DateTime<Utc>, inbound: InboundInteraction) {
        self.seq += 1;
        self.queue.insert((at, self.seq), inbound);
    }

    fn press(&mut self, at: DateTime<Utc>, case_id: &CaseId, action: Action, actor: &UserId, roles: &[RoleId]) {
        let custom_id = InteractionCustomId::new(case_id.clone(), action).to_string();
        self.push(at, InboundInteraction::ButtonPressed {
            custom_id,
            actor: actor.clone(),
            actor_roles: roles.to_vec(),
        });
    }

    fn submit(&mut self, at: DateTime<Utc>, case_id: &CaseId, action: Action, actor: &UserId, text: String) {
        self.press(at, case_id, action, actor, &[]);
        let custom_id = InteractionCustomId::new(case_id.clone(), action).to_string();
        self.push(at, InboundInteraction::ModalSubmitted {
            custom_id,
            text_fields: BTreeMap::from([(MODAL_TEXT_FIELD.to_owned(), text)]),
            actor: actor.clone(),
            actor_roles: Vec::new(),
        });
    }

    /// Schedules answers to everything posted since the last call.
    fn observe(&mut self) {
        let fresh = self.platform.feed_from(self.cursor);
        self.cursor += fresh.len();
        for msg in fresh {
            let Some(first) = msg.buttons.first().and_then(|b| InteractionCustomId::parse(&b.custom_id).ok()) else {
                continue;
            };
            let case_id = first.case_id;
            // three draws per prompt, whatever the outcome
            let u_act: f64 = self.rng.random();
            let u_alt: f64 = self.rng.random();
            let who = match first.action.gate() {
                Gate::Victim => self.profile.victim,
                Gate::Offender => self.profile.offender,
                Gate::Moderator => self.profile.moderator,
            };
            let at = msg.at + who.delay.sample(&mut self.rng);
            let member = msg.member.clone();
            let moderator = self.moderator.clone();
            let roles = self.moderator_roles.clone();
            match first.action {
                Action::VreqYes | Action::VreqNo => {
                    let Some(victim) = member else { continue };
                    if u_act < who.p_engage {
                        let text = "I would like an apology for what was said to me.".to_owned();
                        self.submit(at, &case_id, Action::VreqYes, &victim, text);
                    } else if u_alt < who.p_explicit_decline {
                        self.press(at, &case_id, Action::VreqNo, &victim, &[]);
                    }
                }
                Action::OapoYes | Action::OapoNo => {
                    let Some(offender) = member else { continue };
                    let n = self.attempts.entry(case_id.clone()).or_default();
                    *n += 1;
                    let text = format!("I am sorry for what I said. It was not okay. (attempt {n})");
                    if u_act < who.p_engage {
                        self.submit(at, &case_id, Action::OapoYes, &offender, text);
                    } else if u_alt < who.p_explicit_decline {
                        self.press(at, &case_id, Action::OapoNo, &offender, &[]);
                    }
                }
                Action::VfinOk | Action::VfinNo => {
                    let Some(victim) = member else { continue };
                    let action = if u_act < who.p_approve { Action::VfinOk } else { Action::VfinNo };
                    self.press(at, &case_id, action, &victim, &[]);
                }
                Action::MreqOk | Action::MreqNo | Action::MresOk | Action::MresNo => {
                    if u_act < who.p_engage {
                        let approve = u_alt < who.p_approve;
                        let action = match (first.action, approve) {
                            (Action::MreqOk | Action::MreqNo, true) => Action::MreqOk,
                            (Action::MreqOk | Action::MreqNo, false) => Action::MreqNo,
                            (_, true) => Action::MresOk,
                            (_, false) => Action::MresNo,
                        };
                        self.press(at, &case_id, action, &moderator, &roles);
                    }
                }
                Action::Unmute => {
                    if u_act < who.p_engage {
                        self.press(at, &case_id, Action::Unmute, &moderator, &roles);
                    }
                }
            }
        }
    }

    /// When the binding next wants to act, if ever.
    pub fn next_wakeup(&mut self) -> Option<DateTime<Utc>> {
        self.observe();
        self.queue.keys().next().map(|(at, _)| *at)
    }

    /// Interactions due at or before `now`, in order.
    pub fn step(&mut self, now: DateTime<Utc>) -> Vec<InboundInteraction> {
        self.observe();
        let later = self.queue.split_off(&(now + Duration::nanoseconds(1), 0));
        std::mem::replace(&mut self.queue, later).into_values().collect()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
