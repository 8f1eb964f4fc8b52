//! Executes engine effects against a [`Platform`].
//!
//! Effect `n` of the event with sequence `s` on case `c` runs under key
//! `c:s:n`. Completed keys go to an append-only ledger so replaying a
//! case's effects after a crash only performs what never finished. Thread
//! ids a case created are recorded alongside.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::{error, warn};

use super::custom_id::{Action, InteractionCustomId};
use super::{
    log_thread_name, offender_thread_name, victim_thread_name, Button, ButtonStyle, IdempotencyKey,
    LogTarget, Platform, PlatformError, RenderedPrompt, ThreadRef,
};
use crate::engine::config::{
    render_template, TEMPLATE_LOG_UPDATE, TEMPLATE_OFFENDER_PROMPT, TEMPLATE_OFFENDER_REPROMPT,
    TEMPLATE_VICTIM_PROMPT, TEMPLATE_VICTIM_VERDICT,
};
use crate::engine::{CaseState, Effect, MediationCase, MediationConfig};
use crate::ids::{CaseId, ChannelId};
use crate::scheduler::{Deadline, Scheduler};
use crate::store::StreamVersion;

pub const LEDGER_FILE: &str = "effects.ndjson";
const LEDGER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckOutcome {
    Done,
    /// The platform refused; moderators were alerted and the case goes on.
    Denied,
    /// Folded into the preceding log message.
    Merged,
    /// Handed to the scheduler.
    Scheduled,
    /// Already recorded in the ledger; nothing was called.
    AlreadyDone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub key: IdempotencyKey,
    pub effect: &'static str,
    pub outcome: AckOutcome,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    /// A transient failure stopped the batch at `key`; later effects were
    /// not attempted and the whole batch can be redelivered.
    #[error("effect {key} deferred: {detail}")]
    Unavailable { key: IdempotencyKey, detail: String },
    #[error("effect ledger I/O: {0}")]
    Ledger(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRefs {
    pub victim_thread: Option<ThreadRef>,
    pub offender_thread: Option<ThreadRef>,
    pub log_thread: Option<ThreadRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RefSlot {
    VictimThread,
    OffenderThread,
    LogThread,
}

#[derive(Serialize, Deserialize)]
struct LedgerLine {
    v: u32,
    key: IdempotencyKey,
    case_id: CaseId,
    outcome: AckOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot: Option<RefSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thread: Option<ThreadRef>,
}

#[derive(Default)]
struct LedgerInner {
    file: Option<File>,
    done: HashMap<IdempotencyKey, AckOutcome>,
    refs: HashMap<CaseId, CaseRefs>,
}

/// Completed effect keys plus per-case thread references.
#[derive(Default)]
pub struct EffectLedger {
    path: Option<PathBuf>,
    inner: Mutex<LedgerInner>,
}

impl std::fmt::Debug for EffectLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectLedger").field("path", &self.path).finish_non_exhaustive()
    }
}

impl EffectLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) `dir/effects.ndjson`. A torn final line is ignored.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let path = dir.as_ref().join(LEDGER_FILE);
        let mut inner = LedgerInner::default();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                if !line.ends_with('\n') {
                    warn!(path = %path.display(), "dropping torn ledger line");
                    break;
                }
                match serde_json::from_str::<LedgerLine>(line.trim_end()) {
                    Ok(rec) => {
                        apply(&mut inner, rec);
                        good_len += n as u64;
                    }
                    Err(e) => {
                        warn!(path = %path.display(), error = %e, "dropping unreadable ledger tail");
                        break;
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
        }
        inner.file = Some(file);
        Ok(Self { path: Some(path), inner: Mutex::new(inner) })
    }

    pub fn is_done(&self, key: &IdempotencyKey) -> bool {
        self.inner.lock().unwrap().done.contains_key(key)
    }

    pub fn outcome(&self, key: &IdempotencyKey) -> Option<AckOutcome> {
        self.inner.lock().unwrap().done.get(key).copied()
    }

    pub fn refs(&self, case_id: &CaseId) -> CaseRefs {
        self.inner.lock().unwrap().refs.get(case_id).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(
        &self,
        case_id: &CaseId,
        key: &IdempotencyKey,
        outcome: AckOutcome,
        thread: Option<(RefSlot, ThreadRef)>,
    ) -> io::Result<()> {
        let (slot, thread) = thread.map_or((None, None), |(s, t)| (Some(s), Some(t)));
        let rec = LedgerLine {
            v: LEDGER_VERSION,
            key: key.clone(),
            case_id: case_id.clone(),
            outcome,
            slot,
            thread,
        };
        let mut inner = self.inner.lock().unwrap();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&rec).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        apply(&mut inner, rec);
        Ok(())
    }
}

fn apply(inner: &mut LedgerInner, rec: LedgerLine) {
    if let (Some(slot), Some(thread)) = (rec.slot, rec.thread) {
        let refs = inner.refs.entry(rec.case_id).or_default();
        match slot {
            RefSlot::VictimThread => refs.victim_thread = Some(thread),
            RefSlot::OffenderThread => refs.offender_thread = Some(thread),
            RefSlot::LogThread => refs.log_thread = Some(thread),
        }
    }
    inner.done.insert(rec.key, rec.outcome);
}

pub fn effect_key(case_id: &CaseId, event_seq: u64, ordinal: usize) -> IdempotencyKey {
    IdempotencyKey(format!("{case_id}:{event_seq}:{ordinal}"))
}

pub fn effect_name(effect: &Effect) -> &'static str {
    match effect {
        Effect::MuteOffender { .. } => "mute_offender",
        Effect::CreateVictimThread => "create_victim_thread",
        Effect::PromptVictimRequest => "prompt_victim_request",
        Effect::CreateOffenderThread => "create_offender_thread",
        Effect::PromptOffenderApology { .. } => "prompt_offender_apology",
        Effect::ForwardApologyToVictim { .. } => "forward_apology_to_victim",
        Effect::PostLogUpdate { .. } => "post_log_update",
        Effect::OfferUnmuteButton => "offer_unmute_button",
        Effect::UnmuteOffender => "unmute_offender",
        Effect::ArchiveThreads => "archive_threads",
        Effect::ArmDeadline { .. } => "arm_deadline",
        Effect::CancelDeadline { .. } => "cancel_deadline",
    }
}

fn button(case: &MediationCase, action: Action, label: &str, style: ButtonStyle) -> Button {
    Button {
        custom_id: InteractionCustomId::new(case.case_id.clone(), action).to_string(),
        label: label.to_owned(),
        style,
    }
}

/// Buttons attached to each kind of prompt.
pub fn buttons_for(case: &MediationCase, effect: &Effect) -> Vec<Button> {
    use ButtonStyle::{Danger, Primary, Success};
    match effect {
        Effect::PromptVictimRequest => vec![
            button(case, Action::VreqYes, "Request an apology", Success),
            button(case, Action::VreqNo, "No thanks", Danger),
        ],
        Effect::PromptOffenderApology { .. } => vec![
            button(case, Action::OapoYes, "Write an apology", Success),
            button(case, Action::OapoNo, "Decline", Danger),
        ],
        Effect::ForwardApologyToVictim { .. } => vec![
            button(case, Action::VfinOk, "Accept", Success),
            button(case, Action::VfinNo, "Do not accept", Danger),
        ],
        Effect::PostLogUpdate { stage: CaseState::AwaitRequestReview, .. } => vec![
            button(case, Action::MreqOk, "Approve request", Success),
            button(case, Action::MreqNo, "Reject request", Danger),
        ],
        Effect::PostLogUpdate { stage: CaseState::AwaitResponseReview, .. } => vec![
            button(case, Action::MresOk, "Approve apology", Success),
            button(case, Action::MresNo, "Reject apology", Danger),
        ],
        Effect::OfferUnmuteButton => vec![button(case, Action::Unmute, "Unmute offender", Primary)],
        _ => Vec::new(),
    }
}

/// Maps effects onto one community's platform binding.
pub struct EffectExecutor<'a> {
    pub platform: &'a dyn Platform,
    pub ledger: &'a EffectLedger,
    pub config: &'a MediationConfig,
    /// Channel private threads are created under.
    pub thread_parent: &'a ChannelId,
    /// Receives deadline effects. `None` when replaying history, where the
    /// scheduler is rebuilt separately.
    pub scheduler: Option<&'a Scheduler>,
}

impl EffectExecutor<'_> {
    /// Runs `effects` emitted by the event `event_seq`. `case` is the case
    /// value after that event.
    pub fn execute(
        &self,
        case: &MediationCase,
        event_seq: u64,
        effects: &[Effect],
    ) -> Result<Vec<Ack>, ExecError> {
        let mut acks = Vec::with_capacity(effects.len());
        let mut merged_next = false;
        for (i, effect) in effects.iter().enumerate() {
            let key = effect_key(&case.case_id, event_seq, i + 1);
            let name = effect_name(effect);
            if effect.is_deadline() {
                if let Some(scheduler) = self.scheduler {
                    match effect {
                        Effect::ArmDeadline { kind, at } => scheduler.arm(Deadline {
                            case_id: case.case_id.clone(),
                            kind: *kind,
                            at: *at,
                            armed_for_version: StreamVersion(event_seq),
                        }),
                        Effect::CancelDeadline { kind } => scheduler.cancel(&case.case_id, *kind),
                        _ => unreachable!(),
                    }
                }
                acks.push(Ack { key, effect: name, outcome: AckOutcome::Scheduled });
                continue;
            }
            if std::mem::take(&mut merged_next) {
                if !self.ledger.is_done(&key) {
                    self.ledger.record(&case.case_id, &key, AckOutcome::Merged, None)?;
                }
                acks.push(Ack { key, effect: name, outcome: AckOutcome::Merged });
                continue;
            }
            if self.ledger.is_done(&key) {
                acks.push(Ack { key, effect: name, outcome: AckOutcome::AlreadyDone });
                // keep the merge decision stable on replay
                merged_next = matches!(effects.get(i + 1), Some(Effect::OfferUnmuteButton))
                    && matches!(effect, Effect::PostLogUpdate { .. });
                continue;
            }
            let mut extra_buttons = Vec::new();
            if let (Effect::PostLogUpdate { .. }, Some(Effect::OfferUnmuteButton)) = (effect, effects.get(i + 1)) {
                extra_buttons = buttons_for(case, &Effect::OfferUnmuteButton);
                merged_next = true;
            }
            let outcome = self.run_one(case, event_seq, &key, effect, extra_buttons)?;
            acks.push(Ack { key, effect: name, outcome });
        }
        Ok(acks)
    }

    fn params(&self, case: &MediationCase) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("victim_name".to_owned(), self.platform.mention(&case.victim_id)),
            ("offender_name".to_owned(), self.platform.mention(&case.offender_id)),
            ("reason".to_owned(), case.reason.clone()),
            ("duration".to_owned(), case.mute_duration.to_string()),
            ("case_number".to_owned(), case.case_number.to_string()),
        ])
    }

    fn prompt(&self, case: &MediationCase, template: &str, extra: &[(&str, &str)]) -> RenderedPrompt {
        let mut params = self.params(case);
        for (k, v) in extra {
            params.insert((*k).to_owned(), (*v).to_owned());
        }
        let text = render_template(self.config.template(template), &params);
        RenderedPrompt { template: template.to_owned(), params, text }
    }

    pub fn render_log(&self, case: &MediationCase, stage: CaseState, summary: &str) -> String {
        let mut params = self.params(case);
        params.insert("stage".into(), stage.label().into());
        params.insert("summary".into(), summary.into());
        render_template(self.config.template(TEMPLATE_LOG_UPDATE), &params)
    }

    fn log_target(&self, case: &MediationCase) -> LogTarget {
        LogTarget {
            channel: self.config.log_channel_id.clone(),
            thread: self.ledger.refs(&case.case_id).log_thread,
            thread_name: log_thread_name(case.case_number),
        }
    }

    fn post_log(
        &self,
        case: &MediationCase,
        key: &IdempotencyKey,
        text: &str,
        buttons: &[Button],
        attachments: &[String],
    ) -> Result<(), PlatformError> {
        let target = self.log_target(case);
        let posted = self.platform.post_log(key, &case.community_id, &target, text, buttons, attachments)?;
        if target.thread.as_ref() != Some(&posted.thread) {
            // remember the per-case thread the first post created
            self.ledger
                .record(&case.case_id, &key.sub("log_thread"), AckOutcome::Done, Some((RefSlot::LogThread, posted.thread)))
                .map_err(|e| PlatformError::Unavailable(e.to_string()))?;
        }
        Ok(())
    }

    fn run_one(
        &self,
        case: &MediationCase,
        event_seq: u64,
        key: &IdempotencyKey,
        effect: &Effect,
        extra_buttons: Vec<Button>,
    ) -> Result<AckOutcome, ExecError> {
        let refs = self.ledger.refs(&case.case_id);
        let mut slot = None;
        let missing = |which: &str| PlatformError::Rejected(format!("{which} thread was never created"));
        let result: Result<(), PlatformError> = (|| {
            match effect {
                Effect::MuteOffender { until } => {
                    self.platform.mute(key, &case.community_id, &case.offender_id, *until)
                }
                Effect::UnmuteOffender => self.platform.unmute(key, &case.community_id, &case.offender_id),
                Effect::CreateVictimThread => {
                    let name = victim_thread_name(&case.case_id);
                    let t = self.platform.create_private_thread(key, &case.community_id, self.thread_parent, &case.victim_id, &name)?;
                    slot = Some((RefSlot::VictimThread, t));
                    Ok(())
                }
                Effect::CreateOffenderThread => {
                    let name = offender_thread_name(&case.case_id);
                    let t = self.platform.create_private_thread(key, &case.community_id, self.thread_parent, &case.offender_id, &name)?;
                    slot = Some((RefSlot::OffenderThread, t));
                    Ok(())
                }
                Effect::PromptVictimRequest => {
                    let thread = refs.victim_thread.as_ref().ok_or_else(|| missing("victim"))?;
                    let p = self.prompt(case, TEMPLATE_VICTIM_PROMPT, &[]);
                    self.platform.post_prompt(key, thread, &p, &buttons_for(case, effect)).map(drop)
                }
                Effect::PromptOffenderApology { quoted_request, retry } => {
                    let thread = refs.offender_thread.as_ref().ok_or_else(|| missing("offender"))?;
                    let template = if *retry { TEMPLATE_OFFENDER_REPROMPT } else { TEMPLATE_OFFENDER_PROMPT };
                    let p = self.prompt(case, template, &[("request_text", quoted_request)]);
                    self.platform.post_prompt(key, thread, &p, &buttons_for(case, effect)).map(drop)
                }
                Effect::ForwardApologyToVictim { response_text } => {
                    let thread = refs.victim_thread.as_ref().ok_or_else(|| missing("victim"))?;
                    let p = self.prompt(case, TEMPLATE_VICTIM_VERDICT, &[("response_text", response_text)]);
                    self.platform.post_prompt(key, thread, &p, &buttons_for(case, effect)).map(drop)
                }
                Effect::PostLogUpdate { stage, summary } => {
                    let text = self.render_log(case, *stage, summary);
                    let mut buttons = buttons_for(case, effect);
                    buttons.extend(extra_buttons.iter().cloned());
                    let attachments: Vec<String> = if event_seq == 1 {
                        case.proof_ref.iter().cloned().collect()
                    } else {
                        Vec::new()
                    };
                    self.post_log(case, key, &text, &buttons, &attachments)
                }
                Effect::OfferUnmuteButton => {
                    let text = self.render_log(case, case.state, "The offender can now be unmuted.");
                    self.post_log(case, key, &text, &buttons_for(case, effect), &[])
                }
                Effect::ArchiveThreads => {
                    for (suffix, thread) in [("victim", &refs.victim_thread), ("offender", &refs.offender_thread)] {
                        let Some(thread) = thread else { continue };
                        let sub = key.sub(suffix);
                        if self.ledger.is_done(&sub) {
                            continue;
                        }
                        self.platform.archive_thread(&sub, thread)?;
                        self.ledger
                            .record(&case.case_id, &sub, AckOutcome::Done, None)
                            .map_err(|e| PlatformError::Unavailable(e.to_string()))?;
                    }
                    Ok(())
                }
                Effect::ArmDeadline { .. } | Effect::CancelDeadline { .. } => unreachable!(),
            }
        })();

        match result {
            Ok(()) => {
                self.ledger.record(&case.case_id, key, AckOutcome::Done, slot)?;
                Ok(AckOutcome::Done)
            }
            Err(PlatformError::Unavailable(detail)) => {
                warn!(%key, %detail, "platform unavailable; effect batch deferred");
                Err(ExecError::Unavailable { key: key.clone(), detail })
            }
            Err(err @ (PlatformError::PermissionDenied(_) | PlatformError::Rejected(_))) => {
                self.alert(case, key, effect, &err)?;
                self.ledger.record(&case.case_id, key, AckOutcome::Denied, None)?;
                Ok(AckOutcome::Denied)
            }
        }
    }

    /// Tells moderators an effect could not be carried out. A failed mute
    /// is critical: the offender is not actually restrained.
    fn alert(
        &self,
        case: &MediationCase,
        key: &IdempotencyKey,
        effect: &Effect,
        err: &PlatformError,
    ) -> Result<(), ExecError> {
        let summary = match effect {
            Effect::MuteOffender { .. } => {
                error!(case_id = %case.case_id, %err, "could not mute offender");
                format!("CRITICAL: the offender could not be muted ({err}). Please mute them manually.")
            }
            other => {
                warn!(case_id = %case.case_id, effect = effect_name(other), %err, "effect failed");
                format!("Warning: {} failed ({err}).", effect_name(other).replace('_', " "))
            }
        };
        let alert_key = key.sub("alert");
        if self.ledger.is_done(&alert_key) {
            return Ok(());
        }
        let text = self.render_log(case, case.state, &summary);
        match self.post_log(case, &alert_key, &text, &[], &[]) {
            Ok(()) => {
                self.ledger.record(&case.case_id, &alert_key, AckOutcome::Done, None)?;
            }
            Err(PlatformError::Unavailable(detail)) => {
                return Err(ExecError::Unavailable { key: alert_key, detail });
            }
            Err(e) => error!(case_id = %case.case_id, error = %e, "could not post alert to the log channel"),
        }
        Ok(())
    }
}
