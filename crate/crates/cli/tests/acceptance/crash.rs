//! Scripted cases replayed with a process kill after each event.
//!
//! A "process" is a mediator with its own store, scheduler and ledger opened
//! on a data directory. Killing it drops all in-memory state; the simulated
//! platform plays the outside world and survives.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde_json::Value;

use apolo_core::adapter::executor::EffectLedger;
use apolo_core::adapter::sim::{render_transcript, SimPlatform};
use apolo_core::adapter::{Action, InboundInteraction, InteractionCustomId, PlatformError, MODAL_TEXT_FIELD};
use apolo_core::clock::{Clock, VirtualClock};
use apolo_core::runtime::{Community, Mediator, Reply};
use apolo_core::scheduler::Scheduler;
use apolo_core::store::EventStore;
use apolo_core::{ApolomuteCommand, CaseId, ChannelId, CommunityId, MediationCase, MediationConfig, RoleId, UserId};

#[derive(Debug, Clone, Copy)]
pub enum Who {
    Victim,
    Offender,
    Moderator,
}

impl Who {
    fn user(self) -> UserId {
        UserId::new(match self {
            Who::Victim => "v1",
            Who::Offender => "o1",
            Who::Moderator => "m1",
        })
    }

    fn roles(self) -> Vec<RoleId> {
        match self {
            Who::Moderator => vec![RoleId::new("mods")],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Step {
    Open { community: &'static str, duration: &'static str, review: bool },
    Press(Action, Who),
    Say(Action, Who, &'static str),
    Cancel,
    /// Advance to the next armed deadline and fire it.
    Tick,
}

pub struct Scenario {
    pub name: &'static str,
    pub steps: Vec<Step>,
    pub state: &'static str,
    pub reason: &'static str,
}

fn open(community: &'static str, duration: &'static str, review: bool) -> Step {
    Step::Open { community, duration, review }
}

const ASK: Step = Step::Say(Action::VreqYes, Who::Victim, "Please apologize for the slur in #general.");
const SORRY: Step = Step::Say(Action::OapoYes, Who::Offender, "I am sorry. That was cruel and I will not repeat it.");
const MOD_OK: Step = Step::Press(Action::MresOk, Who::Moderator);
const MOD_NO: Step = Step::Press(Action::MresNo, Who::Moderator);
const ACCEPT: Step = Step::Press(Action::VfinOk, Who::Victim);
const UNMUTE: Step = Step::Press(Action::Unmute, Who::Moderator);

/// Twenty cases covering every closure reason, with their expected outcome
/// worked out by hand from the transition rules.
pub fn corpus() -> Vec<Scenario> {
    use Step::*;
    let s = |name, steps: Vec<Step>, state, reason| Scenario { name, steps, state, reason };
    let p = "closed_punitive";
    let r = "resolved_restored";
    vec![
        s("all approve", vec![open("g", "7d", false), ASK, SORRY, MOD_OK, ACCEPT, UNMUTE], r, "restored"),
        s("victim declines", vec![open("g", "7d", false), Press(Action::VreqNo, Who::Victim)], p, "victim_declined"),
        s("victim silent", vec![open("g", "7d", false), Tick], p, "victim_timeout"),
        s("offender declines", vec![open("g", "7d", false), ASK, Press(Action::OapoNo, Who::Offender)], p, "offender_declined"),
        s("offender silent", vec![open("g", "7d", false), ASK, Tick], p, "offender_timeout"),
        s("response rejected", vec![open("g", "7d", false), ASK, SORRY, MOD_NO], p, "response_rejected_final"),
        s("response review silent", vec![open("g", "7d", false), ASK, SORRY, Tick], p, "response_review_timeout"),
        s("victim rejects", vec![open("g", "7d", false), ASK, SORRY, MOD_OK, Press(Action::VfinNo, Who::Victim)], p, "victim_rejected"),
        s("verdict silent", vec![open("g", "7d", false), ASK, SORRY, MOD_OK, Tick], p, "verdict_timeout"),
        s("nobody unmutes", vec![open("g", "7d", false), ASK, SORRY, MOD_OK, ACCEPT, Tick], p, "unmute_window_elapsed"),
        s("short mute runs out", vec![open("g", "2h", false), ASK, Tick], p, "mute_elapsed"),
        s("moderator cancels", vec![open("g", "7d", false), ASK, Cancel], p, "moderator_cancelled"),
        s(
            "review then restore",
            vec![open("g", "7d", true), ASK, Press(Action::MreqOk, Who::Moderator), SORRY, MOD_OK, ACCEPT, UNMUTE],
            r,
            "restored",
        ),
        s("review rejects", vec![open("g", "7d", true), ASK, Press(Action::MreqNo, Who::Moderator)], p, "request_rejected"),
        s("review silent", vec![open("g", "7d", true), ASK, Tick], p, "request_review_timeout"),
        s("second attempt restores", vec![open("g-retry", "7d", false), ASK, SORRY, MOD_NO, SORRY, MOD_OK, ACCEPT, UNMUTE], r, "restored"),
        s("attempts exhausted", vec![open("g-retry", "7d", false), ASK, SORRY, MOD_NO, SORRY, MOD_NO], p, "response_rejected_final"),
        s("automatic unmute", vec![open("g-auto", "7d", false), ASK, SORRY, MOD_OK, ACCEPT], r, "restored"),
        s(
            "retry then decline",
            vec![open("g-retry", "7d", false), ASK, SORRY, MOD_NO, Press(Action::OapoNo, Who::Offender)],
            p,
            "offender_declined",
        ),
        s("mute ends awaiting unmute", vec![open("g", "3h", false), ASK, SORRY, MOD_OK, ACCEPT, Tick], p, "unmute_window_elapsed"),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kill {
    /// After the event and all of its effects.
    AfterEffects,
    /// After the event was persisted, before any effect ran.
    BeforeEffects,
    /// Partway through the effect batch (log posts never made it out).
    MidEffects,
    /// After the effects, losing the last ledger write.
    TornLedger,
}

pub const KILLS: [Kill; 4] = [Kill::AfterEffects, Kill::BeforeEffects, Kill::MidEffects, Kill::TornLedger];

pub struct Run {
    pub case: MediationCase,
    pub transcript: String,
    pub keys: Vec<String>,
    pub duplicates: usize,
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 6, 8, 0, 0).unwrap()
}

fn communities() -> Vec<(CommunityId, MediationConfig)> {
    let base = MediationConfig { moderator_role_ids: [RoleId::new("mods")].into(), ..MediationConfig::default() };
    vec![
        (CommunityId::new("g"), base.clone()),
        (CommunityId::new("g-retry"), MediationConfig { max_attempts: 2, ..base.clone() }),
        (CommunityId::new("g-auto"), MediationConfig { auto_unmute: true, ..base }),
    ]
}

fn boot(dir: &Path, world: &Arc<SimPlatform>) -> Result<Mediator, String> {
    let store = EventStore::open(dir).map_err(|e| e.to_string())?;
    let ledger = EffectLedger::open(dir).map_err(|e| e.to_string())?;
    let m = Mediator::new(Arc::new(store), Arc::new(Scheduler::new()), Arc::new(ledger));
    for (id, config) in communities() {
        m.add_community(Community { id, config, thread_parent: ChannelId::new("threads"), platform: world.clone() });
    }
    m.recover().map_err(|e| format!("recovery failed: {e}"))?;
    Ok(m)
}

/// Drops the final line of the effect ledger.
fn tear_ledger(dir: &Path) -> Result<(), String> {
    let path = dir.join("effects.ndjson");
    let raw = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut lines: Vec<&str> = raw.lines().collect();
    lines.pop();
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(&path, body).map_err(|e| e.to_string())
}

fn apply(m: &Mediator, clock: &VirtualClock, step: Step, case: &mut Option<CaseId>) -> Result<(), String> {
    let now = clock.now();
    let id = || case.clone().ok_or("no case opened yet".to_owned());
    let handle = |inbound: InboundInteraction| match m.handle(&inbound, now) {
        Ok(Reply::Applied(_)) => Ok(()),
        Ok(Reply::OpenModal(_)) => Err("expected an applied event, got a modal".to_owned()),
        Err(e) => Err(e.to_string()),
    };
    match step {
        Step::Open { community, duration, review } => {
            let cmd = ApolomuteCommand {
                community_id: CommunityId::new(community),
                invoker_id: Who::Moderator.user(),
                invoker_roles: Who::Moderator.roles(),
                offender_id: Who::Offender.user(),
                victim_id: Who::Victim.user(),
                duration: duration.into(),
                reason: "Slur in #general".into(),
                proof_ref: Some("https://cdn.example/proof.png".into()),
                review_request: review,
            };
            *case = Some(m.open_case(&cmd, now).map_err(|e| e.to_string())?.case.case_id);
            Ok(())
        }
        Step::Press(action, who) => handle(InboundInteraction::ButtonPressed {
            custom_id: InteractionCustomId::new(id()?, action).to_string(),
            actor: who.user(),
            actor_roles: who.roles(),
        }),
        Step::Say(action, who, text) => handle(InboundInteraction::ModalSubmitted {
            custom_id: InteractionCustomId::new(id()?, action).to_string(),
            text_fields: BTreeMap::from([(MODAL_TEXT_FIELD.to_owned(), text.to_owned())]),
            actor: who.user(),
            actor_roles: who.roles(),
        }),
        Step::Cancel => m
            .cancel(&id()?, &Who::Moderator.user(), &Who::Moderator.roles(), Some("settled in voice chat".into()), now)
            .map(|_| ())
            .map_err(|e| e.to_string()),
        Step::Tick => {
            let due = m.scheduler().next_due().ok_or("no deadline armed")?;
            clock.set(due);
            let report = m.tick(due);
            if report.transitions.len() != 1 {
                return Err(format!("deadline fired {} transitions", report.transitions.len()));
            }
            Ok(())
        }
    }
}

/// Plays a scenario, optionally killing the process after event `k`.
pub fn run(s: &Scenario, kill: Option<(usize, Kill)>) -> Result<Run, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clock = Arc::new(VirtualClock::new(epoch()));
    let world = Arc::new(SimPlatform::new(clock.clone()));
    let mut m = boot(dir.path(), &world)?;
    let mut case = None;
    for (i, step) in s.steps.iter().enumerate() {
        let k = i + 1;
        clock.set(epoch() + Duration::minutes(10 * i as i64));
        let killing = kill.filter(|(at, _)| *at == k).map(|(_, mode)| mode);
        let outage = || PlatformError::Unavailable("process killed".into());
        match killing {
            Some(Kill::BeforeEffects) => world.fail_always("*", outage()),
            Some(Kill::MidEffects) => world.fail_always("post_log", outage()),
            _ => {}
        }
        apply(&m, &clock, *step, &mut case).map_err(|e| format!("step {k}: {e}"))?;
        let version = m.store().version(case.as_ref().unwrap()).0;
        if version != k as u64 {
            return Err(format!("step {k} left the stream at version {version}"));
        }
        if let Some(mode) = killing {
            world.clear_faults();
            drop(m);
            if mode == Kill::TornLedger {
                tear_ledger(dir.path())?;
            }
            m = boot(dir.path(), &world)?;
        }
    }
    let case_id = case.ok_or("scenario opened no case")?;
    let final_case = m.load(&case_id).map_err(|e| e.to_string())?.ok_or("case vanished")?;
    let entries = world.transcript();
    let keys = entries
        .iter()
        .filter_map(|e| serde_json::to_value(e).ok()?.get("key").and_then(Value::as_str).map(str::to_owned))
        .collect();
    Ok(Run { case: final_case, transcript: render_transcript(&entries, true), keys, duplicates: world.duplicates() })
}

#[derive(Debug, Default)]
pub struct Summary {
    pub runs: usize,
    pub resent_and_deduplicated: usize,
}

/// Runs the whole corpus; the first discrepancy is returned as an error.
pub fn check_corpus() -> Result<Summary, String> {
    let mut summary = Summary::default();
    for s in corpus() {
        let base = run(&s, None).map_err(|e| format!("{}: {e}", s.name))?;
        let got = (base.case.state.as_str(), base.case.closure.as_ref().map(|c| c.reason.as_str()));
        if got != (s.state, Some(s.reason)) {
            return Err(format!("{}: uninterrupted run ended {got:?}, expected ({}, {})", s.name, s.state, s.reason));
        }
        let base_case = serde_json::to_value(&base.case).unwrap();
        for k in 1..s.steps.len() {
            for mode in KILLS {
                let tag = format!("{} / kill after event {k} / {mode:?}", s.name);
                let r = run(&s, Some((k, mode))).map_err(|e| format!("{tag}: {e}"))?;
                summary.runs += 1;
                if serde_json::to_value(&r.case).unwrap() != base_case {
                    return Err(format!(
                        "{tag}: recovered case differs ({:?}/{:?} vs {:?}/{:?})",
                        r.case.state,
                        r.case.closure.map(|c| c.reason),
                        base.case.state,
                        base.case.closure.as_ref().map(|c| c.reason)
                    ));
                }
                if r.transcript != base.transcript {
                    return Err(format!("{tag}: platform side effects differ from the uninterrupted run"));
                }
                let unique: BTreeSet<&String> = r.keys.iter().collect();
                if unique.len() != r.keys.len() {
                    return Err(format!("{tag}: an idempotency key reached the platform twice"));
                }
                match (mode, r.duplicates) {
                    (Kill::TornLedger, 0 | 1) => summary.resent_and_deduplicated += r.duplicates,
                    (_, 0) => {}
                    (_, n) => return Err(format!("{tag}: {n} completed calls were repeated")),
                }
            }
        }
    }
    Ok(summary)
}
