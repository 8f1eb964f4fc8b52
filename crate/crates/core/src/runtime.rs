//! The mediator: routes inbound interactions through the engine, persists
//! events, executes effects and fires deadlines.
//!
//! Every mutation of a case runs under that case's lock: load, transition,
//! append, execute effects. Effects that could not run because the platform
//! was unavailable are redelivered on the next [`Mediator::tick`] and on
//! [`Mediator::recover`], which replays each case's history through the
//! idempotency ledger so only unfinished effects reach the platform.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;
use tracing::{debug, info, warn};

use crate::adapter::executor::{EffectExecutor, EffectLedger, ExecError};
use crate::adapter::routing::{route_interaction, ModalSpec, RouteError, Routed};
use crate::adapter::{InboundInteraction, Platform};
use crate::engine::{
    open_case, open_from_event, transition, Actor, ApolomuteCommand, CaseEvent, EngineError,
    EventKind, MediationCase, MediationConfig, Role,
};
use crate::ids::{CaseId, ChannelId, CommunityId, RoleId, UserId};
use crate::scheduler::{Deadline, DeadlineSink, Delivery, FireReport, Scheduler};
use crate::store::{EventStore, StoreError, StreamVersion};

/// One community served by the mediator.
#[derive(Clone)]
pub struct Community {
    pub id: CommunityId,
    pub config: MediationConfig,
    /// Parent channel for private stakeholder threads.
    pub thread_parent: ChannelId,
    pub platform: Arc<dyn Platform>,
}

impl std::fmt::Debug for Community {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Community").field("id", &self.id).field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MediatorError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("unknown community {0}")]
    UnknownCommunity(CommunityId),
    #[error("effect ledger: {0}")]
    Ledger(std::io::Error),
}

impl MediatorError {
    /// The engine error behind this failure, if any.
    pub fn engine(&self) -> Option<&EngineError> {
        match self {
            MediatorError::Engine(e) | MediatorError::Store(StoreError::Rejected(e)) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applied {
    pub case: MediationCase,
    pub event: CaseEvent,
    /// False when a platform outage deferred some effects.
    pub effects_complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Applied(Applied),
    OpenModal(ModalSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub cases: usize,
    pub redelivered: usize,
    pub still_pending: usize,
    pub deadlines: Vec<Deadline>,
}

pub struct Mediator {
    store: Arc<EventStore>,
    scheduler: Arc<Scheduler>,
    ledger: Arc<EffectLedger>,
    communities: RwLock<BTreeMap<CommunityId, Community>>,
    locks: Mutex<HashMap<CaseId, Arc<Mutex<()>>>>,
    pending: Mutex<BTreeSet<CaseId>>,
    fired: Mutex<Vec<Applied>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TickReport {
    pub applied: usize,
    pub stale: usize,
    pub retried: usize,
    /// Transitions caused by deadlines, in firing order.
    pub transitions: Vec<Applied>,
}

impl std::fmt::Debug for Mediator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mediator").field("store", &self.store).finish_non_exhaustive()
    }
}

impl Mediator {
    pub fn new(store: Arc<EventStore>, scheduler: Arc<Scheduler>, ledger: Arc<EffectLedger>) -> Self {
        Self {
            store,
            scheduler,
            ledger,
            communities: RwLock::new(BTreeMap::new()),
            locks: Mutex::new(HashMap::new()),
            pending: Mutex::new(BTreeSet::new()),
            fired: Mutex::new(Vec::new()),
        }
    }

    /// Volatile mediator for simulations.
    pub fn in_memory() -> Self {
        Self::new(
            Arc::new(EventStore::in_memory()),
            Arc::new(Scheduler::new()),
            Arc::new(EffectLedger::in_memory()),
        )
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    pub fn scheduler(&self) -> &Arc<Scheduler> {
        &self.scheduler
    }

    pub fn ledger(&self) -> &Arc<EffectLedger> {
        &self.ledger
    }

    pub fn add_community(&self, community: Community) {
        self.communities.write().unwrap().insert(community.id.clone(), community);
    }

    pub fn community(&self, id: &CommunityId) -> Option<Community> {
        self.communities.read().unwrap().get(id).cloned()
    }

    pub fn communities(&self) -> Vec<CommunityId> {
        self.communities.read().unwrap().keys().cloned().collect()
    }

    pub fn load(&self, case_id: &CaseId) -> Result<Option<MediationCase>, MediatorError> {
        Ok(self.store.load(case_id)?.map(|(c, _)| c))
    }

    /// Case ids whose effects were deferred by an outage.
    pub fn pending_effects(&self) -> Vec<CaseId> {
        self.pending.lock().unwrap().iter().cloned().collect()
    }

    fn lock_for(&self, case_id: &CaseId) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(case_id.clone()).or_default().clone()
    }

    fn community_for(&self, id: &CommunityId) -> Result<Community, MediatorError> {
        self.community(id).ok_or_else(|| MediatorError::UnknownCommunity(id.clone()))
    }

    fn run_effects(
        &self,
        community: &Community,
        case: &MediationCase,
        event_seq: u64,
        effects: &[crate::engine::Effect],
        live: bool,
    ) -> Result<bool, MediatorError> {
        let exec = EffectExecutor {
            platform: community.platform.as_ref(),
            ledger: &self.ledger,
            config: &community.config,
            thread_parent: &community.thread_parent,
            scheduler: live.then_some(self.scheduler.as_ref()),
        };
        match exec.execute(case, event_seq, effects) {
            Ok(_) => Ok(true),
            Err(ExecError::Unavailable { key, detail }) => {
                debug!(%key, %detail, "effects deferred");
                self.pending.lock().unwrap().insert(case.case_id.clone());
                if live {
                    // deadlines come last in the batch; arm them regardless
                    for effect in effects.iter().filter(|e| e.is_deadline()) {
                        let exec = EffectExecutor { scheduler: Some(self.scheduler.as_ref()), ..exec };
                        exec.execute(case, event_seq, std::slice::from_ref(effect))
                            .map_err(|e| match e {
                                ExecError::Ledger(io) => MediatorError::Ledger(io),
                                ExecError::Unavailable { .. } => unreachable!(),
                            })?;
                    }
                }
                Ok(false)
            }
            Err(ExecError::Ledger(e)) => Err(MediatorError::Ledger(e)),
        }
    }

    /// Handles a validated `/apolomute` invocation.
    pub fn open_case(&self, command: &ApolomuteCommand, now: DateTime<Utc>) -> Result<Applied, MediatorError> {
        let community = self.community_for(&command.community_id)?;
        // validate before burning a case number
        open_case(command, &community.config, CaseId::from_number(0), 0, now)?;
        let (case_id, number) = self.store.allocate_case_id();
        let opened = open_case(command, &community.config, case_id.clone(), number, now)?;
        let lock = self.lock_for(&case_id);
        let _guard = lock.lock().unwrap();
        self.store.append(&case_id, StreamVersion(0), std::slice::from_ref(&opened.event))?;
        info!(%case_id, community = %community.id, "case opened");
        let complete = self.run_effects(&community, &opened.case, 1, &opened.effects, true)?;
        Ok(Applied { case: opened.case, event: opened.event, effects_complete: complete })
    }

    /// Appends one event at `expected` and executes its effects. The caller
    /// must hold the case lock.
    fn apply_locked(
        &self,
        case: &MediationCase,
        expected: StreamVersion,
        actor: Actor,
        kind: EventKind,
        now: DateTime<Utc>,
    ) -> Result<Applied, MediatorError> {
        let community = self.community_for(&case.community_id)?;
        let event = CaseEvent { event_seq: expected.0 + 1, occurred_at: now, actor, kind };
        let next = transition(case, &event)?;
        self.store.append(&case.case_id, expected, std::slice::from_ref(&event))?;
        let complete = self.run_effects(&community, &next.case, event.event_seq, &next.effects, true)?;
        Ok(Applied { case: next.case, event, effects_complete: complete })
    }

    fn load_required(&self, case_id: &CaseId) -> Result<MediationCase, MediatorError> {
        self.load(case_id)?.ok_or_else(|| RouteError::UnknownCase(case_id.clone()).into())
    }

    /// Appends against the current version, retrying once if another writer
    /// got there first.
    pub fn submit(
        &self,
        case_id: &CaseId,
        actor: Actor,
        kind: EventKind,
        now: DateTime<Utc>,
    ) -> Result<Applied, MediatorError> {
        let lock = self.lock_for(case_id);
        let _guard = lock.lock().unwrap();
        let mut retried = false;
        loop {
            let case = self.load_required(case_id)?;
            match self.apply_locked(&case, StreamVersion(case.version), actor.clone(), kind.clone(), now) {
                Err(MediatorError::Store(StoreError::VersionConflict { .. })) if !retried => retried = true,
                other => return other,
            }
        }
    }

    /// Appends only if the stream is exactly at `expected`.
    pub fn submit_expected(
        &self,
        case_id: &CaseId,
        expected: StreamVersion,
        actor: Actor,
        kind: EventKind,
        now: DateTime<Utc>,
    ) -> Result<Applied, MediatorError> {
        let lock = self.lock_for(case_id);
        let _guard = lock.lock().unwrap();
        let case = self.load_required(case_id)?;
        if case.version != expected.0 {
            return Err(StoreError::VersionConflict {
                case_id: case_id.clone(),
                expected,
                actual: StreamVersion(case.version),
            }
            .into());
        }
        self.apply_locked(&case, expected, actor, kind, now)
    }

    /// Routes and applies one inbound interaction.
    pub fn handle(&self, inbound: &InboundInteraction, now: DateTime<Utc>) -> Result<Reply, MediatorError> {
        let custom_id = match inbound {
            InboundInteraction::CommandInvoked(cmd) => return self.open_case(cmd, now).map(Reply::Applied),
            InboundInteraction::ButtonPressed { custom_id, .. }
            | InboundInteraction::ModalSubmitted { custom_id, .. } => custom_id,
        };
        let id = crate::adapter::InteractionCustomId::parse(custom_id)
            .map_err(|e| RouteError::Malformed(e.to_string()))?;
        let lock = self.lock_for(&id.case_id);
        let _guard = lock.lock().unwrap();
        let case = self.load(&id.case_id)?.ok_or_else(|| RouteError::UnknownCase(id.case_id.clone()))?;
        let community = self.community_for(&case.community_id)?;
        let routed = route_interaction(inbound, &community.config, |_| Some(case.clone()))?;
        match routed {
            Routed::OpenModal(spec) => Ok(Reply::OpenModal(spec)),
            Routed::Submit { expected, actor, kind, .. } => {
                self.apply_locked(&case, expected, actor, kind, now).map(Reply::Applied)
            }
            Routed::OpenCase(_) => unreachable!("commands return early"),
        }
    }

    /// Moderator cancellation. `roles` must include a configured moderator role.
    pub fn cancel(
        &self,
        case_id: &CaseId,
        actor: &UserId,
        roles: &[RoleId],
        note: Option<String>,
        now: DateTime<Utc>,
    ) -> Result<Applied, MediatorError> {
        let case = self.load_required(case_id)?;
        let community = self.community_for(&case.community_id)?;
        if !community.config.is_moderator(roles) {
            return Err(RouteError::Unauthorized.into());
        }
        self.submit(case_id, Actor::User(actor.clone()), EventKind::ModeratorCancelled { note }, now)
    }

    pub fn record_satisfaction(
        &self,
        case_id: &CaseId,
        actor: &UserId,
        role: Role,
        rating: u8,
        now: DateTime<Utc>,
    ) -> Result<Applied, MediatorError> {
        self.submit(case_id, Actor::User(actor.clone()), EventKind::SatisfactionRecorded { role, rating }, now)
    }

    /// Fires due deadlines and retries deferred effects.
    pub fn tick(&self, now: DateTime<Utc>) -> TickReport {
        self.retry_pending();
        let FireReport { applied, stale, retried } = self.scheduler.fire_due(now, self);
        let transitions = std::mem::take(&mut *self.fired.lock().unwrap());
        TickReport { applied, stale, retried, transitions }
    }

    fn retry_pending(&self) {
        let pending: Vec<CaseId> = std::mem::take(&mut *self.pending.lock().unwrap()).into_iter().collect();
        for case_id in pending {
            if let Err(e) = self.redeliver(&case_id) {
                warn!(%case_id, error = %e, "redelivery failed");
                self.pending.lock().unwrap().insert(case_id);
            }
        }
    }

    /// Replays every effect a case ever emitted through the ledger. Returns
    /// whether all of them are now complete.
    pub fn redeliver(&self, case_id: &CaseId) -> Result<bool, MediatorError> {
        let lock = self.lock_for(case_id);
        let _guard = lock.lock().unwrap();
        let records = self.store.events(case_id);
        let Some(first) = records.first() else { return Ok(true) };
        let (mut case, effects) = open_from_event(case_id.clone(), &first.event)?;
        let community = self.community_for(&case.community_id)?;
        self.pending.lock().unwrap().remove(case_id);
        if !self.run_effects(&community, &case, 1, &effects, false)? {
            return Ok(false);
        }
        for rec in &records[1..] {
            let t = transition(&case, &rec.event)?;
            case = t.case;
            if !self.run_effects(&community, &case, rec.event.event_seq, &t.effects, false)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Startup recovery: redeliver unfinished effects for every case and
    /// re-arm deadlines from the store.
    pub fn recover(&self) -> Result<RecoveryReport, MediatorError> {
        let before = self.ledger.len();
        let ids = self.store.case_ids();
        let mut report = RecoveryReport { cases: ids.len(), ..Default::default() };
        for case_id in &ids {
            let Some(case) = self.load(case_id)? else { continue };
            if self.community(&case.community_id).is_none() {
                warn!(%case_id, community = %case.community_id, "skipping case of unconfigured community");
                continue;
            }
            self.redeliver(case_id)?;
        }
        report.redelivered = self.ledger.len() - before;
        report.still_pending = self.pending.lock().unwrap().len();
        report.deadlines = self.scheduler.recover(&self.store);
        Ok(report)
    }
}

impl DeadlineSink for Mediator {
    fn deliver(&self, deadline: &Deadline, now: DateTime<Utc>) -> Delivery {
        let case = match self.load(&deadline.case_id) {
            Ok(Some(c)) => c,
            Ok(None) => return Delivery::Stale,
            Err(e) => {
                warn!(case_id = %deadline.case_id, error = %e, "cannot load case for deadline");
                return Delivery::Stale;
            }
        };
        if case.version != deadline.armed_for_version.0 || case.is_terminal() {
            return Delivery::Stale;
        }
        let kind = match deadline.kind {
            crate::engine::DeadlineKind::StageTimeout => EventKind::StageTimedOut { stage: case.state },
            crate::engine::DeadlineKind::MuteElapsed => EventKind::MuteElapsed,
        };
        match self.submit_expected(&deadline.case_id, deadline.armed_for_version, Actor::System, kind, now) {
            Ok(applied) => {
                self.fired.lock().unwrap().push(applied);
                Delivery::Applied
            }
            Err(MediatorError::Store(StoreError::VersionConflict { .. }))
            | Err(MediatorError::Engine(_))
            | Err(MediatorError::Store(StoreError::Rejected(_))) => Delivery::Stale,
            Err(e) => {
                warn!(case_id = %deadline.case_id, error = %e, "deadline delivery failed; will retry");
                Delivery::Retry
            }
        }
    }
}
