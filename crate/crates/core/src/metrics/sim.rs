//! Monte-Carlo runs of the full stack (engine, store, scheduler, executor)
//! against scripted stakeholders under a virtual clock.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Trial `i` of a run seeded
//! with `s` uses `ChaCha8Rng::seed_from_u64(s)` with its stream set to `i`,
//! so trials are independent of each other, of thread count and of order.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify_outcome, funnel, FunnelReport, OutcomeClass};
use crate::adapter::sim::{BehaviorProfile, SimPlatform, SimulatedBinding, TranscriptEntry};
use crate::adapter::InboundInteraction;
use crate::clock::{Clock, VirtualClock};
use crate::engine::config::DEFAULT_STAGE_TIMEOUT_SECS;
use crate::engine::{ApolomuteCommand, CaseEvent, CaseState, MediationCase, MediationConfig};
use crate::ids::{ChannelId, CommunityId, RoleId, UserId};
use crate::runtime::{Community, Mediator, Reply};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), stream = trial index";

/// Safety valve; a trial needs a few dozen steps at most.
const MAX_STEPS: usize = 10_000;

pub fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

pub const SIM_COMMUNITY: &str = "sim";
pub const SIM_MODERATOR: &str = "sim-moderator";
pub const SIM_MODERATOR_ROLE: &str = "sim-moderators";
pub const SIM_VICTIM: &str = "sim-victim";
pub const SIM_OFFENDER: &str = "sim-offender";

/// Everything that defines a simulated case apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSetup {
    pub victim: crate::adapter::sim::StakeholderProfile,
    pub offender: crate::adapter::sim::StakeholderProfile,
    pub moderator: crate::adapter::sim::StakeholderProfile,
    pub default_stage_timeout: u64,
    pub max_attempts: u32,
    pub auto_unmute: bool,
    pub mute_duration: String,
    pub review_request: bool,
}

impl Default for SimSetup {
    fn default() -> Self {
        let p = BehaviorProfile::default();
        Self {
            victim: p.victim,
            offender: p.offender,
            moderator: p.moderator,
            default_stage_timeout: DEFAULT_STAGE_TIMEOUT_SECS,
            max_attempts: 1,
            auto_unmute: false,
            mute_duration: "7d".into(),
            review_request: false,
        }
    }
}

impl SimSetup {
    pub fn profile(&self) -> BehaviorProfile {
        BehaviorProfile { victim: self.victim, offender: self.offender, moderator: self.moderator }
    }

    pub fn with_profile(mut self, profile: BehaviorProfile) -> Self {
        self.victim = profile.victim;
        self.offender = profile.offender;
        self.moderator = profile.moderator;
        self
    }

    pub fn mediation_config(&self) -> MediationConfig {
        MediationConfig {
            default_stage_timeout: self.default_stage_timeout,
            max_attempts: self.max_attempts,
            auto_unmute: self.auto_unmute,
            moderator_role_ids: [RoleId::new(SIM_MODERATOR_ROLE)].into(),
            log_channel_id: ChannelId::new("sim-log"),
            ..MediationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.profile().validate()?;
        self.mediation_config().validate().map_err(|e| e.to_string())?;
        crate::engine::MuteDuration::parse(&self.mute_duration).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn command(&self) -> ApolomuteCommand {
        ApolomuteCommand {
            community_id: CommunityId::new(SIM_COMMUNITY),
            invoker_id: UserId::new(SIM_MODERATOR),
            invoker_roles: vec![RoleId::new(SIM_MODERATOR_ROLE)],
            offender_id: UserId::new(SIM_OFFENDER),
            victim_id: UserId::new(SIM_VICTIM),
            duration: self.mute_duration.clone(),
            reason: "Repeated insults in #general".into(),
            proof_ref: None,
            review_request: self.review_request,
        }
    }
}

/// One simulated case, start to finish.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: u64,
    /// Case value as produced live, transition by transition.
    pub case: MediationCase,
    /// The persisted event list.
    pub events: Vec<CaseEvent>,
    pub inbound: Vec<(DateTime<Utc>, InboundInteraction)>,
    pub transcript: Vec<TranscriptEntry>,
}

pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs trial `index` of a run seeded with `seed`.
pub fn run_trial(setup: &SimSetup, seed: u64, index: u64) -> Trial {
    let clock = Arc::new(VirtualClock::new(sim_epoch()));
    let platform = Arc::new(SimPlatform::new(clock.clone()));
    let mediator = Mediator::in_memory();
    mediator.add_community(Community {
        id: CommunityId::new(SIM_COMMUNITY),
        config: setup.mediation_config(),
        thread_parent: ChannelId::new("sim-threads"),
        platform: platform.clone(),
    });
    let mut binding = SimulatedBinding::with_rng(
        platform.clone(),
        setup.profile(),
        trial_rng(seed, index),
        UserId::new(SIM_MODERATOR),
        vec![RoleId::new(SIM_MODERATOR_ROLE)],
    );

    let opened = mediator
        .open_case(&setup.command(), clock.now())
        .expect("simulation setup produces a valid command");
    let case_id = opened.case.case_id.clone();
    let mut live = opened.case;
    let mut inbound_log = Vec::new();

    for _ in 0..MAX_STEPS {
        let next = [binding.next_wakeup(), mediator.scheduler().next_due()].into_iter().flatten().min();
        let Some(now) = next else { break };
        clock.set(now);
        for inbound in binding.step(now) {
            if let Ok(Reply::Applied(a)) = mediator.handle(&inbound, now) {
                live = a.case;
            }
            inbound_log.push((now, inbound));
        }
        for a in mediator.tick(now).transitions {
            live = a.case;
        }
        if live.is_terminal() && binding.pending() == 0 {
            break;
        }
    }

    let events = mediator.store().events(&case_id).into_iter().map(|r| r.event).collect();
    Trial { index, case: live, events, inbound: inbound_log, transcript: platform.transcript() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_trials: u64,
    pub seed: u64,
    pub rng: String,
    pub setup: SimSetup,
    /// Count per outcome class; always lists all four classes.
    pub outcomes: BTreeMap<String, u64>,
    /// Count per closure reason.
    pub closure_reasons: BTreeMap<String, u64>,
    pub restored: u64,
    pub restoration_rate: f64,
    /// Mean of the 1-based index of the furthest stage reached.
    pub mean_stages_reached: f64,
    pub analytic_restoration_probability: f64,
    /// `sqrt(p (1 - p) / n)` at the analytic `p`.
    pub sigma: f64,
    pub within_3_sigma: bool,
    pub funnel: FunnelReport,
}

fn stage_index(stage: CaseState) -> u64 {
    CaseState::STAGES.iter().position(|s| *s == stage).map_or(0, |i| i as u64 + 1)
}

/// Runs `n_trials` independent cases in parallel and summarizes them.
pub fn simulate(setup: &SimSetup, n_trials: u64, seed: u64) -> SimReport {
    assert!(n_trials >= 1, "n_trials must be >= 1");
    let cases: Vec<MediationCase> =
        (0..n_trials).into_par_iter().map(|i| run_trial(setup, seed, i).case).collect();

    let mut outcomes: BTreeMap<String, u64> = OutcomeClass::NAMES.iter().map(|n| ((*n).to_owned(), 0)).collect();
    let mut reasons = BTreeMap::new();
    let mut stage_sum = 0u64;
    for case in &cases {
        let class = classify_outcome(case).map_or("open", |c| c.name());
        *outcomes.entry(class.to_owned()).or_default() += 1;
        if let Some(c) = &case.closure {
            *reasons.entry(c.reason.to_string()).or_default() += 1;
        }
        stage_sum += stage_index(case.furthest_stage);
    }
    let restored = outcomes["full_restoration"];
    let rate = restored as f64 / n_trials as f64;
    let p = analytic_restoration_probability(setup);
    let sigma = (p * (1.0 - p) / n_trials as f64).sqrt();
    SimReport {
        n_trials,
        seed,
        rng: RNG_ALGORITHM.into(),
        setup: setup.clone(),
        outcomes,
        closure_reasons: reasons,
        restored,
        restoration_rate: rate,
        mean_stages_reached: stage_sum as f64 / n_trials as f64,
        analytic_restoration_probability: p,
        sigma,
        within_3_sigma: (rate - p).abs() <= 3.0 * sigma + f64::EPSILON,
        funnel: funnel(&cases),
    }
}

/// Probability that a case is restored when every response arrives before
/// its deadline. The victim requests (`v`), the optional review approves,
/// then each attempt the offender answers (`o`) and a moderator approves it
/// (`m_e m_a`) or rejects it (`m_e (1 - m_a)`), allowing a retry while
/// attempts remain; finally the victim accepts (`f`) and, without automatic
/// unmuting, a moderator presses unmute (`m_e`).
pub fn analytic_restoration_probability(setup: &SimSetup) -> f64 {
    let v = setup.victim.p_engage;
    let f = setup.victim.p_approve;
    let o = setup.offender.p_engage;
    let me = setup.moderator.p_engage;
    let ma = setup.moderator.p_approve;
    let review = if setup.review_request { me * ma } else { 1.0 };
    let accept = o * me * ma;
    let retry = o * me * (1.0 - ma);
    let attempts: f64 = (0..setup.max_attempts.max(1)).map(|i| retry.powi(i as i32)).sum();
    let unmute = if setup.auto_unmute { 1.0 } else { me };
    v * review * accept * attempts * f * unmute
}
