use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use apolo_core::adapter::sim::{BehaviorProfile, SimPlatform, SimulatedBinding};
use apolo_core::adapter::{Action, Gate, InboundInteraction, InteractionCustomId, MODAL_TEXT_FIELD};
use apolo_core::clock::Clock;
use apolo_core::engine::{next_deadline, ApolomuteCommand, MediationCase, NextDeadline, Role};
use apolo_core::metrics::sim::SIM_MODERATOR_ROLE;
use apolo_core::metrics::{classify_outcome, funnel, recidivism, recidivism_table, FunnelReport, OutcomeClass};
use apolo_core::runtime::{Community, Mediator, Reply, TickReport};
use apolo_core::store::{CaseFilter, CaseSummary, EventRecord, Page, PageRequest, TimeWindow};
use apolo_core::{CaseId, ChannelId, CommunityId, MediationConfig, RoleId, UserId};
use apolo_discord::InteractionVerifier;

use crate::auth::Scope;
use crate::error::ApiError;

pub const API_VERSION: &str = env!("CARGO_PKG_VERSION");

const DEFAULT_SIM_MODERATOR: &str = "sim-moderator";

/// Partial [`MediationConfig`] for a simulated community.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub default_stage_timeout: Option<u64>,
    pub max_attempts: Option<u32>,
    pub auto_unmute: Option<bool>,
    pub templates: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimCommunityRequest {
    pub community_id: Option<CommunityId>,
    /// When present, simulated stakeholders answer prompts on their own;
    /// otherwise every action comes through the API.
    pub profiles: Option<BehaviorProfile>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config: ConfigOverrides,
    /// Users treated as holding the moderator role.
    pub moderators: Option<Vec<UserId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCommunityCreated {
    pub community_id: CommunityId,
    pub moderators: Vec<UserId>,
    pub moderator_role: RoleId,
    pub config: MediationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSimCase {
    pub community_id: Option<CommunityId>,
    pub offender: UserId,
    pub victim: UserId,
    pub duration: String,
    pub reason: String,
    #[serde(default)]
    pub review_request: bool,
    pub proof_ref: Option<String>,
    /// Invoking moderator; defaults to the community's first moderator.
    pub moderator: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action: String,
    pub actor: UserId,
    /// Modal text for `vreq_yes` and `oapo_yes`.
    pub text: Option<String>,
    /// Roles of the actor in non-simulated communities. Ignored for
    /// simulated ones, whose moderator roster is known.
    #[serde(default)]
    pub actor_roles: Vec<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancelRequest {
    pub actor: UserId,
    pub note: Option<String>,
    #[serde(default)]
    pub actor_roles: Vec<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionRequest {
    pub actor: UserId,
    pub role: Role,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionView {
    pub action: Action,
    pub gate: Gate,
    pub needs_text: bool,
    pub custom_id: String,
}

/// A case plus what a client needs to render it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseView {
    #[serde(flatten)]
    pub case: MediationCase,
    pub outcome: Option<OutcomeClass>,
    pub next_deadline: Option<NextDeadline>,
    /// Buttons live in the current state, with who may press them.
    pub available_actions: Vec<ActionView>,
}

impl CaseView {
    pub fn new(case: MediationCase) -> Self {
        let available_actions = Action::ALL
            .into_iter()
            .filter(|a| a.state() == case.state)
            .map(|a| ActionView {
                action: a,
                gate: a.gate(),
                needs_text: a.needs_text(),
                custom_id: InteractionCustomId::new(case.case_id.clone(), a).to_string(),
            })
            .collect();
        Self {
            outcome: classify_outcome(&case).ok(),
            next_deadline: next_deadline(&case),
            available_actions,
            case,
        }
    }
}

struct SimCommunity {
    moderators: BTreeSet<UserId>,
    binding: Option<SimulatedBinding>,
}

pub struct Service {
    mediator: Arc<Mediator>,
    clock: Arc<dyn Clock>,
    sim_enabled: bool,
    sims: Mutex<BTreeMap<CommunityId, SimCommunity>>,
    discord: Option<InteractionVerifier>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("sim_enabled", &self.sim_enabled).finish_non_exhaustive()
    }
}

fn bad_query(e: impl std::fmt::Display) -> ApiError {
    ApiError::Invalid(e.to_string())
}

impl Service {
    pub fn new(mediator: Arc<Mediator>, clock: Arc<dyn Clock>, sim_enabled: bool) -> Self {
        Self { mediator, clock, sim_enabled, sims: Mutex::new(BTreeMap::new()), discord: None }
    }

    /// Accepts signed Discord interactions at `/v1/discord/interactions`.
    pub fn with_discord(mut self, verifier: InteractionVerifier) -> Self {
        self.discord = Some(verifier);
        self
    }

    pub fn mediator(&self) -> &Arc<Mediator> {
        &self.mediator
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn sim_enabled(&self) -> bool {
        self.sim_enabled
    }

    pub(crate) fn discord(&self) -> Option<&InteractionVerifier> {
        self.discord.as_ref()
    }

    fn require_sim(&self) -> Result<(), ApiError> {
        if self.sim_enabled {
            Ok(())
        } else {
            Err(ApiError::Forbidden("simulation endpoints are disabled while the Discord binding is active".into()))
        }
    }

    fn load(&self, id: &str) -> Result<MediationCase, ApiError> {
        let case_id = CaseId::parse(id).map_err(|_| ApiError::NotFound(format!("no case {id}")))?;
        self.mediator.load(&case_id)?.ok_or_else(|| ApiError::NotFound(format!("no case {id}")))
    }

    pub fn case(&self, id: &str) -> Result<CaseView, ApiError> {
        self.load(id).map(CaseView::new)
    }

    pub fn events(&self, id: &str) -> Result<Vec<EventRecord>, ApiError> {
        let case = self.load(id)?;
        Ok(self.mediator.store().events(&case.case_id))
    }

    pub fn list(&self, query: &BTreeMap<String, String>) -> Result<Page<CaseSummary>, ApiError> {
        let now = self.now();
        let filter = CaseFilter {
            community: query.get("community").map(CommunityId::new),
            state: query.get("state").map(|s| s.parse()).transpose().map_err(bad_query)?,
            offender: query.get("offender").map(UserId::new),
            window: query.get("window").map(|w| TimeWindow::parse(w, now)).transpose().map_err(bad_query)?,
        };
        let mut page = PageRequest::default();
        if let Some(p) = query.get("page") {
            page.page = p.parse().map_err(|_| bad_query(format!("bad page {p:?}")))?;
        }
        if let Some(p) = query.get("per_page") {
            page.per_page = p.parse().map_err(|_| bad_query(format!("bad per_page {p:?}")))?;
        }
        Ok(self.mediator.store().list_cases(&filter, page))
    }

    fn window(&self, query: &BTreeMap<String, String>) -> Result<TimeWindow, ApiError> {
        match query.get("window") {
            Some(w) => TimeWindow::parse(w, self.now()).map_err(bad_query),
            None => Ok(TimeWindow::all()),
        }
    }

    fn cases_in(&self, window: &TimeWindow, community: Option<&String>) -> Vec<MediationCase> {
        self.mediator
            .store()
            .all_cases()
            .into_iter()
            .filter(|c| window.contains(c.created_at))
            .filter(|c| community.is_none_or(|x| c.community_id.as_str() == x))
            .collect()
    }

    pub fn funnel(&self, query: &BTreeMap<String, String>) -> Result<FunnelReport, ApiError> {
        let window = self.window(query)?;
        Ok(funnel(&self.cases_in(&window, query.get("community"))))
    }

    pub fn recidivism(&self, query: &BTreeMap<String, String>) -> Result<serde_json::Value, ApiError> {
        let window = self.window(query)?;
        let cases = self.cases_in(&TimeWindow::all(), query.get("community"));
        Ok(match query.get("user") {
            Some(user) => {
                let user = UserId::new(user.as_str());
                serde_json::json!({ "user": user, "window": window, "count": recidivism(&cases, &user, &window) })
            }
            None => serde_json::json!({ "window": window, "offenders": recidivism_table(&cases, &window) }),
        })
    }

    pub fn create_sim_community(&self, req: SimCommunityRequest) -> Result<SimCommunityCreated, ApiError> {
        self.require_sim()?;
        if let Some(p) = &req.profiles {
            p.validate().map_err(ApiError::Invalid)?;
        }
        let mut config = MediationConfig {
            moderator_role_ids: [RoleId::new(SIM_MODERATOR_ROLE)].into(),
            log_channel_id: ChannelId::new("sim-log"),
            ..MediationConfig::default()
        };
        let o = req.config;
        if let Some(v) = o.default_stage_timeout {
            config.default_stage_timeout = v;
        }
        if let Some(v) = o.max_attempts {
            config.max_attempts = v;
        }
        if let Some(v) = o.auto_unmute {
            config.auto_unmute = v;
        }
        if let Some(t) = o.templates {
            config.templates.extend(t);
        }
        config.validate().map_err(|e| ApiError::Invalid(e.to_string()))?;
        let moderators: Vec<UserId> = match req.moderators {
            Some(m) if !m.is_empty() => m,
            Some(_) => return Err(ApiError::Invalid("a simulated community needs at least one moderator".into())),
            None => vec![UserId::new(DEFAULT_SIM_MODERATOR)],
        };

        let mut sims = self.sims.lock().unwrap();
        let id = match req.community_id {
            Some(id) => {
                if self.mediator.community(&id).is_some() {
                    return Err(ApiError::Conflict(format!("community {id} already exists")));
                }
                id
            }
            None => (1..)
                .map(|n| CommunityId::new(format!("sim-{n}")))
                .find(|c| self.mediator.community(c).is_none())
                .expect("unbounded id space"),
        };
        let platform = Arc::new(SimPlatform::new(self.clock.clone()));
        let role = RoleId::new(SIM_MODERATOR_ROLE);
        let binding = req.profiles.map(|profile| {
            SimulatedBinding::new(platform.clone(), profile, req.seed, moderators[0].clone(), vec![role.clone()])
        });
        self.mediator.add_community(Community {
            id: id.clone(),
            config: config.clone(),
            thread_parent: ChannelId::new("sim-threads"),
            platform,
        });
        sims.insert(id.clone(), SimCommunity { moderators: moderators.iter().cloned().collect(), binding });
        Ok(SimCommunityCreated { community_id: id, moderators, moderator_role: role, config })
    }

    pub fn open_sim_case(&self, req: OpenSimCase) -> Result<CaseView, ApiError> {
        self.require_sim()?;
        let (community, moderator) = {
            let sims = self.sims.lock().unwrap();
            let community = match req.community_id {
                Some(c) => c,
                None if sims.len() == 1 => sims.keys().next().unwrap().clone(),
                None => return Err(ApiError::Invalid("community_id is required when several simulated communities exist".into())),
            };
            let sim = sims.get(&community).ok_or_else(|| ApiError::NotFound(format!("no simulated community {community}")))?;
            let moderator = match req.moderator {
                Some(m) if sim.moderators.contains(&m) => m,
                Some(m) => return Err(ApiError::Forbidden(format!("{m} is not a moderator of {community}"))),
                None => sim.moderators.iter().next().unwrap().clone(),
            };
            (community, moderator)
        };
        let cmd = ApolomuteCommand {
            community_id: community,
            invoker_id: moderator,
            invoker_roles: vec![RoleId::new(SIM_MODERATOR_ROLE)],
            offender_id: req.offender,
            victim_id: req.victim,
            duration: req.duration,
            reason: req.reason,
            proof_ref: req.proof_ref,
            review_request: req.review_request,
        };
        let applied = self.mediator.open_case(&cmd, self.now())?;
        Ok(CaseView::new(applied.case))
    }

    /// Roles the API attributes to `actor` in `community`.
    fn roles_for(&self, community: &CommunityId, actor: &UserId, claimed: Vec<RoleId>) -> (bool, Vec<RoleId>) {
        match self.sims.lock().unwrap().get(community) {
            Some(sim) if sim.moderators.contains(actor) => (true, vec![RoleId::new(SIM_MODERATOR_ROLE)]),
            Some(_) => (true, Vec::new()),
            None => (false, claimed),
        }
    }

    pub fn action(&self, id: &str, scope: Scope, req: ActionRequest) -> Result<CaseView, ApiError> {
        let action: Action = req.action.parse().map_err(|_| ApiError::Invalid(format!("unknown action {:?}", req.action)))?;
        if action.gate() == Gate::Moderator && scope < Scope::Moderate {
            return Err(ApiError::Scope { needed: Scope::Moderate });
        }
        let case = self.load(id)?;
        let (is_sim, roles) = self.roles_for(&case.community_id, &req.actor, req.actor_roles);
        if !is_sim && scope < Scope::Moderate {
            // acting for members of a live community
            return Err(ApiError::Scope { needed: Scope::Moderate });
        }
        let custom_id = InteractionCustomId::new(case.case_id.clone(), action).to_string();
        let inbound = match (action.needs_text(), req.text) {
            (true, Some(text)) => InboundInteraction::ModalSubmitted {
                custom_id,
                text_fields: [(MODAL_TEXT_FIELD.to_owned(), text)].into(),
                actor: req.actor,
                actor_roles: roles,
            },
            (true, None) => {
                // authorization and staleness still take precedence
                let probe = InboundInteraction::ButtonPressed { custom_id, actor: req.actor, actor_roles: roles };
                return match self.mediator.handle(&probe, self.now())? {
                    Reply::OpenModal(_) => Err(ApiError::Invalid(format!("{action} needs a non-empty `text`"))),
                    Reply::Applied(a) => Ok(CaseView::new(a.case)),
                };
            }
            (false, _) => InboundInteraction::ButtonPressed { custom_id, actor: req.actor, actor_roles: roles },
        };
        match self.mediator.handle(&inbound, self.now())? {
            Reply::Applied(a) => Ok(CaseView::new(a.case)),
            Reply::OpenModal(_) => Err(ApiError::Invalid(format!("{action} needs a non-empty `text`"))),
        }
    }

    pub fn cancel(&self, id: &str, req: CancelRequest) -> Result<CaseView, ApiError> {
        let case = self.load(id)?;
        let (_, roles) = self.roles_for(&case.community_id, &req.actor, req.actor_roles);
        let a = self.mediator.cancel(&case.case_id, &req.actor, &roles, req.note, self.now())?;
        Ok(CaseView::new(a.case))
    }

    pub fn satisfaction(&self, id: &str, req: SatisfactionRequest) -> Result<CaseView, ApiError> {
        let case = self.load(id)?;
        let a = self.mediator.record_satisfaction(&case.case_id, &req.actor, req.role, req.rating, self.now())?;
        Ok(CaseView::new(a.case))
    }

    /// Lets simulated stakeholders act, then fires due deadlines.
    pub fn tick(&self) -> TickReport {
        let now = self.now();
        let mut sims = self.sims.lock().unwrap();
        for (community, sim) in sims.iter_mut() {
            let Some(binding) = sim.binding.as_mut() else { continue };
            for inbound in binding.step(now) {
                if let Err(e) = self.mediator.handle(&inbound, now) {
                    warn!(%community, error = %e, "simulated interaction rejected");
                }
            }
        }
        drop(sims);
        self.mediator.tick(now)
    }

    /// Ids of registered simulated communities.
    pub fn sim_communities(&self) -> Vec<CommunityId> {
        self.sims.lock().unwrap().keys().cloned().collect()
    }
}
