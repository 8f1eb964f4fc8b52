//! `run` and `register-commands`.

use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use tracing::{info, warn};

use apolo_api::{router, Service, TokenTable};
use apolo_core::adapter::executor::EffectLedger;
use apolo_core::adapter::sim::SimPlatform;
use apolo_core::adapter::{Platform, PlatformError};
use apolo_core::clock::{Clock, ScaledClock, SystemClock};
use apolo_core::runtime::{Community, Mediator, RecoveryReport};
use apolo_core::scheduler::Scheduler;
use apolo_core::store::EventStore;
use apolo_core::{CommunityId, UserId};
use apolo_discord::{BotToken, DiscordHttp, DiscordPlatform, DiscordSettings, InteractionVerifier, ReqwestTransport};

use crate::config::{BindingKind, ConfigFile, DiscordSection};
use crate::error::CliError;

const RELEASES_FILE: &str = "mute_releases.json";

fn platform_error(context: &str, e: PlatformError) -> CliError {
    match e {
        PlatformError::PermissionDenied(_) => CliError::Permission(format!("{context}: {e}")),
        other => CliError::Other(format!("{context}: {other}")),
    }
}

fn transport(d: &DiscordSection) -> Result<Arc<dyn DiscordHttp>, CliError> {
    let token = BotToken::new(d.bot_token.expose());
    let t = match &d.api_base {
        Some(base) => ReqwestTransport::with_base(token, base.clone()),
        None => ReqwestTransport::new(token),
    };
    Ok(Arc::new(t.map_err(CliError::other)?))
}

fn discord_platform(
    config: &ConfigFile,
    clock: Arc<dyn Clock>,
    http: Option<Arc<dyn DiscordHttp>>,
) -> Result<Arc<DiscordPlatform>, CliError> {
    let d = config.discord_ready()?;
    let http = match http {
        Some(h) => h,
        None => transport(d)?,
    };
    let settings = DiscordSettings {
        application_id: d.application_id.clone(),
        mute_role_id: d.mute_role_id.clone(),
        releases_path: Some(config.data_dir.join(RELEASES_FILE)),
    };
    Ok(Arc::new(DiscordPlatform::new(http, clock, settings)))
}

fn community_ids(config: &ConfigFile) -> Vec<CommunityId> {
    config.communities.iter().map(|c| c.id.clone()).collect()
}

/// Registers `/apolomute` everywhere. Registration overwrites the command
/// set, so repeating it is harmless.
pub fn register_commands(config: &ConfigFile, http: Option<Arc<dyn DiscordHttp>>) -> Result<Vec<CommunityId>, CliError> {
    let platform = discord_platform(config, Arc::new(SystemClock), http)?;
    let mut done = Vec::new();
    for (community, result) in apolo_discord::register_all(&platform, &community_ids(config)) {
        result.map_err(|e| platform_error(&format!("registering commands in {community}"), e))?;
        done.push(community);
    }
    Ok(done)
}

/// Everything `run` serves, assembled and recovered but not yet listening.
pub struct Prepared {
    pub service: Arc<Service>,
    pub tokens: TokenTable,
    pub discord: Option<Arc<DiscordPlatform>>,
    pub recovery: RecoveryReport,
    pub binding: BindingKind,
}

impl std::fmt::Debug for Prepared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Prepared").field("binding", &self.binding).field("recovery", &self.recovery).finish_non_exhaustive()
    }
}

fn sim_clock(store: &EventStore, rate: f64) -> Arc<dyn Clock> {
    if rate == 1.0 {
        return Arc::new(SystemClock);
    }
    // virtual time must not run behind what is already on disk
    let latest = store
        .case_ids()
        .iter()
        .flat_map(|id| store.events(id).last().map(|r| r.event.occurred_at))
        .max();
    let origin = latest.map_or_else(Utc::now, |t| t.max(Utc::now()));
    Arc::new(ScaledClock::new(origin, rate))
}

/// Opens the data directory, wires the binding, checks permissions,
/// registers commands and recovers pending work.
pub fn prepare(
    config: &ConfigFile,
    binding: BindingKind,
    allow_sim: bool,
    http: Option<Arc<dyn DiscordHttp>>,
) -> Result<Prepared, CliError> {
    let verifier = match binding {
        BindingKind::Discord => {
            let d = config.discord_ready()?;
            Some(InteractionVerifier::from_hex(d.public_key.expose()).map_err(CliError::config)?)
        }
        BindingKind::Sim => None,
    };
    std::fs::create_dir_all(&config.data_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", config.data_dir.display())))?;
    let store = Arc::new(EventStore::open(&config.data_dir).map_err(CliError::other)?);
    let ledger = Arc::new(EffectLedger::open(&config.data_dir)?);
    let clock: Arc<dyn Clock> = match binding {
        BindingKind::Discord => Arc::new(SystemClock),
        BindingKind::Sim => sim_clock(&store, config.scheduler.sim_clock_rate),
    };
    let mediator = Arc::new(Mediator::new(store, Arc::new(Scheduler::new()), ledger));

    let mut discord = None;
    let (platform, bot): (Arc<dyn Platform>, Option<UserId>) = match binding {
        BindingKind::Discord => {
            let p = discord_platform(config, clock.clone(), http)?;
            let bot = p.current_user_id().map_err(|e| platform_error("looking up the bot user", e))?;
            for c in &config.communities {
                p.check_permissions(&c.id, &bot).map_err(|e| CliError::Permission(e.to_string()))?;
            }
            for (community, result) in apolo_discord::register_all(&p, &community_ids(config)) {
                result.map_err(|e| platform_error(&format!("registering commands in {community}"), e))?;
            }
            discord = Some(p.clone());
            (p, Some(bot))
        }
        BindingKind::Sim => (Arc::new(SimPlatform::new(clock.clone())), None),
    };
    for c in &config.communities {
        let mut policy = config.mediation_config(c);
        policy.bot_user_id = bot.clone();
        mediator.add_community(Community {
            id: c.id.clone(),
            config: policy,
            thread_parent: c.thread_parent_id.clone().unwrap_or_else(|| c.log_channel_id.clone()),
            platform: platform.clone(),
        });
    }

    let recovery = mediator.recover().map_err(CliError::other)?;
    info!(
        cases = recovery.cases,
        redelivered = recovery.redelivered,
        still_pending = recovery.still_pending,
        deadlines = recovery.deadlines.len(),
        "recovered"
    );
    let sim_enabled = binding == BindingKind::Sim || allow_sim || config.allow_sim;
    let mut service = Service::new(mediator, clock, sim_enabled);
    if let Some(v) = verifier {
        service = service.with_discord(v);
    }
    if config.api.tokens.is_empty() {
        warn!("no api tokens configured; only /v1/healthz will answer");
    }
    Ok(Prepared { service: Arc::new(service), tokens: config.token_table(), discord, recovery, binding })
}

/// Serves the API and drives deadlines until Ctrl-C.
pub async fn serve(prepared: Prepared, config: &ConfigFile) -> Result<(), CliError> {
    let addr = config.bind_addr()?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Other(format!("cannot listen on {addr}: {e}")))?;
    info!(%addr, binding = ?prepared.binding, sim = prepared.service.sim_enabled(), "listening");

    let service = prepared.service.clone();
    let discord = prepared.discord.clone();
    let period = Duration::from_secs(config.scheduler.tick_secs);
    let ticker = tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let service = service.clone();
            let discord = discord.clone();
            let done = tokio::task::spawn_blocking(move || {
                let report = service.tick();
                if let Some(d) = &discord {
                    d.release_due(service.now());
                }
                report
            })
            .await;
            match done {
                Ok(r) if r.applied + r.retried > 0 => info!(applied = r.applied, stale = r.stale, retried = r.retried, "tick"),
                Ok(_) => {}
                Err(e) => warn!(error = %e, "tick failed"),
            }
        }
    });

    let app = router(prepared.service, prepared.tokens);
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await;
    ticker.abort();
    result.map_err(CliError::other)
}
