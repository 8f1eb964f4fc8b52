//! Every action pressed by every participant through the HTTP API.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use apolo_api::{router, Scope, Service, TokenTable};
use apolo_core::clock::VirtualClock;
use apolo_core::runtime::Mediator;

const SIM: &str = "sim-token";
const MOD: &str = "mod-token";

pub const ACTORS: [&str; 4] = ["vic", "off", "sim-moderator", "passerby"];

/// Action, the steps that reach the state where it is offered, and who may
/// press it.
pub fn table() -> Vec<(&'static str, Vec<&'static str>, &'static str)> {
    vec![
        ("vreq_yes", vec![], "vic"),
        ("vreq_no", vec![], "vic"),
        ("mreq_ok", vec!["vreq_yes"], "sim-moderator"),
        ("mreq_no", vec!["vreq_yes"], "sim-moderator"),
        ("oapo_yes", vec!["vreq_yes"], "off"),
        ("oapo_no", vec!["vreq_yes"], "off"),
        ("mres_ok", vec!["vreq_yes", "oapo_yes"], "sim-moderator"),
        ("mres_no", vec!["vreq_yes", "oapo_yes"], "sim-moderator"),
        ("vfin_ok", vec!["vreq_yes", "oapo_yes", "mres_ok"], "vic"),
        ("vfin_no", vec!["vreq_yes", "oapo_yes", "mres_ok"], "vic"),
        ("unmute", vec!["vreq_yes", "oapo_yes", "mres_ok", "vfin_ok"], "sim-moderator"),
    ]
}

fn owner(action: &str) -> &'static str {
    match action {
        "vreq_yes" | "vreq_no" | "vfin_ok" | "vfin_no" => "vic",
        "oapo_yes" | "oapo_no" => "off",
        _ => "sim-moderator",
    }
}

fn text(action: &str) -> Option<&'static str> {
    match action {
        "vreq_yes" => Some("Please apologize for what you said."),
        "oapo_yes" => Some("I apologize. It was out of line."),
        _ => None,
    }
}

async fn call(app: &Router, uri: &str, token: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("authorization", format!("Bearer {token}"))
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn press(app: &Router, case: &str, action: &str, actor: &str) -> (StatusCode, Value) {
    let mut body = json!({ "action": action, "actor": actor });
    if let Some(t) = text(action) {
        body["text"] = json!(t);
    }
    call(app, &format!("/v1/cases/{case}/actions"), MOD, body).await
}

/// Returns (action, actor, status) for all 44 presses.
pub async fn run() -> Result<Vec<(&'static str, &'static str, StatusCode)>, String> {
    let clock = Arc::new(VirtualClock::new(Utc.with_ymd_and_hms(2024, 7, 1, 12, 0, 0).unwrap()));
    let service = Arc::new(Service::new(Arc::new(Mediator::in_memory()), clock, true));
    let app = router(service, TokenTable::new([(SIM.into(), Scope::Sim), (MOD.into(), Scope::Moderate)]));
    let (s, v) = call(&app, "/v1/sim/communities", SIM, json!({ "community_id": "matrix" })).await;
    if s != StatusCode::CREATED {
        return Err(format!("community creation returned {s}: {v}"));
    }
    let mut out = Vec::new();
    for (action, setup, _) in table() {
        for actor in ACTORS {
            let body = json!({
                "community_id": "matrix", "offender": "off", "victim": "vic", "duration": "7d",
                "reason": "insult", "review_request": action.starts_with("mreq"),
            });
            let (s, v) = call(&app, "/v1/sim/cases", SIM, body).await;
            let case = v["case_id"].as_str().ok_or(format!("opening a case returned {s}: {v}"))?.to_owned();
            for step in &setup {
                let (s, v) = press(&app, &case, step, owner(step)).await;
                if s != StatusCode::OK {
                    return Err(format!("setup step {step} for {action} returned {s}: {v}"));
                }
            }
            let (s, _) = press(&app, &case, action, actor).await;
            out.push((action, actor, s));
        }
    }
    Ok(out)
}
