use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, TimeZone, Utc};
use ring::rand::SystemRandom;
use ring::signature::{Ed25519KeyPair, KeyPair};
use serde_json::{json, Value};

use apolo_core::adapter::{IdempotencyKey, InboundInteraction, LogTarget, Platform, PlatformError};
use apolo_core::clock::VirtualClock;
use apolo_core::runtime::{Community, Mediator};
use apolo_core::{ChannelId, CommunityId, MediationConfig, RoleId, UserId};
use apolo_discord::{
    handle_request, parse_interaction, ApiRequest, ApiResponse, DiscordHttp, DiscordPlatform, DiscordSettings,
    InteractionVerifier, Method, Parsed, TransportError,
};

#[derive(Default)]
struct FakeHttp {
    log: Mutex<Vec<ApiRequest>>,
    scripted: Mutex<HashMap<(&'static str, String), Vec<ApiResponse>>>,
    files: HashMap<String, Vec<u8>>,
    next_id: Mutex<u64>,
}

impl FakeHttp {
    fn script(&self, method: Method, path: &str, status: u16, body: Value) {
        self.scripted.lock().unwrap().entry((method.as_str(), path.to_owned())).or_default().push(ApiResponse { status, body });
    }

    fn calls(&self) -> Vec<String> {
        self.log.lock().unwrap().iter().map(|r| format!("{} {}", r.method.as_str(), r.path)).collect()
    }

    fn requests(&self) -> Vec<ApiRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl DiscordHttp for FakeHttp {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        self.log.lock().unwrap().push(request.clone());
        let key = (request.method.as_str(), request.path.clone());
        if let Some(queue) = self.scripted.lock().unwrap().get_mut(&key) {
            if !queue.is_empty() {
                return Ok(queue.remove(0));
            }
        }
        if request.method == Method::Post {
            let mut n = self.next_id.lock().unwrap();
            *n += 1;
            return Ok(ApiResponse { status: 200, body: json!({ "id": format!("9{:02}", *n) }) });
        }
        Ok(ApiResponse { status: 204, body: Value::Null })
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        self.files.get(url).cloned().ok_or(TransportError::Status(404))
    }
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()
}

fn platform(http: Arc<FakeHttp>, mute_role: Option<&str>) -> DiscordPlatform {
    let settings = DiscordSettings {
        application_id: "APP".into(),
        mute_role_id: mute_role.map(RoleId::new),
        releases_path: None,
    };
    DiscordPlatform::new(http, Arc::new(VirtualClock::new(t0())), settings)
}

fn key(s: &str) -> IdempotencyKey {
    IdempotencyKey(s.into())
}

#[test]
fn registration_is_a_bulk_overwrite() {
    let http = Arc::new(FakeHttp::default());
    let p = platform(http.clone(), None);
    p.ensure_commands_registered(&CommunityId::new("G1")).unwrap();
    p.ensure_commands_registered(&CommunityId::new("G1")).unwrap();
    let reqs = http.requests();
    assert_eq!(http.calls(), ["PUT /applications/APP/guilds/G1/commands"; 2]);
    assert_eq!(reqs[0].body, reqs[1].body);
    let types: Vec<u64> =
        reqs[0].body.as_ref().unwrap()[0]["options"].as_array().unwrap().iter().map(|o| o["type"].as_u64().unwrap()).collect();
    assert_eq!(types, [6, 6, 3, 3, 11, 5]);
}

#[test]
fn seven_days_uses_the_timeout_endpoint() {
    let http = Arc::new(FakeHttp::default());
    let p = platform(http.clone(), Some("MUTED"));
    p.mute(&key("1:1:1"), &"G1".into(), &"U2".into(), t0() + Duration::days(7)).unwrap();
    assert_eq!(http.calls(), ["PATCH /guilds/G1/members/U2"]);
    assert_eq!(http.requests()[0].body.as_ref().unwrap()["communication_disabled_until"], "2024-03-08T09:00:00Z");
    // same key: no second call
    p.mute(&key("1:1:1"), &"G1".into(), &"U2".into(), t0() + Duration::days(7)).unwrap();
    assert_eq!(http.calls().len(), 1);
}

#[test]
fn sixty_days_falls_back_to_the_mute_role() {
    let dir = tempfile::tempdir().unwrap();
    let http = Arc::new(FakeHttp::default());
    let settings = DiscordSettings {
        application_id: "APP".into(),
        mute_role_id: Some(RoleId::new("MUTED")),
        releases_path: Some(dir.path().join("releases.json")),
    };
    let p = DiscordPlatform::new(http.clone(), Arc::new(VirtualClock::new(t0())), settings.clone());
    let until = t0() + Duration::days(60);
    p.mute(&key("1:1:1"), &"G1".into(), &"U2".into(), until).unwrap();
    assert_eq!(http.calls(), ["PUT /guilds/G1/members/U2/roles/MUTED"]);

    // the pending release survives a restart
    let p = DiscordPlatform::new(http.clone(), Arc::new(VirtualClock::new(t0())), settings);
    assert_eq!(p.pending_releases().len(), 1);
    assert!(p.release_due(until - Duration::seconds(1)).is_empty());
    assert_eq!(p.release_due(until).len(), 1);
    assert_eq!(http.calls().last().unwrap(), "DELETE /guilds/G1/members/U2/roles/MUTED");
    assert!(p.pending_releases().is_empty());
}

#[test]
fn long_mute_without_role_is_rejected() {
    let http = Arc::new(FakeHttp::default());
    let p = platform(http.clone(), None);
    let err = p.mute(&key("k"), &"G1".into(), &"U2".into(), t0() + Duration::days(29)).unwrap_err();
    assert!(matches!(err, PlatformError::Rejected(_)));
    assert!(http.calls().is_empty());
}

#[test]
fn unmute_clears_timeout_or_role() {
    let http = Arc::new(FakeHttp::default());
    let p = platform(http.clone(), Some("MUTED"));
    p.unmute(&key("a"), &"G1".into(), &"U2".into()).unwrap();
    assert_eq!(http.requests()[0].body.as_ref().unwrap()["communication_disabled_until"], Value::Null);
    p.mute(&key("b"), &"G1".into(), &"U3".into(), t0() + Duration::days(90)).unwrap();
    p.unmute(&key("c"), &"G1".into(), &"U3".into()).unwrap();
    assert_eq!(http.calls().last().unwrap(), "DELETE /guilds/G1/members/U3/roles/MUTED");
    assert!(p.pending_releases().is_empty());
}

#[test]
fn errors_map_to_platform_errors() {
    let http = Arc::new(FakeHttp::default());
    http.script(Method::Patch, "/guilds/G1/members/U2", 403, json!({ "message": "Missing Permissions", "code": 50013 }));
    http.script(Method::Patch, "/guilds/G1/members/U2", 503, json!({}));
    http.script(Method::Patch, "/guilds/G1/members/U2", 404, json!({ "message": "Unknown Member", "code": 10007 }));
    let p = platform(http.clone(), None);
    let until = t0() + Duration::hours(1);
    let e = p.mute(&key("1"), &"G1".into(), &"U2".into(), until).unwrap_err();
    assert_eq!(e, PlatformError::PermissionDenied("HTTP 403 (50013): Missing Permissions".into()));
    assert!(matches!(p.mute(&key("1"), &"G1".into(), &"U2".into(), until), Err(PlatformError::Unavailable(_))));
    assert!(matches!(p.mute(&key("1"), &"G1".into(), &"U2".into(), until), Err(PlatformError::Rejected(_))));
}

#[test]
fn private_thread_is_created_once_and_member_added() {
    let http = Arc::new(FakeHttp::default());
    http.script(Method::Put, "/channels/901/thread-members/U1", 503, json!({}));
    let p = platform(http.clone(), None);
    let k = key("1:1:2");
    assert!(p.create_private_thread(&k, &"G1".into(), &ChannelId::new("C"), &"U1".into(), "apolo-victim-1").is_err());
    let t = p.create_private_thread(&k, &"G1".into(), &ChannelId::new("C"), &"U1".into(), "apolo-victim-1").unwrap();
    assert_eq!(t.0, "901");
    assert_eq!(http.calls(), ["POST /channels/C/threads", "PUT /channels/901/thread-members/U1", "PUT /channels/901/thread-members/U1"]);
    let body = http.requests()[0].body.clone().unwrap();
    assert_eq!(body["type"], 12);
    assert_eq!(body["name"], "apolo-victim-1");
    assert_eq!(body["invitable"], false);
}

#[test]
fn first_log_update_opens_the_case_thread_and_reuploads_proof() {
    let mut fake = FakeHttp::default();
    fake.files.insert("https://cdn.example/p/shot.png".into(), vec![1, 2, 3]);
    let http = Arc::new(fake);
    let p = platform(http.clone(), None);
    let target = LogTarget { channel: ChannelId::new("LOG"), thread: None, thread_name: "update-case-5".into() };
    let posted = p
        .post_log(&key("5:1:4"), &"G1".into(), &target, "Case opened", &[], &["https://cdn.example/p/shot.png".into(), "https://gone.example/x.png".into()])
        .unwrap();
    assert_eq!(http.calls(), ["POST /channels/LOG/threads", "POST /channels/901/messages"]);
    let reqs = http.requests();
    assert_eq!(reqs[0].body.as_ref().unwrap()["name"], "update-case-5");
    assert_eq!(reqs[1].files.len(), 1);
    assert_eq!(reqs[1].files[0].filename, "shot.png");
    assert!(reqs[1].body.as_ref().unwrap()["content"].as_str().unwrap().ends_with("Proof: https://gone.example/x.png"));
    assert_eq!(posted.thread.0, "901");
    assert_eq!(posted.message.0, "902");
}

#[test]
fn startup_permission_check_lists_missing_grants() {
    let http = Arc::new(FakeHttp::default());
    http.script(Method::Get, "/guilds/G1/roles", 200, json!([{ "id": "G1", "permissions": ((1u64 << 10) | (1 << 11)).to_string() }]));
    http.script(Method::Get, "/guilds/G1/members/BOT", 200, json!({ "roles": [] }));
    let p = platform(http, None);
    let err = p.check_permissions(&"G1".into(), &UserId::new("BOT")).unwrap_err();
    assert!(err.missing.contains(&"MODERATE_MEMBERS"));
    assert!(err.to_string().starts_with("missing permissions in community G1: ATTACH_FILES"));
}

fn signed(kp: &Ed25519KeyPair, body: &Value) -> (String, Vec<u8>) {
    let raw = serde_json::to_vec(body).unwrap();
    let sig = kp.sign(&[b"1709283600".as_slice(), &raw].concat());
    (hex::encode(sig.as_ref()), raw)
}

fn command_payload() -> Value {
    json!({
        "type": 2,
        "guild_id": "G1",
        "member": { "user": { "id": "M1" }, "roles": ["MODS"] },
        "data": {
            "name": "apolomute",
            "options": [
                { "name": "offender", "type": 6, "value": "U2" },
                { "name": "victim", "type": 6, "value": "U1" },
                { "name": "duration", "type": 3, "value": "7d" },
                { "name": "reason", "type": 3, "value": "slurs" },
                { "name": "proof", "type": 11, "value": "A1" }
            ],
            "resolved": { "attachments": { "A1": { "url": "https://cdn.example/p/shot.png" } } }
        }
    })
}

#[test]
fn command_payload_parses_into_a_command() {
    let Parsed::Inbound(InboundInteraction::CommandInvoked(cmd)) = parse_interaction(&command_payload()).unwrap() else {
        panic!()
    };
    assert_eq!(cmd.offender_id.as_str(), "U2");
    assert_eq!(cmd.invoker_roles, [RoleId::new("MODS")]);
    assert_eq!(cmd.proof_ref.as_deref(), Some("https://cdn.example/p/shot.png"));
    assert!(!cmd.review_request);
}

#[test]
fn endpoint_drives_a_case_over_the_fake_api() {
    let pkcs8 = Ed25519KeyPair::generate_pkcs8(&SystemRandom::new()).unwrap();
    let kp = Ed25519KeyPair::from_pkcs8(pkcs8.as_ref()).unwrap();
    let verifier = InteractionVerifier::from_hex(&hex::encode(kp.public_key().as_ref())).unwrap();
    let http = Arc::new(FakeHttp::default());
    let mediator = Mediator::in_memory();
    mediator.add_community(Community {
        id: "G1".into(),
        config: MediationConfig {
            moderator_role_ids: [RoleId::new("MODS")].into(),
            log_channel_id: ChannelId::new("LOG"),
            ..MediationConfig::default()
        },
        thread_parent: ChannelId::new("THREADS"),
        platform: Arc::new(platform(http.clone(), None)),
    });

    let (sig, body) = signed(&kp, &json!({ "type": 1 }));
    assert_eq!(handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0()), (200, json!({ "type": 1 })));
    assert_eq!(handle_request(&verifier, &mediator, "1709283601", &sig, &body, t0()).0, 401);

    let (sig, body) = signed(&kp, &command_payload());
    let (status, reply) = handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0());
    assert_eq!(status, 200);
    assert_eq!(reply["data"]["flags"], 64);
    assert!(reply["data"]["content"].as_str().unwrap().starts_with("Case #1 opened."));
    assert_eq!(
        http.calls(),
        [
            "PATCH /guilds/G1/members/U2",
            "POST /channels/THREADS/threads",
            "PUT /channels/901/thread-members/U1",
            "POST /channels/901/messages",
            "POST /channels/LOG/threads",
            "POST /channels/903/messages",
        ]
    );
    let prompt = &http.requests()[3];
    let buttons = &prompt.body.as_ref().unwrap()["components"][0]["components"];
    assert_eq!(buttons[0]["custom_id"], "apolo.v1.1.vreq_yes");
    assert!(prompt.body.as_ref().unwrap()["content"].as_str().unwrap().contains("<@U1>"));

    let press = |who: &str| {
        json!({
            "type": 3, "guild_id": "G1",
            "member": { "user": { "id": who }, "roles": [] },
            "data": { "custom_id": "apolo.v1.1.vreq_yes", "component_type": 2 }
        })
    };
    let (sig, body) = signed(&kp, &press("U2"));
    let (_, reply) = handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0());
    assert_eq!(reply["data"]["content"], "This is not your decision.");

    let (sig, body) = signed(&kp, &press("U1"));
    let (_, reply) = handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0());
    assert_eq!(reply["type"], 9);
    assert_eq!(reply["data"]["components"][0]["components"][0]["custom_id"], "text");

    let submit = json!({
        "type": 5, "guild_id": "G1",
        "member": { "user": { "id": "U1" }, "roles": [] },
        "data": {
            "custom_id": reply["data"]["custom_id"],
            "components": [{ "type": 1, "components": [{ "type": 4, "custom_id": "text", "value": "Please apologize." }] }]
        }
    });
    let (sig, body) = signed(&kp, &submit);
    let (_, reply) = handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0());
    assert_eq!(reply, json!({ "type": 7, "data": { "components": [] } }));
    let offender_prompt = http.requests().into_iter().rev().find(|r| r.path == "/channels/905/messages").unwrap();
    assert!(offender_prompt.body.unwrap()["content"].as_str().unwrap().contains("Please apologize."));

    let (sig, body) = signed(&kp, &submit);
    let (_, reply) = handle_request(&verifier, &mediator, "1709283600", &sig, &body, t0());
    assert_eq!(reply["data"]["content"], "This step was already handled.");
}
