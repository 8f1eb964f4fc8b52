use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use serde_json::Value;

use apolo_core::adapter::executor::EffectLedger;
use apolo_core::adapter::sim::SimPlatform;
use apolo_core::clock::VirtualClock;
use apolo_core::engine::{Actor, EventKind};
use apolo_core::runtime::{Community, Mediator};
use apolo_core::scheduler::Scheduler;
use apolo_core::store::EventStore;
use apolo_core::{ApolomuteCommand, ChannelId, MediationConfig, RoleId};

fn apolobot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apolobot")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Two cases in a file store: one victim decline, one still open.
fn seeded_data_dir(dir: &Path) {
    let start = Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap();
    let clock = Arc::new(VirtualClock::new(start));
    let mediator = Mediator::new(
        Arc::new(EventStore::open(dir).unwrap()),
        Arc::new(Scheduler::new()),
        Arc::new(EffectLedger::open(dir).unwrap()),
    );
    mediator.add_community(Community {
        id: "g1".into(),
        config: MediationConfig { moderator_role_ids: [RoleId::new("mods")].into(), ..MediationConfig::default() },
        thread_parent: ChannelId::new("threads"),
        platform: Arc::new(SimPlatform::new(clock)),
    });
    let cmd = |offender: &str| ApolomuteCommand {
        community_id: "g1".into(),
        invoker_id: "mod".into(),
        invoker_roles: vec![RoleId::new("mods")],
        offender_id: offender.into(),
        victim_id: "v1".into(),
        duration: "2h".into(),
        reason: "slur in #general".into(),
        proof_ref: None,
        review_request: false,
    };
    let first = mediator.open_case(&cmd("o1"), start).unwrap();
    mediator.submit(&first.case.case_id, Actor::user("v1"), EventKind::VictimDeclined, start).unwrap();
    mediator.open_case(&cmd("o1"), start).unwrap();
}

#[test]
fn enumerate_lists_the_single_restored_path() {
    let out = apolobot(&["enumerate"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(2).filter(|l| !l.starts_with("paths=")).collect();
    let restored: Vec<&&str> = rows.iter().filter(|l| l.contains("resolved_restored")).collect();
    assert_eq!(restored.len(), 1);
    assert!(restored[0].ends_with("VictimRequested > OffenderApologized > ResponseApproved > VictimAccepted > UnmuteExecuted"));
    assert!(rows.iter().filter(|l| !l.contains("resolved_restored")).all(|l| l.contains("closed_punitive")));

    let json: Value = serde_json::from_slice(&apolobot(&["enumerate", "--format", "json"]).stdout).unwrap();
    assert_eq!(json["paths"].as_array().unwrap().len(), rows.len());
    assert_eq!(json["truncated"], 0);

    let review: Value =
        serde_json::from_slice(&apolobot(&["enumerate", "--review-request", "--format", "json"]).stdout).unwrap();
    assert_eq!(review["paths"].as_array().unwrap().len(), rows.len() + 4);

    let retry: Value =
        serde_json::from_slice(&apolobot(&["enumerate", "--max-attempts", "2", "--format", "json"]).stdout).unwrap();
    assert!(retry["paths"].as_array().unwrap().len() > rows.len());
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(apolobot(&[]).status.code(), Some(2));
    assert_eq!(apolobot(&["enumerate", "--max-depth", "3"]).status.code(), Some(2));
    assert_eq!(apolobot(&["enumerate", "--format", "yaml"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[api]\nbind = \"nowhere\"\n").unwrap();
    let out = apolobot(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("socket address"));

    let plain = dir.path().join("plain.toml");
    std::fs::write(&plain, "binding = \"sim\"\n").unwrap();
    let out = apolobot(&["run", "--config", plain.to_str().unwrap(), "--discord"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(apolobot(&["run", "--config", plain.to_str().unwrap(), "--sim", "--discord"]).status.code(), Some(2));
    assert_eq!(apolobot(&["register-commands", "--config", plain.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.toml");
    std::fs::write(
        &profiles,
        "auto_unmute = true\n[victim]\np_engage = 0.8\np_approve = 0.9\n[offender]\np_engage = 0.5\n[moderator]\np_engage = 1.0\n",
    )
    .unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = apolobot(&["simulate", "--profiles", profiles.to_str().unwrap(), "--trials", "500", "--seed", "42", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ra, rb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ra, rb);
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["n_trials"], 500);
    assert!((report["analytic_restoration_probability"].as_f64().unwrap() - 0.36).abs() < 1e-12);

    let other = apolobot(&["simulate", "--profiles", profiles.to_str().unwrap(), "--trials", "500", "--seed", "43"]);
    assert_ne!(other.stdout, ra);

    let json = dir.path().join("p.json");
    std::fs::write(&json, r#"{"victim": {"p_engage": 1.5}}"#).unwrap();
    let o = apolobot(&["simulate", "--profiles", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("victim.p_engage"));
}

#[test]
fn case_dumps_and_missing_cases() {
    let dir = tempfile::tempdir().unwrap();
    seeded_data_dir(dir.path());
    let data = dir.path().to_str().unwrap();

    let show = apolobot(&["case", "show", "1", "--data-dir", data]);
    assert!(show.status.success());
    let text = stdout(&show);
    assert!(text.contains("closed_punitive"));
    assert!(text.contains("victim_declined"));
    assert!(text.contains("no_engagement"));

    let json: Value = serde_json::from_slice(&apolobot(&["case", "show", "2", "--data-dir", data, "--format", "json"]).stdout).unwrap();
    assert_eq!(json["state"], "await_victim_request");
    assert_eq!(json["outcome"], Value::Null);

    let events = apolobot(&["case", "events", "1", "--data-dir", data]);
    let lines: Vec<String> = stdout(&events).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains("CaseOpened") && lines[2].contains("VictimDeclined"));
    let records: Value = serde_json::from_slice(&apolobot(&["case", "events", "1", "--data-dir", data, "--format", "json"]).stdout).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 2);

    assert_eq!(apolobot(&["case", "show", "99", "--data-dir", data]).status.code(), Some(4));
    assert_eq!(apolobot(&["case", "events", "not-a-case", "--data-dir", data]).status.code(), Some(4));
    let gone = dir.path().join("gone");
    assert_eq!(apolobot(&["case", "show", "1", "--data-dir", gone.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(apolobot(&["case", "show", "1"]).status.code(), Some(2));

    let cfg = dir.path().join("apolo.toml");
    std::fs::write(&cfg, format!("data_dir = {data:?}\n")).unwrap();
    assert!(apolobot(&["case", "show", "1", "--config", cfg.to_str().unwrap()]).status.success());
}

#[test]
fn export_reports_funnel_and_recidivism() {
    let dir = tempfile::tempdir().unwrap();
    seeded_data_dir(dir.path());
    let data = dir.path().to_str().unwrap();

    let json: Value = serde_json::from_slice(&apolobot(&["export", "--format", "json", "--data-dir", data]).stdout).unwrap();
    assert_eq!(json["cases"], 2);
    assert_eq!(json["recidivism"]["o1"], 2);
    assert_eq!(json["funnel"]["total"], 2);

    let csv = stdout(&apolobot(&["export", "--format", "csv", "--data-dir", data]));
    let (funnel, recid) = csv.split_once("\n\n").unwrap();
    assert!(funnel.starts_with("stage,entered,advanced,dropped,bypassed,open,drop_reasons"));
    assert!(funnel.contains("await_victim_request,2,0,1,0,1,victim_declined=1"));
    assert_eq!(recid, "offender_id,cases\no1,2\n");

    let empty: Value = serde_json::from_slice(
        &apolobot(&["export", "--format", "json", "--data-dir", data, "--window", "2030-01-01T00:00:00Z.."]).stdout,
    )
    .unwrap();
    assert_eq!(empty["cases"], 0);

    let out = dir.path().join("reports");
    let o = apolobot(&["export", "--format", "csv", "--data-dir", data, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    for f in ["funnel.csv", "recidivism.csv", "outcomes.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(apolobot(&["export", "--format", "csv", "--data-dir", data, "--window", "last week"]).status.code(), Some(2));
}
