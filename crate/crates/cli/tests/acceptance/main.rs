//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any
//! failure. Expected values come from the hand-written model and tables in
//! this directory, never from the code under test.

mod crash;
mod matrix;
mod model;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use chrono::Duration as Span;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apolo_core::adapter::sim::{render_transcript, BehaviorProfile, DelaySpec, StakeholderProfile};
use apolo_core::engine::config::CasePolicy;
use apolo_core::engine::next_deadline;
use apolo_core::engine::paths::enumerate_terminal_paths;
use apolo_core::metrics::sim::{run_trial, simulate, SimSetup};
use apolo_core::store::fold;
use apolo_core::CaseEvent;

use model::{Model, Path};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn engine_paths(max_attempts: u32, auto_unmute: bool, review: bool) -> Result<BTreeSet<Path>, String> {
    let policy = CasePolicy { max_attempts, auto_unmute, ..CasePolicy::default() };
    let e = enumerate_terminal_paths(policy, review, 64);
    ensure(e.truncated == 0, || format!("{} paths truncated", e.truncated))?;
    Ok(e.paths
        .iter()
        .map(|p| (p.events.iter().map(|t| t.as_str()).collect(), p.state.as_str(), p.reason.as_str()))
        .collect())
}

fn enumeration_single_restored_path() -> Outcome {
    let start = Instant::now();
    let paths = engine_paths(1, false, false)?;
    let restored: Vec<&Path> = paths.iter().filter(|p| p.1 == "resolved_restored").collect();
    let expected = vec!["VictimRequested", "OffenderApologized", "ResponseApproved", "VictimAccepted", "UnmuteExecuted"];
    ensure(restored.len() == 1 && restored[0].0 == expected, || format!("restored paths: {restored:?}"))?;
    let other: Vec<&Path> = paths.iter().filter(|p| p.1 != "resolved_restored" && p.1 != "closed_punitive").collect();
    ensure(other.is_empty(), || format!("paths ending elsewhere: {other:?}"))?;
    let model = Model { review: false, max_attempts: 1, auto_unmute: false }.paths();
    ensure(paths == model, || {
        format!("engine-only {:?}, model-only {:?}", paths.difference(&model).collect::<Vec<_>>(), model.difference(&paths).collect::<Vec<_>>())
    })?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("{} terminal paths, 1 restored, {took:.1?}", paths.len()))
}

fn review_gate_delta() -> Outcome {
    let start = Instant::now();
    let without = engine_paths(1, false, false)?;
    let with = engine_paths(1, false, true)?;
    let lifted: BTreeSet<Path> = without
        .into_iter()
        .map(|(mut events, state, reason)| {
            if events.first() == Some(&"VictimRequested") {
                events.insert(1, "RequestApproved");
            }
            (events, state, reason)
        })
        .collect();
    ensure(lifted.is_subset(&with), || "some lifted path is missing with review on".into())?;
    let delta: BTreeSet<Path> = with.difference(&lifted).cloned().collect();
    let p = |second, reason| (vec!["VictimRequested", second], "closed_punitive", reason);
    let expected: BTreeSet<Path> = [
        p("RequestRejected", "request_rejected"),
        p("StageTimedOut", "request_review_timeout"),
        p("MuteElapsed", "mute_elapsed"),
        p("ModeratorCancelled", "moderator_cancelled"),
    ]
    .into();
    ensure(delta == expected, || format!("delta {delta:?}"))?;
    for (review, attempts, auto) in [(true, 1, true), (true, 2, false), (false, 3, true), (true, 3, false)] {
        let got = engine_paths(attempts, auto, review)?;
        let want = Model { review, max_attempts: attempts, auto_unmute: auto }.paths();
        ensure(got == want, || format!("review={review} attempts={attempts} auto={auto}: engine and model disagree"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("{} paths with review, 4 added, {took:.1?}", with.len()))
}

fn random_profile(rng: &mut ChaCha8Rng) -> StakeholderProfile {
    let mut p = || match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    };
    let (p_engage, p_approve, p_explicit_decline) = (p(), p(), p());
    let delay = match rng.random_range(0..3) {
        0 => DelaySpec::Fixed { secs: rng.random_range(0..100_000) },
        1 => {
            let min_secs = rng.random_range(0..50_000);
            DelaySpec::Uniform { min_secs, max_secs: min_secs + rng.random_range(0..100_000) }
        }
        _ => DelaySpec::Exponential { mean_secs: rng.random_range(1.0..80_000.0) },
    };
    StakeholderProfile { p_engage, p_approve, p_explicit_decline, delay }
}

fn replay_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..1000u64 {
        let setup = SimSetup {
            victim: random_profile(&mut rng),
            offender: random_profile(&mut rng),
            moderator: random_profile(&mut rng),
            default_stage_timeout: rng.random_range(600..=172_800),
            max_attempts: rng.random_range(1..=3),
            auto_unmute: rng.random_bool(0.5),
            mute_duration: format!("{}m", rng.random_range(1..=20_160)),
            review_request: rng.random_bool(0.5),
        };
        setup.validate().map_err(|e| format!("generated setup {i} invalid: {e}"))?;
        let trial = run_trial(&setup, rng.random(), i);
        ensure(trial.case.is_terminal(), || format!("trial {i} ended open in {:?}", trial.case.state))?;
        let ndjson: String = trial.events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        let parsed: Vec<CaseEvent> =
            ndjson.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| format!("trial {i}: {e}"))?;
        let replayed = fold(&trial.case.case_id, &parsed).map_err(|e| format!("trial {i}: {e}"))?;
        ensure(replayed == trial.case, || format!("trial {i}: replayed case differs"))?;
        ensure(serde_json::to_value(&replayed).unwrap() == serde_json::to_value(&trial.case).unwrap(), || {
            format!("trial {i}: replayed case serializes differently")
        })?;
    }
    Ok("1000 random cases replayed identically".into())
}

fn crash_recovery() -> Outcome {
    let s = crash::check_corpus()?;
    Ok(format!(
        "{} scenarios, {} kill points, {} resends absorbed by idempotency keys",
        crash::corpus().len(),
        s.runs,
        s.resent_and_deduplicated
    ))
}

fn liveness_under_silence() -> Outcome {
    let silent = SimSetup::default().with_profile(BehaviorProfile::silent());
    for i in 0..200 {
        let t = run_trial(&silent, 7, i);
        let tags: Vec<&str> = t.events.iter().map(|e| e.kind.tag().as_str()).collect();
        ensure(tags == ["CaseOpened", "StageTimedOut"], || format!("trial {i}: {tags:?}"))?;
        let c = t.case.closure.as_ref().ok_or("silent case never closed")?;
        ensure(c.reason.as_str() == "victim_timeout", || format!("trial {i}: {:?}", c.reason))?;
        ensure(c.closed_at - t.case.created_at == Span::hours(24), || format!("trial {i}: closed at {}", c.closed_at))?;
    }

    let config = Config { cases: 10_000, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let space = (1u64..=365 * 86_400, 1u64..=30 * 86_400);
    runner
        .run(&space, |(mute, timeout)| {
            let setup = SimSetup { default_stage_timeout: timeout, mute_duration: format!("{mute}s"), ..silent.clone() };
            let t = run_trial(&setup, 1, 0);
            for k in 1..=t.events.len() {
                let prefix = fold(&t.case.case_id, &t.events[..k]).unwrap();
                if let Some(d) = next_deadline(&prefix) {
                    proptest::prop_assert!(d.at <= prefix.mute_until, "deadline past mute end");
                }
            }
            let c = t.case.closure.clone().unwrap();
            proptest::prop_assert!(c.closed_at - t.case.created_at <= Span::seconds(timeout as i64));
            proptest::prop_assert!(c.closed_at <= t.case.mute_until);
            let want = if timeout <= mute { "victim_timeout" } else { "mute_elapsed" };
            proptest::prop_assert_eq!(c.reason.as_str(), want);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("200 silent default cases plus 10000 generated mute/timeout pairs all closed in time".into())
}

fn monte_carlo_vs_analytic() -> Outcome {
    let engaged = |p_engage, p_approve| StakeholderProfile { p_engage, p_approve, ..StakeholderProfile::default() };
    let setup = SimSetup {
        victim: engaged(0.8, 0.9),
        offender: engaged(0.5, 1.0),
        moderator: engaged(1.0, 1.0),
        auto_unmute: true,
        ..SimSetup::default()
    };
    let n = 10_000u64;
    let p = 0.8 * 0.5 * 1.0 * 0.9;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let start = Instant::now();
    let report = simulate(&setup, n, 2024);
    let took = start.elapsed();
    let rate = report.restored as f64 / n as f64;
    ensure((rate - p).abs() <= 3.0 * sigma, || format!("rate {rate:.4} vs {p:.4}, 3 sigma = {:.4}", 3.0 * sigma))?;
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("rate {rate:.4} vs {p:.2} (3 sigma {:.4}), {n} trials in {took:.1?}", 3.0 * sigma))
}

fn authorization_matrix() -> Outcome {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| e.to_string())?;
    let results = rt.block_on(matrix::run())?;
    let table = matrix::table();
    let mut ok = 0;
    for (action, actor, status) in &results {
        let allowed = table.iter().any(|(a, _, who)| a == action && who == actor);
        let want = if allowed { StatusCode::OK } else { StatusCode::FORBIDDEN };
        ensure(*status == want, || format!("{actor} pressing {action}: {status}, expected {want}"))?;
        ok += allowed as usize;
    }
    ensure(results.len() == 44 && ok == 11, || format!("{} presses, {ok} allowed", results.len()))?;
    Ok(format!("{} presses, {ok} allowed, the rest refused with 403", results.len()))
}

/// Platform calls of a case where everyone agrees, in order.
const GOLDEN_OPS: [&str; 15] = [
    "mute",
    "create_private_thread",
    "post_prompt",
    "post_log",
    "create_private_thread",
    "post_prompt",
    "post_log",
    "post_log",
    "post_prompt",
    "post_log",
    "post_log",
    "unmute",
    "post_log",
    "archive_thread",
    "archive_thread",
];

fn golden_transcript() -> Outcome {
    let trial = run_trial(&SimSetup::default(), 0, 0);
    let rendered = render_transcript(&trial.transcript, true);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/all_approve.ndjson");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &rendered).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(rendered == golden, || "transcript differs from the golden file".into())?;
    let lines: Vec<serde_json::Value> = rendered.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ops: Vec<&str> = lines.iter().filter_map(|v| v["call"].as_str()).collect();
    ensure(ops == GOLDEN_OPS, || format!("op order {ops:?}"))?;
    let request = trial.case.apology_request.clone().ok_or("no apology request recorded")?;
    let offender_prompt = lines
        .iter()
        .filter(|v| v["call"] == "post_prompt")
        .nth(1)
        .ok_or("no offender prompt")?
        .to_string();
    ensure(offender_prompt.contains(&request), || "offender prompt does not quote the request".into())?;
    Ok(format!("{} platform calls match the golden file", lines.len()))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let checks: [(&str, fn() -> Outcome); 8] = [
        ("enumeration_single_restored_path", enumeration_single_restored_path),
        ("review_gate_delta", review_gate_delta),
        ("replay_determinism", replay_determinism),
        ("crash_recovery", crash_recovery),
        ("liveness_under_silence", liveness_under_silence),
        ("monte_carlo_vs_analytic", monte_carlo_vs_analytic),
        ("authorization_matrix", authorization_matrix),
        ("golden_transcript", golden_transcript),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({:.2?})", start.elapsed()),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
