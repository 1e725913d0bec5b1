//! Acceptance criteria, one line each: `criterion N: PASS|FAIL  title`.

mod common;
#[path = "../../core/tests/support/ec_oracle.rs"]
mod ec_oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use common::*;
use mlmon_core::attack::ground_truth;
use mlmon_core::ec::{evaluate_pattern_report, PatternOutcome, Tick};
use mlmon_core::log::{LogHeader, LogRecord, RecordKind, Source};
use mlmon_core::plant::bus::BusConfig;
use mlmon_core::plant::program::{ReferenceCfg, FAILSAFE};
use mlmon_core::plant::{default_sensors, TICK_RATE};
use mlmon_core::scenario::Scenario;
use mlmon_core::sim::Simulation;
use mlmon_core::{eim, hrim, i2m};
use proptest::test_runner::{Config, TestRunner};

const SCENARIO_BUDGET: Duration = Duration::from_secs(10);

struct Run {
    code: i32,
    elapsed: Duration,
    log: PathBuf,
    header: LogHeader,
    recs: Vec<LogRecord>,
}

struct Ctx {
    dir: tempfile::TempDir,
    runs: BTreeMap<&'static str, Run>,
}

impl Ctx {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let mut runs = BTreeMap::new();
        for name in SHIPPED {
            let (out, log) = run_scenario(name, dir.path(), "a");
            let (header, recs) = load(&log);
            runs.insert(name, Run { code: out.code, elapsed: out.elapsed, log, header, recs });
        }
        Ctx { dir, runs }
    }

    fn run(&self, name: &str) -> &Run {
        &self.runs[name]
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gps_period() -> Tick {
    default_sensors().iter().find(|s| s.id == "gps").expect("gps sensor").emit_period
}

fn delivered_in(recs: &[LogRecord], sensor: &str, from: Tick, to: Tick) -> usize {
    frame_ends(recs, sensor).filter(|r| r.get("fate") == Some("delivered") && (from..to).contains(&r.tick)).count()
}

fn nominal_soundness(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("nominal");
    ensure(r.code == 0, || format!("exit {}", r.code))?;
    ensure(r.header.horizon >= 100_000, || format!("horizon {}", r.header.horizon))?;
    let rej = rejections(&r.recs);
    ensure(rej.is_empty(), || format!("{} rejected verdicts, first at tick {}", rej.len(), rej[0].tick))?;
    for s in ["gps", "baro"] {
        let writes = what(&r.recs, Source::I2m, "validated_write").filter(|w| w.get("sensor") == Some(s)).count();
        ensure(writes > 0, || format!("no validated data from {s}"))?;
    }
    for e in ReferenceCfg::builtin().entries {
        let seen = r.recs.iter().any(|b| b.source == Source::Plant && b.kind == RecordKind::Branch && b.get("site").map(word) == Some(e.site));
        ensure(seen, || format!("branch site {:#010x} never executed", e.site))?;
    }
    Ok(())
}

fn baud_experiment(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("baud_attack");
    ensure(r.code == 2, || format!("exit {}", r.code))?;
    let attack = injection_tick(&r.recs, "baud_change").ok_or("no baud_change injection")?;
    ensure(attack == 5_000, || format!("injected at {attack}"))?;
    let fast = BusConfig::new("gps", 115_200).map_err(|e| e.to_string())?.bit_period_ticks(TICK_RATE);
    let frame_bound = 10 * fast;
    let first_start = frame_starts(&r.recs, "gps").find(|f| f.tick >= attack).ok_or("no frame after the attack")?.tick;
    let first = *rejections(&r.recs).first().ok_or("never rejected")?;
    ensure(first.source == Source::Hrim, || format!("first rejection from {}", first.source))?;
    ensure((first_start..=first_start + frame_bound).contains(&first.tick), || {
        format!("rejected at {} for a frame starting at {first_start}, bound {frame_bound}", first.tick)
    })?;
    let applied = |cmd: &str| {
        r.recs.iter().find(|x| x.source == Source::Scheduler && x.get("command") == Some(cmd) && x.get("sensor") == Some("gps")).map(|x| x.tick)
    };
    let isolated = applied("isolate").ok_or("gps never isolated")?;
    ensure(isolated == first.tick + 1, || format!("isolated at {isolated}"))?;
    let reconnected = applied("reconnect").ok_or("gps never reconnected")?;
    let succeeded = what(&r.recs, Source::I2m, "mitigation_succeeded").any(|m| m.get("sensor") == Some("gps") && m.tick < reconnected);
    ensure(succeeded, || "reconnect without a successful mitigation".into())?;
    ensure(delivered_in(&r.recs, "gps", isolated, reconnected) == 0, || "frames delivered while isolated".into())?;
    let blocked = frame_ends(&r.recs, "gps").filter(|f| f.get("fate") == Some("blocked") && (isolated..reconnected).contains(&f.tick)).count();
    ensure(blocked > 0, || "no frame met the open crossbar".into())?;
    let horizon = r.header.horizon;
    let after = delivered_in(&r.recs, "gps", reconnected, horizon);
    let nominal = delivered_in(&cx.run("nominal").recs, "gps", reconnected, horizon);
    ensure(after == nominal && after > 0, || format!("{after} gps frames after recovery, nominal run has {nominal}"))
}

fn lockup_experiment(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("gps_lockup");
    let t = injection_tick(&r.recs, "uart_lockup").ok_or("no lockup injection")?;
    let t_d = 3 * gps_period();
    let disconnect = what(&r.recs, Source::I2m, "send")
        .find(|e| e.get("label") == Some(hrim::EV_DISCONNECT) && e.get("sensor") == Some("gps"))
        .ok_or("i2m never disconnected gps")?;
    ensure(disconnect.tick == t + t_d, || format!("disconnect at {}, expected {}", disconnect.tick, t + t_d))?;
    let passes = |recs: &[LogRecord]| {
        what(recs, Source::I2m, "verify").filter(|v| v.get("sensor") == Some("baro") && v.get("outcome") == Some("pass")).count()
    };
    let (got, nominal) = (passes(&r.recs), passes(&cx.run("nominal").recs));
    ensure(r.header.horizon == cx.run("nominal").header.horizon, || "horizons differ".into())?;
    ensure(got == nominal, || format!("baro passes {got}, nominal {nominal}"))
}

fn stuck_value(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("stuck_value");
    let r_max = i2m::DEFAULT_R_MAX as usize;
    // Run length of identical delivered payloads, per delivered frame.
    let mut runs: Vec<(Tick, usize)> = Vec::new();
    let mut prev: Option<&str> = None;
    for f in frame_ends(&r.recs, "baro").filter(|f| f.get("fate") == Some("delivered")) {
        let len = match (prev, runs.last()) {
            (Some(p), Some(&(_, n))) if Some(p) == f.get("bytes") => n + 1,
            _ => 1,
        };
        runs.push((f.tick, len));
        prev = f.get("bytes");
    }
    let culprit = runs.iter().position(|(_, n)| *n == r_max + 1).ok_or("no run of r_max+1 identical frames")?;
    let verifies: Vec<&LogRecord> = what(&r.recs, Source::I2m, "verify").filter(|v| v.get("sensor") == Some("baro")).collect();
    ensure(verifies.len() > culprit, || "fewer verifications than frames".into())?;
    for (i, v) in verifies.iter().enumerate().take(culprit) {
        ensure(v.get("outcome") == Some("pass"), || format!("frame {} verified {:?} at {}", i + 1, v.get("outcome"), v.tick))?;
    }
    let v = verifies[culprit];
    ensure(v.tick > runs[culprit].0, || "verification before its frame".into())?;
    ensure(v.get("outcome") == Some("fail:repeat"), || format!("frame {} verified {:?}", culprit + 1, v.get("outcome")))
}

fn return_tamper(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("return_tamper");
    let inj = r.recs.iter().find(|x| x.kind == RecordKind::Injection).ok_or("no injection")?;
    let slot = word(inj.get("write_addr").ok_or("no write address")?);
    let at = inj.tick;
    let compares: Vec<&LogRecord> = what(&r.recs, Source::Eim, "mem_compare").filter(|c| c.get("addr").map(word) == Some(slot)).collect();
    let before = compares.iter().rev().find(|c| c.tick < at).ok_or("slot never compared before the attack")?;
    ensure(before.get("match") == Some("true"), || "slot mismatched before the attack".into())?;
    let flip = compares.iter().find(|c| c.tick >= at).ok_or("slot never compared after the attack")?;
    ensure(flip.tick == at && flip.get("match") == Some("false"), || format!("flip at {} match {:?}", flip.tick, flip.get("match")))?;
    let popped = r
        .recs
        .iter()
        .find(|b| b.source == Source::Plant && b.kind == RecordKind::Branch && b.tick >= at && b.get("slot").map(word) == Some(slot) && b.get("kind") == Some("return"))
        .ok_or("tampered slot never popped")?;
    let checks: Vec<&LogRecord> = what(&r.recs, Source::Eim, "branch_check").collect();
    ensure(checks.iter().filter(|c| c.tick < popped.tick).all(|c| c.get("ok") == Some("true")), || "a branch failed before the tampered one".into())?;
    let verdict = checks.iter().find(|c| c.tick == popped.tick).ok_or("tampered branch unchecked")?;
    ensure(verdict.get("field") == Some("return") && verdict.get("ok") == Some("false"), || format!("branch check {:?}", verdict.payload))?;
    let next = r.recs.iter().find(|e| e.tick > popped.tick && e.get("what") == Some("exec") && e.source == Source::Plant).ok_or("nothing executed after the check")?;
    let pc = word(next.get("pc").ok_or("exec without pc")?);
    ensure(pc == FAILSAFE && FAILSAFE == 0x0800_6168, || format!("next pc {pc:#010x}"))
}

fn firmware_gate(cx: &Ctx) -> Result<(), String> {
    let r = cx.run("firmware_corrupt");
    ensure(injection_tick(&r.recs, "firmware_corrupt") == Some(0), || "corruption not before boot".into())?;
    let permit = what(&r.recs, Source::Eim, "execution_permit").next().ok_or("no permit decision")?;
    ensure(permit.get("granted") == Some("false"), || "permit granted".into())?;
    let branches = r.recs.iter().filter(|b| b.source == Source::Plant && b.kind == RecordKind::Branch).count();
    ensure(branches == 0, || format!("{branches} branch events"))
}

fn ec_oracle() -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&ec_oracle::case(), |c| c.check().map_err(proptest::test_runner::TestCaseError::fail))
        .map_err(|e| e.to_string())
}

/// Per scenario: `(monitor, timeline, expected outcome at horizon, clause that must fire)`.
fn pattern_expectations(name: &str) -> Vec<(&'static str, String, Option<PatternOutcome>, Option<usize>)> {
    let tl = |m: &str, s: &str| match m {
        "hrim" => hrim::timeline_name(s),
        _ => i2m::timeline_name(s),
    };
    match name {
        "nominal" => vec![
            ("hrim", tl("hrim", "gps"), None, Some(3)),
            ("hrim", tl("hrim", "baro"), None, Some(3)),
            ("i2m", tl("i2m", "gps"), None, Some(4)),
            ("i2m", tl("i2m", "baro"), None, Some(4)),
            ("eim", eim::TIMELINE.into(), None, Some(3)),
        ],
        "baud_attack" => vec![("hrim", tl("hrim", "gps"), None, Some(4))],
        "gps_lockup" => vec![("i2m", tl("i2m", "gps"), None, Some(6))],
        "stuck_value" => vec![("i2m", tl("i2m", "baro"), None, Some(6))],
        "return_tamper" => vec![("eim", eim::TIMELINE.into(), Some(PatternOutcome::Violated { clause: 3 }), Some(4))],
        "firmware_corrupt" => vec![("eim", eim::TIMELINE.into(), Some(PatternOutcome::Violated { clause: 1 }), None)],
        _ => vec![],
    }
}

fn pattern_conformance(_: &Ctx) -> Result<(), String> {
    for name in SHIPPED {
        let scenario = Scenario::load(&scenario(name)).map_err(|e| e.to_string())?;
        let first_attack = scenario.attacks.iter().map(|a| a.at_tick).min();
        let horizon = scenario.horizon;
        let mut sim = Simulation::new(scenario).map_err(|e| e.to_string())?;
        let mut snapshot = None;
        while let Some(t) = sim.next_tick() {
            sim.tick().map_err(|e| e.to_string())?;
            if first_attack.is_some_and(|a| a > 0 && t + 1 == a) {
                snapshot = Some((t, sim.stack().clone()));
            }
        }
        let expect = pattern_expectations(name);
        let stack = sim.stack();
        let mut views = vec![(horizon - 1, stack)];
        if let Some((t, s)) = &snapshot {
            views.push((*t, s));
        }
        for (at, st) in views {
            let monitors = [
                ("hrim", st.hrim().rules(), st.hrim().timelines(), hrim::pattern("hrim")),
                ("i2m", st.i2m().rules(), st.i2m().timelines(), i2m::pattern("i2m")),
                ("eim", st.eim().rules(), st.eim().timelines(), eim::pattern("eim")),
            ];
            for (m, rules, timelines, pattern) in &monitors {
                for (tl_name, tl) in timelines.as_map() {
                    let report = evaluate_pattern_report(pattern, rules, tl, at).map_err(|e| e.to_string())?;
                    let spec = expect.iter().find(|(em, et, _, _)| em == m && et == tl_name).filter(|_| at == horizon - 1);
                    match spec.and_then(|(_, _, o, _)| *o) {
                        Some(o) => ensure(report.outcome == o, || format!("{name}: {tl_name} at {at} is {:?}, expected {o:?}", report.outcome))?,
                        None => ensure(!report.outcome.is_violated(), || format!("{name}: {tl_name} at {at} is {:?}", report.outcome))?,
                    }
                    if let Some(c) = spec.and_then(|(_, _, _, c)| *c) {
                        ensure(report.fired.contains(&c), || format!("{name}: {tl_name} clause {c} never fired ({:?})", report.fired))?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn determinism(cx: &Ctx) -> Result<(), String> {
    for name in SHIPPED {
        let first = &cx.run(name);
        ensure(first.elapsed < SCENARIO_BUDGET, || format!("{name} took {:?}", first.elapsed))?;
        let original = std::fs::read(&first.log).map_err(|e| e.to_string())?;
        for tag in ["b", "c"] {
            let (_, log) = run_scenario(name, cx.dir.path(), tag);
            let again = std::fs::read(&log).map_err(|e| e.to_string())?;
            ensure(again == original, || format!("{name} run {tag} differs"))?;
        }
        let v = mlmon(&["verify", first.log.to_str().unwrap()]);
        ensure(v.code == 0 && v.stdout.trim_end().ends_with("\n0 divergences"), || format!("{name}: verify exit {} {}", v.code, v.stdout))?;
    }
    Ok(())
}

fn detection_completeness(cx: &Ctx) -> Result<(), String> {
    let mut checked = 0;
    for name in SHIPPED {
        let scenario = Scenario::load(&scenario(name)).map_err(|e| e.to_string())?;
        let truth = ground_truth(&scenario.attacks, &scenario.observation_model());
        let recs = &cx.run(name).recs;
        let rej = rejections(recs);
        for o in truth.iter().filter(|o| o.earliest.is_some()) {
            checked += 1;
            let first = rej.first().ok_or_else(|| format!("{name}: {} never detected", o.kind))?;
            let expected = o.layer.monitor();
            ensure(first.source.name() == expected, || format!("{name}: first rejection by {}, expected {expected}", first.source))?;
            let rivals: Vec<_> = rej.iter().filter(|r| r.tick == first.tick && r.source != first.source).collect();
            ensure(rivals.is_empty(), || format!("{name}: {} also rejected at {}", rivals[0].source, first.tick))?;
            ensure(first.tick >= o.earliest.unwrap(), || format!("{name}: rejected at {} before the effect at {:?}", first.tick, o.earliest))?;
        }
    }
    ensure(checked == 5, || format!("{checked} observable attacks"))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Result<(), String> + 'a>);

fn main() -> ExitCode {
    let cx = Ctx::new();
    let criteria: [Criterion; 10] = [
        ("nominal soundness", Box::new(|| nominal_soundness(&cx))),
        ("baud-rate experiment", Box::new(|| baud_experiment(&cx))),
        ("lockup experiment", Box::new(|| lockup_experiment(&cx))),
        ("stuck-value detection", Box::new(|| stuck_value(&cx))),
        ("return-tamper experiment", Box::new(|| return_tamper(&cx))),
        ("firmware gate", Box::new(|| firmware_gate(&cx))),
        ("EC oracle equivalence", Box::new(ec_oracle)),
        ("pattern conformance", Box::new(|| pattern_conformance(&cx))),
        ("determinism and forensics", Box::new(|| determinism(&cx))),
        ("detection completeness", Box::new(|| detection_completeness(&cx))),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(()) => println!("criterion {}: PASS  {title}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {title}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
