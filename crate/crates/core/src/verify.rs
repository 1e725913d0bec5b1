//! Offline verification of a run log.
//!
//! The scenario is rebuilt from the log header, the logged plant
//! observations are fed to a fresh [`MonitorStack`], and every monitor
//! record it produces is compared with the logged one. A tick whose
//! monitor records differ in any way counts as one divergence. Three
//! properties are then checked on the log itself:
//!
//! * gatekeeping: a validated register write only follows a passing
//!   verification of the same sensor on the same tick;
//! * timeout exactness: an inactivity disconnect fires exactly `t_d` ticks
//!   after the sensor's receive channel went quiet, and it stayed quiet;
//! * failsafe reachability: after a fail-safe command, the next executed
//!   instruction is the failsafe routine.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::ec::Tick;
use crate::error::{LogError, SimError};
use crate::hrim;
use crate::log::{read_log, Entry, LogHeader, LogRecord, RecordKind, Source};
use crate::plant::program::parse_u32;
use crate::scenario::Scenario;
use crate::stack::MonitorStack;
use crate::trace::PlantReplay;

/// Ticks listed in full in a report before the rest are only counted.
const SHOWN_DIVERGENCES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub tick: Tick,
    pub logged: Vec<(Source, RecordKind, BTreeMap<String, String>)>,
    pub replayed: Vec<(Source, RecordKind, BTreeMap<String, String>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantBreach {
    pub invariant: &'static str,
    pub tick: Tick,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub scenario: String,
    pub ticks: Tick,
    pub records: usize,
    pub divergences: Vec<Divergence>,
    pub breaches: Vec<InvariantBreach>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty() && self.breaches.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}: {} ticks, {} records", self.scenario, self.ticks, self.records)?;
        for d in self.divergences.iter().take(SHOWN_DIVERGENCES) {
            writeln!(f, "tick {}: logged {:?}", d.tick, d.logged)?;
            writeln!(f, "tick {}: replayed {:?}", d.tick, d.replayed)?;
        }
        for b in &self.breaches {
            writeln!(f, "invariant {} broken at tick {}: {}", b.invariant, b.tick, b.detail)?;
        }
        write!(f, "{} divergences", self.divergences.len())
    }
}

type Shape = (Source, RecordKind, BTreeMap<String, String>);

fn shape_of_record(r: &LogRecord) -> Shape {
    (r.source, r.kind, r.payload.clone())
}

fn shape_of_entry(e: Entry) -> Shape {
    (e.source, e.kind, e.payload)
}

pub fn scenario_from_header(h: &LogHeader) -> Result<Scenario, SimError> {
    let base = h.base_dir.as_deref().map(Path::new);
    let mut s = Scenario::parse(&h.scenario, base)?;
    s.set_seed(h.seed);
    s.set_horizon(h.horizon)?;
    Ok(s)
}

/// Reads, replays and checks a log.
pub fn verify_log(input: impl BufRead) -> Result<VerifyReport, SimError> {
    let (header, records) = read_log(input)?;
    let scenario = scenario_from_header(&header)?;
    if let Some(r) = records.iter().find(|r| r.tick >= scenario.horizon) {
        return Err(LogError::CorruptLog {
            line: r.line,
            reason: format!("tick {} beyond horizon {}", r.tick, scenario.horizon),
        }
        .into());
    }
    let sensors: Vec<String> = scenario.plant.sensors.iter().map(|s| s.id.clone()).collect();
    let mut replay = PlantReplay::new(sensors, &scenario.plant.firmware);
    let mut stack = MonitorStack::new(&scenario)?;
    let mut divergences = Vec::new();
    let mut i = 0;
    for t in 0..scenario.horizon {
        let start = i;
        while i < records.len() && records[i].tick == t {
            i += 1;
        }
        let here = &records[start..i];
        let inputs: Vec<&LogRecord> = here.iter().filter(|r| !r.source.is_monitor()).collect();
        let ps = replay.rebuild(t, &inputs)?;
        let mut entries = stack.step(t, &ps, replay.memory())?.entries;
        entries.sort_by_key(|e| e.source);
        let replayed: Vec<Shape> = entries.into_iter().map(shape_of_entry).collect();
        let logged: Vec<Shape> = here.iter().filter(|r| r.source.is_monitor()).map(shape_of_record).collect();
        if logged != replayed {
            divergences.push(Divergence { tick: t, logged, replayed });
        }
    }
    let breaches = check_invariants(&scenario, &records);
    Ok(VerifyReport { scenario: scenario.name.clone(), ticks: scenario.horizon, records: records.len(), divergences, breaches })
}

/// The three log properties described in the module docs.
pub fn check_invariants(scenario: &Scenario, records: &[LogRecord]) -> Vec<InvariantBreach> {
    let mut out = Vec::new();
    gatekeeping(records, &mut out);
    timeouts(scenario, records, &mut out);
    failsafe(scenario, records, &mut out);
    out
}

fn is(r: &LogRecord, source: Source, what: &str) -> bool {
    r.source == source && r.get("what") == Some(what)
}

fn gatekeeping(records: &[LogRecord], out: &mut Vec<InvariantBreach>) {
    for (i, w) in records.iter().enumerate().filter(|(_, r)| is(r, Source::I2m, "validated_write")) {
        let sensor = w.get("sensor");
        let passed = records[..i]
            .iter()
            .rev()
            .take_while(|r| r.tick == w.tick)
            .any(|r| is(r, Source::I2m, "verify") && r.get("sensor") == sensor && r.get("outcome") == Some("pass"));
        if !passed {
            out.push(InvariantBreach {
                invariant: "gatekeeping",
                tick: w.tick,
                detail: format!("validated write for {} without a passing verification", sensor.unwrap_or("?")),
            });
        }
    }
}

fn timeouts(scenario: &Scenario, records: &[LogRecord], out: &mut Vec<InvariantBreach>) {
    let t_d: BTreeMap<&str, Tick> = scenario.i2m.sensors.iter().map(|s| (s.id.as_str(), s.t_d)).collect();
    // Receive-channel transitions per sensor, in tick order.
    let mut rx: BTreeMap<&str, Vec<(Tick, bool)>> = BTreeMap::new();
    for r in records.iter().filter(|r| is(r, Source::Plant, "rx")) {
        if let Some(s) = r.get("sensor") {
            rx.entry(s).or_default().push((r.tick, r.get("alive") == Some("true")));
        }
    }
    let fired = records.iter().filter(|r| {
        is(r, Source::I2m, "send") && r.get("label") == Some(hrim::EV_DISCONNECT) && r.get("cause") == Some("inactivity")
    });
    for r in fired {
        let sensor = r.get("sensor").unwrap_or("?");
        let Some(&limit) = t_d.get(sensor) else { continue };
        // The state in force at the timeout is the last transition before it.
        let last = rx.get(sensor).and_then(|v| v.iter().rev().find(|(t, _)| *t <= r.tick));
        let ok = matches!(last, Some(&(went_dead, false)) if went_dead + limit == r.tick);
        if !ok {
            out.push(InvariantBreach {
                invariant: "timeout exactness",
                tick: r.tick,
                detail: format!("{sensor} timed out but its receive channel state was {last:?}, t_d {limit}"),
            });
        }
    }
}

fn failsafe(scenario: &Scenario, records: &[LogRecord], out: &mut Vec<InvariantBreach>) {
    let address = scenario.eim.control_flow.failsafe_address;
    for (i, r) in records.iter().enumerate().filter(|(_, r)| is(r, Source::Eim, "fail_safe")) {
        let next = records[i + 1..].iter().find(|x| is(x, Source::Plant, "exec"));
        let pc = next.and_then(|x| x.get("pc")).and_then(|p| parse_u32(p).ok());
        if next.is_some() && pc != Some(address) {
            out.push(InvariantBreach {
                invariant: "failsafe reachability",
                tick: r.tick,
                detail: format!("next instruction at {pc:#010x?}, failsafe routine at {address:#010x}"),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_to_log;

    const LOCKUP: &str = r#"
name = "lockup"
horizon = 100000

[[attacks]]
kind = "uart_lockup"
target = "gps"
at_tick = 30000
recoverable = false
"#;

    fn logged(text: &str) -> Vec<u8> {
        run_to_log(text, None, None, None, Vec::new()).unwrap().1
    }

    #[test]
    fn replay_matches_live_run() {
        let bytes = logged(LOCKUP);
        let report = verify_log(bytes.as_slice()).unwrap();
        assert!(report.is_clean(), "{report}");
        assert!(report.to_string().ends_with("0 divergences"));
        let (_, recs) = read_log(bytes.as_slice()).unwrap();
        assert!(recs.iter().any(|r| r.get("cause") == Some("inactivity")), "lockup should time out");
    }

    #[test]
    fn edited_monitor_record_diverges() {
        let text = String::from_utf8(logged(LOCKUP)).unwrap();
        let edited = text.replacen("\"status\":\"rejected\"", "\"status\":\"holds\"", 1);
        assert_ne!(edited, text);
        let report = verify_log(edited.as_bytes()).unwrap();
        assert_eq!(report.divergences.len(), 1);
    }

    #[test]
    fn edited_plant_record_is_noticed() {
        let text = String::from_utf8(logged(LOCKUP)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let victim = lines.iter().position(|l| l.contains("\"what\":\"rx\"") && l.contains("\"alive\":\"false\"")).unwrap();
        let mut edited: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        edited[victim] = edited[victim].replace("\"alive\":\"false\"", "\"alive\":\"true\"");
        let report = verify_log(edited.join("\n").as_bytes()).unwrap();
        assert!(!report.is_clean());
    }

    #[test]
    fn truncated_header_is_corrupt() {
        let err = verify_log("{\"schema\":".as_bytes()).unwrap_err();
        assert!(matches!(err, SimError::Log(LogError::CorruptLog { line: 1, .. })));
    }
}
