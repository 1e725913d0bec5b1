//! The tick loop: actuations, injections, plant, monitors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::attack::{self, AttackSpec, InjectionLog};
use crate::ec::Tick;
use crate::error::SimError;
use crate::log::{Entry, LogHeader, LogWriter, RecordKind, Source, SCHEMA};
use crate::plant::{Plant, PlantStep};
use crate::scenario::Scenario;
use crate::stack::{actuation_fields, MonitorStack, Rejection};
use crate::trace::plant_entries;

/// Header for a log of `scenario`, whose TOML text is `text`.
pub fn log_header(scenario: &Scenario, text: &str, base_dir: Option<&Path>) -> LogHeader {
    LogHeader {
        schema: SCHEMA.into(),
        scenario_name: scenario.name.clone(),
        scenario: text.to_string(),
        base_dir: base_dir.map(|p| p.display().to_string()),
        seed: scenario.seed(),
        horizon: scenario.horizon,
    }
}

fn injection_entry(spec: &AttackSpec, write: Option<(u32, u32)>) -> Entry {
    let mut e = Entry::new(Source::Harness, RecordKind::Injection)
        .with("kind", spec.kind)
        .with("target", &spec.target)
        .with("recoverable", spec.recoverable);
    let params = serde_json::to_value(&spec.params).expect("attack params serialise");
    for (k, v) in params.as_object().expect("params are an object") {
        e = e.with(k, v);
    }
    if let Some((a, v)) = write {
        e = e.with("write_addr", format!("{a:#010x}")).with("write_value", format!("{v:#010x}"));
    }
    e
}

/// Outcome of a whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub horizon: Tick,
    pub first_rejections: BTreeMap<String, Rejection>,
    pub injections: InjectionLog,
    pub records: u64,
}

impl RunSummary {
    pub fn detected(&self) -> bool {
        !self.first_rejections.is_empty()
    }

    /// Earliest rejection across all monitors.
    pub fn first_detection(&self) -> Option<(&str, &Rejection)> {
        self.first_rejections.iter().min_by_key(|(_, r)| r.tick).map(|(m, r)| (m.as_str(), r))
    }
}

pub struct Simulation {
    scenario: Scenario,
    plant: Plant,
    stack: MonitorStack,
    sensors: Vec<String>,
    alive: BTreeSet<String>,
    injections: InjectionLog,
    next: Tick,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let plant = Plant::new(scenario.plant.clone())?;
        let stack = MonitorStack::new(&scenario)?;
        let sensors = scenario.plant.sensors.iter().map(|s| s.id.clone()).collect();
        Ok(Simulation { scenario, plant, stack, sensors, alive: BTreeSet::new(), injections: InjectionLog::default(), next: 0 })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn stack(&self) -> &MonitorStack {
        &self.stack
    }

    pub fn injections(&self) -> &InjectionLog {
        &self.injections
    }

    /// The next tick to run, or `None` once the horizon is reached.
    pub fn next_tick(&self) -> Option<Tick> {
        (self.next < self.scenario.horizon).then_some(self.next)
    }

    /// Runs one tick and returns its log entries together with the plant
    /// step the monitors saw.
    pub fn tick(&mut self) -> Result<(Tick, PlantStep, Vec<Entry>), SimError> {
        let t = self.next;
        let mut entries = Vec::new();
        for a in self.plant.begin_tick(t)? {
            let fields = actuation_fields(&a);
            entries.push(Entry::new(Source::Scheduler, RecordKind::Mitigation).extend(fields.iter().map(|(k, v)| (k, v))).with("what", "apply"));
        }
        let due: Vec<AttackSpec> = self.scenario.attacks.iter().filter(|a| a.at_tick == t).cloned().collect();
        for spec in due {
            let write = attack::apply(&mut self.plant, &spec, t)?;
            self.injections.record(&spec, t);
            entries.push(injection_entry(&spec, write));
        }
        let ps = self.plant.step(t);
        entries.extend(plant_entries(&ps, &self.sensors, &mut self.alive));
        let monitored = self.stack.step(t, &ps, &self.plant)?;
        entries.extend(monitored.entries);
        for a in monitored.actuations {
            self.plant.actuate(a)?;
        }
        self.next += 1;
        Ok((t, ps, entries))
    }

    fn summary(&self, records: u64) -> RunSummary {
        RunSummary {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed(),
            horizon: self.scenario.horizon,
            first_rejections: self.stack.first_rejections().clone(),
            injections: self.injections.clone(),
            records,
        }
    }

    /// Runs to the horizon without logging.
    pub fn run(&mut self) -> Result<RunSummary, SimError> {
        while self.next_tick().is_some() {
            self.tick()?;
        }
        Ok(self.summary(0))
    }

    /// Runs to the horizon, writing every tick to `writer`.
    pub fn run_logged<W: Write>(&mut self, writer: &mut LogWriter<W>) -> Result<RunSummary, SimError> {
        let mut records = 0u64;
        while self.next_tick().is_some() {
            let (t, _, entries) = self.tick()?;
            records += writer.write_tick(t, entries)?.len() as u64;
        }
        Ok(self.summary(records))
    }
}

/// Loads, runs and logs a scenario text in one go.
pub fn run_to_log<W: Write>(
    text: &str,
    base_dir: Option<&Path>,
    seed: Option<u64>,
    horizon: Option<Tick>,
    out: W,
) -> Result<(RunSummary, W), SimError> {
    let mut scenario = Scenario::parse(text, base_dir)?;
    if let Some(s) = seed {
        scenario.set_seed(s);
    }
    if let Some(h) = horizon {
        scenario.set_horizon(h)?;
    }
    let header = log_header(&scenario, text, base_dir);
    let mut writer = LogWriter::new(out, &header)?;
    let mut sim = Simulation::new(scenario)?;
    let summary = sim.run_logged(&mut writer)?;
    Ok((summary, writer.finish()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::read_log;

    const BAUD: &str = r#"
name = "baud"
horizon = 40000

[[attacks]]
kind = "baud_change"
target = "gps"
at_tick = 5000
params = { baud = 115200 }
"#;

    #[test]
    fn nominal_run_holds() {
        let text = "name = \"quiet\"\nhorizon = 60000\n";
        let (s, bytes) = run_to_log(text, None, None, None, Vec::new()).unwrap();
        assert!(!s.detected(), "{:?}", s.first_rejections);
        let (h, recs) = read_log(bytes.as_slice()).unwrap();
        assert_eq!(h.horizon, 60_000);
        assert_eq!(recs.len() as u64, s.records);
        assert!(recs.iter().any(|r| r.get("what") == Some("validated_write")));
    }

    #[test]
    fn baud_attack_is_caught_by_hardware_monitor() {
        let (s, bytes) = run_to_log(BAUD, None, Some(3), None, Vec::new()).unwrap();
        assert!(s.injections.complete(&Scenario::parse(BAUD, None).unwrap().attacks));
        let (m, r) = s.first_detection().unwrap();
        assert_eq!(m, crate::hrim::ID);
        assert!(r.tick >= 5_000);
        let (_, recs) = read_log(bytes.as_slice()).unwrap();
        assert!(recs.iter().any(|r| r.kind == RecordKind::Injection && r.tick == 5_000));
        assert!(recs.iter().any(|r| r.source == Source::Scheduler && r.get("command") == Some("isolate")));
    }
}
