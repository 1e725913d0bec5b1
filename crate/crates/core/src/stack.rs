//! The three monitors wired together over one dependence graph.
//!
//! [`MonitorStack`] is shared by live runs and offline verification: it
//! sees only a [`PlantStep`] and a memory view, so feeding it replayed
//! observations reproduces exactly what the live run logged.

use std::collections::BTreeMap;

use crate::ec::Tick;
use crate::eim::{self, Eim};
use crate::error::SimError;
use crate::hrim::{self, Hrim};
use crate::i2m::{self, I2m};
use crate::log::{Entry, RecordKind, Source};
use crate::monitor::{EdgeKind, Grouping, Mailbox, MonitorEvent, MonitorGraph, MonitorOutput, SafetyVerdict};
use crate::plant::{Actuation, MemoryView, PlantStep};
use crate::scenario::Scenario;

pub const CROSSBAR_VERTEX: &str = "crossbar";
pub const FIRMWARE_VERTEX: &str = "firmware";
pub const MEMORY_VERTEX: &str = "memory";

/// Plant components, monitors and the edges between them for a plant with
/// the given sensors.
pub fn build_graph(sensors: &[String]) -> Result<MonitorGraph, SimError> {
    let mut g = MonitorGraph::new();
    for s in sensors {
        g.add_system(s.clone());
    }
    for v in [CROSSBAR_VERTEX, eim::PROGRAM_VERTEX, FIRMWARE_VERTEX, MEMORY_VERTEX] {
        g.add_system(v);
    }
    for m in [hrim::ID, i2m::ID, eim::ID] {
        g.add_monitor(m);
    }
    use EdgeKind::*;
    use Grouping::*;
    for s in sensors {
        g.add_edge(s, hrim::ID, Observe, Sequential)?;
        g.add_edge(i2m::ID, s, Mitigate, Sequential)?;
    }
    for v in [eim::PROGRAM_VERTEX, FIRMWARE_VERTEX, MEMORY_VERTEX] {
        g.add_edge(v, eim::ID, Observe, Sequential)?;
    }
    g.add_edge(hrim::ID, i2m::ID, Event, Sequential)?;
    g.add_edge(i2m::ID, hrim::ID, Event, Parallel)?;
    g.add_edge(hrim::ID, CROSSBAR_VERTEX, Mitigate, Sequential)?;
    g.add_edge(i2m::ID, CROSSBAR_VERTEX, Mitigate, Sequential)?;
    g.add_edge(eim::ID, eim::PROGRAM_VERTEX, Mitigate, Sequential)?;
    Ok(g)
}

/// Flattens an actuation into log fields, `command` first among them.
pub fn actuation_fields(a: &Actuation) -> Vec<(String, String)> {
    let value = serde_json::to_value(a).expect("actuations serialise");
    value
        .as_object()
        .expect("actuations serialise as objects")
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
        .collect()
}

fn note_kind(name: &str) -> RecordKind {
    if name == "branch_check" {
        RecordKind::Branch
    } else if name.starts_with("mitigation_") || name == "fail_safe" || name == "execution_permit" {
        RecordKind::Mitigation
    } else {
        RecordKind::Event
    }
}

fn verdict_entry(source: Source, v: &SafetyVerdict) -> Entry {
    Entry::new(source, RecordKind::Verdict).with("status", v.status).with("reasons", v.reasons().join(","))
}

/// Log entries for one monitor's output. The verdict is included when it
/// differs from `previous` (always on the first tick).
pub fn monitor_entries(source: Source, out: &MonitorOutput, previous: Option<&SafetyVerdict>) -> Vec<Entry> {
    let mut v = Vec::new();
    for (tl, o) in &out.occurrences {
        let guards: Vec<&str> = o.guards.iter().map(String::as_str).collect();
        v.push(
            Entry::new(source, RecordKind::Event)
                .with("what", "happens")
                .with("timeline", tl)
                .with("action", &o.action)
                .with("guards", guards.join(",")),
        );
    }
    for (tl, f, value) in &out.fluent_changes {
        v.push(Entry::new(source, RecordKind::FluentChange).with("timeline", tl).with("fluent", f).with("value", value));
    }
    for (name, fields) in &out.notes {
        v.push(Entry::new(source, note_kind(name)).extend(fields).with("what", name));
    }
    for e in &out.events {
        v.push(
            Entry::new(source, RecordKind::Event)
                .extend(&e.payload)
                .with("what", "send")
                .with("label", &e.label)
                .with("to", e.target.as_deref().unwrap_or("*")),
        );
    }
    for (vertex, a) in &out.actuations {
        let fields = actuation_fields(a);
        v.push(
            Entry::new(source, RecordKind::Mitigation)
                .extend(fields.iter().map(|(k, v)| (k, v)))
                .with("what", "actuate")
                .with("vertex", vertex),
        );
    }
    if let Some(now) = &out.verdict {
        let changed = previous.is_none_or(|p| p.status != now.status || p.reasons() != now.reasons());
        if changed {
            v.push(verdict_entry(source, now));
        }
    }
    v
}

/// First rejection seen from one monitor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub tick: Tick,
    pub reasons: Vec<String>,
}

/// One tick of monitoring: what to log and what to send to the plant.
#[derive(Debug, Clone, Default)]
pub struct StackStep {
    pub entries: Vec<Entry>,
    pub actuations: Vec<Actuation>,
}

#[derive(Debug, Clone)]
pub struct MonitorStack {
    graph: MonitorGraph,
    order: Vec<String>,
    sensors: Vec<String>,
    hrim: Hrim,
    i2m: I2m,
    eim: Eim,
    mailbox: Mailbox,
    verdicts: BTreeMap<String, SafetyVerdict>,
    first_rejection: BTreeMap<String, Rejection>,
}

impl MonitorStack {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let sensors: Vec<String> = scenario.plant.sensors.iter().map(|s| s.id.clone()).collect();
        let graph = build_graph(&sensors)?;
        let order = graph.schedule()?;
        Ok(MonitorStack {
            order,
            sensors,
            graph,
            hrim: Hrim::new(scenario.hrim.clone())?,
            i2m: I2m::new(scenario.i2m.clone())?,
            eim: Eim::new(scenario.eim.clone())?,
            mailbox: Mailbox::new(),
            verdicts: BTreeMap::new(),
            first_rejection: BTreeMap::new(),
        })
    }

    pub fn graph(&self) -> &MonitorGraph {
        &self.graph
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn hrim(&self) -> &Hrim {
        &self.hrim
    }

    pub fn i2m(&self) -> &I2m {
        &self.i2m
    }

    pub fn eim(&self) -> &Eim {
        &self.eim
    }

    pub fn verdict(&self, monitor: &str) -> Option<&SafetyVerdict> {
        self.verdicts.get(monitor)
    }

    pub fn first_rejections(&self) -> &BTreeMap<String, Rejection> {
        &self.first_rejection
    }

    fn run_monitor(&mut self, id: &str, t: Tick, ps: &PlantStep, mem: &impl MemoryView, inbox: &[MonitorEvent]) -> Result<MonitorOutput, SimError> {
        Ok(match id {
            hrim::ID => self.hrim.step(t, ps, inbox)?,
            i2m::ID => {
                let regs: BTreeMap<String, Vec<u32>> = self
                    .sensors
                    .iter()
                    .filter_map(|s| self.hrim.registers(s).map(|r| (s.clone(), r.words())))
                    .collect();
                let beats: Vec<(String, u32)> = self.hrim.heartbeats(ps).map(|(s, w)| (s.to_string(), w)).collect();
                self.i2m.step(t, inbox, &regs, &beats)?
            }
            eim::ID => self.eim.step(t, mem, ps, inbox)?,
            other => return Err(crate::error::MonitorError::UnknownVertex(other.to_string()).into()),
        })
    }

    /// Runs every monitor once, in schedule order, routing their events
    /// through the graph.
    pub fn step(&mut self, t: Tick, ps: &PlantStep, mem: &impl MemoryView) -> Result<StackStep, SimError> {
        let mut step = StackStep::default();
        for id in self.order.clone() {
            let inbox = self.mailbox.take(&id, t);
            let out = self.run_monitor(&id, t, ps, mem, &inbox)?;
            let source = Source::of_monitor(&id).expect("stack monitors have log sources");
            step.entries.extend(monitor_entries(source, &out, self.verdicts.get(&id)));
            for ev in &out.events {
                for d in self.graph.propagate(ev)? {
                    if !d.actuation {
                        self.mailbox.deliver(d);
                    }
                }
            }
            for (vertex, a) in out.actuations {
                // Only commands along a mitigate edge reach the plant.
                let probe = MonitorEvent::new(t, id.clone(), "actuate").to(vertex);
                if self.graph.propagate(&probe)?.iter().any(|d| d.actuation) {
                    step.actuations.push(a);
                }
            }
            if let Some(v) = out.verdict {
                if v.is_rejected() && !self.first_rejection.contains_key(&id) {
                    let reasons = v.reasons().iter().map(|r| r.to_string()).collect();
                    self.first_rejection.insert(id.clone(), Rejection { tick: t, reasons });
                }
                self.verdicts.insert(id.clone(), v);
            }
        }
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_orders_hardware_before_information() {
        let g = build_graph(&["gps".into(), "baro".into()]).unwrap();
        assert_eq!(g.schedule().unwrap(), vec![hrim::ID, i2m::ID, eim::ID]);
        assert_eq!(g.observed_by(eim::ID), vec![eim::PROGRAM_VERTEX, FIRMWARE_VERTEX, MEMORY_VERTEX]);
        let stray = MonitorEvent::new(0, eim::ID, "actuate").to(CROSSBAR_VERTEX);
        assert!(g.propagate(&stray).is_err());
    }

    #[test]
    fn actuation_fields_are_flat() {
        let f = actuation_fields(&Actuation::Reconfigure { sensor: "gps".into(), baud: 57_600 });
        assert!(f.contains(&("command".into(), "reconfigure".into())));
        assert!(f.contains(&("baud".into(), "57600".into())));
    }
}
