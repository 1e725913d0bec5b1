//! Dependence graph between plant components and monitors, and event
//! delivery along its edges.
//!
//! Sequential event edges deliver on the same tick, so the monitors they
//! connect must be evaluated in topological order. Parallel edges deliver
//! on the next tick and put no constraint on the order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::MonitorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Plant component to monitor: the monitor reads its streams.
    Observe,
    /// Monitor to monitor.
    Event,
    /// Monitor to plant component: actuation.
    Mitigate,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Observe => "observe",
            EdgeKind::Event => "event",
            EdgeKind::Mitigate => "mitigate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Sequential,
    Parallel,
}

impl Grouping {
    pub fn delay(self) -> Tick {
        match self {
            Grouping::Sequential => 0,
            Grouping::Parallel => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub tick: Tick,
    pub source: String,
    /// Restricts delivery to the edge towards this vertex.
    pub target: Option<String>,
    pub label: String,
    pub payload: BTreeMap<String, String>,
}

impl MonitorEvent {
    pub fn new(tick: Tick, source: impl Into<String>, label: impl Into<String>) -> Self {
        MonitorEvent { tick, source: source.into(), target: None, label: label.into(), payload: BTreeMap::new() }
    }

    pub fn to(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.payload.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: String,
    pub deliver_at: Tick,
    /// Delivered over a mitigate edge: a command for the plant.
    pub actuation: bool,
    pub event: MonitorEvent,
}

#[derive(Debug, Clone, Default)]
pub struct MonitorGraph {
    system: BTreeSet<String>,
    monitors: Vec<String>,
    edges: Vec<Edge>,
}

impl MonitorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_system(&mut self, id: impl Into<String>) {
        self.system.insert(id.into());
    }

    pub fn add_monitor(&mut self, id: impl Into<String>) {
        let id = id.into();
        if !self.monitors.contains(&id) {
            self.monitors.push(id);
        }
    }

    pub fn monitors(&self) -> &[String] {
        &self.monitors
    }

    pub fn system_vertices(&self) -> &BTreeSet<String> {
        &self.system
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn is_monitor(&self, v: &str) -> bool {
        self.monitors.iter().any(|m| m == v)
    }

    fn check_vertex(&self, v: &str) -> Result<(), MonitorError> {
        if self.is_monitor(v) || self.system.contains(v) {
            Ok(())
        } else {
            Err(MonitorError::UnknownVertex(v.to_string()))
        }
    }

    pub fn add_edge(&mut self, from: &str, to: &str, kind: EdgeKind, grouping: Grouping) -> Result<(), MonitorError> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        let ok = match kind {
            EdgeKind::Observe => self.system.contains(from) && self.is_monitor(to),
            EdgeKind::Event => self.is_monitor(from) && self.is_monitor(to),
            EdgeKind::Mitigate => self.is_monitor(from) && self.system.contains(to),
        };
        if !ok {
            return Err(MonitorError::InvalidEdge { from: from.into(), to: to.into(), kind: kind.to_string() });
        }
        self.edges.push(Edge { from: from.into(), to: to.into(), kind, grouping });
        Ok(())
    }

    /// Plant components observed by `monitor`.
    pub fn observed_by(&self, monitor: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Observe && e.to == monitor)
            .map(|e| e.from.as_str())
            .collect()
    }

    /// Evaluation order: topological over zero-delay event edges, ties
    /// broken by registration order.
    pub fn schedule(&self) -> Result<Vec<String>, MonitorError> {
        let zero: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Event && e.grouping == Grouping::Sequential)
            .collect();
        let mut indeg: BTreeMap<&str, usize> = self.monitors.iter().map(|m| (m.as_str(), 0)).collect();
        for e in &zero {
            *indeg.get_mut(e.to.as_str()).expect("edge endpoints are monitors") += 1;
        }
        let mut order = Vec::new();
        let mut done: BTreeSet<&str> = BTreeSet::new();
        while order.len() < self.monitors.len() {
            let next = self.monitors.iter().find(|m| !done.contains(m.as_str()) && indeg[m.as_str()] == 0);
            let Some(m) = next else {
                let stuck = self.monitors.iter().filter(|m| !done.contains(m.as_str())).cloned().collect();
                return Err(MonitorError::CycleWithoutDelay(stuck));
            };
            done.insert(m);
            order.push(m.clone());
            for e in zero.iter().filter(|e| e.from == *m) {
                *indeg.get_mut(e.to.as_str()).expect("edge endpoints are monitors") -= 1;
            }
        }
        Ok(order)
    }

    /// Routes `event` along the outgoing event and mitigate edges of its
    /// source, or only towards `event.target` when set.
    pub fn propagate(&self, event: &MonitorEvent) -> Result<Vec<Delivery>, MonitorError> {
        self.check_vertex(&event.source)?;
        if let Some(t) = &event.target {
            self.check_vertex(t)?;
        }
        let out: Vec<Delivery> = self
            .edges
            .iter()
            .filter(|e| e.from == event.source && e.kind != EdgeKind::Observe)
            .filter(|e| event.target.as_ref().is_none_or(|t| &e.to == t))
            .map(|e| Delivery {
                to: e.to.clone(),
                deliver_at: event.tick + e.grouping.delay(),
                actuation: e.kind == EdgeKind::Mitigate,
                event: event.clone(),
            })
            .collect();
        if out.is_empty() {
            return Err(MonitorError::NoRoute { from: event.source.clone(), label: event.label.clone() });
        }
        Ok(out)
    }
}

/// Per-monitor inbound queues.
#[derive(Debug, Clone, Default)]
pub struct Mailbox {
    queues: BTreeMap<String, Vec<(Tick, u64, MonitorEvent)>>,
    seq: u64,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deliver(&mut self, d: Delivery) {
        self.seq += 1;
        self.queues.entry(d.to).or_default().push((d.deliver_at, self.seq, d.event));
    }

    /// Events for `monitor` due at or before `at`, ordered by delivery tick,
    /// source and arrival.
    pub fn take(&mut self, monitor: &str, at: Tick) -> Vec<MonitorEvent> {
        let Some(q) = self.queues.get_mut(monitor) else { return Vec::new() };
        let (mut due, rest): (Vec<_>, Vec<_>) = q.drain(..).partition(|(t, _, _)| *t <= at);
        *q = rest;
        due.sort_by(|a, b| (a.0, &a.2.source, a.1).cmp(&(b.0, &b.2.source, b.1)));
        due.into_iter().map(|(_, _, e)| e).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.values().all(Vec::is_empty)
    }
}
