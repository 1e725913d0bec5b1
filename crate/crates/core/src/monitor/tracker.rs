//! Bookkeeping shared by the concrete monitors: a named timeline per
//! monitored subject, plus the fluent values last reported for it so that
//! changes can be logged.

use std::collections::BTreeMap;

use crate::ec::{holds_at, ActionLabel, FluentId, Occurrence, RuleSet, Tick, Timeline};
use crate::error::EcError;
use crate::plant::Actuation;
use crate::streams::StreamWindow;

use super::{MonitorEvent, SafetyVerdict};

/// A fluent that changed on some timeline: (timeline, fluent, new value).
pub type FluentDelta = (String, FluentId, bool);
/// Occurrences and fluent changes drained for one tick.
pub type TickChanges = (Vec<(String, Occurrence)>, Vec<FluentDelta>);

#[derive(Debug, Clone, Default)]
pub struct Timelines {
    map: BTreeMap<String, Timeline>,
    reported: BTreeMap<String, BTreeMap<FluentId, bool>>,
}

impl Timelines {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tl: Timeline) {
        let name = name.into();
        let values = tl.initial_fluents().iter().map(|f| (f.clone(), true)).collect();
        self.reported.insert(name.clone(), values);
        self.map.insert(name, tl);
    }

    pub fn get(&self, name: &str) -> Option<&Timeline> {
        self.map.get(name)
    }

    pub fn as_map(&self) -> &BTreeMap<String, Timeline> {
        &self.map
    }

    /// Records `action` at `t` unless it is already there.
    pub fn record(&mut self, name: &str, action: &str, t: Tick) -> Result<(), EcError> {
        let tl = self.map.get_mut(name).expect("timeline registered");
        let label = ActionLabel::from(action);
        if tl.happens(&label, t) {
            return Ok(());
        }
        tl.record_happens(label, t)
    }

    pub fn record_guarded(
        &mut self,
        name: &str,
        rules: &RuleSet,
        action: &str,
        t: Tick,
        window: &StreamWindow,
    ) -> Result<(), EcError> {
        let tl = self.map.get_mut(name).expect("timeline registered");
        if tl.happens(&ActionLabel::from(action), t) {
            return Ok(());
        }
        tl.record_guarded(rules, action, t, window)
    }

    pub fn holds(&self, name: &str, rules: &RuleSet, fluent: &str, t: Tick) -> Result<bool, EcError> {
        holds_at(rules, &self.map[name], &FluentId::from(fluent), t)
    }

    /// Occurrences at `t` and fluents whose value at `t` differs from the
    /// last reported one, for every timeline.
    pub fn drain_changes(&mut self, rules: &RuleSet, t: Tick) -> Result<TickChanges, EcError> {
        let mut occs = Vec::new();
        let mut changes = Vec::new();
        for (name, tl) in &self.map {
            let here: Vec<Occurrence> = tl.at(t).cloned().collect();
            if here.is_empty() {
                continue;
            }
            let reported = self.reported.get_mut(name).expect("reported values exist per timeline");
            for o in here {
                occs.push((name.clone(), o));
            }
            let fluents: Vec<FluentId> = rules.fluents().cloned().chain(tl.initial_fluents().iter().cloned()).collect();
            for f in fluents {
                let now = holds_at(rules, tl, &f, t)?;
                let before = reported.get(&f).copied().unwrap_or(false);
                if now != before {
                    reported.insert(f.clone(), now);
                    changes.push((name.clone(), f, now));
                }
            }
        }
        changes.dedup();
        Ok((occs, changes))
    }
}

/// What a monitor did during one tick.
#[derive(Debug, Clone, Default)]
pub struct MonitorOutput {
    pub events: Vec<MonitorEvent>,
    /// `(plant vertex, command)` pairs for mitigate edges.
    pub actuations: Vec<(String, Actuation)>,
    pub occurrences: Vec<(String, Occurrence)>,
    pub fluent_changes: Vec<(String, FluentId, bool)>,
    /// Extra facts worth logging: `(name, fields)`.
    pub notes: Vec<(String, BTreeMap<String, String>)>,
    pub verdict: Option<SafetyVerdict>,
}

impl MonitorOutput {
    pub fn note(&mut self, name: &str, fields: &[(&str, String)]) {
        self.notes.push((name.to_string(), fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()));
    }
}
