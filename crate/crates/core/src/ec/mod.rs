//! Discrete-time event calculus.
//!
//! A [`Timeline`] records which actions happened at which tick, a [`RuleSet`]
//! says which fluents those actions initiate or terminate, and the query
//! functions ([`holds_at`], [`clipped`]) answer questions about fluent values.
//! When an initiation and a termination of the same fluent land on the same
//! tick, the termination wins.

mod pattern;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::EcError;
use crate::streams::StreamWindow;

pub use pattern::{
    evaluate_pattern, evaluate_pattern_report, Clause, Obligation, Pattern, PatternOutcome,
    PatternReport, TimeRel, Trigger,
};

/// One simulation time step. The simulation starts at tick 0.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub String);

impl ActionLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ActionLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActionLabel {
    fn from(s: &str) -> Self {
        ActionLabel(s.to_string())
    }
}

/// A time-varying boolean property, optionally scoped to one entity
/// (for example `sensor_okay` of `gps`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FluentId {
    pub name: String,
    pub subject: Option<String>,
}

impl FluentId {
    pub fn new(name: impl Into<String>) -> Self {
        FluentId { name: name.into(), subject: None }
    }

    pub fn of(name: impl Into<String>, subject: impl Into<String>) -> Self {
        FluentId { name: name.into(), subject: Some(subject.into()) }
    }
}

impl fmt::Display for FluentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(s) => write!(f, "{}[{}]", self.name, s),
            None => f.write_str(&self.name),
        }
    }
}

impl From<&str> for FluentId {
    fn from(s: &str) -> Self {
        FluentId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EffectKind {
    Initiates,
    Terminates,
}

/// A named predicate over a stream window, evaluated once when the
/// triggering action is recorded. Only the outcome is kept on the
/// occurrence, so queries never look at stream data again.
#[derive(Clone)]
pub struct Guard {
    pub name: String,
    check: Arc<dyn Fn(&StreamWindow) -> bool + Send + Sync>,
}

impl Guard {
    pub fn new(
        name: impl Into<String>,
        check: impl Fn(&StreamWindow) -> bool + Send + Sync + 'static,
    ) -> Self {
        Guard { name: name.into(), check: Arc::new(check) }
    }

    pub fn check(&self, window: &StreamWindow) -> bool {
        (self.check)(window)
    }
}

impl fmt::Debug for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Guard").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub struct EcRule {
    pub kind: EffectKind,
    pub trigger: ActionLabel,
    pub fluent: FluentId,
    pub guard: Option<Guard>,
}

impl EcRule {
    pub fn initiates(trigger: impl Into<ActionLabel>, fluent: FluentId) -> Self {
        EcRule { kind: EffectKind::Initiates, trigger: trigger.into(), fluent, guard: None }
    }

    pub fn terminates(trigger: impl Into<ActionLabel>, fluent: FluentId) -> Self {
        EcRule { kind: EffectKind::Terminates, trigger: trigger.into(), fluent, guard: None }
    }

    pub fn guarded(mut self, guard: Guard) -> Self {
        self.guard = Some(guard);
        self
    }

    fn guard_name(&self) -> Option<&str> {
        self.guard.as_ref().map(|g| g.name.as_str())
    }

    /// Whether this rule fires for `occ`. Guarded rules fire only when the
    /// guard passed at record time.
    fn applies_to(&self, occ: &Occurrence) -> bool {
        occ.action == self.trigger
            && match self.guard_name() {
                None => true,
                Some(g) => occ.guards.contains(g),
            }
    }
}

/// The effect rules plus the declared fluent and action vocabulary.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<EcRule>,
    fluents: BTreeSet<FluentId>,
    actions: BTreeSet<ActionLabel>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare_fluent(&mut self, f: FluentId) {
        self.fluents.insert(f);
    }

    pub fn declare_action(&mut self, a: impl Into<ActionLabel>) {
        self.actions.insert(a.into());
    }

    /// Adds a rule. A rule that initiates a fluent on the same trigger (and
    /// same guard) as an existing terminating rule is rejected.
    pub fn add(&mut self, rule: EcRule) -> Result<(), EcError> {
        let conflict = self.rules.iter().any(|r| {
            r.trigger == rule.trigger
                && r.fluent == rule.fluent
                && r.kind != rule.kind
                && r.guard_name() == rule.guard_name()
        });
        if conflict {
            return Err(EcError::ConflictingRule {
                action: rule.trigger.0.clone(),
                fluent: rule.fluent.to_string(),
            });
        }
        self.fluents.insert(rule.fluent.clone());
        self.actions.insert(rule.trigger.clone());
        self.rules.push(rule);
        Ok(())
    }

    pub fn rules(&self) -> &[EcRule] {
        &self.rules
    }

    pub fn knows_fluent(&self, f: &FluentId) -> bool {
        self.fluents.contains(f)
    }

    pub fn knows_action(&self, a: &ActionLabel) -> bool {
        self.actions.contains(a)
    }

    pub fn fluents(&self) -> impl Iterator<Item = &FluentId> {
        self.fluents.iter()
    }

    /// The net effect of `occ` on `f`, if any. Termination wins.
    pub(crate) fn effect_of(&self, occ: &Occurrence, f: &FluentId) -> Option<EffectKind> {
        let mut out = None;
        for r in self.rules.iter().filter(|r| &r.fluent == f && r.applies_to(occ)) {
            match r.kind {
                EffectKind::Terminates => return Some(EffectKind::Terminates),
                EffectKind::Initiates => out = Some(EffectKind::Initiates),
            }
        }
        out
    }

    fn guards_for<'a>(&'a self, action: &'a ActionLabel) -> impl Iterator<Item = &'a Guard> + 'a {
        self.rules
            .iter()
            .filter(move |r| &r.trigger == action)
            .filter_map(|r| r.guard.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub tick: Tick,
    pub action: ActionLabel,
    /// Names of the guards that passed when this occurrence was recorded.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub guards: BTreeSet<String>,
}

/// Narrative of action occurrences up to a horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub horizon: Tick,
    occurrences: Vec<Occurrence>,
    initially: BTreeSet<FluentId>,
}

impl Timeline {
    pub fn new(horizon: Tick) -> Self {
        Timeline { horizon, occurrences: Vec::new(), initially: BTreeSet::new() }
    }

    /// `InitiallyP(f)`.
    pub fn initially(mut self, f: FluentId) -> Self {
        self.initially.insert(f);
        self
    }

    pub fn set_initially(&mut self, f: FluentId) {
        self.initially.insert(f);
    }

    pub fn initial_fluents(&self) -> &BTreeSet<FluentId> {
        &self.initially
    }

    pub fn occurrences(&self) -> &[Occurrence] {
        &self.occurrences
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    /// `Happens(action, t)`: inserts the occurrence in tick order.
    pub fn record_happens(&mut self, action: impl Into<ActionLabel>, t: Tick) -> Result<(), EcError> {
        self.insert(Occurrence { tick: t, action: action.into(), guards: BTreeSet::new() })
    }

    /// Like [`record_happens`](Self::record_happens) but evaluates the guards of
    /// every rule triggered by `action` against `window` and stores the ones
    /// that pass.
    pub fn record_guarded(
        &mut self,
        rules: &RuleSet,
        action: impl Into<ActionLabel>,
        t: Tick,
        window: &StreamWindow,
    ) -> Result<(), EcError> {
        let action = action.into();
        let guards = rules
            .guards_for(&action)
            .filter(|g| g.check(window))
            .map(|g| g.name.clone())
            .collect();
        self.insert(Occurrence { tick: t, action, guards })
    }

    /// Consuming variant of [`record_happens`](Self::record_happens).
    pub fn with_happens(mut self, action: impl Into<ActionLabel>, t: Tick) -> Result<Self, EcError> {
        self.record_happens(action, t)?;
        Ok(self)
    }

    pub(crate) fn insert(&mut self, occ: Occurrence) -> Result<(), EcError> {
        if occ.tick > self.horizon {
            return Err(EcError::TickBeyondHorizon { tick: occ.tick, horizon: self.horizon });
        }
        if self.occurrences.iter().any(|o| o.tick == occ.tick && o.action == occ.action) {
            return Err(EcError::DuplicateOccurrence { action: occ.action.0, tick: occ.tick });
        }
        // stable: equal ticks keep insertion order
        let pos = self.occurrences.partition_point(|o| o.tick <= occ.tick);
        self.occurrences.insert(pos, occ);
        Ok(())
    }

    pub fn happens(&self, action: &ActionLabel, t: Tick) -> bool {
        self.at(t).any(|o| &o.action == action)
    }

    /// Occurrences at exactly tick `t`.
    pub fn at(&self, t: Tick) -> impl Iterator<Item = &Occurrence> {
        let lo = self.occurrences.partition_point(|o| o.tick < t);
        let hi = self.occurrences.partition_point(|o| o.tick <= t);
        self.occurrences[lo..hi].iter()
    }

    /// Occurrences with tick in `(from, to]`.
    pub fn between(&self, from: Tick, to: Tick) -> &[Occurrence] {
        let lo = self.occurrences.partition_point(|o| o.tick <= from);
        let hi = self.occurrences.partition_point(|o| o.tick <= to);
        if lo >= hi {
            &[]
        } else {
            &self.occurrences[lo..hi]
        }
    }
}

fn check_fluent(rules: &RuleSet, timeline: &Timeline, f: &FluentId) -> Result<(), EcError> {
    if rules.knows_fluent(f) || timeline.initially.contains(f) {
        Ok(())
    } else {
        Err(EcError::UnknownFluent(f.to_string()))
    }
}

fn net_effect_at(rules: &RuleSet, occs: &[Occurrence], f: &FluentId) -> Option<EffectKind> {
    let mut out = None;
    for o in occs {
        match rules.effect_of(o, f) {
            Some(EffectKind::Terminates) => return Some(EffectKind::Terminates),
            Some(EffectKind::Initiates) => out = Some(EffectKind::Initiates),
            None => {}
        }
    }
    out
}

/// `HoldsAt(f, t)`.
///
/// Walks backwards from `t` to the most recent tick whose occurrences affect
/// `f`; that tick decides the value. With no such tick the initial value
/// stands.
pub fn holds_at(rules: &RuleSet, timeline: &Timeline, f: &FluentId, t: Tick) -> Result<bool, EcError> {
    check_fluent(rules, timeline, f)?;
    if t > timeline.horizon {
        return Err(EcError::TickBeyondHorizon { tick: t, horizon: timeline.horizon });
    }
    let end = timeline.occurrences.partition_point(|o| o.tick <= t);
    let mut hi = end;
    while hi > 0 {
        let tick = timeline.occurrences[hi - 1].tick;
        let lo = timeline.occurrences[..hi].partition_point(|o| o.tick < tick);
        if let Some(kind) = net_effect_at(rules, &timeline.occurrences[lo..hi], f) {
            return Ok(kind == EffectKind::Initiates);
        }
        hi = lo;
    }
    Ok(timeline.initially.contains(f))
}

/// `Clipped(t1, f, t2)`: some occurrence terminates `f` within `(t1, t2]`.
pub fn clipped(
    rules: &RuleSet,
    timeline: &Timeline,
    t1: Tick,
    f: &FluentId,
    t2: Tick,
) -> Result<bool, EcError> {
    check_fluent(rules, timeline, f)?;
    if t1 > t2 {
        return Err(EcError::InvalidInterval { from: t1, to: t2 });
    }
    if t2 > timeline.horizon {
        return Err(EcError::TickBeyondHorizon { tick: t2, horizon: timeline.horizon });
    }
    Ok(timeline
        .between(t1, t2)
        .iter()
        .any(|o| rules.effect_of(o, f) == Some(EffectKind::Terminates)))
}

/// Current value and the tick since which it has held, for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluentState {
    pub fluent: FluentId,
    pub holds: bool,
    pub since: Tick,
}

/// Derives the state of `f` at `t` from the timeline alone.
pub fn fluent_state(
    rules: &RuleSet,
    timeline: &Timeline,
    f: &FluentId,
    t: Tick,
) -> Result<FluentState, EcError> {
    let holds = holds_at(rules, timeline, f, t)?;
    let mut since = 0;
    let mut cur = timeline.initially.contains(f);
    let mut i = 0;
    let occs = &timeline.occurrences;
    while i < occs.len() && occs[i].tick <= t {
        let tick = occs[i].tick;
        let j = i + occs[i..].partition_point(|o| o.tick == tick);
        if let Some(kind) = net_effect_at(rules, &occs[i..j], f) {
            let v = kind == EffectKind::Initiates;
            if v != cur {
                cur = v;
                since = tick;
            }
        }
        i = j;
    }
    debug_assert_eq!(cur, holds);
    Ok(FluentState { fluent: f.clone(), holds, since })
}

/// Ticks at which `f` changes value, paired with the new value, up to `upto`.
pub fn transitions(rules: &RuleSet, timeline: &Timeline, f: &FluentId, upto: Tick) -> Vec<(Tick, bool)> {
    let mut out = Vec::new();
    let mut cur = timeline.initially.contains(f);
    let occs = &timeline.occurrences;
    let mut i = 0;
    while i < occs.len() && occs[i].tick <= upto {
        let tick = occs[i].tick;
        let j = i + occs[i..].partition_point(|o| o.tick == tick);
        if let Some(kind) = net_effect_at(rules, &occs[i..j], f) {
            let v = kind == EffectKind::Initiates;
            if v != cur {
                cur = v;
                out.push((tick, v));
            }
        }
        i = j;
    }
    out
}
