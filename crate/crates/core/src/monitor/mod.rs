//! Monitors, their detection predicates and safety verdicts.
//!
//! A [`Monitor`] reads a fixed set of streams (its language). Each
//! [`DetectionPredicate`] looks at one stream window and answers "safe or
//! not"; each registered [`Pattern`] is evaluated over one event-calculus
//! timeline. Any failing predicate or violated pattern turns the verdict to
//! `Rejected` and contributes a [`BadPrefix`] witness.

pub mod graph;
pub mod tracker;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ec::{evaluate_pattern_report, Pattern, PatternOutcome, PatternReport, RuleSet, Tick, Timeline};
use crate::error::MonitorError;
use crate::streams::{MonitoredStreams, Sample, Value};

pub use graph::{Delivery, Edge, EdgeKind, Grouping, Mailbox, MonitorEvent, MonitorGraph};
pub use tracker::{MonitorOutput, Timelines};

type WindowCheck = Arc<dyn Fn(&[Sample]) -> bool + Send + Sync>;

/// A pure check over one stream window. `true` means safe.
#[derive(Clone)]
pub struct DetectionPredicate {
    pub id: String,
    pub stream: String,
    check: WindowCheck,
}

impl DetectionPredicate {
    pub fn new(
        id: impl Into<String>,
        stream: impl Into<String>,
        check: impl Fn(&[Sample]) -> bool + Send + Sync + 'static,
    ) -> Self {
        DetectionPredicate { id: id.into(), stream: stream.into(), check: Arc::new(check) }
    }

    pub fn check(&self, samples: &[Sample]) -> bool {
        (self.check)(samples)
    }
}

impl fmt::Debug for DetectionPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DetectionPredicate").field("id", &self.id).field("stream", &self.stream).finish()
    }
}

/// Witness of a rejected verdict: the window slice that failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadPrefix {
    pub stream_id: String,
    pub ticks: (Tick, Tick),
    pub samples: Vec<Sample>,
    pub predicate_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Holds,
    Rejected,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Holds => "holds",
            VerdictStatus::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub status: VerdictStatus,
    pub witnesses: Vec<BadPrefix>,
    pub at: Tick,
}

impl SafetyVerdict {
    pub fn holds(at: Tick) -> Self {
        SafetyVerdict { status: VerdictStatus::Holds, witnesses: Vec::new(), at }
    }

    pub fn is_rejected(&self) -> bool {
        self.status == VerdictStatus::Rejected
    }

    /// Ids of the predicates and patterns behind a rejection.
    pub fn reasons(&self) -> Vec<&str> {
        self.witnesses.iter().map(|w| w.predicate_id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
struct PatternSlot {
    pattern: Pattern,
    timeline: String,
    cached: Option<(usize, PatternReport)>,
}

#[derive(Debug, Clone)]
pub struct Monitor {
    pub id: String,
    language: BTreeSet<String>,
    predicates: Vec<DetectionPredicate>,
    predicate_cache: Vec<Option<(u64, bool)>>,
    patterns: Vec<PatternSlot>,
    rules: RuleSet,
    frozen: bool,
}

impl Monitor {
    pub fn new(id: impl Into<String>, language: impl IntoIterator<Item = impl Into<String>>, rules: RuleSet) -> Self {
        Monitor {
            id: id.into(),
            language: language.into_iter().map(Into::into).collect(),
            predicates: Vec::new(),
            predicate_cache: Vec::new(),
            patterns: Vec::new(),
            rules,
            frozen: false,
        }
    }

    pub fn language(&self) -> &BTreeSet<String> {
        &self.language
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn predicates(&self) -> &[DetectionPredicate] {
        &self.predicates
    }

    pub fn patterns(&self) -> impl Iterator<Item = (&Pattern, &str)> {
        self.patterns.iter().map(|p| (&p.pattern, p.timeline.as_str()))
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Ends construction; later additions fail with [`MonitorError::Frozen`].
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn add_predicate(&mut self, p: DetectionPredicate) -> Result<(), MonitorError> {
        if self.frozen {
            return Err(MonitorError::Frozen(self.id.clone()));
        }
        if !self.language.contains(&p.stream) {
            return Err(MonitorError::UnregisteredStream { predicate: p.id, stream: p.stream });
        }
        self.predicates.push(p);
        self.predicate_cache.push(None);
        Ok(())
    }

    /// Registers `pattern` to be evaluated over the timeline named `timeline`.
    pub fn add_pattern(&mut self, pattern: Pattern, timeline: impl Into<String>) -> Result<(), MonitorError> {
        if self.frozen {
            return Err(MonitorError::Frozen(self.id.clone()));
        }
        self.patterns.push(PatternSlot { pattern, timeline: timeline.into(), cached: None });
        Ok(())
    }

    /// Verdict at `at`. Predicate results are cached per window version and
    /// pattern reports per timeline length, so unchanged inputs cost a
    /// lookup.
    pub fn evaluate(
        &mut self,
        ms: &MonitoredStreams,
        timelines: &BTreeMap<String, Timeline>,
        at: Tick,
    ) -> Result<SafetyVerdict, MonitorError> {
        let mut witnesses = Vec::new();
        for (i, p) in self.predicates.iter().enumerate() {
            let w = ms
                .window(&p.stream)
                .ok_or_else(|| MonitorError::UnregisteredStream { predicate: p.id.clone(), stream: p.stream.clone() })?;
            let safe = match self.predicate_cache[i] {
                Some((v, r)) if v == w.version() => r,
                _ => {
                    let r = p.check(w.samples());
                    self.predicate_cache[i] = Some((w.version(), r));
                    r
                }
            };
            if !safe {
                let samples = w.samples().to_vec();
                let ticks = (samples.first().map_or(at, |s| s.tick), samples.last().map_or(at, |s| s.tick));
                witnesses.push(BadPrefix { stream_id: p.stream.clone(), ticks, samples, predicate_id: p.id.clone() });
            }
        }
        for slot in &mut self.patterns {
            let tl = timelines.get(&slot.timeline).ok_or_else(|| MonitorError::UnregisteredStream {
                predicate: slot.pattern.name.clone(),
                stream: slot.timeline.clone(),
            })?;
            let fresh = match &slot.cached {
                Some((len, rep)) => {
                    *len != tl.len() || rep.next_deadline.is_some_and(|d| d <= at)
                }
                None => true,
            };
            if fresh {
                let rep = evaluate_pattern_report(&slot.pattern, &self.rules, tl, at)?;
                slot.cached = Some((tl.len(), rep));
            }
            let rep = &slot.cached.as_ref().expect("report cached above").1;
            if let PatternOutcome::Violated { clause } = rep.outcome {
                let samples: Vec<Sample> = tl
                    .between_incl(0, at)
                    .iter()
                    .map(|o| Sample { tick: o.tick, value: Value::Action { label: o.action.clone() } })
                    .collect();
                let ticks = (samples.first().map_or(0, |s| s.tick), samples.last().map_or(at, |s| s.tick));
                witnesses.push(BadPrefix {
                    stream_id: slot.timeline.clone(),
                    ticks,
                    samples,
                    predicate_id: format!("{}#{}", slot.pattern.name, clause),
                });
            }
        }
        let status = if witnesses.is_empty() { VerdictStatus::Holds } else { VerdictStatus::Rejected };
        Ok(SafetyVerdict { status, witnesses, at })
    }

    /// Latest pattern reports, by pattern name, from the last evaluation.
    pub fn pattern_reports(&self) -> Vec<(&str, &str, Option<&PatternReport>)> {
        self.patterns
            .iter()
            .map(|s| (s.pattern.name.as_str(), s.timeline.as_str(), s.cached.as_ref().map(|c| &c.1)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ec::{Clause, EcRule};
    use crate::streams::StreamRole;

    fn streams() -> MonitoredStreams {
        let mut ms = MonitoredStreams::new();
        ms.register("bus", StreamRole::Input, 4);
        ms
    }

    fn word_below_10() -> DetectionPredicate {
        DetectionPredicate::new("small", "bus", |s: &[Sample]| {
            s.iter().all(|x| !matches!(x.value, Value::Word { value } if value >= 10))
        })
    }

    #[test]
    fn rejection_carries_reproducible_witness() {
        let mut m = Monitor::new("hrim", ["bus"], RuleSet::new());
        m.add_predicate(word_below_10()).unwrap();
        let mut ms = streams();
        let tls = BTreeMap::new();
        ms.advance(0, [("bus", Value::word(3))]).unwrap();
        assert_eq!(m.evaluate(&ms, &tls, 0).unwrap().status, VerdictStatus::Holds);
        ms.advance(1, [("bus", Value::word(30))]).unwrap();
        let v = m.evaluate(&ms, &tls, 1).unwrap();
        assert!(v.is_rejected());
        let w = &v.witnesses[0];
        assert!(!m.predicates()[0].check(&w.samples));
        assert_eq!(w.ticks, (0, 1));
    }

    #[test]
    fn predicate_outside_language_rejected() {
        let mut m = Monitor::new("hrim", ["bus"], RuleSet::new());
        let p = DetectionPredicate::new("x", "firmware", |_: &[Sample]| true);
        assert!(matches!(m.add_predicate(p), Err(MonitorError::UnregisteredStream { .. })));
    }

    #[test]
    fn frozen_monitor_refuses_changes() {
        let mut m = Monitor::new("hrim", ["bus"], RuleSet::new());
        m.freeze();
        assert!(matches!(m.add_predicate(word_below_10()), Err(MonitorError::Frozen(_))));
        assert!(matches!(m.add_pattern(Pattern::new("p", vec![]), "t"), Err(MonitorError::Frozen(_))));
    }

    #[test]
    fn violated_pattern_rejects() {
        let mut rules = RuleSet::new();
        rules.add(EcRule::terminates("bus_fault", "sensor_okay".into())).unwrap();
        let mut m = Monitor::new("hrim", ["bus"], rules);
        m.add_pattern(Pattern::new("init", vec![Clause::Initially("sensor_okay".into())]), "gps").unwrap();
        let ms = streams();
        let mut tls = BTreeMap::new();
        tls.insert("gps".to_string(), Timeline::new(10));
        let v = m.evaluate(&ms, &tls, 0).unwrap();
        assert_eq!(v.reasons(), vec!["init#1"]);
        tls.insert("gps".to_string(), Timeline::new(10).initially("sensor_okay".into()));
        let mut m2 = m.clone();
        m2.patterns[0].cached = None;
        assert_eq!(m2.evaluate(&ms, &tls, 0).unwrap().status, VerdictStatus::Holds);
    }
}
