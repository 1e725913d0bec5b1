//! Sequential detection patterns built from event-calculus clauses.
//!
//! A [`Pattern`] is an ordered list of [`Clause`]s. Clauses are numbered from
//! 1 in reports so they line up with the numbered monitor pattern listings in
//! the docs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{holds_at, transitions, ActionLabel, FluentId, RuleSet, Tick, Timeline};
use crate::error::EcError;

/// How an obligation's time variable relates to the previous one in the
/// chain (the trigger tick for the first obligation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeRel {
    /// Same tick as the previous time variable.
    Same,
    /// Strictly later than the previous time variable.
    After,
    /// No ordering constraint. Such patterns are malformed.
    Unordered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    Happens(ActionLabel),
    /// The action happens at a tick where the fluent has the given value.
    HappensWhile { action: ActionLabel, fluent: FluentId, holds: bool },
    Rises(FluentId),
    Falls(FluentId),
    AnyOf(Vec<Trigger>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Obligation {
    Happens { action: ActionLabel, rel: TimeRel },
    HoldsAt { fluent: FluentId, holds: bool, rel: TimeRel },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    /// `InitiallyP(f)`.
    Initially(FluentId),
    /// Every occurrence of `action` leaves each listed fluent at the listed
    /// value at that tick, e.g. `Initiates(store, data_ready, t)`.
    Effect { action: ActionLabel, values: Vec<(FluentId, bool)> },
    /// `¬Clipped(t_i, unclipped, t) ⇒ HoldsAt(implies, t)` for every tick
    /// covered by an unbroken run of `unclipped`.
    Invariant { unclipped: FluentId, implies: FluentId },
    /// Every trigger tick must be followed by the obligation chain, with
    /// `After` steps landing no later than `within` ticks past the trigger.
    Response { trigger: Trigger, obligations: Vec<Obligation>, within: Tick },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub name: String,
    pub clauses: Vec<Clause>,
}

impl Pattern {
    pub fn new(name: impl Into<String>, clauses: Vec<Clause>) -> Self {
        Pattern { name: name.into(), clauses }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternOutcome {
    Satisfied,
    /// 1-based number of the first clause whose consequent failed.
    Violated { clause: usize },
    Pending,
}

impl PatternOutcome {
    pub fn is_violated(&self) -> bool {
        matches!(self, PatternOutcome::Violated { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternReport {
    pub outcome: PatternOutcome,
    /// Clauses (1-based) with at least one trigger or occurrence whose
    /// consequent was met.
    pub fired: Vec<usize>,
    /// Earliest tick at which a currently pending obligation times out.
    pub next_deadline: Option<Tick>,
}

enum ClauseStatus {
    Satisfied,
    Violated,
    Pending,
}

pub fn evaluate_pattern(
    pattern: &Pattern,
    rules: &RuleSet,
    timeline: &Timeline,
    at: Tick,
) -> Result<PatternOutcome, EcError> {
    evaluate_pattern_report(pattern, rules, timeline, at).map(|r| r.outcome)
}

pub fn evaluate_pattern_report(
    pattern: &Pattern,
    rules: &RuleSet,
    timeline: &Timeline,
    at: Tick,
) -> Result<PatternReport, EcError> {
    validate(pattern, rules, timeline)?;
    if at > timeline.horizon {
        return Err(EcError::TickBeyondHorizon { tick: at, horizon: timeline.horizon });
    }
    let mut fired = Vec::new();
    let mut next_deadline: Option<Tick> = None;
    let mut first_violation = None;
    let mut any_pending = false;
    for (i, clause) in pattern.clauses.iter().enumerate() {
        let (status, clause_fired, deadline) = eval_clause(clause, rules, timeline, at)?;
        if clause_fired {
            fired.push(i + 1);
        }
        if let Some(d) = deadline {
            next_deadline = Some(next_deadline.map_or(d, |n| n.min(d)));
        }
        match status {
            ClauseStatus::Violated if first_violation.is_none() => first_violation = Some(i + 1),
            ClauseStatus::Pending => any_pending = true,
            _ => {}
        }
    }
    let outcome = match first_violation {
        Some(clause) => PatternOutcome::Violated { clause },
        None if any_pending => PatternOutcome::Pending,
        None => PatternOutcome::Satisfied,
    };
    Ok(PatternReport { outcome, fired, next_deadline })
}

fn validate(pattern: &Pattern, rules: &RuleSet, timeline: &Timeline) -> Result<(), EcError> {
    let fluent_ok = |f: &FluentId| -> Result<(), EcError> {
        if rules.knows_fluent(f) || timeline.initial_fluents().contains(f) {
            Ok(())
        } else {
            Err(EcError::UnknownFluent(f.to_string()))
        }
    };
    let action_ok = |a: &ActionLabel| -> Result<(), EcError> {
        if rules.knows_action(a) {
            Ok(())
        } else {
            Err(EcError::MalformedPattern(format!("unregistered action {a}")))
        }
    };
    fn check_trigger(
        t: &Trigger,
        fluent_ok: &dyn Fn(&FluentId) -> Result<(), EcError>,
        action_ok: &dyn Fn(&ActionLabel) -> Result<(), EcError>,
    ) -> Result<(), EcError> {
        match t {
            Trigger::Happens(a) => action_ok(a),
            Trigger::HappensWhile { action, fluent, .. } => {
                action_ok(action)?;
                fluent_ok(fluent)
            }
            Trigger::Rises(f) | Trigger::Falls(f) => fluent_ok(f),
            Trigger::AnyOf(ts) => {
                if ts.is_empty() {
                    return Err(EcError::MalformedPattern("empty trigger disjunction".into()));
                }
                ts.iter().try_for_each(|t| check_trigger(t, fluent_ok, action_ok))
            }
        }
    }
    for clause in &pattern.clauses {
        match clause {
            Clause::Initially(f) => fluent_ok(f)?,
            Clause::Effect { action, values } => {
                action_ok(action)?;
                values.iter().try_for_each(|(f, _)| fluent_ok(f))?;
            }
            Clause::Invariant { unclipped, implies } => {
                fluent_ok(unclipped)?;
                fluent_ok(implies)?;
            }
            Clause::Response { trigger, obligations, .. } => {
                check_trigger(trigger, &fluent_ok, &action_ok)?;
                if obligations.is_empty() {
                    return Err(EcError::MalformedPattern("response without obligations".into()));
                }
                for ob in obligations {
                    match ob {
                        Obligation::Happens { action, rel } => {
                            action_ok(action)?;
                            if *rel == TimeRel::Unordered {
                                return Err(EcError::MalformedPattern(format!(
                                    "time variable of {action} has no ordering constraint"
                                )));
                            }
                        }
                        Obligation::HoldsAt { fluent, rel, .. } => {
                            fluent_ok(fluent)?;
                            if *rel != TimeRel::Same {
                                return Err(EcError::MalformedPattern(format!(
                                    "HoldsAt({fluent}) must share the previous time variable"
                                )));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn trigger_ticks(
    trigger: &Trigger,
    rules: &RuleSet,
    timeline: &Timeline,
    at: Tick,
) -> Result<BTreeSet<Tick>, EcError> {
    let mut out = BTreeSet::new();
    match trigger {
        Trigger::Happens(a) => {
            out.extend(timeline.between_incl(0, at).iter().filter(|o| &o.action == a).map(|o| o.tick));
        }
        Trigger::HappensWhile { action, fluent, holds } => {
            for o in timeline.between_incl(0, at).iter().filter(|o| &o.action == action) {
                if holds_at(rules, timeline, fluent, o.tick)? == *holds {
                    out.insert(o.tick);
                }
            }
        }
        Trigger::Rises(f) => {
            out.extend(transitions(rules, timeline, f, at).into_iter().filter(|(_, v)| *v).map(|(t, _)| t));
        }
        Trigger::Falls(f) => {
            out.extend(transitions(rules, timeline, f, at).into_iter().filter(|(_, v)| !*v).map(|(t, _)| t));
        }
        Trigger::AnyOf(ts) => {
            for t in ts {
                out.extend(trigger_ticks(t, rules, timeline, at)?);
            }
        }
    }
    Ok(out)
}

fn eval_clause(
    clause: &Clause,
    rules: &RuleSet,
    timeline: &Timeline,
    at: Tick,
) -> Result<(ClauseStatus, bool, Option<Tick>), EcError> {
    match clause {
        Clause::Initially(f) => {
            let s = if timeline.initial_fluents().contains(f) {
                ClauseStatus::Satisfied
            } else {
                ClauseStatus::Violated
            };
            Ok((s, false, None))
        }
        Clause::Effect { action, values } => {
            let mut seen = false;
            let mut fired = false;
            for o in timeline.between_incl(0, at).iter().filter(|o| &o.action == action) {
                seen = true;
                for (f, v) in values {
                    if holds_at(rules, timeline, f, o.tick)? != *v {
                        return Ok((ClauseStatus::Violated, fired, None));
                    }
                }
                fired = true;
            }
            let s = if seen { ClauseStatus::Satisfied } else { ClauseStatus::Pending };
            Ok((s, fired, None))
        }
        Clause::Invariant { unclipped, implies } => {
            let mut ticks: BTreeSet<Tick> = timeline.between_incl(0, at).iter().map(|o| o.tick).collect();
            ticks.insert(0);
            for t in ticks {
                if holds_at(rules, timeline, unclipped, t)? && !holds_at(rules, timeline, implies, t)? {
                    return Ok((ClauseStatus::Violated, false, None));
                }
            }
            Ok((ClauseStatus::Satisfied, false, None))
        }
        Clause::Response { trigger, obligations, within } => {
            let triggers = trigger_ticks(trigger, rules, timeline, at)?;
            if triggers.is_empty() {
                return Ok((ClauseStatus::Pending, false, None));
            }
            let mut fired = false;
            let mut pending = false;
            let mut next_deadline: Option<Tick> = None;
            for tau in triggers {
                let deadline = tau.saturating_add(*within);
                let mut cursor = tau;
                let mut chain_ok = true;
                for ob in obligations {
                    match ob {
                        Obligation::HoldsAt { fluent, holds, .. } => {
                            if holds_at(rules, timeline, fluent, cursor)? != *holds {
                                return Ok((ClauseStatus::Violated, fired, None));
                            }
                        }
                        Obligation::Happens { action, rel: TimeRel::Same } => {
                            if !timeline.happens(action, cursor) {
                                return Ok((ClauseStatus::Violated, fired, None));
                            }
                        }
                        Obligation::Happens { action, .. } => {
                            let found = timeline
                                .between(cursor, at.min(deadline))
                                .iter()
                                .find(|o| &o.action == action)
                                .map(|o| o.tick);
                            match found {
                                Some(t) => cursor = t,
                                None if at < deadline => {
                                    pending = true;
                                    chain_ok = false;
                                    next_deadline = Some(next_deadline.map_or(deadline, |d| d.min(deadline)));
                                    break;
                                }
                                None => return Ok((ClauseStatus::Violated, fired, None)),
                            }
                        }
                    }
                }
                fired |= chain_ok;
            }
            let s = if pending { ClauseStatus::Pending } else { ClauseStatus::Satisfied };
            Ok((s, fired, next_deadline))
        }
    }
}

impl Timeline {
    /// Occurrences with tick in `[from, to]`.
    pub fn between_incl(&self, from: Tick, to: Tick) -> &[super::Occurrence] {
        let occ = self.occurrences();
        let lo = occ.partition_point(|o| o.tick < from);
        let hi = occ.partition_point(|o| o.tick <= to);
        if lo >= hi {
            &[]
        } else {
            &occ[lo..hi]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ec::EcRule;

    fn hrim_rules() -> RuleSet {
        let mut r = RuleSet::new();
        r.add(EcRule::terminates("bus_fault", "sensor_okay".into())).unwrap();
        r.add(EcRule::terminates("bus_fault", "bus_config_okay".into())).unwrap();
        r.add(EcRule::terminates("bus_fault", "hrim_data_ready".into())).unwrap();
        r.add(EcRule::initiates("store_sensor_data", "hrim_data_ready".into())).unwrap();
        r.add(EcRule::initiates("cross_bar_en", "sensor_reconfig".into())).unwrap();
        r.declare_action("read_sensor_data");
        r.declare_action("i2m_send_InfoToDisconnect");
        r
    }

    fn hrim_pattern_1_to_3() -> Pattern {
        Pattern::new(
            "hrim",
            vec![
                Clause::Initially("sensor_okay".into()),
                Clause::Invariant { unclipped: "bus_config_okay".into(), implies: "sensor_okay".into() },
                Clause::Response {
                    trigger: Trigger::HappensWhile {
                        action: "read_sensor_data".into(),
                        fluent: "sensor_okay".into(),
                        holds: true,
                    },
                    obligations: vec![
                        Obligation::Happens { action: "store_sensor_data".into(), rel: TimeRel::After },
                        Obligation::HoldsAt { fluent: "hrim_data_ready".into(), holds: true, rel: TimeRel::Same },
                    ],
                    within: 5,
                },
            ],
        )
    }

    fn nominal_timeline() -> Timeline {
        Timeline::new(100)
            .initially("sensor_okay".into())
            .initially("bus_config_okay".into())
            .with_happens("read_sensor_data", 10).unwrap()
            .with_happens("store_sensor_data", 11).unwrap()
            .with_happens("read_sensor_data", 30).unwrap()
            .with_happens("store_sensor_data", 31).unwrap()
    }

    #[test]
    fn nominal_hrim_sequence_satisfied() {
        let out = evaluate_pattern(&hrim_pattern_1_to_3(), &hrim_rules(), &nominal_timeline(), 50).unwrap();
        assert_eq!(out, PatternOutcome::Satisfied);
    }

    #[test]
    fn empty_timeline_is_pending() {
        let tl = Timeline::new(100).initially("sensor_okay".into()).initially("bus_config_okay".into());
        let out = evaluate_pattern(&hrim_pattern_1_to_3(), &hrim_rules(), &tl, 50).unwrap();
        assert_eq!(out, PatternOutcome::Pending);
    }

    #[test]
    fn pending_until_deadline_then_violated() {
        let tl = Timeline::new(100)
            .initially("sensor_okay".into())
            .initially("bus_config_okay".into())
            .with_happens("read_sensor_data", 10).unwrap();
        let p = hrim_pattern_1_to_3();
        let rep = evaluate_pattern_report(&p, &hrim_rules(), &tl, 12).unwrap();
        assert_eq!(rep.outcome, PatternOutcome::Pending);
        assert_eq!(rep.next_deadline, Some(15));
        assert_eq!(
            evaluate_pattern(&p, &hrim_rules(), &tl, 15).unwrap(),
            PatternOutcome::Violated { clause: 3 }
        );
    }

    fn i2m_rules() -> RuleSet {
        let mut r = RuleSet::new();
        r.add(EcRule::initiates("store_sensor_data", "hrim_data_ready".into())).unwrap();
        r.add(EcRule::terminates("i2m_read_data", "hrim_data_ready".into())).unwrap();
        r.add(EcRule::terminates("i2m_read_data", "sensor_idle".into())).unwrap();
        r.declare_action("i2m_parse_data");
        r
    }

    fn i2m_pattern_1_to_3() -> Pattern {
        Pattern::new(
            "i2m",
            vec![
                Clause::Initially("sensor_idle".into()),
                Clause::Effect { action: "i2m_read_data".into(), values: vec![("sensor_idle".into(), false)] },
                Clause::Response {
                    trigger: Trigger::Rises("hrim_data_ready".into()),
                    obligations: vec![
                        Obligation::Happens { action: "i2m_read_data".into(), rel: TimeRel::After },
                        Obligation::Happens { action: "i2m_parse_data".into(), rel: TimeRel::After },
                    ],
                    within: 4,
                },
            ],
        )
    }

    #[test]
    fn read_before_data_ready_violates_clause_3() {
        let tl = Timeline::new(100)
            .initially("sensor_idle".into())
            .with_happens("i2m_read_data", 2).unwrap()
            .with_happens("store_sensor_data", 5).unwrap()
            .with_happens("i2m_parse_data", 6).unwrap();
        let out = evaluate_pattern(&i2m_pattern_1_to_3(), &i2m_rules(), &tl, 20).unwrap();
        assert_eq!(out, PatternOutcome::Violated { clause: 3 });
    }

    #[test]
    fn ordered_read_parse_satisfied() {
        let tl = Timeline::new(100)
            .initially("sensor_idle".into())
            .with_happens("store_sensor_data", 5).unwrap()
            .with_happens("i2m_read_data", 6).unwrap()
            .with_happens("i2m_parse_data", 7).unwrap();
        let rep = evaluate_pattern_report(&i2m_pattern_1_to_3(), &i2m_rules(), &tl, 20).unwrap();
        assert_eq!(rep.outcome, PatternOutcome::Satisfied);
        assert_eq!(rep.fired, vec![2, 3]);
    }

    #[test]
    fn unordered_variable_is_malformed() {
        let p = Pattern::new(
            "bad",
            vec![Clause::Response {
                trigger: Trigger::Happens("i2m_read_data".into()),
                obligations: vec![Obligation::Happens { action: "i2m_parse_data".into(), rel: TimeRel::Unordered }],
                within: 3,
            }],
        );
        let tl = Timeline::new(10);
        assert!(matches!(evaluate_pattern(&p, &i2m_rules(), &tl, 5), Err(EcError::MalformedPattern(_))));
    }

    #[test]
    fn mitigation_clause_fires_on_fall() {
        let mut r = hrim_rules();
        r.declare_fluent("sensor_okay".into());
        let p = Pattern::new(
            "hrim4",
            vec![Clause::Response {
                trigger: Trigger::Falls("sensor_okay".into()),
                obligations: vec![
                    Obligation::Happens { action: "i2m_send_InfoToDisconnect".into(), rel: TimeRel::Same },
                    Obligation::Happens { action: "cross_bar_en".into(), rel: TimeRel::Same },
                    Obligation::HoldsAt { fluent: "sensor_reconfig".into(), holds: true, rel: TimeRel::Same },
                ],
                within: 0,
            }],
        );
        let tl = Timeline::new(50)
            .initially("sensor_okay".into())
            .with_happens("bus_fault", 7).unwrap()
            .with_happens("i2m_send_InfoToDisconnect", 7).unwrap()
            .with_happens("cross_bar_en", 7).unwrap();
        let rep = evaluate_pattern_report(&p, &r, &tl, 9).unwrap();
        assert_eq!(rep.outcome, PatternOutcome::Satisfied);
        assert_eq!(rep.fired, vec![1]);
        let missing = Timeline::new(50)
            .initially("sensor_okay".into())
            .with_happens("bus_fault", 7).unwrap();
        assert_eq!(evaluate_pattern(&p, &r, &missing, 9).unwrap(), PatternOutcome::Violated { clause: 1 });
    }
}
