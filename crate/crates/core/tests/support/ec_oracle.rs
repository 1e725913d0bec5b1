//! Random small narratives and a brute-force replay of them.
//!
//! The replay walks ticks forward from 0, applying each tick's occurrences
//! at once: a terminating occurrence beats an initiating one on the same
//! tick, and a fluent's value at `t` already reflects tick `t`.

use std::collections::BTreeSet;

use mlmon_core::ec::{clipped, holds_at, ActionLabel, EcRule, FluentId, RuleSet, Tick, Timeline};
use proptest::prelude::*;

pub const MAX_HORIZON: Tick = 12;
pub const MAX_FLUENTS: usize = 3;
pub const MAX_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    None,
    Initiates,
    Terminates,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub horizon: Tick,
    pub fluents: usize,
    pub actions: usize,
    /// `effects[a][f]`
    pub effects: Vec<Vec<Effect>>,
    pub initially: Vec<bool>,
    pub happens: BTreeSet<(Tick, usize)>,
}

fn fluent(i: usize) -> FluentId {
    FluentId::new(format!("f{i}"))
}

fn action(i: usize) -> ActionLabel {
    ActionLabel::new(format!("a{i}"))
}

pub fn case() -> impl Strategy<Value = Case> {
    (0..=MAX_HORIZON, 1..=MAX_FLUENTS, 1..=MAX_ACTIONS).prop_flat_map(|(horizon, fluents, actions)| {
        let effect = prop_oneof![Just(Effect::None), Just(Effect::Initiates), Just(Effect::Terminates)];
        (
            proptest::collection::vec(proptest::collection::vec(effect, fluents), actions),
            proptest::collection::vec(any::<bool>(), fluents),
            proptest::collection::btree_set((0..=horizon, 0..actions), 0..=12),
        )
            .prop_map(move |(effects, initially, happens)| Case { horizon, fluents, actions, effects, initially, happens })
    })
}

impl Case {
    pub fn rules(&self) -> RuleSet {
        let mut r = RuleSet::new();
        for f in 0..self.fluents {
            r.declare_fluent(fluent(f));
        }
        for a in 0..self.actions {
            r.declare_action(action(a));
            for f in 0..self.fluents {
                let rule = match self.effects[a][f] {
                    Effect::None => continue,
                    Effect::Initiates => EcRule::initiates(action(a), fluent(f)),
                    Effect::Terminates => EcRule::terminates(action(a), fluent(f)),
                };
                r.add(rule).expect("one effect per action and fluent");
            }
        }
        r
    }

    pub fn timeline(&self) -> Timeline {
        let mut tl = Timeline::new(self.horizon);
        for f in (0..self.fluents).filter(|f| self.initially[*f]) {
            tl.set_initially(fluent(f));
        }
        for (t, a) in &self.happens {
            tl.record_happens(action(*a), *t).expect("distinct occurrences within the horizon");
        }
        tl
    }

    fn effects_at(&self, t: Tick, f: usize) -> impl Iterator<Item = Effect> + '_ {
        self.happens.iter().filter(move |(tick, _)| *tick == t).map(move |(_, a)| self.effects[*a][f])
    }

    /// Value of every tick `0..=horizon` for fluent `f`.
    pub fn replay(&self, f: usize) -> Vec<bool> {
        let mut v = self.initially[f];
        (0..=self.horizon)
            .map(|t| {
                let here: Vec<Effect> = self.effects_at(t, f).collect();
                if here.contains(&Effect::Terminates) {
                    v = false;
                } else if here.contains(&Effect::Initiates) {
                    v = true;
                }
                v
            })
            .collect()
    }

    pub fn brute_clipped(&self, t1: Tick, f: usize, t2: Tick) -> bool {
        (t1 + 1..=t2).any(|t| self.effects_at(t, f).any(|e| e == Effect::Terminates))
    }

    /// Compares the engine with the replay on every query the case allows.
    pub fn check(&self) -> Result<(), String> {
        let rules = self.rules();
        let tl = self.timeline();
        for f in 0..self.fluents {
            let expected = self.replay(f);
            for t in 0..=self.horizon {
                let got = holds_at(&rules, &tl, &fluent(f), t).map_err(|e| e.to_string())?;
                if got != expected[t as usize] {
                    return Err(format!("holds_at(f{f}, {t}) = {got}, replay says {} in {self:?}", expected[t as usize]));
                }
                for t1 in 0..=t {
                    let got = clipped(&rules, &tl, t1, &fluent(f), t).map_err(|e| e.to_string())?;
                    if got != self.brute_clipped(t1, f, t) {
                        return Err(format!("clipped({t1}, f{f}, {t}) = {got} in {self:?}"));
                    }
                }
            }
        }
        Ok(())
    }
}
