//! Bounded sample windows over the monitored streams.
//!
//! Each stream keeps the last `m + 1` samples. Ticks with no sample are
//! recorded as a [`Value::Gap`] entry; consecutive gaps are folded into a
//! single entry whose `ticks` field counts them, so a silent stream does not
//! push real samples out of its window.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ec::{ActionLabel, Tick};
use crate::error::StreamError;
use crate::plant::isa::BranchEvent;

pub const DEFAULT_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Value {
    Bool { value: bool },
    Word { value: u32 },
    Int { value: i64 },
    Bytes { value: Vec<u8> },
    /// Receive-line activity: the new level if the line changed this tick,
    /// and whether a frame finished on this tick.
    Bus { edge: Option<bool>, end_of_burst: bool },
    Branch(BranchEvent),
    Verify { ok: bool, reason: Option<String> },
    MemCompare { addr: u32, live: u32, expected: u32 },
    Firmware { ok: bool },
    Action { label: ActionLabel },
    /// `ticks` consecutive ticks without a sample.
    Gap { ticks: u64 },
}

impl Value {
    pub fn bool(v: bool) -> Self {
        Value::Bool { value: v }
    }

    pub fn word(v: u32) -> Self {
        Value::Word { value: v }
    }

    pub fn bytes(v: impl Into<Vec<u8>>) -> Self {
        Value::Bytes { value: v.into() }
    }

    pub fn is_gap(&self) -> bool {
        matches!(self, Value::Gap { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tick: Tick,
    pub value: Value,
}

impl Sample {
    pub fn new(tick: Tick, value: Value) -> Self {
        Sample { tick, value }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamWindow {
    id: String,
    depth: usize,
    buf: Vec<Sample>,
    version: u64,
}

impl StreamWindow {
    /// A window of depth `m` holds at most `m + 1` samples.
    pub fn new(id: impl Into<String>, depth: usize) -> Self {
        assert!(depth > 0, "window depth must be positive");
        StreamWindow { id: id.into(), depth, buf: Vec::with_capacity(depth + 1), version: 0 }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Bumped on every mutation; lets callers cache derived results.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn push(&mut self, sample: Sample) -> Result<(), StreamError> {
        if let Some(last) = self.buf.last() {
            if sample.tick <= last.tick {
                return Err(StreamError::NonMonotonicTick {
                    stream: self.id.clone(),
                    tick: sample.tick,
                    last: last.tick,
                });
            }
        }
        self.buf.push(sample);
        if self.buf.len() > self.depth + 1 {
            self.buf.remove(0);
        }
        self.version += 1;
        Ok(())
    }

    /// Records that `tick` had no sample, extending a trailing gap entry if
    /// there is one.
    pub fn push_gap(&mut self, tick: Tick) -> Result<(), StreamError> {
        if let Some(last) = self.buf.last_mut() {
            if tick <= last.tick {
                return Err(StreamError::NonMonotonicTick { stream: self.id.clone(), tick, last: last.tick });
            }
            if let Value::Gap { ticks } = &mut last.value {
                *ticks += tick - last.tick;
                last.tick = tick;
                self.version += 1;
                return Ok(());
            }
        }
        self.push(Sample::new(tick, Value::Gap { ticks: 1 }))
    }

    /// Buffered samples, oldest first.
    pub fn prefix(&self) -> Result<&[Sample], StreamError> {
        if self.buf.is_empty() {
            Err(StreamError::EmptyWindow(self.id.clone()))
        } else {
            Ok(&self.buf)
        }
    }

    /// Same as [`prefix`](Self::prefix) but empty instead of an error.
    pub fn samples(&self) -> &[Sample] {
        &self.buf
    }

    pub fn last(&self) -> Option<&Sample> {
        self.buf.last()
    }

    pub fn last_value(&self) -> Option<&Value> {
        self.buf.last().map(|s| &s.value)
    }

    pub fn last_tick(&self) -> Option<Tick> {
        self.buf.last().map(|s| s.tick)
    }

    /// Most recent non-gap sample.
    pub fn last_present(&self) -> Option<&Sample> {
        self.buf.iter().rev().find(|s| !s.value.is_gap())
    }

    /// Consecutive ticks since the last real sample.
    pub fn gap_count(&self) -> u64 {
        match self.last_value() {
            Some(Value::Gap { ticks }) => *ticks,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub tick: Tick,
    pub from_state: String,
    pub to_state: String,
    pub cause: ActionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Input,
    Output,
    Transition,
    State,
}

/// All windows observed by one monitor, advanced in lockstep.
#[derive(Debug, Clone, Default)]
pub struct MonitoredStreams {
    current: Option<Tick>,
    windows: BTreeMap<String, StreamWindow>,
    roles: BTreeMap<String, StreamRole>,
    delta: VecDeque<TransitionRecord>,
    delta_depth: usize,
}

impl MonitoredStreams {
    pub fn new() -> Self {
        MonitoredStreams { delta_depth: DEFAULT_DEPTH + 1, ..Default::default() }
    }

    pub fn register(&mut self, id: impl Into<String>, role: StreamRole, depth: usize) {
        let id = id.into();
        self.roles.insert(id.clone(), role);
        self.windows.insert(id.clone(), StreamWindow::new(id, depth));
    }

    pub fn current_tick(&self) -> Option<Tick> {
        self.current
    }

    pub fn window(&self, id: &str) -> Option<&StreamWindow> {
        self.windows.get(id)
    }

    pub fn windows(&self) -> impl Iterator<Item = &StreamWindow> {
        self.windows.values()
    }

    pub fn role(&self, id: &str) -> Option<StreamRole> {
        self.roles.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.windows.contains_key(id)
    }

    /// Moves every window to `tick`. Streams without an entry in `samples`
    /// get a gap. The first advance must be tick 0.
    pub fn advance<I, S>(&mut self, tick: Tick, samples: I) -> Result<(), StreamError>
    where
        I: IntoIterator<Item = (S, Value)>,
        S: AsRef<str>,
    {
        let expected = self.current.map_or(0, |k| k + 1);
        if tick != expected {
            return Err(StreamError::SkippedTick { expected, got: tick });
        }
        let mut given: BTreeMap<String, Value> = BTreeMap::new();
        for (id, v) in samples {
            let id = id.as_ref();
            if !self.windows.contains_key(id) {
                return Err(StreamError::UnregisteredStream(id.to_string()));
            }
            given.insert(id.to_string(), v);
        }
        for (id, w) in self.windows.iter_mut() {
            match given.remove(id) {
                Some(v) => w.push(Sample::new(tick, v))?,
                None => w.push_gap(tick)?,
            }
        }
        self.current = Some(tick);
        Ok(())
    }

    /// Appends to the transition stream; each record must leave the state
    /// the previous one entered.
    pub fn record_transition(&mut self, rec: TransitionRecord) -> Result<(), StreamError> {
        if let Some(prev) = self.delta.back() {
            if prev.to_state != rec.from_state {
                return Err(StreamError::BrokenTransitionChain {
                    tick: rec.tick,
                    from: rec.from_state,
                    expected: prev.to_state.clone(),
                });
            }
            if rec.tick < prev.tick {
                return Err(StreamError::NonMonotonicTick {
                    stream: "delta".into(),
                    tick: rec.tick,
                    last: prev.tick,
                });
            }
        }
        self.delta.push_back(rec);
        while self.delta.len() > self.delta_depth {
            self.delta.pop_front();
        }
        Ok(())
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.delta.iter()
    }
}
