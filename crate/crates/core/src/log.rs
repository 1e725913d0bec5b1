//! Run logs: newline-delimited JSON, one header line followed by one record
//! per line.
//!
//! Within a tick, records appear in execution order of their sources
//! (scheduler, harness, plant, then the monitors in schedule order) and
//! `seq` counts records from 0 across the whole log. A reader rejects any
//! log that breaks this order. Missing records leave gaps in `seq`; those
//! are left for replay to find.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::LogError;

pub const SCHEMA: &str = "mlmon-log/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Scheduler,
    Harness,
    Plant,
    Hrim,
    I2m,
    Eim,
}

impl Source {
    pub fn of_monitor(id: &str) -> Option<Source> {
        match id {
            crate::hrim::ID => Some(Source::Hrim),
            crate::i2m::ID => Some(Source::I2m),
            crate::eim::ID => Some(Source::Eim),
            _ => None,
        }
    }

    pub fn is_monitor(self) -> bool {
        matches!(self, Source::Hrim | Source::I2m | Source::Eim)
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::Scheduler => "scheduler",
            Source::Harness => "harness",
            Source::Plant => "plant",
            Source::Hrim => "hrim",
            Source::I2m => "i2m",
            Source::Eim => "eim",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Event,
    FluentChange,
    Verdict,
    Mitigation,
    Branch,
    Frame,
    Injection,
}

pub type Payload = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: Tick,
    pub source: Source,
    pub kind: RecordKind,
    pub seq: u64,
    pub payload: Payload,
    /// Line in the log file, header being line 1. Not serialised.
    #[serde(skip)]
    pub line: usize,
}

impl LogRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }
}

/// A record before it has been given its place in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub source: Source,
    pub kind: RecordKind,
    pub payload: Payload,
}

impl Entry {
    pub fn new(source: Source, kind: RecordKind) -> Self {
        Entry { source, kind, payload: Payload::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.payload.insert(key.to_string(), value.to_string());
        self
    }

    pub fn extend<'a>(mut self, fields: impl IntoIterator<Item = (&'a String, &'a String)>) -> Self {
        self.payload.extend(fields.into_iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }
}

/// Everything needed to rebuild the run: the scenario text and the values
/// that were overridden on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub scenario_name: String,
    pub scenario: String,
    /// Directory that relative paths in the scenario resolve against.
    pub base_dir: Option<String>,
    pub seed: u64,
    pub horizon: Tick,
}

pub struct LogWriter<W: Write> {
    out: W,
    seq: u64,
    line: usize,
    last_tick: Option<Tick>,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> Result<Self, LogError> {
        serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(LogWriter { out, seq: 0, line: 1, last_tick: None })
    }

    /// Writes one tick's entries, ordered by source; the sort is stable so
    /// each source's own order is kept.
    pub fn write_tick(&mut self, tick: Tick, mut entries: Vec<Entry>) -> Result<Vec<LogRecord>, LogError> {
        if self.last_tick.is_some_and(|l| tick <= l) {
            return Err(LogError::CorruptLog { line: 0, reason: format!("tick {tick} written out of order") });
        }
        self.last_tick = Some(tick);
        entries.sort_by_key(|e| e.source);
        let mut written = Vec::with_capacity(entries.len());
        for e in entries {
            self.line += 1;
            let rec = LogRecord { tick, source: e.source, kind: e.kind, seq: self.seq, payload: e.payload, line: self.line };
            self.seq += 1;
            serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
            self.out.write_all(b"\n")?;
            written.push(rec);
        }
        Ok(written)
    }

    pub fn finish(mut self) -> Result<W, LogError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parses a whole log, checking schema and ordering.
pub fn read_log(input: impl BufRead) -> Result<(LogHeader, Vec<LogRecord>), LogError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(LogError::CorruptLog { line: 1, reason: "empty log".into() })??;
    let header: LogHeader =
        serde_json::from_str(&first).map_err(|e| LogError::CorruptLog { line: 1, reason: format!("header: {e}") })?;
    if header.schema != SCHEMA {
        return Err(LogError::CorruptLog { line: 1, reason: format!("schema {} is not {SCHEMA}", header.schema) });
    }
    let mut records: Vec<LogRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: LogRecord =
            serde_json::from_str(&line).map_err(|e| LogError::CorruptLog { line: n, reason: e.to_string() })?;
        rec.line = n;
        if let Some(prev) = records.last() {
            if rec.seq <= prev.seq {
                return Err(LogError::CorruptLog {
                    line: n,
                    reason: format!("sequence number {} does not follow {}", rec.seq, prev.seq),
                });
            }
            if (rec.tick, rec.source) < (prev.tick, prev.source) {
                return Err(LogError::CorruptLog {
                    line: n,
                    reason: format!("record ({}, {}) follows ({}, {})", rec.tick, rec.source, prev.tick, prev.source),
                });
            }
        }
        records.push(rec);
    }
    Ok((header, records))
}
