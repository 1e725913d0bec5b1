//! Plant observations as log entries, and back.
//!
//! A run log carries every plant-side fact the monitors consume: bus line
//! activity, frame boundaries, receive-channel liveness, executed
//! instructions with their stores and branches, and memory writes made by
//! injections. [`PlantReplay`] turns those records back into the
//! [`PlantStep`] and memory image the monitors saw.

use std::collections::BTreeSet;

use crate::ec::Tick;
use crate::error::LogError;
use crate::log::{Entry, LogRecord, RecordKind, Source};
use crate::plant::firmware::FirmwareImage;
use crate::plant::isa::{BranchEvent, Executed, Memory};
use crate::plant::program::parse_u32;
use crate::plant::{BusActivity, FrameEnd, FrameStart, PlantStep};

fn hex32(v: u32) -> String {
    format!("{v:#010x}")
}

fn edge_text(e: Option<bool>) -> &'static str {
    match e {
        Some(true) => "1",
        Some(false) => "0",
        None => "-",
    }
}

/// Log entries for one plant tick. `alive` holds the receive channels that
/// were alive after the previous tick and is updated; liveness is logged
/// on tick 0 and on every change.
pub fn plant_entries(ps: &PlantStep, sensors: &[String], alive: &mut BTreeSet<String>) -> Vec<Entry> {
    let mut out = Vec::new();
    let frame = || Entry::new(Source::Plant, RecordKind::Frame);
    for s in sensors {
        let now = ps.rx_alive.contains(s);
        if ps.tick == 0 || now != alive.contains(s) {
            out.push(Entry::new(Source::Plant, RecordKind::Event).with("what", "rx").with("sensor", s).with("alive", now));
            if now {
                alive.insert(s.clone());
            } else {
                alive.remove(s);
            }
        }
    }
    for f in &ps.started {
        out.push(
            frame()
                .with("phase", "start")
                .with("sensor", &f.sensor)
                .with("seq", f.seq)
                .with("bit_period", f.bit_period)
                .with("bytes", hex::encode(&f.bytes)),
        );
    }
    for (s, a) in &ps.bus {
        out.push(frame().with("phase", "bus").with("sensor", s).with("edge", edge_text(a.edge)).with("end", a.end_of_burst));
    }
    for f in &ps.finished {
        out.push(
            frame()
                .with("phase", "end")
                .with("sensor", &f.sensor)
                .with("seq", f.seq)
                .with("burst_start", f.burst_start)
                .with("bytes", hex::encode(&f.bytes))
                .with("fate", f.fate.name()),
        );
    }
    if let Some(x) = &ps.executed {
        let mut e = Entry::new(Source::Plant, RecordKind::Event).with("what", "exec").with("pc", hex32(x.pc)).with("word", hex32(x.word));
        if let Some((a, v)) = x.mem_write {
            e = e.with("store_addr", hex32(a)).with("store_value", hex32(v));
        }
        if let Some(f) = &x.fault {
            e = e.with("fault", f);
        }
        out.push(e);
        if let Some(b) = &x.branch {
            let mut e = Entry::new(Source::Plant, RecordKind::Branch)
                .with("kind", b.kind)
                .with("site", hex32(b.site))
                .with("target", hex32(b.target))
                .with("return", hex32(b.return_address))
                .with("insn", hex32(b.insn_word));
            if let Some(s) = b.slot {
                e = e.with("slot", hex32(s));
            }
            out.push(e);
        }
    }
    out
}

fn corrupt(r: &LogRecord, reason: impl Into<String>) -> LogError {
    LogError::CorruptLog { line: r.line, reason: reason.into() }
}

fn field<'a>(r: &'a LogRecord, key: &str) -> Result<&'a str, LogError> {
    r.get(key).ok_or_else(|| corrupt(r, format!("{:?} record lacks {key}", r.kind)))
}

fn word(r: &LogRecord, key: &str) -> Result<u32, LogError> {
    parse_u32(field(r, key)?).map_err(|e| corrupt(r, format!("{key}: {e}")))
}

fn number(r: &LogRecord, key: &str) -> Result<u64, LogError> {
    field(r, key)?.parse().map_err(|e| corrupt(r, format!("{key}: {e}")))
}

fn flag(r: &LogRecord, key: &str) -> Result<bool, LogError> {
    field(r, key)?.parse().map_err(|e| corrupt(r, format!("{key}: {e}")))
}

fn bytes(r: &LogRecord, key: &str) -> Result<Vec<u8>, LogError> {
    hex::decode(field(r, key)?).map_err(|e| corrupt(r, format!("{key}: {e}")))
}

/// Rebuilds plant observations tick by tick from logged records.
#[derive(Debug, Clone)]
pub struct PlantReplay {
    sensors: Vec<String>,
    alive: BTreeSet<String>,
    mem: Memory,
}

impl PlantReplay {
    pub fn new(sensors: Vec<String>, firmware: &FirmwareImage) -> Self {
        PlantReplay {
            alive: sensors.iter().cloned().collect(),
            sensors,
            mem: Memory::new(firmware.base_address, firmware.words().to_vec()),
        }
    }

    pub fn memory(&self) -> &Memory {
        &self.mem
    }

    /// The plant step at `tick` from that tick's harness and plant
    /// records. Memory writes from both are applied in record order.
    pub fn rebuild(&mut self, tick: Tick, records: &[&LogRecord]) -> Result<PlantStep, LogError> {
        let mut ps = PlantStep { tick, ..Default::default() };
        let mut executed: Option<Executed> = None;
        for r in records {
            match (r.source, r.kind) {
                (Source::Harness, RecordKind::Injection) => {
                    if r.get("write_addr").is_some() {
                        let (a, v) = (word(r, "write_addr")?, word(r, "write_value")?);
                        self.mem.write(a, v).map_err(|e| corrupt(r, e.to_string()))?;
                    }
                }
                (Source::Plant, RecordKind::Event) => match field(r, "what")? {
                    "rx" => {
                        let s = field(r, "sensor")?.to_string();
                        if flag(r, "alive")? {
                            self.alive.insert(s);
                        } else {
                            self.alive.remove(&s);
                        }
                    }
                    "exec" => {
                        let mem_write = match r.get("store_addr") {
                            Some(_) => Some((word(r, "store_addr")?, word(r, "store_value")?)),
                            None => None,
                        };
                        if let Some((a, v)) = mem_write {
                            self.mem.write(a, v).map_err(|e| corrupt(r, e.to_string()))?;
                        }
                        executed = Some(Executed {
                            pc: word(r, "pc")?,
                            word: word(r, "word")?,
                            branch: None,
                            mem_write,
                            fault: r.get("fault").map(str::to_string),
                        });
                    }
                    other => return Err(corrupt(r, format!("unknown plant event {other}"))),
                },
                (Source::Plant, RecordKind::Frame) => {
                    let sensor = field(r, "sensor")?.to_string();
                    match field(r, "phase")? {
                        "start" => ps.started.push(FrameStart {
                            sensor,
                            seq: number(r, "seq")?,
                            bit_period: number(r, "bit_period")?,
                            bytes: bytes(r, "bytes")?,
                        }),
                        "bus" => {
                            let edge = match field(r, "edge")? {
                                "1" => Some(true),
                                "0" => Some(false),
                                "-" => None,
                                other => return Err(corrupt(r, format!("edge {other}"))),
                            };
                            ps.bus.insert(sensor, BusActivity { edge, end_of_burst: flag(r, "end")? });
                        }
                        "end" => ps.finished.push(FrameEnd {
                            sensor,
                            seq: number(r, "seq")?,
                            burst_start: number(r, "burst_start")?,
                            bytes: bytes(r, "bytes")?,
                            fate: field(r, "fate")?.parse().map_err(|e: String| corrupt(r, e))?,
                        }),
                        other => return Err(corrupt(r, format!("unknown frame phase {other}"))),
                    }
                }
                (Source::Plant, RecordKind::Branch) => {
                    let x = executed.as_mut().ok_or_else(|| corrupt(r, "branch without an executed instruction"))?;
                    x.branch = Some(BranchEvent {
                        tick,
                        kind: field(r, "kind")?.parse().map_err(|e: String| corrupt(r, e))?,
                        site: word(r, "site")?,
                        target: word(r, "target")?,
                        return_address: word(r, "return")?,
                        insn_word: word(r, "insn")?,
                        slot: match r.get("slot") {
                            Some(_) => Some(word(r, "slot")?),
                            None => None,
                        },
                    });
                }
                _ => {}
            }
        }
        ps.rx_alive = self.sensors.iter().filter(|s| self.alive.contains(*s)).cloned().collect();
        ps.executed = executed;
        Ok(ps)
    }
}
