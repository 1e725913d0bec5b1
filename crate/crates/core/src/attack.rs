//! Fault and attack injection, one kind per threat-model layer entry.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::{AttackError, PlantError};
use crate::plant::bus::{period_matches, BusConfig};
use crate::plant::isa::{CODE_BASE, STACK_TOP};
use crate::plant::program::{parse_u32, ReferenceCfg, IMAGE_END};
use crate::plant::sensors::{parse_frame, FrameInjection};
use crate::plant::{MemoryView, Plant, SensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Hardware,
    Information,
    Execution,
}

impl Layer {
    /// The monitor responsible for this layer.
    pub fn monitor(self) -> &'static str {
        match self {
            Layer::Hardware => crate::hrim::ID,
            Layer::Information => crate::i2m::ID,
            Layer::Execution => crate::eim::ID,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Hardware => "hardware",
            Layer::Information => "information",
            Layer::Execution => "execution",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    BaudChange,
    UartLockup,
    StuckValue,
    FrameCorrupt,
    MemoryTamper,
    FirmwareCorrupt,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::BaudChange,
        AttackKind::UartLockup,
        AttackKind::StuckValue,
        AttackKind::FrameCorrupt,
        AttackKind::MemoryTamper,
        AttackKind::FirmwareCorrupt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::BaudChange => "baud_change",
            AttackKind::UartLockup => "uart_lockup",
            AttackKind::StuckValue => "stuck_value",
            AttackKind::FrameCorrupt => "frame_corrupt",
            AttackKind::MemoryTamper => "memory_tamper",
            AttackKind::FirmwareCorrupt => "firmware_corrupt",
        }
    }

    /// A locked-up receiver leaves the bus timing intact; only the
    /// information monitor's inactivity check sees it, so it sits in that
    /// layer.
    pub fn layer(self) -> Layer {
        match self {
            AttackKind::BaudChange => Layer::Hardware,
            AttackKind::UartLockup | AttackKind::StuckValue | AttackKind::FrameCorrupt => Layer::Information,
            AttackKind::MemoryTamper | AttackKind::FirmwareCorrupt => Layer::Execution,
        }
    }

    pub fn target_doc(self) -> &'static str {
        match self {
            AttackKind::MemoryTamper | AttackKind::FirmwareCorrupt => "address",
            _ => "sensor id",
        }
    }

    pub fn params_doc(self) -> &'static str {
        match self {
            AttackKind::BaudChange => "baud",
            AttackKind::UartLockup => "-",
            AttackKind::StuckValue => "[payload]",
            AttackKind::FrameCorrupt => "offset, mask",
            AttackKind::MemoryTamper => "value",
            AttackKind::FirmwareCorrupt => "[mask]",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = AttackError;
    fn from_str(s: &str) -> Result<Self, AttackError> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| AttackError::UnknownKind(s.to_string()))
    }
}

/// Kind-specific parameters; which ones are required depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baud: Option<u32>,
    /// Fixed frame to repeat; without it the first frame after the attack
    /// is frozen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    /// XOR mask: one byte for frame_corrupt, one word for firmware_corrupt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u32>,
}

/// Default word mask for firmware corruption: flips the low byte.
pub const DEFAULT_FIRMWARE_MASK: u32 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target: String,
    pub at_tick: Tick,
    #[serde(default)]
    pub params: AttackParams,
    #[serde(default = "default_recoverable")]
    pub recoverable: bool,
}

fn default_recoverable() -> bool {
    true
}

impl AttackSpec {
    fn invalid(&self, reason: impl Into<String>) -> AttackError {
        AttackError::InvalidParams { kind: self.kind.to_string(), reason: reason.into() }
    }

    pub fn address(&self) -> Result<u32, AttackError> {
        parse_u32(&self.target).map_err(|_| AttackError::UnknownTarget(self.target.clone()))
    }

    /// Checks target and parameters against the plant's sensors and memory
    /// map without touching anything.
    pub fn validate(&self, sensors: &[SensorSpec], horizon: Tick) -> Result<(), AttackError> {
        if self.at_tick > horizon {
            return Err(self.invalid(format!("at_tick {} beyond horizon {horizon}", self.at_tick)));
        }
        let p = &self.params;
        match self.kind {
            AttackKind::BaudChange | AttackKind::UartLockup | AttackKind::StuckValue | AttackKind::FrameCorrupt => {
                if !sensors.iter().any(|s| s.id == self.target) {
                    return Err(AttackError::UnknownTarget(self.target.clone()));
                }
            }
            AttackKind::MemoryTamper | AttackKind::FirmwareCorrupt => {
                let addr = self.address()?;
                if addr % 4 != 0 {
                    return Err(self.invalid(format!("address {addr:#010x} is not word aligned")));
                }
            }
        }
        match self.kind {
            AttackKind::BaudChange => {
                let baud = p.baud.ok_or_else(|| self.invalid("missing baud"))?;
                BusConfig::new(self.target.clone(), baud).map_err(|e| self.invalid(e.to_string()))?;
            }
            AttackKind::StuckValue => {
                if p.payload.as_ref().is_some_and(Vec::is_empty) {
                    return Err(self.invalid("payload must not be empty"));
                }
            }
            AttackKind::FrameCorrupt => {
                p.offset.ok_or_else(|| self.invalid("missing offset"))?;
                let mask = p.mask.ok_or_else(|| self.invalid("missing mask"))?;
                if mask == 0 || mask > 0xFF {
                    return Err(self.invalid(format!("byte mask {mask:#x} must be in 1..=0xff")));
                }
            }
            AttackKind::MemoryTamper => {
                p.value.ok_or_else(|| self.invalid("missing value"))?;
            }
            AttackKind::FirmwareCorrupt => {
                let addr = self.address()?;
                if !(CODE_BASE..IMAGE_END).contains(&addr) {
                    return Err(self.invalid(format!("address {addr:#010x} is outside the firmware image")));
                }
                if p.mask == Some(0) {
                    return Err(self.invalid("mask must be non-zero"));
                }
            }
            AttackKind::UartLockup => {}
        }
        Ok(())
    }
}

fn sensor_target(spec: &AttackSpec, e: PlantError) -> AttackError {
    match e {
        PlantError::UnknownSensor(_) => AttackError::UnknownTarget(spec.target.clone()),
        other => AttackError::Plant(other),
    }
}

/// Mutates the plant as `spec` describes. Must be called at `spec.at_tick`,
/// between the tick's actuations and the plant step. Returns the memory
/// word written, if any, as `(address, new value)`.
pub fn apply(plant: &mut Plant, spec: &AttackSpec, tick: Tick) -> Result<Option<(u32, u32)>, AttackError> {
    if tick != spec.at_tick {
        return Err(spec.invalid(format!("scheduled for tick {}, applied at {tick}", spec.at_tick)));
    }
    spec.validate(&plant.config().sensors, Tick::MAX)?;
    let p = &spec.params;
    let id = spec.target.as_str();
    let on_sensor = |r: Result<(), PlantError>| r.map(|_| None).map_err(|e| sensor_target(spec, e));
    match spec.kind {
        AttackKind::BaudChange => on_sensor(plant.force_baud(id, p.baud.expect("validated"), spec.recoverable)),
        AttackKind::UartLockup => on_sensor(plant.lock_up(id, spec.recoverable)),
        AttackKind::StuckValue => {
            on_sensor(plant.inject_frames(id, FrameInjection::Stuck(p.payload.clone()), spec.recoverable))
        }
        AttackKind::FrameCorrupt => {
            let inj = FrameInjection::Corrupt { offset: p.offset.expect("validated"), mask: p.mask.expect("validated") as u8 };
            on_sensor(plant.inject_frames(id, inj, spec.recoverable))
        }
        AttackKind::MemoryTamper | AttackKind::FirmwareCorrupt => {
            let addr = spec.address()?;
            let unknown = |_| AttackError::UnknownTarget(spec.target.clone());
            let value = match spec.kind {
                AttackKind::MemoryTamper => p.value.expect("validated"),
                _ => plant.read_word(addr).map_err(unknown)? ^ p.mask.unwrap_or(DEFAULT_FIRMWARE_MASK),
            };
            plant.tamper_memory(addr, value).map_err(unknown)?;
            Ok(Some((addr, value)))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub applied: Vec<(AttackSpec, Tick)>,
}

impl InjectionLog {
    pub fn record(&mut self, spec: &AttackSpec, tick: Tick) {
        self.applied.push((spec.clone(), tick));
    }

    /// Whether every spec in `scheduled` was applied exactly once, on time.
    pub fn complete(&self, scheduled: &[AttackSpec]) -> bool {
        self.applied.len() == scheduled.len()
            && scheduled
                .iter()
                .all(|s| self.applied.iter().filter(|(a, t)| a == s && *t == s.at_tick).count() == 1)
    }
}

/// What the monitors can see, needed to work out where an attack shows.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub tick_rate: u64,
    pub baud_tolerance: f64,
    pub horizon: Tick,
    pub sensors: Vec<SensorSpec>,
    pub r_max: u32,
    pub repetition_check: bool,
    pub reference_cfg: ReferenceCfg,
    pub firmware_recheck: BTreeSet<Tick>,
    pub continuous_firmware: bool,
}

impl ObservationModel {
    fn first_frame_at_or_after(&self, s: &SensorSpec, t: Tick) -> Tick {
        if t <= s.offset {
            return s.offset;
        }
        s.offset + (t - s.offset).div_ceil(s.emit_period) * s.emit_period
    }

    fn next_firmware_check(&self, t: Tick) -> Option<Tick> {
        if t == 0 || self.continuous_firmware {
            return Some(t);
        }
        self.firmware_recheck.range(t..).next().copied()
    }

    /// Addresses compared word by word while the program runs.
    fn watched(&self, addr: u32) -> bool {
        self.reference_cfg.lookup(addr).is_some() || (STACK_TOP - 4..STACK_TOP).contains(&addr)
    }
}

/// Where and from when an attack's effect is visible to a monitor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observability {
    pub kind: AttackKind,
    pub layer: Layer,
    pub at_tick: Tick,
    pub streams: Vec<String>,
    /// Earliest tick the effect can appear on `streams`; `None` when it
    /// never reaches a monitored stream within the horizon.
    pub earliest: Option<Tick>,
    pub until: Tick,
}

pub fn ground_truth(attacks: &[AttackSpec], model: &ObservationModel) -> Vec<Observability> {
    attacks
        .iter()
        .map(|a| {
            let sensor = model.sensors.iter().find(|s| s.id == a.target);
            let (streams, earliest) = match (a.kind, sensor) {
                (AttackKind::BaudChange, Some(s)) => {
                    let baud = a.params.baud.unwrap_or(s.baud);
                    let period = |b: u32| BusConfig::new(s.id.clone(), b).map(|c| c.bit_period_ticks(model.tick_rate));
                    let visible = match (period(baud), period(s.baud)) {
                        (Ok(p), Ok(n)) => !period_matches(p, n, model.baud_tolerance),
                        _ => false,
                    };
                    (vec![format!("{}.bus", s.id)], visible.then(|| model.first_frame_at_or_after(s, a.at_tick)))
                }
                (AttackKind::UartLockup, Some(s)) => (vec![format!("{}.hrim_status", s.id)], Some(a.at_tick)),
                (AttackKind::StuckValue, Some(s)) => {
                    let first = model.first_frame_at_or_after(s, a.at_tick);
                    let malformed =
                        a.params.payload.as_ref().is_some_and(|p| parse_frame(s.kind, p, true, true).is_err());
                    let earliest = if malformed {
                        Some(first)
                    } else if model.repetition_check {
                        Some(first + u64::from(model.r_max) * s.emit_period)
                    } else {
                        None
                    };
                    (vec![format!("{}.verify", s.id)], earliest)
                }
                (AttackKind::FrameCorrupt, Some(s)) => {
                    (vec![format!("{}.verify", s.id)], Some(model.first_frame_at_or_after(s, a.at_tick)))
                }
                (AttackKind::MemoryTamper | AttackKind::FirmwareCorrupt, _) => match a.address() {
                    Ok(addr) => {
                        let mut streams = Vec::new();
                        let mut earliest: Option<Tick> = None;
                        if model.watched(addr) && a.at_tick > 0 {
                            streams.push(crate::eim::MEMORY_STREAM.to_string());
                            earliest = Some(a.at_tick);
                        }
                        if (CODE_BASE..IMAGE_END).contains(&addr) {
                            if let Some(t) = model.next_firmware_check(a.at_tick) {
                                streams.push(crate::eim::FIRMWARE_STREAM.to_string());
                                earliest = Some(earliest.map_or(t, |e| e.min(t)));
                            }
                        }
                        (streams, earliest)
                    }
                    Err(_) => (Vec::new(), None),
                },
                _ => (Vec::new(), None),
            };
            Observability {
                kind: a.kind,
                layer: a.kind.layer(),
                at_tick: a.at_tick,
                streams,
                earliest: earliest.filter(|t| *t <= model.horizon),
                until: model.horizon,
            }
        })
        .collect()
}
