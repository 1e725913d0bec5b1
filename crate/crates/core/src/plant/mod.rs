//! The simulated flight-control system: two serial sensors, a crossbar
//! between them and the autopilot, and a processor running the program
//! image.
//!
//! A tick runs as [`Plant::begin_tick`] (actuations issued on the previous
//! tick take effect), then any fault injection, then [`Plant::step`].

pub mod bus;
pub mod firmware;
pub mod isa;
pub mod program;
pub mod sensors;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::PlantError;
use bus::{BusConfig, Transmission};
use firmware::FirmwareImage;
use isa::{Cpu, Executed, Memory};
use sensors::{FrameInjection, SensorKind, SensorModel};

pub const TICK_RATE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connection {
    Connected,
    Isolated,
}

/// Commands from the monitors, applied at the start of the next tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Actuation {
    Isolate { sensor: String },
    Reconnect { sensor: String },
    Reset { sensor: String },
    Reconfigure { sensor: String, baud: u32 },
    /// Lets the processor start executing.
    Permit,
    /// Redirects execution to the failsafe routine.
    Failsafe { address: u32 },
}

impl Actuation {
    pub fn sensor(&self) -> Option<&str> {
        match self {
            Actuation::Isolate { sensor }
            | Actuation::Reconnect { sensor }
            | Actuation::Reset { sensor }
            | Actuation::Reconfigure { sensor, .. } => Some(sensor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    pub baud: u32,
    pub emit_period: Tick,
    pub offset: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantConfig {
    pub tick_rate: u64,
    pub seed: u64,
    pub insn_period: Tick,
    pub sensors: Vec<SensorSpec>,
    pub firmware: FirmwareImage,
    pub entry: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFate {
    /// Reached the monitor-side receive channel with the crossbar closed.
    Delivered,
    /// Crossbar open when the frame finished.
    Blocked,
    /// Receive channel locked up.
    Dropped,
}

impl FrameFate {
    pub fn name(self) -> &'static str {
        match self {
            FrameFate::Delivered => "delivered",
            FrameFate::Blocked => "blocked",
            FrameFate::Dropped => "dropped",
        }
    }
}

impl std::str::FromStr for FrameFate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [FrameFate::Delivered, FrameFate::Blocked, FrameFate::Dropped]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown frame fate {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStart {
    pub sensor: String,
    pub seq: u64,
    pub bit_period: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameEnd {
    pub sensor: String,
    pub seq: u64,
    pub burst_start: Tick,
    pub bytes: Vec<u8>,
    pub fate: FrameFate,
}

/// Line activity seen by the bus monitor on one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusActivity {
    pub edge: Option<bool>,
    pub end_of_burst: bool,
}

/// Everything observable from one plant tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlantStep {
    pub tick: Tick,
    pub bus: BTreeMap<String, BusActivity>,
    pub started: Vec<FrameStart>,
    pub finished: Vec<FrameEnd>,
    /// Sensors whose monitor-side receive channel is alive.
    pub rx_alive: Vec<String>,
    pub executed: Option<Executed>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounters {
    pub emitted: u64,
    pub delivered: u64,
    pub blocked: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct SensorState {
    model: SensorModel,
    tx: Option<(u64, Transmission, usize)>,
    connection: Connection,
    forced_baud: Option<(u32, bool)>,
    lockup: Option<bool>,
    counters: FrameCounters,
}

impl SensorState {
    fn effective_baud(&self) -> u32 {
        self.forced_baud.map_or(self.model.config.baud, |(b, _)| b)
    }
}

/// Read access to processor memory, as seen through a debug port.
pub trait MemoryView {
    fn code_base(&self) -> u32;
    fn live_code(&self) -> &[u32];
    fn read_word(&self, addr: u32) -> Result<u32, PlantError>;
}

impl MemoryView for isa::Memory {
    fn code_base(&self) -> u32 {
        self.code_base
    }

    fn live_code(&self) -> &[u32] {
        &self.code
    }

    fn read_word(&self, addr: u32) -> Result<u32, PlantError> {
        self.read(addr)
    }
}

impl MemoryView for Plant {
    fn code_base(&self) -> u32 {
        self.mem.code_base
    }

    fn live_code(&self) -> &[u32] {
        &self.mem.code
    }

    fn read_word(&self, addr: u32) -> Result<u32, PlantError> {
        self.mem.read(addr)
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    sensors: Vec<SensorState>,
    mem: Memory,
    cpu: Cpu,
    permitted: bool,
    pending: Vec<Actuation>,
    last_tick: Option<Tick>,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self, PlantError> {
        let mut sensors = Vec::new();
        for s in &cfg.sensors {
            if s.emit_period == 0 {
                return Err(PlantError::InvalidConfig(format!("{}: emit period must be positive", s.id)));
            }
            let bus = BusConfig::new(s.id.clone(), s.baud)?;
            sensors.push(SensorState {
                model: SensorModel::new(s.id.clone(), s.kind, s.emit_period, s.offset, bus),
                tx: None,
                connection: Connection::Connected,
                forced_baud: None,
                lockup: None,
                counters: FrameCounters::default(),
            });
        }
        let mem = Memory::new(cfg.firmware.base_address, cfg.firmware.words().to_vec());
        let cpu = Cpu::new(cfg.entry);
        Ok(Plant { cfg, sensors, mem, cpu, permitted: false, pending: Vec::new(), last_tick: None })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    fn sensor_mut(&mut self, id: &str) -> Result<&mut SensorState, PlantError> {
        self.sensors
            .iter_mut()
            .find(|s| s.model.id == id)
            .ok_or_else(|| PlantError::UnknownSensor(id.to_string()))
    }

    fn sensor(&self, id: &str) -> Result<&SensorState, PlantError> {
        self.sensors
            .iter()
            .find(|s| s.model.id == id)
            .ok_or_else(|| PlantError::UnknownSensor(id.to_string()))
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.model.id.clone()).collect()
    }

    pub fn sensor_model(&self, id: &str) -> Result<&SensorModel, PlantError> {
        Ok(&self.sensor(id)?.model)
    }

    pub fn connection(&self, id: &str) -> Result<Connection, PlantError> {
        Ok(self.sensor(id)?.connection)
    }

    pub fn counters(&self, id: &str) -> Result<&FrameCounters, PlantError> {
        Ok(&self.sensor(id)?.counters)
    }

    /// Bit period the sensor will use for its next message.
    pub fn bit_period(&self, id: &str) -> Result<u64, PlantError> {
        let s = self.sensor(id)?;
        Ok(BusConfig::new(id, s.effective_baud())?.bit_period_ticks(self.cfg.tick_rate))
    }

    pub fn nominal_bit_period(&self, id: &str) -> Result<u64, PlantError> {
        Ok(self.sensor(id)?.model.nominal.bit_period_ticks(self.cfg.tick_rate))
    }

    pub fn pc(&self) -> u32 {
        self.cpu.pc
    }

    pub fn halted(&self) -> bool {
        self.cpu.halted
    }

    pub fn permitted(&self) -> bool {
        self.permitted
    }

    /// Queues a command for the next tick boundary.
    pub fn actuate(&mut self, a: Actuation) -> Result<(), PlantError> {
        if let Some(id) = a.sensor() {
            self.sensor(id)?;
        }
        self.pending.push(a);
        Ok(())
    }

    /// Isolates or reconnects a sensor at the next tick boundary.
    pub fn set_crossbar(&mut self, sensor: &str, state: Connection) -> Result<(), PlantError> {
        let sensor = sensor.to_string();
        self.actuate(match state {
            Connection::Connected => Actuation::Reconnect { sensor },
            Connection::Isolated => Actuation::Isolate { sensor },
        })
    }

    /// Restores the given bus configuration at the next tick boundary.
    pub fn reconfigure_sensor(&mut self, sensor: &str, baud: u32) -> Result<(), PlantError> {
        BusConfig::new(sensor, baud)?;
        self.actuate(Actuation::Reconfigure { sensor: sensor.to_string(), baud })
    }

    /// Applies queued actuations for tick `t` and returns them.
    pub fn begin_tick(&mut self, t: Tick) -> Result<Vec<Actuation>, PlantError> {
        let expected = self.last_tick.map_or(0, |k| k + 1);
        if t != expected {
            return Err(PlantError::InvalidConfig(format!("plant stepped to {t}, expected {expected}")));
        }
        let pending = std::mem::take(&mut self.pending);
        for a in &pending {
            match a {
                Actuation::Isolate { sensor } => self.sensor_mut(sensor)?.connection = Connection::Isolated,
                Actuation::Reconnect { sensor } => self.sensor_mut(sensor)?.connection = Connection::Connected,
                Actuation::Reset { sensor } => {
                    let s = self.sensor_mut(sensor)?;
                    if s.lockup == Some(true) {
                        s.lockup = None;
                    }
                }
                Actuation::Reconfigure { sensor, baud } => {
                    let s = self.sensor_mut(sensor)?;
                    s.model.config = BusConfig::new(sensor.clone(), *baud)?;
                    if matches!(s.forced_baud, Some((_, true))) {
                        s.forced_baud = None;
                    }
                    if matches!(s.model.injection, Some((_, true))) {
                        s.model.injection = None;
                    }
                }
                Actuation::Permit => self.permitted = true,
                Actuation::Failsafe { address } => {
                    self.cpu.pc = *address;
                    self.cpu.halted = false;
                }
            }
        }
        Ok(pending)
    }

    /// Forces the sensor's line rate; the change shows from its next message.
    pub fn force_baud(&mut self, sensor: &str, baud: u32, recoverable: bool) -> Result<(), PlantError> {
        BusConfig::new(sensor, baud)?;
        self.sensor_mut(sensor)?.forced_baud = Some((baud, recoverable));
        Ok(())
    }

    /// Silences the monitor-side receive channel of `sensor`.
    pub fn lock_up(&mut self, sensor: &str, recoverable: bool) -> Result<(), PlantError> {
        self.sensor_mut(sensor)?.lockup = Some(recoverable);
        Ok(())
    }

    pub fn inject_frames(&mut self, sensor: &str, inj: FrameInjection, recoverable: bool) -> Result<(), PlantError> {
        self.sensor_mut(sensor)?.model.injection = Some((inj, recoverable));
        Ok(())
    }

    /// Overwrites one word of code or RAM.
    pub fn tamper_memory(&mut self, addr: u32, value: u32) -> Result<(), PlantError> {
        self.mem.write(addr, value)
    }

    pub fn step(&mut self, t: Tick) -> PlantStep {
        self.last_tick = Some(t);
        let mut out = PlantStep { tick: t, ..Default::default() };
        let tick_rate = self.cfg.tick_rate;
        let seed = self.cfg.seed;
        for s in &mut self.sensors {
            let id = s.model.id.clone();
            if s.tx.is_none() {
                if let Some(seq) = s.model.due(t) {
                    let period = BusConfig::new(id.clone(), s.effective_baud())
                        .map(|b| b.bit_period_ticks(tick_rate))
                        .unwrap_or(1);
                    let bytes = s.model.emit(t, seed, seq);
                    s.counters.emitted += 1;
                    out.started.push(FrameStart { sensor: id.clone(), seq, bit_period: period, bytes: bytes.clone() });
                    s.tx = Some((seq, Transmission::new(t, period, bytes), 0));
                }
            }
            let alive = s.lockup.is_none();
            if alive {
                out.rx_alive.push(id.clone());
            }
            let mut activity = BusActivity { edge: None, end_of_burst: false };
            let mut done = false;
            if let Some((seq, tx, idx)) = &mut s.tx {
                if *idx < tx.edges.len() && tx.edges[*idx].0 == t {
                    activity.edge = Some(tx.edges[*idx].1);
                    *idx += 1;
                }
                if t == tx.end {
                    activity.end_of_burst = true;
                    done = true;
                    let fate = if !alive {
                        s.counters.dropped += 1;
                        FrameFate::Dropped
                    } else if s.connection == Connection::Isolated {
                        s.counters.blocked += 1;
                        FrameFate::Blocked
                    } else {
                        s.counters.delivered += 1;
                        FrameFate::Delivered
                    };
                    out.finished.push(FrameEnd {
                        sensor: id.clone(),
                        seq: *seq,
                        burst_start: tx.start,
                        bytes: tx.bytes.clone(),
                        fate,
                    });
                }
            }
            if done {
                s.tx = None;
            }
            if alive && (activity.edge.is_some() || activity.end_of_burst) {
                out.bus.insert(id, activity);
            }
        }
        if self.permitted && self.cfg.insn_period > 0 && t.is_multiple_of(self.cfg.insn_period) {
            out.executed = self.cpu.step(&mut self.mem, t);
        }
        out
    }
}

/// Default two-sensor configuration running the built-in program.
pub fn default_sensors() -> Vec<SensorSpec> {
    vec![
        SensorSpec { id: "gps".into(), kind: SensorKind::Gps, baud: bus::NOMINAL_BAUD, emit_period: 20_000, offset: 1_000 },
        SensorSpec { id: "baro".into(), kind: SensorKind::Baro, baud: bus::NOMINAL_BAUD, emit_period: 10_000, offset: 2_500 },
    ]
}

pub fn builtin_firmware() -> FirmwareImage {
    FirmwareImage::new(isa::CODE_BASE, program::build_image())
}

impl PlantConfig {
    pub fn builtin(seed: u64) -> Self {
        PlantConfig {
            tick_rate: TICK_RATE,
            seed,
            insn_period: 100,
            sensors: default_sensors(),
            firmware: builtin_firmware(),
            entry: program::MAIN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(plant: &mut Plant, ticks: std::ops::Range<Tick>) -> Vec<PlantStep> {
        ticks
            .map(|t| {
                plant.begin_tick(t).unwrap();
                plant.step(t)
            })
            .collect()
    }

    #[test]
    fn gps_frame_measured_period() {
        let mut p = Plant::new(PlantConfig::builtin(1)).unwrap();
        let steps = run(&mut p, 0..10_000);
        let edges: Vec<Tick> = steps
            .iter()
            .filter(|s| s.bus.get("gps").is_some_and(|a| a.edge.is_some()))
            .map(|s| s.tick)
            .collect();
        assert_eq!(bus::measure_bit_period("gps", &edges).unwrap(), 17);
        assert_eq!(p.counters("gps").unwrap().delivered, 1);
    }

    #[test]
    fn isolation_applies_next_tick_and_blocks() {
        let mut p = Plant::new(PlantConfig::builtin(1)).unwrap();
        run(&mut p, 0..500);
        p.set_crossbar("gps", Connection::Isolated).unwrap();
        assert_eq!(p.connection("gps").unwrap(), Connection::Connected);
        run(&mut p, 500..10_000);
        assert_eq!(p.connection("gps").unwrap(), Connection::Isolated);
        let c = p.counters("gps").unwrap();
        assert_eq!((c.emitted, c.delivered, c.blocked), (1, 0, 1));
        assert!(matches!(p.set_crossbar("imu", Connection::Isolated), Err(PlantError::UnknownSensor(_))));
    }

    #[test]
    fn baud_change_from_next_message() {
        let mut p = Plant::new(PlantConfig::builtin(1)).unwrap();
        run(&mut p, 0..5_000);
        p.force_baud("gps", 115_200, true).unwrap();
        let steps = run(&mut p, 5_000..25_000);
        let start = steps.iter().flat_map(|s| s.started.iter()).find(|f| f.sensor == "gps").unwrap();
        assert_eq!(start.bit_period, 9);
        p.reconfigure_sensor("gps", 57_600).unwrap();
        run(&mut p, 25_000..25_001);
        assert_eq!(p.bit_period("gps").unwrap(), 17);
    }

    #[test]
    fn program_runs_only_after_permit() {
        let mut p = Plant::new(PlantConfig::builtin(1)).unwrap();
        let steps = run(&mut p, 0..300);
        assert!(steps.iter().all(|s| s.executed.is_none()));
        p.actuate(Actuation::Permit).unwrap();
        let steps = run(&mut p, 300..1_000);
        let first = steps.iter().find_map(|s| s.executed.as_ref()).unwrap();
        assert_eq!(first.pc, program::MAIN);
        assert!(p.tamper_memory(0x3000_0000, 1).is_err());
    }
}
