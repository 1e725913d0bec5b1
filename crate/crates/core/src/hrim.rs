//! Hardware resource integrity monitor.
//!
//! Watches each sensor's receive line, measures the bit period of every
//! burst and compares it with the configured bus rate. Frames from bursts
//! with matching timing are copied into the sensor's register block; a
//! mismatch isolates the sensor through the crossbar and tells the
//! information monitor. The monitor never looks inside frame payloads.
//!
//! Register block layout, one per sensor, little-endian 32-bit words:
//!
//! | word | content |
//! |------|---------|
//! | 0 | status: bit 0 data ready, bit 1 sensor okay, bit 2 isolated, bits 16..32 frame sequence |
//! | 1 | payload length in bytes |
//! | 2.. | payload, zero padded to a whole word |

use std::collections::BTreeMap;

use crate::ec::{Clause, EcRule, FluentId, Obligation, Pattern, RuleSet, Tick, TimeRel, Timeline, Trigger};
use crate::error::MonitorError;
use crate::monitor::{DetectionPredicate, Monitor, MonitorEvent, MonitorOutput, Timelines};
use crate::plant::bus::{gcd, period_consistent, period_matches, BusConfig};
use crate::plant::{Actuation, FrameFate, PlantStep};
use crate::streams::{MonitoredStreams, Sample, StreamRole, Value};

pub const ID: &str = "hrim";

pub const SENSOR_OKAY: &str = "sensor_okay";
pub const BUS_CONFIG_OKAY: &str = "bus_config_okay";
pub const SENSOR_RECONFIG: &str = "sensor_reconfig";
pub const HRIM_DATA_READY: &str = "hrim_data_ready";

pub const READ_SENSOR_DATA: &str = "read_sensor_data";
pub const STORE_SENSOR_DATA: &str = "store_sensor_data";
pub const BUS_FAULT: &str = "bus_fault";
pub const CROSS_BAR_EN: &str = "cross_bar_en";
pub const SEND_INFO_TO_DISCONNECT: &str = "i2m_send_InfoToDisconnect";
pub const RECONNECT: &str = "reconnect";

/// Events exchanged with the information monitor.
pub const EV_STORED: &str = "hrim_data_stored";
pub const EV_DISCONNECT: &str = SEND_INFO_TO_DISCONNECT;
pub const EV_BUS_CHECK: &str = "bus_check";
pub const EV_RECONNECT: &str = "reconnect";

pub const REGISTER_BASE: u32 = 0x4000_0000;
pub const REGISTER_STRIDE: u32 = 0x100;
pub const STATUS_DATA_READY: u32 = 1;
pub const STATUS_SENSOR_OKAY: u32 = 1 << 1;
pub const STATUS_ISOLATED: u32 = 1 << 2;

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const BUS_WINDOW_DEPTH: usize = 128;

/// Store obligations must land within this many ticks of the read.
const STORE_WITHIN: Tick = 2;

pub fn bus_stream(sensor: &str) -> String {
    format!("{sensor}.bus")
}

pub fn timeline_name(sensor: &str) -> String {
    format!("{ID}.{sensor}")
}

/// `|observed - expected| <= tol * expected` on bit periods.
pub fn check_bus_config(observed_period: u64, expected: &BusConfig, tick_rate: u64, tol: f64) -> bool {
    period_matches(observed_period, expected.bit_period_ticks(tick_rate), tol)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BurstTiming {
    pub start: Tick,
    pub edges: usize,
    /// Greatest common divisor of the inter-edge gaps; 0 with fewer than
    /// two edges.
    pub period: u64,
    pub complete: bool,
}

impl BurstTiming {
    /// Whether the burst is consistent with bit period `expected`: a
    /// finished burst must match it, a running one must be a multiple.
    pub fn conforms(&self, expected: u64, tol: f64) -> bool {
        if self.edges < 2 {
            return true;
        }
        if self.complete {
            period_matches(self.period, expected, tol)
        } else {
            period_consistent(self.period, expected, tol)
        }
    }
}

/// Timing of the burst in progress, or of the last finished burst if the
/// line is idle.
pub fn latest_burst(samples: &[Sample]) -> Option<BurstTiming> {
    let is_end = |s: &Sample| matches!(s.value, Value::Bus { end_of_burst: true, .. });
    let is_edge = |s: &Sample| matches!(s.value, Value::Bus { edge: Some(_), .. });
    let last_end = samples.iter().rposition(is_end);
    let (slice, complete) = match last_end {
        Some(e) if samples[e + 1..].iter().any(is_edge) => (&samples[e + 1..], false),
        Some(e) => {
            let prev = samples[..e].iter().rposition(is_end).map_or(0, |p| p + 1);
            (&samples[prev..=e], true)
        }
        None => (samples, false),
    };
    let edges: Vec<Tick> = slice.iter().filter(|s| is_edge(s)).map(|s| s.tick).collect();
    let start = *edges.first()?;
    let period = edges.windows(2).map(|w| w[1] - w[0]).fold(0, gcd);
    Some(BurstTiming { start, edges: edges.len(), period, complete })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegisterBlock {
    pub base: u32,
    pub status: u32,
    pub payload: Vec<u8>,
}

impl RegisterBlock {
    pub fn words(&self) -> Vec<u32> {
        let mut w = vec![self.status, self.payload.len() as u32];
        w.extend(self.payload.chunks(4).map(|c| {
            let mut b = [0u8; 4];
            b[..c.len()].copy_from_slice(c);
            u32::from_le_bytes(b)
        }));
        w
    }

    pub fn sequence(&self) -> u16 {
        (self.status >> 16) as u16
    }

    pub fn data_ready(&self) -> bool {
        self.status & STATUS_DATA_READY != 0
    }

    /// Payload bytes recovered from a word image.
    pub fn payload_from_words(words: &[u32]) -> Option<Vec<u8>> {
        let len = *words.get(1)? as usize;
        let bytes: Vec<u8> = words.get(2..)?.iter().flat_map(|w| w.to_le_bytes()).collect();
        (bytes.len() >= len).then(|| bytes[..len].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct HrimConfig {
    pub tick_rate: u64,
    pub baud_tolerance: f64,
    /// Expected bus configuration per sensor, in register-map order.
    pub expected: Vec<BusConfig>,
    pub horizon: Tick,
}

impl HrimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.baud_tolerance > 0.0 && self.baud_tolerance < 0.2) {
            return Err(format!("baud tolerance {} outside (0, 0.2)", self.baud_tolerance));
        }
        if self.expected.is_empty() {
            return Err("no sensors configured".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Channel {
    expected: BusConfig,
    period: u64,
    okay: bool,
    burst_faulted: bool,
    pending_store: Option<(u64, Vec<u8>)>,
    seq: u16,
    regs: RegisterBlock,
}

impl Channel {
    fn refresh_status(&mut self, ready: bool) {
        let mut s = (self.seq as u32) << 16;
        if ready {
            s |= STATUS_DATA_READY;
        }
        if self.okay {
            s |= STATUS_SENSOR_OKAY;
        } else {
            s |= STATUS_ISOLATED;
        }
        self.regs.status = s;
    }
}

pub fn rules() -> RuleSet {
    let f = FluentId::new;
    let mut r = RuleSet::new();
    for (kind, action, fluent) in [
        (false, BUS_FAULT, SENSOR_OKAY),
        (false, BUS_FAULT, BUS_CONFIG_OKAY),
        (false, BUS_FAULT, HRIM_DATA_READY),
        (false, SEND_INFO_TO_DISCONNECT, SENSOR_OKAY),
        (true, CROSS_BAR_EN, SENSOR_RECONFIG),
        (false, CROSS_BAR_EN, BUS_CONFIG_OKAY),
        (false, CROSS_BAR_EN, HRIM_DATA_READY),
        (true, STORE_SENSOR_DATA, HRIM_DATA_READY),
        (true, RECONNECT, SENSOR_OKAY),
        (true, RECONNECT, BUS_CONFIG_OKAY),
        (false, RECONNECT, SENSOR_RECONFIG),
    ] {
        let rule = if kind { EcRule::initiates(action, f(fluent)) } else { EcRule::terminates(action, f(fluent)) };
        r.add(rule).expect("monitor rules are conflict free");
    }
    r.declare_action(READ_SENSOR_DATA);
    r
}

/// The four-clause monitor pattern over one sensor's timeline.
pub fn pattern(name: &str) -> Pattern {
    Pattern::new(
        name,
        vec![
            Clause::Initially(SENSOR_OKAY.into()),
            Clause::Invariant { unclipped: BUS_CONFIG_OKAY.into(), implies: SENSOR_OKAY.into() },
            Clause::Response {
                trigger: Trigger::HappensWhile { action: READ_SENSOR_DATA.into(), fluent: SENSOR_OKAY.into(), holds: true },
                obligations: vec![
                    Obligation::Happens { action: STORE_SENSOR_DATA.into(), rel: TimeRel::After },
                    Obligation::HoldsAt { fluent: HRIM_DATA_READY.into(), holds: true, rel: TimeRel::Same },
                ],
                within: STORE_WITHIN,
            },
            Clause::Response {
                trigger: Trigger::Falls(SENSOR_OKAY.into()),
                obligations: vec![
                    Obligation::Happens { action: SEND_INFO_TO_DISCONNECT.into(), rel: TimeRel::Same },
                    Obligation::Happens { action: CROSS_BAR_EN.into(), rel: TimeRel::Same },
                    Obligation::HoldsAt { fluent: SENSOR_RECONFIG.into(), holds: true, rel: TimeRel::Same },
                ],
                within: 0,
            },
        ],
    )
}

#[derive(Debug, Clone)]
pub struct Hrim {
    cfg: HrimConfig,
    rules: RuleSet,
    monitor: Monitor,
    streams: MonitoredStreams,
    timelines: Timelines,
    channels: BTreeMap<String, Channel>,
    order: Vec<String>,
}

impl Hrim {
    pub fn new(cfg: HrimConfig) -> Result<Self, MonitorError> {
        cfg.validate().map_err(MonitorError::Config)?;
        let rules = rules();
        let mut streams = MonitoredStreams::new();
        let mut timelines = Timelines::new();
        let mut channels = BTreeMap::new();
        let mut order = Vec::new();
        let language: Vec<String> = cfg.expected.iter().map(|b| bus_stream(&b.bus_id)).collect();
        let mut monitor = Monitor::new(ID, language, rules.clone());
        for (i, bus) in cfg.expected.iter().enumerate() {
            let id = bus.bus_id.clone();
            let period = bus.bit_period_ticks(cfg.tick_rate);
            let tol = cfg.baud_tolerance;
            streams.register(bus_stream(&id), StreamRole::Input, BUS_WINDOW_DEPTH);
            monitor.add_predicate(DetectionPredicate::new(
                format!("{ID}.{id}.bus_timing"),
                bus_stream(&id),
                move |s: &[Sample]| latest_burst(s).is_none_or(|b| b.conforms(period, tol)),
            ))?;
            monitor.add_pattern(pattern(&timeline_name(&id)), timeline_name(&id))?;
            timelines.insert(
                timeline_name(&id),
                Timeline::new(cfg.horizon).initially(SENSOR_OKAY.into()).initially(BUS_CONFIG_OKAY.into()),
            );
            let mut ch = Channel {
                expected: bus.clone(),
                period,
                okay: true,
                burst_faulted: false,
                pending_store: None,
                seq: 0,
                regs: RegisterBlock { base: REGISTER_BASE + i as u32 * REGISTER_STRIDE, ..Default::default() },
            };
            ch.refresh_status(false);
            channels.insert(id.clone(), ch);
            order.push(id);
        }
        monitor.freeze();
        Ok(Hrim { cfg, rules, monitor, streams, timelines, channels, order })
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn monitor_mut(&mut self) -> &mut Monitor {
        &mut self.monitor
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn timelines(&self) -> &Timelines {
        &self.timelines
    }

    pub fn streams(&self) -> &MonitoredStreams {
        &self.streams
    }

    pub fn registers(&self, sensor: &str) -> Option<&RegisterBlock> {
        self.channels.get(sensor).map(|c| &c.regs)
    }

    pub fn sensor_okay(&self, sensor: &str) -> bool {
        self.channels.get(sensor).is_some_and(|c| c.okay)
    }

    pub fn step(&mut self, t: Tick, plant: &PlantStep, inbox: &[MonitorEvent]) -> Result<MonitorOutput, MonitorError> {
        let mut out = MonitorOutput::default();
        let samples: Vec<(String, Value)> = plant
            .bus
            .iter()
            .filter(|(id, _)| self.channels.contains_key(*id))
            .map(|(id, a)| (bus_stream(id), Value::Bus { edge: a.edge, end_of_burst: a.end_of_burst }))
            .collect();
        self.streams.advance(t, samples)?;

        for id in self.order.clone() {
            let tl = timeline_name(&id);
            let ch = self.channels.get_mut(&id).expect("channel per sensor");
            if let Some((seq, bytes)) = ch.pending_store.take() {
                if ch.okay {
                    self.timelines.record(&tl, STORE_SENSOR_DATA, t)?;
                    ch.seq = ch.seq.wrapping_add(1);
                    ch.regs.payload = bytes;
                    ch.refresh_status(true);
                    out.note(
                        "register_write",
                        &[
                            ("sensor", id.clone()),
                            ("base", format!("{:#010x}", ch.regs.base)),
                            ("words", hex_words(&ch.regs.words())),
                        ],
                    );
                    out.events.push(
                        MonitorEvent::new(t, ID, EV_STORED)
                            .to(crate::i2m::ID)
                            .with("sensor", &id)
                            .with("frame", seq)
                            .with("len", ch.regs.payload.len()),
                    );
                }
            }
        }

        for ev in inbox {
            let Some(id) = ev.get("sensor").map(str::to_string) else { continue };
            let Some(ch) = self.channels.get_mut(&id) else { continue };
            let tl = timeline_name(&id);
            match ev.label.as_str() {
                EV_DISCONNECT if ch.okay => {
                    self.timelines.record(&tl, SEND_INFO_TO_DISCONNECT, t)?;
                    self.timelines.record(&tl, CROSS_BAR_EN, t)?;
                    ch.okay = false;
                    ch.pending_store = None;
                    ch.refresh_status(false);
                    out.actuations.push(("crossbar".into(), Actuation::Isolate { sensor: id.clone() }));
                }
                EV_RECONNECT if !ch.okay => {
                    self.timelines.record(&tl, RECONNECT, t)?;
                    ch.okay = true;
                    ch.burst_faulted = false;
                    ch.refresh_status(false);
                }
                _ => {}
            }
        }

        for (id, act) in &plant.bus {
            let Some(ch) = self.channels.get_mut(id) else { continue };
            let tl = timeline_name(id);
            let window = self.streams.window(&bus_stream(id)).expect("bus stream registered");
            let Some(burst) = latest_burst(window.samples()) else { continue };
            let conforms = burst.conforms(ch.period, self.cfg.baud_tolerance);
            if !conforms && ch.okay && !ch.burst_faulted {
                ch.burst_faulted = true;
                for a in [BUS_FAULT, CROSS_BAR_EN, SEND_INFO_TO_DISCONNECT] {
                    self.timelines.record(&tl, a, t)?;
                }
                ch.okay = false;
                ch.pending_store = None;
                ch.refresh_status(false);
                out.note(
                    "bus_mismatch",
                    &[
                        ("sensor", id.clone()),
                        ("measured", burst.period.to_string()),
                        ("expected", ch.period.to_string()),
                        ("burst_start", burst.start.to_string()),
                    ],
                );
                out.events.push(MonitorEvent::new(t, ID, EV_DISCONNECT).to(crate::i2m::ID).with("sensor", id));
                out.actuations.push(("crossbar".into(), Actuation::Isolate { sensor: id.clone() }));
            }
            if act.end_of_burst {
                self.timelines.record(&tl, READ_SENSOR_DATA, t)?;
                let ok = burst.edges >= 2 && check_bus_config(burst.period, &ch.expected, self.cfg.tick_rate, self.cfg.baud_tolerance);
                let delivered = plant
                    .finished
                    .iter()
                    .find(|f| &f.sensor == id && f.fate == FrameFate::Delivered);
                if ch.okay && ok && !ch.burst_faulted {
                    if let Some(f) = delivered {
                        ch.pending_store = Some((f.seq, f.bytes.clone()));
                    }
                } else if !ch.okay {
                    out.events.push(
                        MonitorEvent::new(t, ID, EV_BUS_CHECK)
                            .to(crate::i2m::ID)
                            .with("sensor", id)
                            .with("ok", ok)
                            .with("burst_start", burst.start),
                    );
                }
                ch.burst_faulted = false;
            }
        }

        let (occ, changes) = self.timelines.drain_changes(&self.rules, t)?;
        out.occurrences = occ;
        out.fluent_changes = changes;
        out.verdict = Some(self.monitor.evaluate(&self.streams, self.timelines.as_map(), t)?);
        Ok(out)
    }

    /// Sensors whose status word was refreshed this tick.
    pub fn heartbeats<'a>(&'a self, plant: &'a PlantStep) -> impl Iterator<Item = (&'a str, u32)> + 'a {
        plant
            .rx_alive
            .iter()
            .filter_map(|id| self.channels.get(id).map(|c| (id.as_str(), c.regs.status)))
    }
}

pub fn hex_words(words: &[u32]) -> String {
    words.iter().map(|w| format!("{w:08x}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ec::{evaluate_pattern, PatternOutcome};
    use crate::plant::{Plant, PlantConfig};

    fn hrim() -> Hrim {
        let plant = PlantConfig::builtin(3);
        Hrim::new(HrimConfig {
            tick_rate: plant.tick_rate,
            baud_tolerance: DEFAULT_TOLERANCE,
            expected: plant.sensors.iter().map(|s| BusConfig::new(s.id.clone(), s.baud).unwrap()).collect(),
            horizon: 100_000,
        })
        .unwrap()
    }

    fn run(plant: &mut Plant, h: &mut Hrim, range: std::ops::Range<Tick>) -> Vec<MonitorOutput> {
        range
            .map(|t| {
                plant.begin_tick(t).unwrap();
                let s = plant.step(t);
                let out = h.step(t, &s, &[]).unwrap();
                for (_, a) in &out.actuations {
                    plant.actuate(a.clone()).unwrap();
                }
                out
            })
            .collect()
    }

    #[test]
    fn tolerance_rule() {
        let b57 = BusConfig::new("gps", 57_600).unwrap();
        assert!(check_bus_config(17, &b57, 1_000_000, 0.05));
        assert!(!check_bus_config(9, &b57, 1_000_000, 0.05));
        let b18 = BusConfig::new("gps", 55_556).unwrap();
        assert_eq!(b18.bit_period_ticks(1_000_000), 18);
        assert!(!check_bus_config(17, &b18, 1_000_000, 0.05));
    }

    #[test]
    fn nominal_frames_stored_and_pattern_holds() {
        let mut plant = Plant::new(PlantConfig::builtin(3)).unwrap();
        let mut h = hrim();
        let outs = run(&mut plant, &mut h, 0..50_000);
        let stored: Vec<_> = outs.iter().flat_map(|o| o.events.iter()).filter(|e| e.label == EV_STORED).collect();
        assert_eq!(stored.iter().filter(|e| e.get("sensor") == Some("gps")).count(), 3);
        assert!(outs.iter().all(|o| !o.verdict.as_ref().unwrap().is_rejected()));
        let tl = h.timelines().get(&timeline_name("gps")).unwrap();
        assert_ne!(evaluate_pattern(&pattern("p"), h.rules(), tl, 49_999).unwrap(), PatternOutcome::Violated { clause: 3 });
        assert!(h.registers("gps").unwrap().data_ready());
        let words = h.registers("gps").unwrap().words();
        assert!(RegisterBlock::payload_from_words(&words).unwrap().starts_with(b"$GPGGA"));
    }

    #[test]
    fn baud_change_detected_within_a_frame() {
        let mut plant = Plant::new(PlantConfig::builtin(3)).unwrap();
        let mut h = hrim();
        run(&mut plant, &mut h, 0..5_000);
        plant.force_baud("gps", 115_200, true).unwrap();
        let outs = run(&mut plant, &mut h, 5_000..30_000);
        let det = outs
            .iter()
            .position(|o| o.events.iter().any(|e| e.label == EV_DISCONNECT))
            .map(|i| 5_000 + i as Tick)
            .unwrap();
        assert!((21_000..=21_000 + 10 * 9 * 2).contains(&det), "detected at {det}");
        assert!(!h.sensor_okay("gps"));
        let tl = h.timelines().get(&timeline_name("gps")).unwrap();
        let rep = crate::ec::evaluate_pattern_report(&pattern("p"), h.rules(), tl, 29_999).unwrap();
        assert!(rep.fired.contains(&4));
        assert!(!rep.outcome.is_violated());
        assert_eq!(plant.connection("gps").unwrap(), crate::plant::Connection::Isolated);
    }

    #[test]
    fn payload_changes_do_not_affect_hrim() {
        use crate::plant::sensors::FrameInjection;
        let mut plant = Plant::new(PlantConfig::builtin(3)).unwrap();
        plant.inject_frames("gps", FrameInjection::Corrupt { offset: 5, mask: 0x20 }, true).unwrap();
        let mut h = hrim();
        let outs = run(&mut plant, &mut h, 0..45_000);
        assert!(h.sensor_okay("gps"));
        assert!(outs.iter().all(|o| !o.verdict.as_ref().unwrap().is_rejected()));
    }
}
