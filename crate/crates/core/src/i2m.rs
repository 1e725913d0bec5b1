//! Information integrity monitor.
//!
//! Picks up frames the hardware monitor stored, reads them one tick later,
//! verifies them the tick after that, and republishes frames that pass. A
//! failed check, or a register block that stops updating for longer than
//! `t_d` ticks, disconnects the sensor and starts the recovery sequence:
//! reset, restore the nominal bus configuration, wait for a clean burst,
//! reconnect.
//!
//! The validated register block uses the hardware monitor's layout with one
//! extra leading word holding the verification status (0 pass, otherwise
//! the [`FailReason`] code).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ec::{Clause, EcRule, FluentId, Guard, Obligation, Pattern, RuleSet, Tick, TimeRel, Timeline, Trigger};
use crate::error::{MitigationError, MonitorError};
use crate::hrim::{self, RegisterBlock};
use crate::monitor::{DetectionPredicate, Monitor, MonitorEvent, MonitorOutput, Timelines};
use crate::plant::bus::BusConfig;
use crate::plant::sensors::{parse_frame, FrameFault, SensorKind};
use crate::plant::Actuation;
use crate::streams::{MonitoredStreams, Sample, StreamRole, StreamWindow, Value};

pub const ID: &str = "i2m";

pub const SENSOR_IDLE: &str = "sensor_idle";
pub const PARSE_SUCCESS: &str = "i2m_parse_data_success";
pub const I2M_DATA_READY: &str = "i2m_data_ready";

pub const READ_DATA: &str = "i2m_read_data";
pub const PARSE_DATA: &str = "i2m_parse_data";
pub const STORE_DATA: &str = "store_i2m_data";
pub const TIMEOUT: &str = "i2m_timeout";

pub const GUARD_PASS: &str = "verify_pass";
pub const GUARD_FAIL: &str = "verify_fail";

pub const DEFAULT_R_MAX: u32 = 5;
pub const DEFAULT_RETRIES: u32 = 3;
pub const VERIFY_DEPTH: usize = 8;

/// Read and parse must follow a rising data-ready within this many ticks.
const READ_PARSE_WITHIN: Tick = 3;

pub fn status_stream(sensor: &str) -> String {
    format!("{sensor}.hrim_status")
}

pub fn verify_stream(sensor: &str) -> String {
    format!("{sensor}.verify")
}

pub fn timeline_name(sensor: &str) -> String {
    format!("{ID}.{sensor}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Checksum,
    Range,
    Repeat,
    Format,
}

impl FailReason {
    pub fn code(self) -> u32 {
        match self {
            FailReason::Checksum => 1,
            FailReason::Range => 2,
            FailReason::Repeat => 3,
            FailReason::Format => 4,
        }
    }
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailReason::Checksum => "checksum",
            FailReason::Range => "range",
            FailReason::Repeat => "repeat",
            FailReason::Format => "format",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyOutcome {
    Pass,
    Fail(FailReason),
}

impl VerifyOutcome {
    pub fn is_pass(self) -> bool {
        self == VerifyOutcome::Pass
    }

    pub fn reason(self) -> Option<FailReason> {
        match self {
            VerifyOutcome::Pass => None,
            VerifyOutcome::Fail(r) => Some(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub checksum: bool,
    pub range: bool,
    pub repetition: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks { checksum: true, range: true, repetition: true }
    }
}

/// Verifies one frame. `run` is the number of identical payloads seen
/// immediately before this one; the returned count includes this frame.
pub fn verify_frame(
    kind: SensorKind,
    frame: &[u8],
    previous: Option<&[u8]>,
    run: u32,
    checks: Checks,
    r_max: u32,
) -> (VerifyOutcome, u32) {
    let run = if previous == Some(frame) { run + 1 } else { 1 };
    let outcome = match parse_frame(kind, frame, checks.checksum, checks.range) {
        Err(FrameFault::Checksum) => VerifyOutcome::Fail(FailReason::Checksum),
        Err(FrameFault::Range) => VerifyOutcome::Fail(FailReason::Range),
        Err(FrameFault::Format) => VerifyOutcome::Fail(FailReason::Format),
        Ok(_) if checks.repetition && run > r_max => VerifyOutcome::Fail(FailReason::Repeat),
        Ok(_) => VerifyOutcome::Pass,
    };
    (outcome, run)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct I2mSensorConfig {
    pub id: String,
    pub kind: SensorKind,
    pub emit_period: Tick,
    pub t_d: Tick,
    pub nominal_baud: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct I2mConfig {
    pub horizon: Tick,
    pub r_max: u32,
    pub checks: Checks,
    pub retries: u32,
    pub sensors: Vec<I2mSensorConfig>,
}

impl I2mConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.r_max < 2 {
            return Err(format!("r_max {} must be at least 2", self.r_max));
        }
        if self.retries == 0 {
            return Err("mitigation retries must be positive".into());
        }
        for s in &self.sensors {
            if s.t_d <= s.emit_period {
                return Err(format!("{}: t_d {} must exceed the emit period {}", s.id, s.t_d, s.emit_period));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub sensor: String,
    pub started: Tick,
    pub finished: Tick,
    pub reset: bool,
    pub reconfigured: BusConfig,
    pub reconnected: bool,
    pub attempts: u32,
    pub ticks_taken: Tick,
}

#[derive(Debug, Clone)]
struct Mitigation {
    started: Tick,
    attempt: u32,
    /// First tick at which the current attempt's reconfiguration applies.
    effective: Tick,
    deadline: Tick,
}

#[derive(Debug, Clone)]
struct Feed {
    cfg: I2mSensorConfig,
    connected: bool,
    last_payload: Option<Vec<u8>>,
    run: u32,
    pending_read: bool,
    pending_parse: Option<Vec<u8>>,
    mitigation: Option<Mitigation>,
    failed: bool,
    validated: Vec<u32>,
    passes: u64,
}

pub fn rules() -> RuleSet {
    let f = FluentId::new;
    let pass = Guard::new(GUARD_PASS, |w: &StreamWindow| matches!(w.last_value(), Some(Value::Verify { ok: true, .. })));
    let fail = Guard::new(GUARD_FAIL, |w: &StreamWindow| matches!(w.last_value(), Some(Value::Verify { ok: false, .. })));
    let mut r = RuleSet::new();
    r.add(EcRule::initiates(hrim::STORE_SENSOR_DATA, f(hrim::HRIM_DATA_READY))).expect("rules");
    r.add(EcRule::terminates(READ_DATA, f(hrim::HRIM_DATA_READY))).expect("rules");
    r.add(EcRule::terminates(READ_DATA, f(SENSOR_IDLE))).expect("rules");
    r.add(EcRule::initiates(PARSE_DATA, f(PARSE_SUCCESS)).guarded(pass)).expect("rules");
    r.add(EcRule::terminates(PARSE_DATA, f(PARSE_SUCCESS)).guarded(fail.clone())).expect("rules");
    r.add(EcRule::terminates(PARSE_DATA, f(I2M_DATA_READY)).guarded(fail)).expect("rules");
    r.add(EcRule::initiates(STORE_DATA, f(I2M_DATA_READY))).expect("rules");
    r.add(EcRule::initiates(hrim::CROSS_BAR_EN, f(hrim::SENSOR_RECONFIG))).expect("rules");
    r.add(EcRule::terminates(hrim::SEND_INFO_TO_DISCONNECT, f(hrim::SENSOR_OKAY))).expect("rules");
    r.add(EcRule::initiates(hrim::RECONNECT, f(hrim::SENSOR_OKAY))).expect("rules");
    r.add(EcRule::terminates(hrim::RECONNECT, f(hrim::SENSOR_RECONFIG))).expect("rules");
    r.declare_action(TIMEOUT);
    r
}

/// The six-clause monitor pattern over one sensor's timeline.
pub fn pattern(name: &str) -> Pattern {
    let disconnect = vec![
        Obligation::Happens { action: hrim::SEND_INFO_TO_DISCONNECT.into(), rel: TimeRel::Same },
        Obligation::Happens { action: hrim::CROSS_BAR_EN.into(), rel: TimeRel::Same },
        Obligation::HoldsAt { fluent: hrim::SENSOR_RECONFIG.into(), holds: true, rel: TimeRel::Same },
    ];
    Pattern::new(
        name,
        vec![
            Clause::Initially(SENSOR_IDLE.into()),
            Clause::Effect { action: READ_DATA.into(), values: vec![(SENSOR_IDLE.into(), false)] },
            Clause::Response {
                trigger: Trigger::Rises(hrim::HRIM_DATA_READY.into()),
                obligations: vec![
                    Obligation::Happens { action: READ_DATA.into(), rel: TimeRel::After },
                    Obligation::Happens { action: PARSE_DATA.into(), rel: TimeRel::After },
                ],
                within: READ_PARSE_WITHIN,
            },
            Clause::Response {
                trigger: Trigger::HappensWhile { action: PARSE_DATA.into(), fluent: PARSE_SUCCESS.into(), holds: true },
                obligations: vec![Obligation::Happens { action: STORE_DATA.into(), rel: TimeRel::Same }],
                within: 0,
            },
            Clause::Effect { action: STORE_DATA.into(), values: vec![(I2M_DATA_READY.into(), true)] },
            Clause::Response {
                trigger: Trigger::AnyOf(vec![
                    Trigger::HappensWhile { action: PARSE_DATA.into(), fluent: PARSE_SUCCESS.into(), holds: false },
                    Trigger::Happens(TIMEOUT.into()),
                ]),
                obligations: disconnect,
                within: 0,
            },
        ],
    )
}

#[derive(Debug, Clone)]
pub struct I2m {
    cfg: I2mConfig,
    rules: RuleSet,
    monitor: Monitor,
    streams: MonitoredStreams,
    timelines: Timelines,
    feeds: BTreeMap<String, Feed>,
    reports: Vec<MitigationReport>,
}

impl I2m {
    pub fn new(cfg: I2mConfig) -> Result<Self, MonitorError> {
        cfg.validate().map_err(MonitorError::Config)?;
        let rules = rules();
        let mut streams = MonitoredStreams::new();
        let mut timelines = Timelines::new();
        let mut feeds = BTreeMap::new();
        let language: Vec<String> =
            cfg.sensors.iter().flat_map(|s| [status_stream(&s.id), verify_stream(&s.id)]).collect();
        let mut monitor = Monitor::new(ID, language, rules.clone());
        for s in &cfg.sensors {
            streams.register(status_stream(&s.id), StreamRole::State, crate::streams::DEFAULT_DEPTH);
            streams.register(verify_stream(&s.id), StreamRole::Output, VERIFY_DEPTH);
            let t_d = s.t_d;
            monitor.add_predicate(DetectionPredicate::new(
                format!("{ID}.{}.inactivity", s.id),
                status_stream(&s.id),
                move |w: &[Sample]| match w.last() {
                    Some(Sample { value: Value::Gap { ticks }, .. }) => *ticks <= t_d,
                    _ => true,
                },
            ))?;
            monitor.add_predicate(DetectionPredicate::new(
                format!("{ID}.{}.verification", s.id),
                verify_stream(&s.id),
                |w: &[Sample]| {
                    w.iter()
                        .rev()
                        .find(|x| !x.value.is_gap())
                        .is_none_or(|x| !matches!(x.value, Value::Verify { ok: false, .. }))
                },
            ))?;
            monitor.add_pattern(pattern(&timeline_name(&s.id)), timeline_name(&s.id))?;
            timelines.insert(
                timeline_name(&s.id),
                Timeline::new(cfg.horizon).initially(SENSOR_IDLE.into()).initially(hrim::SENSOR_OKAY.into()),
            );
            feeds.insert(
                s.id.clone(),
                Feed {
                    cfg: s.clone(),
                    connected: true,
                    last_payload: None,
                    run: 0,
                    pending_read: false,
                    pending_parse: None,
                    mitigation: None,
                    failed: false,
                    validated: Vec::new(),
                    passes: 0,
                },
            );
        }
        monitor.freeze();
        Ok(I2m { cfg, rules, monitor, streams, timelines, feeds, reports: Vec::new() })
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

    pub fn reports(&self) -> &[MitigationReport] {
        &self.reports
    }

    pub fn passes(&self, sensor: &str) -> u64 {
        self.feeds.get(sensor).map_or(0, |f| f.passes)
    }

    pub fn connected(&self, sensor: &str) -> bool {
        self.feeds.get(sensor).is_some_and(|f| f.connected)
    }

    pub fn mitigating(&self, sensor: &str) -> bool {
        self.feeds.get(sensor).is_some_and(|f| f.mitigation.is_some())
    }

    /// Validated register image: verification word followed by the
    /// hardware monitor's block layout.
    pub fn validated_registers(&self, sensor: &str) -> Option<&[u32]> {
        self.feeds.get(sensor).map(|f| f.validated.as_slice())
    }

    /// Verifies `frame` as the next frame from `sensor`, updating the
    /// repetition count.
    pub fn parse_and_verify(&mut self, sensor: &str, frame: &[u8]) -> Result<VerifyOutcome, MitigationError> {
        let (checks, r_max) = (self.cfg.checks, self.cfg.r_max);
        let feed = self
            .feeds
            .get_mut(sensor)
            .ok_or_else(|| MitigationError::Plant(crate::error::PlantError::UnknownSensor(sensor.to_string())))?;
        let (outcome, run) = verify_frame(feed.cfg.kind, frame, feed.last_payload.as_deref(), feed.run, checks, r_max);
        feed.run = run;
        feed.last_payload = Some(frame.to_vec());
        Ok(outcome)
    }

    /// Starts recovery of an isolated sensor: reset and reconfigure now,
    /// then wait for a clean burst.
    pub fn begin_mitigation(&mut self, sensor: &str, t: Tick, out: &mut MonitorOutput) -> Result<(), MitigationError> {
        let feed = self
            .feeds
            .get_mut(sensor)
            .ok_or_else(|| MitigationError::Plant(crate::error::PlantError::UnknownSensor(sensor.to_string())))?;
        if feed.connected {
            return Err(MitigationError::SensorConnected(sensor.to_string()));
        }
        if feed.mitigation.is_some() {
            return Err(MitigationError::AlreadyRunning(sensor.to_string()));
        }
        feed.failed = false;
        feed.mitigation = Some(Mitigation { started: t, attempt: 0, effective: t, deadline: t });
        Self::attempt(feed, t, out);
        Ok(())
    }

    fn attempt(feed: &mut Feed, t: Tick, out: &mut MonitorOutput) {
        let m = feed.mitigation.as_mut().expect("mitigation running");
        m.attempt += 1;
        m.effective = t + 1;
        m.deadline = t + 2 * feed.cfg.emit_period;
        let id = feed.cfg.id.clone();
        out.actuations.push((id.clone(), Actuation::Reset { sensor: id.clone() }));
        out.actuations.push((id.clone(), Actuation::Reconfigure { sensor: id.clone(), baud: feed.cfg.nominal_baud }));
        out.note(
            "mitigation_attempt",
            &[("sensor", id), ("attempt", m.attempt.to_string()), ("deadline", m.deadline.to_string())],
        );
    }

    fn finish(&mut self, sensor: &str, t: Tick, reconnected: bool, out: &mut MonitorOutput) -> Result<(), MonitorError> {
        let feed = self.feeds.get_mut(sensor).expect("feed exists");
        let m = feed.mitigation.take().expect("mitigation running");
        let report = MitigationReport {
            sensor: sensor.to_string(),
            started: m.started,
            finished: t,
            reset: true,
            reconfigured: BusConfig::new(sensor, feed.cfg.nominal_baud).map_err(|e| MonitorError::Config(e.to_string()))?,
            reconnected,
            attempts: m.attempt,
            ticks_taken: t - m.started,
        };
        if reconnected {
            feed.connected = true;
            feed.run = 0;
            feed.last_payload = None;
            self.timelines.record(&timeline_name(sensor), hrim::RECONNECT, t)?;
            out.actuations.push(("crossbar".into(), Actuation::Reconnect { sensor: sensor.to_string() }));
            out.events.push(MonitorEvent::new(t, ID, hrim::EV_RECONNECT).to(hrim::ID).with("sensor", sensor));
        } else {
            feed.failed = true;
        }
        out.note(
            if reconnected { "mitigation_succeeded" } else { "mitigation_failed" },
            &[
                ("sensor", sensor.to_string()),
                ("attempts", report.attempts.to_string()),
                ("ticks_taken", report.ticks_taken.to_string()),
                ("reconnected", reconnected.to_string()),
            ],
        );
        self.reports.push(report);
        Ok(())
    }

    fn disconnect(&mut self, sensor: &str, t: Tick, cause: &str, out: &mut MonitorOutput) -> Result<(), MonitorError> {
        let tl = timeline_name(sensor);
        self.timelines.record(&tl, hrim::SEND_INFO_TO_DISCONNECT, t)?;
        self.timelines.record(&tl, hrim::CROSS_BAR_EN, t)?;
        let feed = self.feeds.get_mut(sensor).expect("feed exists");
        feed.connected = false;
        feed.pending_read = false;
        feed.pending_parse = None;
        out.events.push(
            MonitorEvent::new(t, ID, hrim::EV_DISCONNECT).to(hrim::ID).with("sensor", sensor).with("cause", cause),
        );
        out.actuations.push(("crossbar".into(), Actuation::Isolate { sensor: sensor.to_string() }));
        self.begin_mitigation(sensor, t, out).map_err(|e| MonitorError::Config(e.to_string()))
    }

    /// One tick. `registers` holds the hardware monitor's register words
    /// per sensor; `heartbeats` lists sensors whose status word was written
    /// this tick.
    pub fn step(
        &mut self,
        t: Tick,
        inbox: &[MonitorEvent],
        registers: &BTreeMap<String, Vec<u32>>,
        heartbeats: &[(String, u32)],
    ) -> Result<MonitorOutput, MonitorError> {
        let mut out = MonitorOutput::default();
        let ids: Vec<String> = self.feeds.keys().cloned().collect();

        // Parse what was read last tick.
        let mut outcomes: BTreeMap<String, (VerifyOutcome, Vec<u8>)> = BTreeMap::new();
        for id in &ids {
            if let Some(frame) = self.feeds.get_mut(id).expect("feed").pending_parse.take() {
                let o = self.parse_and_verify(id, &frame).map_err(|e| MonitorError::Config(e.to_string()))?;
                outcomes.insert(id.clone(), (o, frame));
            }
        }
        let mut samples: Vec<(String, Value)> =
            heartbeats.iter().map(|(id, w)| (status_stream(id), Value::word(*w))).collect();
        for (id, (o, _)) in &outcomes {
            samples.push((verify_stream(id), Value::Verify { ok: o.is_pass(), reason: o.reason().map(|r| r.to_string()) }));
        }
        self.streams.advance(t, samples)?;

        for (id, (o, frame)) in outcomes {
            let tl = timeline_name(&id);
            let window = self.streams.window(&verify_stream(&id)).expect("verify stream");
            self.timelines.record_guarded(&tl, &self.rules, PARSE_DATA, t, window)?;
            out.note(
                "verify",
                &[
                    ("sensor", id.clone()),
                    ("outcome", o.reason().map_or("pass".to_string(), |r| format!("fail:{r}"))),
                ],
            );
            match o {
                VerifyOutcome::Pass => {
                    self.timelines.record(&tl, STORE_DATA, t)?;
                    let feed = self.feeds.get_mut(&id).expect("feed");
                    feed.passes += 1;
                    let block = RegisterBlock { base: 0, status: hrim::STATUS_DATA_READY, payload: frame };
                    feed.validated = std::iter::once(0).chain(block.words()).collect();
                    out.note("validated_write", &[("sensor", id.clone()), ("words", hrim::hex_words(&feed.validated))]);
                }
                VerifyOutcome::Fail(r) => {
                    if self.feeds[&id].connected {
                        self.disconnect(&id, t, &r.to_string(), &mut out)?;
                    }
                }
            }
        }

        // Read what was stored last tick.
        for id in &ids {
            let feed = self.feeds.get_mut(id).expect("feed");
            if std::mem::take(&mut feed.pending_read) {
                let payload = registers.get(id).and_then(|w| RegisterBlock::payload_from_words(w));
                if let Some(p) = payload {
                    self.timelines.record(&timeline_name(id), READ_DATA, t)?;
                    feed.pending_parse = Some(p);
                }
            }
        }

        for ev in inbox {
            let Some(id) = ev.get("sensor").map(str::to_string) else { continue };
            if !self.feeds.contains_key(&id) {
                continue;
            }
            match ev.label.as_str() {
                hrim::EV_STORED => {
                    self.timelines.record(&timeline_name(&id), hrim::STORE_SENSOR_DATA, t)?;
                    self.feeds.get_mut(&id).expect("feed").pending_read = true;
                }
                hrim::EV_DISCONNECT => {
                    let feed = self.feeds.get_mut(&id).expect("feed");
                    if feed.connected {
                        feed.connected = false;
                        feed.pending_read = false;
                        feed.pending_parse = None;
                        self.begin_mitigation(&id, t, &mut out).map_err(|e| MonitorError::Config(e.to_string()))?;
                    }
                }
                hrim::EV_BUS_CHECK => {
                    let ok = ev.get("ok") == Some("true");
                    let start: Tick = ev.get("burst_start").and_then(|s| s.parse().ok()).unwrap_or(0);
                    let feed = self.feeds.get_mut(&id).expect("feed");
                    let Some(m) = &feed.mitigation else { continue };
                    if start < m.effective {
                        continue;
                    }
                    if ok {
                        self.finish(&id, t, true, &mut out)?;
                    } else if m.attempt < self.cfg.retries {
                        Self::attempt(feed, t, &mut out);
                    } else {
                        self.finish(&id, t, false, &mut out)?;
                    }
                }
                _ => {}
            }
        }

        for id in &ids {
            let gap = self.streams.window(&status_stream(id)).expect("status stream").gap_count();
            let feed = &self.feeds[id];
            if feed.connected && feed.mitigation.is_none() && gap > feed.cfg.t_d {
                self.timelines.record(&timeline_name(id), TIMEOUT, t)?;
                self.disconnect(id, t, "inactivity", &mut out)?;
            }
            let feed = self.feeds.get_mut(id).expect("feed");
            if let Some(m) = &feed.mitigation {
                if t >= m.deadline {
                    if m.attempt < self.cfg.retries {
                        Self::attempt(feed, t, &mut out);
                    } else {
                        self.finish(id, t, false, &mut out)?;
                    }
                }
            }
        }

        let (occ, changes) = self.timelines.drain_changes(&self.rules, t)?;
        out.occurrences = occ;
        out.fluent_changes = changes;
        out.verdict = Some(self.monitor.evaluate(&self.streams, self.timelines.as_map(), t)?);
        Ok(out)
    }
}
