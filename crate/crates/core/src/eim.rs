//! Execution integrity monitor.
//!
//! Boot is gated on a firmware comparison against an immutable reference
//! image. Once the program runs, every taken branch is checked against the
//! reference control-flow table; any deviation, or a failed firmware
//! re-check, sends execution to the failsafe routine.
//!
//! Besides the per-branch check the monitor keeps a word-by-word comparison
//! of the watched memory (branch instructions and live return-address
//! slots) so the log shows exactly when monitor and processor memory stop
//! agreeing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ec::{Clause, EcRule, FluentId, Guard, Obligation, Pattern, RuleSet, Tick, TimeRel, Timeline, Trigger};
use crate::error::MonitorError;
use crate::monitor::{DetectionPredicate, Monitor, MonitorEvent, MonitorOutput, Timelines};
use crate::plant::firmware::{compare, FirmwareCheck, FirmwareImage};
use crate::plant::isa::{BranchEvent, BranchKind};
use crate::plant::program::{ReferenceCfg, FAILSAFE};
use crate::plant::{Actuation, MemoryView, PlantStep};
use crate::streams::{MonitoredStreams, Sample, StreamRole, StreamWindow, Value};

pub const ID: &str = "eim";
pub const TIMELINE: &str = "eim.program";
/// Plant vertex receiving permit and failsafe commands.
pub const PROGRAM_VERTEX: &str = "program";

pub const FIRMWARE_OK: &str = "firmware_ok";
pub const CONTROL_FLOW_OK: &str = "control_flow_ok";

pub const CHECK_FIRMWARE_OK: &str = "check_firmware_ok";
pub const EXECUTE_PROGRAM: &str = "execute_program";
pub const CHECK_CONTROL_FLOW_OK: &str = "check_control_flow_ok";
pub const FAIL_SAFE: &str = "fail_safe";

pub const FIRMWARE_STREAM: &str = "eim.firmware";
pub const BRANCH_STREAM: &str = "eim.branch";
pub const CONTROL_FLOW_STREAM: &str = "eim.control_flow";
pub const MEMORY_STREAM: &str = "eim.memory";

const GUARD_FW_MATCH: &str = "firmware_match";
const GUARD_FW_MISMATCH: &str = "firmware_mismatch";
const GUARD_BRANCH_OK: &str = "branch_ok";
const GUARD_BRANCH_TAMPERED: &str = "branch_tampered";

const WINDOW_DEPTH: usize = 8;

/// Reference branch table plus the landing address used on a violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceControlFlow {
    pub table: ReferenceCfg,
    pub failsafe_address: u32,
}

impl ReferenceControlFlow {
    pub fn builtin() -> Self {
        ReferenceControlFlow { table: ReferenceCfg::builtin(), failsafe_address: FAILSAFE }
    }
}

/// Which part of a branch disagreed with the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchField {
    /// The site is not in the table at all.
    Site,
    InsnWord,
    Return,
    Target,
}

impl fmt::Display for BranchField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchField::Site => "site",
            BranchField::InsnWord => "insn_word",
            BranchField::Return => "return",
            BranchField::Target => "target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchVerdict {
    Ok,
    Tampered(BranchField),
}

impl BranchVerdict {
    pub fn is_ok(self) -> bool {
        self == BranchVerdict::Ok
    }
}

/// Compares a taken branch with its reference entry: instruction word
/// first, then return address, then target.
pub fn check_branch(ev: &BranchEvent, reference: &ReferenceControlFlow) -> BranchVerdict {
    let Some(e) = reference.table.lookup(ev.site) else {
        return BranchVerdict::Tampered(BranchField::Site);
    };
    if ev.insn_word != e.insn_word {
        BranchVerdict::Tampered(BranchField::InsnWord)
    } else if ev.return_address != e.return_address {
        BranchVerdict::Tampered(BranchField::Return)
    } else if ev.target != e.target {
        BranchVerdict::Tampered(BranchField::Target)
    } else {
        BranchVerdict::Ok
    }
}

/// True iff the live image equals the reference.
pub fn verify_firmware(live: &FirmwareImage, reference: &FirmwareImage) -> Result<bool, MonitorError> {
    if live.base_address != reference.base_address || live.words().len() != reference.words().len() {
        return Err(MonitorError::ShapeMismatch {
            live_base: live.base_address,
            live_len: live.words().len(),
            reference_base: reference.base_address,
            reference_len: reference.words().len(),
        });
    }
    Ok(compare(live.base_address, live.words(), reference).ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionPermit {
    Granted,
    Withheld,
}

#[derive(Debug, Clone)]
pub struct EimConfig {
    pub reference_firmware: FirmwareImage,
    pub control_flow: ReferenceControlFlow,
    /// Ticks at which the firmware is compared again after boot.
    pub recheck_ticks: BTreeSet<Tick>,
    /// Compare the firmware on every tick.
    pub continuous: bool,
    pub horizon: Tick,
}

impl EimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let lo = self.reference_firmware.base_address;
        let hi = self.reference_firmware.end_address();
        let fs = self.control_flow.failsafe_address;
        if !(lo..hi).contains(&fs) || !fs.is_multiple_of(4) {
            return Err(format!("failsafe address {fs:#010x} is not a word inside the image {lo:#010x}..{hi:#010x}"));
        }
        Ok(())
    }
}

pub fn rules() -> RuleSet {
    let f = FluentId::new;
    let last_firmware = |ok: bool| move |w: &StreamWindow| matches!(w.last_value(), Some(Value::Firmware { ok: v }) if *v == ok);
    let last_verify = |ok: bool| move |w: &StreamWindow| matches!(w.last_value(), Some(Value::Verify { ok: v, .. }) if *v == ok);
    let mut r = RuleSet::new();
    let rules = [
        EcRule::initiates(CHECK_FIRMWARE_OK, f(FIRMWARE_OK)).guarded(Guard::new(GUARD_FW_MATCH, last_firmware(true))),
        EcRule::terminates(CHECK_FIRMWARE_OK, f(FIRMWARE_OK)).guarded(Guard::new(GUARD_FW_MISMATCH, last_firmware(false))),
        EcRule::initiates(EXECUTE_PROGRAM, f(FIRMWARE_OK)),
        EcRule::initiates(CHECK_CONTROL_FLOW_OK, f(CONTROL_FLOW_OK)).guarded(Guard::new(GUARD_BRANCH_OK, last_verify(true))),
        EcRule::terminates(CHECK_CONTROL_FLOW_OK, f(CONTROL_FLOW_OK))
            .guarded(Guard::new(GUARD_BRANCH_TAMPERED, last_verify(false))),
        EcRule::terminates(FAIL_SAFE, f(FIRMWARE_OK)),
        EcRule::terminates(FAIL_SAFE, f(CONTROL_FLOW_OK)),
    ];
    for rule in rules {
        r.add(rule).expect("monitor rules are conflict free");
    }
    r
}

/// The four-clause monitor pattern over the program timeline.
pub fn pattern(name: &str) -> Pattern {
    let holds_now = |fluent: &str| Obligation::HoldsAt { fluent: fluent.into(), holds: true, rel: TimeRel::Same };
    Pattern::new(
        name,
        vec![
            Clause::Response {
                trigger: Trigger::Happens(CHECK_FIRMWARE_OK.into()),
                obligations: vec![holds_now(FIRMWARE_OK)],
                within: 0,
            },
            Clause::Effect { action: EXECUTE_PROGRAM.into(), values: vec![(FIRMWARE_OK.into(), true)] },
            Clause::Response {
                trigger: Trigger::Happens(CHECK_CONTROL_FLOW_OK.into()),
                obligations: vec![holds_now(CONTROL_FLOW_OK)],
                within: 0,
            },
            Clause::Effect {
                action: FAIL_SAFE.into(),
                values: vec![(FIRMWARE_OK.into(), false), (CONTROL_FLOW_OK.into(), false)],
            },
        ],
    )
}

/// Return address pushed by a call, expected back at the matching return.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ShadowEntry {
    slot: u32,
    value: u32,
}

#[derive(Debug, Clone)]
pub struct Eim {
    cfg: EimConfig,
    rules: RuleSet,
    monitor: Monitor,
    streams: MonitoredStreams,
    timelines: Timelines,
    booted: bool,
    permit: Option<ExecutionPermit>,
    failsafe_sent: bool,
    shadow: Vec<ShadowEntry>,
    /// Last comparison result per watched address.
    compared: BTreeMap<u32, bool>,
    last_firmware: Option<FirmwareCheck>,
    branch_verdicts: Vec<(Tick, u32, BranchVerdict)>,
}

impl Eim {
    pub fn new(cfg: EimConfig) -> Result<Self, MonitorError> {
        cfg.validate().map_err(MonitorError::Config)?;
        let rules = rules();
        let mut streams = MonitoredStreams::new();
        streams.register(FIRMWARE_STREAM, StreamRole::State, WINDOW_DEPTH);
        streams.register(BRANCH_STREAM, StreamRole::Input, WINDOW_DEPTH);
        streams.register(CONTROL_FLOW_STREAM, StreamRole::Output, WINDOW_DEPTH);
        streams.register(MEMORY_STREAM, StreamRole::Input, WINDOW_DEPTH);
        let mut monitor =
            Monitor::new(ID, [FIRMWARE_STREAM, BRANCH_STREAM, CONTROL_FLOW_STREAM, MEMORY_STREAM], rules.clone());
        monitor.add_predicate(DetectionPredicate::new("eim.firmware_match", FIRMWARE_STREAM, |s: &[Sample]| {
            !matches!(last_present(s), Some(Value::Firmware { ok: false }))
        }))?;
        monitor.add_predicate(DetectionPredicate::new("eim.control_flow", CONTROL_FLOW_STREAM, |s: &[Sample]| {
            !matches!(last_present(s), Some(Value::Verify { ok: false, .. }))
        }))?;
        monitor.add_pattern(pattern(TIMELINE), TIMELINE)?;
        monitor.freeze();
        let mut timelines = Timelines::new();
        timelines.insert(TIMELINE, Timeline::new(cfg.horizon).initially(CONTROL_FLOW_OK.into()));
        Ok(Eim {
            cfg,
            rules,
            monitor,
            streams,
            timelines,
            booted: false,
            permit: None,
            failsafe_sent: false,
            shadow: Vec::new(),
            compared: BTreeMap::new(),
            last_firmware: None,
            branch_verdicts: Vec::new(),
        })
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

    pub fn reference_firmware(&self) -> &FirmwareImage {
        &self.cfg.reference_firmware
    }

    pub fn permit(&self) -> Option<ExecutionPermit> {
        self.permit
    }

    pub fn failsafe_sent(&self) -> bool {
        self.failsafe_sent
    }

    pub fn last_firmware_check(&self) -> Option<&FirmwareCheck> {
        self.last_firmware.as_ref()
    }

    /// `(tick, site, verdict)` for every branch seen so far.
    pub fn branch_verdicts(&self) -> &[(Tick, u32, BranchVerdict)] {
        &self.branch_verdicts
    }

    fn firmware_due(&self, t: Tick) -> bool {
        !self.booted || self.cfg.continuous || self.cfg.recheck_ticks.contains(&t)
    }

    fn watched(&self) -> Vec<(u32, u32)> {
        let mut w: Vec<(u32, u32)> = self.cfg.control_flow.table.entries.iter().map(|e| (e.site, e.insn_word)).collect();
        w.extend(self.shadow.iter().map(|s| (s.slot, s.value)));
        w
    }

    fn fail_safe(&mut self, t: Tick, reason: String, out: &mut MonitorOutput) -> Result<(), MonitorError> {
        if self.failsafe_sent {
            return Ok(());
        }
        self.failsafe_sent = true;
        self.timelines.record(TIMELINE, FAIL_SAFE, t)?;
        let address = self.cfg.control_flow.failsafe_address;
        out.actuations.push((PROGRAM_VERTEX.into(), Actuation::Failsafe { address }));
        out.note("fail_safe", &[("address", format!("{address:#010x}")), ("reason", reason)]);
        Ok(())
    }

    pub fn step(&mut self, t: Tick, mem: &impl MemoryView, ps: &PlantStep, _inbox: &[MonitorEvent]) -> Result<MonitorOutput, MonitorError> {
        let mut out = MonitorOutput::default();
        let mut samples: Vec<(&str, Value)> = Vec::new();

        let firmware = if self.firmware_due(t) {
            let fw = &self.cfg.reference_firmware;
            let check = compare(mem.code_base(), mem.live_code(), fw);
            samples.push((FIRMWARE_STREAM, Value::Firmware { ok: check.ok }));
            Some(check)
        } else {
            None
        };

        let branch = ps.executed.as_ref().and_then(|x| x.branch.clone());
        let verdict = branch.as_ref().map(|b| check_branch(b, &self.cfg.control_flow));
        if let (Some(b), Some(v)) = (&branch, verdict) {
            samples.push((BRANCH_STREAM, Value::Branch(b.clone())));
            let reason = match v {
                BranchVerdict::Ok => None,
                BranchVerdict::Tampered(field) => Some(field.to_string()),
            };
            samples.push((CONTROL_FLOW_STREAM, Value::Verify { ok: v.is_ok(), reason }));
            match b.kind {
                BranchKind::Call => {
                    if let Some(slot) = b.slot {
                        self.shadow.push(ShadowEntry { slot, value: b.return_address });
                    }
                }
                BranchKind::Return => {
                    if let Some(slot) = b.slot {
                        if let Some(i) = self.shadow.iter().rposition(|s| s.slot == slot) {
                            self.shadow.truncate(i);
                        }
                        self.compared.remove(&slot);
                    }
                }
                BranchKind::Jump => {}
            }
        }

        let mut first_change = None;
        for (addr, expected) in self.watched() {
            let live = mem.read_word(addr).unwrap_or(!expected);
            let matched = live == expected;
            if self.compared.insert(addr, matched) != Some(matched) {
                out.note(
                    "mem_compare",
                    &[
                        ("addr", format!("{addr:#010x}")),
                        ("live", format!("{live:#010x}")),
                        ("expected", format!("{expected:#010x}")),
                        ("match", matched.to_string()),
                    ],
                );
                if first_change.is_none() {
                    first_change = Some(Value::MemCompare { addr, live, expected });
                }
            }
        }
        if let Some(v) = first_change {
            samples.push((MEMORY_STREAM, v));
        }

        self.streams.advance(t, samples)?;

        if let Some(check) = firmware {
            let window = self.streams.window(FIRMWARE_STREAM).expect("firmware stream registered");
            self.timelines.record_guarded(TIMELINE, &self.rules, CHECK_FIRMWARE_OK, t, window)?;
            out.note(
                "firmware_check",
                &[
                    ("ok", check.ok.to_string()),
                    ("live_digest", format!("{:#018x}", check.live_digest)),
                    ("reference_digest", format!("{:#018x}", check.reference_digest)),
                    ("first_difference", check.first_difference.map_or("none".into(), |a| format!("{a:#010x}"))),
                ],
            );
            let ok = check.ok;
            let first = check.first_difference;
            self.last_firmware = Some(check);
            if !self.booted {
                self.booted = true;
                let permit = if ok { ExecutionPermit::Granted } else { ExecutionPermit::Withheld };
                self.permit = Some(permit);
                out.note("execution_permit", &[("granted", ok.to_string())]);
                if ok {
                    self.timelines.record(TIMELINE, EXECUTE_PROGRAM, t)?;
                    out.actuations.push((PROGRAM_VERTEX.into(), Actuation::Permit));
                }
            }
            if !ok {
                let at = first.map_or("unknown".into(), |a| format!("{a:#010x}"));
                self.fail_safe(t, format!("firmware mismatch at {at}"), &mut out)?;
            }
        }

        if let (Some(b), Some(v)) = (branch, verdict) {
            let window = self.streams.window(CONTROL_FLOW_STREAM).expect("control flow stream registered");
            self.timelines.record_guarded(TIMELINE, &self.rules, CHECK_CONTROL_FLOW_OK, t, window)?;
            self.branch_verdicts.push((t, b.site, v));
            let field = match v {
                BranchVerdict::Ok => "none".to_string(),
                BranchVerdict::Tampered(f) => f.to_string(),
            };
            out.note(
                "branch_check",
                &[
                    ("site", format!("{:#010x}", b.site)),
                    ("kind", b.kind.to_string()),
                    ("target", format!("{:#010x}", b.target)),
                    ("return", format!("{:#010x}", b.return_address)),
                    ("ok", v.is_ok().to_string()),
                    ("field", field.clone()),
                ],
            );
            if !v.is_ok() {
                self.fail_safe(t, format!("branch at {:#010x} tampered ({field})", b.site), &mut out)?;
            }
        }

        let (occ, changes) = self.timelines.drain_changes(&self.rules, t)?;
        out.occurrences = occ;
        out.fluent_changes = changes;
        out.verdict = Some(self.monitor.evaluate(&self.streams, self.timelines.as_map(), t)?);
        Ok(out)
    }
}

fn last_present(s: &[Sample]) -> Option<&Value> {
    s.iter().rev().map(|x| &x.value).find(|v| !v.is_gap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ec::{evaluate_pattern, PatternOutcome};
    use crate::plant::isa::STACK_TOP;
    use crate::plant::program::{MAIN, MCU_INIT};
    use crate::plant::{Plant, PlantConfig};

    fn eim_for(plant: &PlantConfig, recheck: &[Tick]) -> Eim {
        Eim::new(EimConfig {
            reference_firmware: plant.firmware.clone(),
            control_flow: ReferenceControlFlow::builtin(),
            recheck_ticks: recheck.iter().copied().collect(),
            continuous: false,
            horizon: 1_000_000,
        })
        .unwrap()
    }

    /// Steps plant and monitor together; `before` runs after the tick's
    /// actuations and before the plant step, like an injection.
    fn run(
        plant: &mut Plant,
        eim: &mut Eim,
        ticks: std::ops::Range<Tick>,
        mut before: impl FnMut(Tick, &mut Plant),
    ) -> Vec<(MonitorOutput, PlantStep)> {
        ticks
            .map(|t| {
                plant.begin_tick(t).unwrap();
                before(t, plant);
                let s = plant.step(t);
                let out = eim.step(t, plant, &s, &[]).unwrap();
                for (_, a) in &out.actuations {
                    plant.actuate(a.clone()).unwrap();
                }
                (out, s)
            })
            .collect()
    }

    fn branch(kind: BranchKind, site: u32, target: u32, ret: u32, insn: u32) -> BranchEvent {
        BranchEvent { tick: 0, kind, site, target, return_address: ret, insn_word: insn, slot: None }
    }

    #[test]
    fn branch_checks_name_first_bad_field() {
        let r = ReferenceControlFlow::builtin();
        let call = r.table.lookup(MAIN).unwrap().clone();
        let ok = branch(BranchKind::Call, MAIN, MCU_INIT, MAIN + 4, call.insn_word);
        assert_eq!(check_branch(&ok, &r), BranchVerdict::Ok);
        let mut bad_ret = ok.clone();
        bad_ret.return_address = 0x0800_0500;
        bad_ret.target = 0x0800_0500;
        assert_eq!(check_branch(&bad_ret, &r), BranchVerdict::Tampered(BranchField::Return));
        let mut bad_target = ok.clone();
        bad_target.target = MCU_INIT + 4;
        assert_eq!(check_branch(&bad_target, &r), BranchVerdict::Tampered(BranchField::Target));
        let mut bad_word = ok.clone();
        bad_word.insn_word ^= 1;
        assert_eq!(check_branch(&bad_word, &r), BranchVerdict::Tampered(BranchField::InsnWord));
        let unknown = branch(BranchKind::Jump, MAIN + 8, MAIN, MAIN + 12, 0);
        assert_eq!(check_branch(&unknown, &r), BranchVerdict::Tampered(BranchField::Site));
    }

    #[test]
    fn firmware_verification() {
        let reference = FirmwareImage::new(0x0800_0000, vec![1, 2, 3]);
        assert!(verify_firmware(&reference.clone(), &reference).unwrap());
        assert!(!verify_firmware(&FirmwareImage::new(0x0800_0000, vec![1, 2, 4]), &reference).unwrap());
        assert!(matches!(
            verify_firmware(&FirmwareImage::new(0x0800_0000, vec![1, 2]), &reference),
            Err(MonitorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn failsafe_outside_image_rejected() {
        let cfg = PlantConfig::builtin(1);
        let mut flow = ReferenceControlFlow::builtin();
        flow.failsafe_address = 0x0900_0000;
        let r = Eim::new(EimConfig {
            reference_firmware: cfg.firmware,
            control_flow: flow,
            recheck_ticks: BTreeSet::new(),
            continuous: false,
            horizon: 10,
        });
        assert!(matches!(r, Err(MonitorError::Config(_))));
    }

    #[test]
    fn nominal_boot_then_clean_branches() {
        let cfg = PlantConfig::builtin(1);
        let mut eim = eim_for(&cfg, &[]);
        let mut plant = Plant::new(cfg).unwrap();
        let outs = run(&mut plant, &mut eim, 0..20_000, |_, _| {});
        assert_eq!(eim.permit(), Some(ExecutionPermit::Granted));
        assert!(outs[0].0.actuations.contains(&(PROGRAM_VERTEX.to_string(), Actuation::Permit)));
        let first_branch = outs.iter().position(|(_, s)| s.executed.as_ref().is_some_and(|x| x.branch.is_some()));
        assert!(first_branch.unwrap() > 0);
        assert!(eim.branch_verdicts().len() > 10);
        assert!(eim.branch_verdicts().iter().all(|(_, _, v)| v.is_ok()));
        assert!(outs.iter().all(|(o, _)| !o.verdict.as_ref().unwrap().is_rejected()));
        let tl = eim.timelines().get(TIMELINE).unwrap();
        let outcome = evaluate_pattern(&pattern("p"), eim.rules(), tl, 19_999).unwrap();
        assert!(!matches!(outcome, PatternOutcome::Violated { .. }));
        assert!(!eim.failsafe_sent());
    }

    #[test]
    fn corrupt_image_never_runs() {
        let cfg = PlantConfig::builtin(1);
        let mut eim = eim_for(&cfg, &[]);
        let mut plant = Plant::new(cfg).unwrap();
        let outs = run(&mut plant, &mut eim, 0..5_000, |t, p| {
            if t == 0 {
                p.tamper_memory(MCU_INIT + 8, 0xDEAD_BEEF).unwrap();
            }
        });
        assert_eq!(eim.permit(), Some(ExecutionPermit::Withheld));
        assert!(outs.iter().all(|(_, s)| s.executed.is_none()));
        assert!(outs[0].0.verdict.as_ref().unwrap().is_rejected());
        let tl = eim.timelines().get(TIMELINE).unwrap();
        assert_eq!(evaluate_pattern(&pattern("p"), eim.rules(), tl, 10).unwrap(), PatternOutcome::Violated { clause: 1 });
    }

    #[test]
    fn tampered_return_lands_in_failsafe() {
        let cfg = PlantConfig::builtin(1);
        let mut eim = eim_for(&cfg, &[]);
        let mut plant = Plant::new(cfg).unwrap();
        let slot = STACK_TOP - 4;
        let attack = 2_000;
        let outs = run(&mut plant, &mut eim, 0..12_000, |t, p| {
            if t == attack {
                p.tamper_memory(slot, 0x0800_0500).unwrap();
            }
        });
        // The memory comparison flips at the injection tick.
        let flip = outs.iter().position(|(o, _)| {
            o.notes.iter().any(|(n, f)| n == "mem_compare" && f["match"] == "false")
        });
        assert_eq!(flip, Some(attack as usize));
        let bad: Vec<_> = eim.branch_verdicts().iter().filter(|(_, _, v)| !v.is_ok()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].1, MCU_INIT + 0x14);
        assert_eq!(bad[0].2, BranchVerdict::Tampered(BranchField::Return));
        let detected = bad[0].0 as usize;
        let next = outs[detected + 1..].iter().find_map(|(_, s)| s.executed.as_ref()).unwrap();
        assert_eq!(next.pc, FAILSAFE);
        let tl = eim.timelines().get(TIMELINE).unwrap();
        assert_eq!(evaluate_pattern(&pattern("p"), eim.rules(), tl, 11_999).unwrap(), PatternOutcome::Violated { clause: 3 });
        assert!(outs[detected].0.verdict.as_ref().unwrap().is_rejected());
    }

    #[test]
    fn recheck_catches_runtime_corruption() {
        let cfg = PlantConfig::builtin(1);
        let mut eim = eim_for(&cfg, &[3_000]);
        let mut plant = Plant::new(cfg).unwrap();
        let outs = run(&mut plant, &mut eim, 0..4_000, |t, p| {
            if t == 2_500 {
                p.tamper_memory(FAILSAFE - 4, 7).unwrap();
            }
        });
        assert!(!outs[2_999].0.verdict.as_ref().unwrap().is_rejected());
        let at = &outs[3_000].0;
        assert!(at.verdict.as_ref().unwrap().is_rejected());
        assert!(at.actuations.iter().any(|(_, a)| matches!(a, Actuation::Failsafe { address } if *address == FAILSAFE)));
    }
}
