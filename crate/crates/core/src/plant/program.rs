//! The flight-control program image and its reference control-flow table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::isa::{Insn, BranchKind, CODE_BASE, COND_ALWAYS, COND_NE, RAM_BASE};

pub const MAIN: u32 = 0x0800_0100;
pub const MCU_INIT: u32 = 0x0800_0200;
pub const CONTROL_STEP: u32 = 0x0800_0300;
pub const FAILSAFE: u32 = 0x0800_6168;
/// One past the last image word.
pub const IMAGE_END: u32 = 0x0800_6174;

pub const CELL_COUNTER: u32 = RAM_BASE;
pub const CELL_SENSOR: u32 = RAM_BASE + 0x4;
pub const CELL_ACTUATOR: u32 = RAM_BASE + 0x8;
pub const CELL_CFG: u32 = RAM_BASE + 0xC;
pub const CELL_STATUS: u32 = RAM_BASE + 0x10;

/// Iterations of the configuration loop in `mcu_init`.
pub const INIT_LOOPS: i32 = 12;

/// `(name, first address, one past last address)`.
pub const FUNCTIONS: [(&str, u32, u32); 4] = [
    ("main", MAIN, MAIN + 0x18),
    ("mcu_init", MCU_INIT, MCU_INIT + 0x18),
    ("control_step", CONTROL_STEP, CONTROL_STEP + 0x10),
    ("failsafe", FAILSAFE, IMAGE_END),
];

pub fn function_at(addr: u32) -> Option<&'static str> {
    FUNCTIONS.iter().find(|(_, lo, hi)| (*lo..*hi).contains(&addr)).map(|(n, _, _)| *n)
}

fn listing() -> Vec<(u32, Insn)> {
    vec![
        (MAIN, Insn::call(MCU_INIT)),
        (MAIN + 0x04, Insn::load(1, CELL_COUNTER)),
        (MAIN + 0x08, Insn::add(1, 1)),
        (MAIN + 0x0C, Insn::store(1, CELL_COUNTER)),
        (MAIN + 0x10, Insn::call(CONTROL_STEP)),
        (MAIN + 0x14, Insn::jump(COND_ALWAYS, MAIN + 0x04)),
        (MCU_INIT, Insn::add(0, INIT_LOOPS)),
        (MCU_INIT + 0x04, Insn::add(0, -1)),
        (MCU_INIT + 0x08, Insn::store(0, CELL_CFG)),
        (MCU_INIT + 0x0C, Insn::cmp(0, 0)),
        (MCU_INIT + 0x10, Insn::jump(COND_NE, MCU_INIT + 0x04)),
        (MCU_INIT + 0x14, Insn::ret()),
        (CONTROL_STEP, Insn::load(2, CELL_SENSOR)),
        (CONTROL_STEP + 0x04, Insn::add(2, 3)),
        (CONTROL_STEP + 0x08, Insn::store(2, CELL_ACTUATOR)),
        (CONTROL_STEP + 0x0C, Insn::ret()),
        (FAILSAFE, Insn::add(7, 0x5AFE)),
        (FAILSAFE + 0x04, Insn::store(7, CELL_STATUS)),
        (FAILSAFE + 0x08, Insn::halt()),
    ]
}

/// Image words from [`CODE_BASE`] to [`IMAGE_END`]; unused words are `HALT`.
pub fn build_image() -> Vec<u32> {
    let mut words = vec![Insn::halt().encode(); ((IMAGE_END - CODE_BASE) / 4) as usize];
    for (addr, insn) in listing() {
        words[((addr - CODE_BASE) / 4) as usize] = insn.encode();
    }
    words
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgEntry {
    pub site: u32,
    pub kind: BranchKind,
    pub target: u32,
    pub return_address: u32,
    pub insn_word: u32,
}

/// Expected branch behaviour per branch site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCfg {
    pub entries: Vec<CfgEntry>,
}

impl ReferenceCfg {
    pub fn builtin() -> Self {
        let e = |site: u32, kind, target, ret, insn: Insn| CfgEntry {
            site,
            kind,
            target,
            return_address: ret,
            insn_word: insn.encode(),
        };
        ReferenceCfg {
            entries: vec![
                e(MAIN, BranchKind::Call, MCU_INIT, MAIN + 0x04, Insn::call(MCU_INIT)),
                e(MCU_INIT + 0x10, BranchKind::Jump, MCU_INIT + 0x04, MCU_INIT + 0x14, Insn::jump(COND_NE, MCU_INIT + 0x04)),
                e(MCU_INIT + 0x14, BranchKind::Return, MAIN + 0x04, MAIN + 0x04, Insn::ret()),
                e(MAIN + 0x10, BranchKind::Call, CONTROL_STEP, MAIN + 0x14, Insn::call(CONTROL_STEP)),
                e(CONTROL_STEP + 0x0C, BranchKind::Return, MAIN + 0x14, MAIN + 0x14, Insn::ret()),
                e(MAIN + 0x14, BranchKind::Jump, MAIN + 0x04, MAIN + 0x18, Insn::jump(COND_ALWAYS, MAIN + 0x04)),
            ],
        }
    }

    pub fn lookup(&self, site: u32) -> Option<&CfgEntry> {
        self.entries.iter().find(|e| e.site == site)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# site       kind    target      return      word\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:#010x}  {:<6}  {:#010x}  {:#010x}  {:#010x}",
                e.site, e.kind, e.target, e.return_address, e.insn_word
            );
        }
        s
    }

    /// Parses the text form produced by [`to_text`](Self::to_text). Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 5 {
                return Err(format!("line {}: expected 5 columns, found {}", n + 1, cols.len()));
            }
            let num = |s: &str| parse_u32(s).map_err(|e| format!("line {}: {e}", n + 1));
            entries.push(CfgEntry {
                site: num(cols[0])?,
                kind: cols[1].parse().map_err(|e| format!("line {}: {e}", n + 1))?,
                target: num(cols[2])?,
                return_address: num(cols[3])?,
                insn_word: num(cols[4])?,
            });
        }
        Ok(ReferenceCfg { entries })
    }
}

pub fn parse_u32(s: &str) -> Result<u32, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(&hex.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    };
    r.map_err(|e| format!("bad number {s:?}: {e}"))
}
