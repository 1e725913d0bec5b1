//! A small load/store ISA with call, return and conditional jump.
//!
//! Instruction word: `op << 28 | reg << 24 | imm24`. Addresses are byte
//! addresses with 4-byte words. Code targets are encoded as word offsets from
//! [`CODE_BASE`], data operands as word offsets from [`RAM_BASE`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::PlantError;

pub const CODE_BASE: u32 = 0x0800_0000;
pub const RAM_BASE: u32 = 0x2000_0000;
pub const RAM_SIZE: u32 = 0x400;
pub const STACK_TOP: u32 = RAM_BASE + RAM_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Halt = 0,
    Load = 1,
    Store = 2,
    Add = 3,
    Cmp = 4,
    Jump = 5,
    Call = 6,
    Ret = 7,
}

impl Opcode {
    fn from_bits(b: u32) -> Option<Self> {
        use Opcode::*;
        Some(match b {
            0 => Halt,
            1 => Load,
            2 => Store,
            3 => Add,
            4 => Cmp,
            5 => Jump,
            6 => Call,
            7 => Ret,
            _ => return None,
        })
    }
}

/// Jump condition, carried in the register field of a jump.
pub const COND_ALWAYS: u8 = 0;
pub const COND_EQ: u8 = 1;
pub const COND_NE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insn {
    pub op: Opcode,
    pub reg: u8,
    pub imm: u32,
}

impl Insn {
    pub fn new(op: Opcode, reg: u8, imm: u32) -> Self {
        Insn { op, reg: reg & 0xF, imm: imm & 0xFF_FFFF }
    }

    pub fn encode(self) -> u32 {
        (self.op as u32) << 28 | (self.reg as u32) << 24 | (self.imm & 0xFF_FFFF)
    }

    pub fn decode(word: u32) -> Option<Self> {
        Some(Insn { op: Opcode::from_bits(word >> 28)?, reg: ((word >> 24) & 0xF) as u8, imm: word & 0xFF_FFFF })
    }

    /// The immediate as a signed 24-bit value.
    pub fn simm(self) -> i32 {
        ((self.imm << 8) as i32) >> 8
    }

    pub fn halt() -> Self {
        Insn::new(Opcode::Halt, 0, 0)
    }
    pub fn load(reg: u8, addr: u32) -> Self {
        Insn::new(Opcode::Load, reg, ram_operand(addr))
    }
    pub fn store(reg: u8, addr: u32) -> Self {
        Insn::new(Opcode::Store, reg, ram_operand(addr))
    }
    pub fn add(reg: u8, v: i32) -> Self {
        Insn::new(Opcode::Add, reg, v as u32)
    }
    pub fn cmp(reg: u8, v: i32) -> Self {
        Insn::new(Opcode::Cmp, reg, v as u32)
    }
    pub fn jump(cond: u8, target: u32) -> Self {
        Insn::new(Opcode::Jump, cond, code_operand(target))
    }
    pub fn call(target: u32) -> Self {
        Insn::new(Opcode::Call, 0, code_operand(target))
    }
    pub fn ret() -> Self {
        Insn::new(Opcode::Ret, 0, 0)
    }
}

pub fn code_operand(addr: u32) -> u32 {
    (addr - CODE_BASE) / 4
}

pub fn code_address(operand: u32) -> u32 {
    CODE_BASE + operand * 4
}

pub fn ram_operand(addr: u32) -> u32 {
    (addr - RAM_BASE) / 4
}

pub fn ram_address(operand: u32) -> u32 {
    RAM_BASE + operand * 4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Call,
    Return,
    Jump,
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchKind::Call => "call",
            BranchKind::Return => "return",
            BranchKind::Jump => "jump",
        })
    }
}

impl FromStr for BranchKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "call" => Ok(BranchKind::Call),
            "return" => Ok(BranchKind::Return),
            "jump" => Ok(BranchKind::Jump),
            other => Err(format!("unknown branch kind {other}")),
        }
    }
}

/// A taken control transfer.
///
/// For calls `slot` is the stack word the return address was pushed to; for
/// returns it is the word it was popped from. A return's `target` and
/// `return_address` are both the popped value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub tick: Tick,
    pub kind: BranchKind,
    pub site: u32,
    pub target: u32,
    pub return_address: u32,
    pub insn_word: u32,
    pub slot: Option<u32>,
}

/// Code image plus data RAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    pub code_base: u32,
    pub code: Vec<u32>,
    pub ram: Vec<u32>,
}

impl Memory {
    pub fn new(code_base: u32, code: Vec<u32>) -> Self {
        Memory { code_base, code, ram: vec![0; (RAM_SIZE / 4) as usize] }
    }

    fn locate(&self, addr: u32) -> Result<(bool, usize), PlantError> {
        if !addr.is_multiple_of(4) {
            return Err(PlantError::Misaligned { addr });
        }
        let code_end = self.code_base as u64 + 4 * self.code.len() as u64;
        if (self.code_base as u64..code_end).contains(&(addr as u64)) {
            return Ok((true, ((addr - self.code_base) / 4) as usize));
        }
        if (RAM_BASE..STACK_TOP).contains(&addr) {
            return Ok((false, ((addr - RAM_BASE) / 4) as usize));
        }
        Err(PlantError::AddressOutOfRange { addr })
    }

    pub fn read(&self, addr: u32) -> Result<u32, PlantError> {
        Ok(match self.locate(addr)? {
            (true, i) => self.code[i],
            (false, i) => self.ram[i],
        })
    }

    pub fn write(&mut self, addr: u32, value: u32) -> Result<(), PlantError> {
        match self.locate(addr)? {
            (true, i) => self.code[i] = value,
            (false, i) => self.ram[i] = value,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpu {
    pub pc: u32,
    pub sp: u32,
    pub regs: [u32; 8],
    pub flag_eq: bool,
    pub halted: bool,
}

/// What one executed instruction did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Executed {
    pub pc: u32,
    pub word: u32,
    pub branch: Option<BranchEvent>,
    pub mem_write: Option<(u32, u32)>,
    /// Set when the instruction could not be fetched or decoded.
    pub fault: Option<String>,
}

impl Cpu {
    pub fn new(entry: u32) -> Self {
        Cpu { pc: entry, sp: STACK_TOP, regs: [0; 8], flag_eq: false, halted: false }
    }

    /// Executes one instruction. Does nothing once halted.
    pub fn step(&mut self, mem: &mut Memory, tick: Tick) -> Option<Executed> {
        if self.halted {
            return None;
        }
        let pc = self.pc;
        let word = match mem.read(pc) {
            Ok(w) => w,
            Err(e) => return Some(self.fault(pc, 0, e.to_string())),
        };
        let Some(insn) = Insn::decode(word) else {
            return Some(self.fault(pc, word, format!("undefined opcode in {word:#010x}")));
        };
        let mut out = Executed { pc, word, branch: None, mem_write: None, fault: None };
        let r = (insn.reg & 7) as usize;
        let mut next = pc.wrapping_add(4);
        match insn.op {
            Opcode::Halt => self.halted = true,
            Opcode::Load => match mem.read(ram_address(insn.imm)) {
                Ok(v) => self.regs[r] = v,
                Err(e) => return Some(self.fault(pc, word, e.to_string())),
            },
            Opcode::Store => {
                let addr = ram_address(insn.imm);
                if let Err(e) = mem.write(addr, self.regs[r]) {
                    return Some(self.fault(pc, word, e.to_string()));
                }
                out.mem_write = Some((addr, self.regs[r]));
            }
            Opcode::Add => self.regs[r] = self.regs[r].wrapping_add(insn.simm() as u32),
            Opcode::Cmp => self.flag_eq = self.regs[r] == insn.simm() as u32,
            Opcode::Jump => {
                let taken = match insn.reg {
                    COND_ALWAYS => true,
                    COND_EQ => self.flag_eq,
                    COND_NE => !self.flag_eq,
                    _ => return Some(self.fault(pc, word, "bad jump condition".into())),
                };
                if taken {
                    next = code_address(insn.imm);
                    out.branch = Some(BranchEvent {
                        tick,
                        kind: BranchKind::Jump,
                        site: pc,
                        target: next,
                        return_address: pc.wrapping_add(4),
                        insn_word: word,
                        slot: None,
                    });
                }
            }
            Opcode::Call => {
                let slot = self.sp.wrapping_sub(4);
                let ret = pc.wrapping_add(4);
                if let Err(e) = mem.write(slot, ret) {
                    return Some(self.fault(pc, word, e.to_string()));
                }
                self.sp = slot;
                next = code_address(insn.imm);
                out.mem_write = Some((slot, ret));
                out.branch = Some(BranchEvent {
                    tick,
                    kind: BranchKind::Call,
                    site: pc,
                    target: next,
                    return_address: ret,
                    insn_word: word,
                    slot: Some(slot),
                });
            }
            Opcode::Ret => {
                let slot = self.sp;
                let ret = match mem.read(slot) {
                    Ok(v) => v,
                    Err(e) => return Some(self.fault(pc, word, e.to_string())),
                };
                self.sp = slot.wrapping_add(4);
                next = ret;
                out.branch = Some(BranchEvent {
                    tick,
                    kind: BranchKind::Return,
                    site: pc,
                    target: ret,
                    return_address: ret,
                    insn_word: word,
                    slot: Some(slot),
                });
            }
        }
        self.pc = next;
        Some(out)
    }

    fn fault(&mut self, pc: u32, word: u32, msg: String) -> Executed {
        self.halted = true;
        Executed { pc, word, branch: None, mem_write: None, fault: Some(msg) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        for insn in [
            Insn::call(0x0800_0200),
            Insn::add(0, -1),
            Insn::jump(COND_NE, 0x0800_0204),
            Insn::store(2, 0x2000_0008),
            Insn::ret(),
        ] {
            assert_eq!(Insn::decode(insn.encode()), Some(insn));
        }
        assert_eq!(Insn::add(0, -1).simm(), -1);
        assert_eq!(Insn::decode(0xF000_0000), None);
    }

    #[test]
    fn call_and_return_use_stack() {
        let code = vec![
            Insn::call(CODE_BASE + 8).encode(),
            Insn::halt().encode(),
            Insn::ret().encode(),
        ];
        let mut mem = Memory::new(CODE_BASE, code);
        let mut cpu = Cpu::new(CODE_BASE);
        let call = cpu.step(&mut mem, 1).unwrap().branch.unwrap();
        assert_eq!(call.kind, BranchKind::Call);
        assert_eq!(call.slot, Some(STACK_TOP - 4));
        assert_eq!(mem.read(STACK_TOP - 4).unwrap(), CODE_BASE + 4);
        let ret = cpu.step(&mut mem, 2).unwrap().branch.unwrap();
        assert_eq!(ret.target, CODE_BASE + 4);
        assert_eq!(cpu.sp, STACK_TOP);
        cpu.step(&mut mem, 3);
        assert!(cpu.halted);
        assert!(cpu.step(&mut mem, 4).is_none());
    }

    #[test]
    fn out_of_range_access() {
        let mem = Memory::new(CODE_BASE, vec![0; 4]);
        assert!(matches!(mem.read(CODE_BASE + 16), Err(PlantError::AddressOutOfRange { .. })));
        assert!(matches!(mem.read(CODE_BASE + 2), Err(PlantError::Misaligned { .. })));
        assert!(mem.read(STACK_TOP - 4).is_ok());
    }
}
