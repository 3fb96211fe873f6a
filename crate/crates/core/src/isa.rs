//! Instruction set: a 32-bit MIPS-like subset plus the integrity and
//! balancing extensions.
//!
//! Layout is the classic 6/5/5/5/5/6 R-format and 6/5/5/16 I-format. Jumps and
//! `chk` carry a 26-bit field. Decoding is strict: every field an instruction
//! does not use must be zero, otherwise the word is [`Decoded::Invalid`]. That
//! makes `encode(decode(w)) == w` for every word that decodes.

use std::fmt;

/// Primary opcode values.
pub mod opcode {
    pub const SPECIAL: u32 = 0x00;
    pub const J: u32 = 0x02;
    pub const JAL: u32 = 0x03;
    pub const BEQ: u32 = 0x04;
    pub const BNE: u32 = 0x05;
    pub const ADDI: u32 = 0x08;
    pub const SLTI: u32 = 0x0A;
    pub const ANDI: u32 = 0x0C;
    pub const ORI: u32 = 0x0D;
    pub const XORI: u32 = 0x0E;
    pub const LUI: u32 = 0x0F;
    pub const LW: u32 = 0x23;
    pub const SW: u32 = 0x2B;
    pub const CHK: u32 = 0x3A;
    pub const STARTBAL: u32 = 0x3B;
    pub const ENDBAL: u32 = 0x3C;
    pub const IRET: u32 = 0x3D;
    pub const HALT: u32 = 0x3F;
}

/// Function codes under [`opcode::SPECIAL`].
pub mod funct {
    pub const SLL: u32 = 0x00;
    pub const SRL: u32 = 0x02;
    pub const JR: u32 = 0x08;
    pub const SYSCALL: u32 = 0x0C;
    pub const MFHI: u32 = 0x10;
    pub const MFLO: u32 = 0x12;
    pub const MULT: u32 = 0x18;
    pub const ADD: u32 = 0x20;
    pub const SUB: u32 = 0x22;
    pub const AND: u32 = 0x24;
    pub const OR: u32 = 0x25;
    pub const XOR: u32 = 0x26;
    pub const NOR: u32 = 0x27;
    pub const SLT: u32 = 0x2A;
}

/// A general-purpose register index, always `< 32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const SP: Reg = Reg(29);
    pub const RA: Reg = Reg(31);

    pub fn new(index: u8) -> Option<Reg> {
        (index < 32).then_some(Reg(index))
    }

    /// Panics if `index >= 32`.
    pub const fn of(index: u8) -> Reg {
        assert!(index < 32, "register index out of range");
        Reg(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn bits(self) -> u32 {
        self.0 as u32
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Operation mnemonics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Addi,
    Sub,
    And,
    Andi,
    Or,
    Ori,
    Xor,
    Xori,
    Nor,
    Sll,
    Srl,
    Slt,
    Slti,
    Lui,
    Lw,
    Sw,
    Beq,
    Bne,
    J,
    Jal,
    Jr,
    Mult,
    Mfhi,
    Mflo,
    Syscall,
    Halt,
    Chk,
    StartBal,
    EndBal,
    Iret,
}

/// Operand shape of an operation; decides which fields are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `op rd, rs, rt`
    RegRegReg,
    /// `op rd, rt, shamt`
    Shift,
    /// `op rs`
    RegJump,
    /// `op rs, rt`
    RegPair,
    /// `op rd`
    MoveFrom,
    /// `op rt, rs, imm`
    RegRegImm,
    /// `op rt, imm`
    RegImm,
    /// `op rt, imm(rs)`
    Memory,
    /// `op rs, rt, offset`
    Branch,
    /// `op target`
    Jump,
    /// `op payload` (26-bit)
    Payload,
    /// no operands
    Bare,
}

impl Op {
    pub const ALL: [Op; 31] = [
        Op::Add,
        Op::Addi,
        Op::Sub,
        Op::And,
        Op::Andi,
        Op::Or,
        Op::Ori,
        Op::Xor,
        Op::Xori,
        Op::Nor,
        Op::Sll,
        Op::Srl,
        Op::Slt,
        Op::Slti,
        Op::Lui,
        Op::Lw,
        Op::Sw,
        Op::Beq,
        Op::Bne,
        Op::J,
        Op::Jal,
        Op::Jr,
        Op::Mult,
        Op::Mfhi,
        Op::Mflo,
        Op::Syscall,
        Op::Halt,
        Op::Chk,
        Op::StartBal,
        Op::EndBal,
        Op::Iret,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Addi => "addi",
            Op::Sub => "sub",
            Op::And => "and",
            Op::Andi => "andi",
            Op::Or => "or",
            Op::Ori => "ori",
            Op::Xor => "xor",
            Op::Xori => "xori",
            Op::Nor => "nor",
            Op::Sll => "sll",
            Op::Srl => "srl",
            Op::Slt => "slt",
            Op::Slti => "slti",
            Op::Lui => "lui",
            Op::Lw => "lw",
            Op::Sw => "sw",
            Op::Beq => "beq",
            Op::Bne => "bne",
            Op::J => "j",
            Op::Jal => "jal",
            Op::Jr => "jr",
            Op::Mult => "mult",
            Op::Mfhi => "mfhi",
            Op::Mflo => "mflo",
            Op::Syscall => "syscall",
            Op::Halt => "halt",
            Op::Chk => "chk",
            Op::StartBal => "startBal",
            Op::EndBal => "endBal",
            Op::Iret => "iret",
        }
    }

    /// Case-insensitive lookup; `nop` is an assembler alias and is not an `Op`.
    pub fn from_mnemonic(s: &str) -> Option<Op> {
        Op::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }

    pub fn format(self) -> Format {
        use Op::*;
        match self {
            Add | Sub | And | Or | Xor | Nor | Slt => Format::RegRegReg,
            Sll | Srl => Format::Shift,
            Jr => Format::RegJump,
            Mult => Format::RegPair,
            Mfhi | Mflo => Format::MoveFrom,
            Addi | Slti | Andi | Ori | Xori => Format::RegRegImm,
            Lui => Format::RegImm,
            Lw | Sw => Format::Memory,
            Beq | Bne => Format::Branch,
            J | Jal => Format::Jump,
            Chk => Format::Payload,
            Syscall | Halt | StartBal | EndBal | Iret => Format::Bare,
        }
    }

    /// Control-flow instructions terminate basic blocks and perform the
    /// runtime checksum comparison when they retire.
    pub fn is_cfi(self) -> bool {
        matches!(
            self,
            Op::Beq
                | Op::Bne
                | Op::J
                | Op::Jal
                | Op::Jr
                | Op::Halt
                | Op::StartBal
                | Op::EndBal
                | Op::Iret
        )
    }

    /// Immediate is sign-extended (as opposed to zero-extended).
    pub fn signed_imm(self) -> bool {
        matches!(self, Op::Addi | Op::Slti | Op::Lw | Op::Sw | Op::Beq | Op::Bne)
    }

    fn primary(self) -> u32 {
        use opcode::*;
        match self {
            Op::J => J,
            Op::Jal => JAL,
            Op::Beq => BEQ,
            Op::Bne => BNE,
            Op::Addi => ADDI,
            Op::Slti => SLTI,
            Op::Andi => ANDI,
            Op::Ori => ORI,
            Op::Xori => XORI,
            Op::Lui => LUI,
            Op::Lw => LW,
            Op::Sw => SW,
            Op::Chk => CHK,
            Op::StartBal => STARTBAL,
            Op::EndBal => ENDBAL,
            Op::Iret => IRET,
            Op::Halt => HALT,
            _ => SPECIAL,
        }
    }

    fn funct(self) -> u32 {
        use funct::*;
        match self {
            Op::Sll => SLL,
            Op::Srl => SRL,
            Op::Jr => JR,
            Op::Syscall => SYSCALL,
            Op::Mfhi => MFHI,
            Op::Mflo => MFLO,
            Op::Mult => MULT,
            Op::Add => ADD,
            Op::Sub => SUB,
            Op::And => AND,
            Op::Or => OR,
            Op::Xor => XOR,
            Op::Nor => NOR,
            Op::Slt => SLT,
            _ => 0,
        }
    }

    fn from_funct(f: u32) -> Option<Op> {
        use funct::*;
        Some(match f {
            SLL => Op::Sll,
            SRL => Op::Srl,
            JR => Op::Jr,
            SYSCALL => Op::Syscall,
            MFHI => Op::Mfhi,
            MFLO => Op::Mflo,
            MULT => Op::Mult,
            ADD => Op::Add,
            SUB => Op::Sub,
            AND => Op::And,
            OR => Op::Or,
            XOR => Op::Xor,
            NOR => Op::Nor,
            SLT => Op::Slt,
            _ => return None,
        })
    }

    fn from_primary(p: u32) -> Option<Op> {
        use opcode::*;
        Some(match p {
            J => Op::J,
            JAL => Op::Jal,
            BEQ => Op::Beq,
            BNE => Op::Bne,
            ADDI => Op::Addi,
            SLTI => Op::Slti,
            ANDI => Op::Andi,
            ORI => Op::Ori,
            XORI => Op::Xori,
            LUI => Op::Lui,
            LW => Op::Lw,
            SW => Op::Sw,
            CHK => Op::Chk,
            STARTBAL => Op::StartBal,
            ENDBAL => Op::EndBal,
            IRET => Op::Iret,
            HALT => Op::Halt,
            _ => return None,
        })
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

pub const TARGET_MASK: u32 = 0x03FF_FFFF;

/// A decoded instruction. Fields the operation does not use are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Op,
    pub rs: Reg,
    pub rt: Reg,
    pub rd: Reg,
    pub shamt: u8,
    pub imm: u16,
    pub target: u32,
}

impl Instruction {
    fn blank(op: Op) -> Instruction {
        Instruction {
            op,
            rs: Reg::ZERO,
            rt: Reg::ZERO,
            rd: Reg::ZERO,
            shamt: 0,
            imm: 0,
            target: 0,
        }
    }

    pub fn nop() -> Instruction {
        Instruction::blank(Op::Sll)
    }

    pub fn bare(op: Op) -> Instruction {
        debug_assert_eq!(op.format(), Format::Bare);
        Instruction::blank(op)
    }

    pub fn r3(op: Op, rd: Reg, rs: Reg, rt: Reg) -> Instruction {
        debug_assert_eq!(op.format(), Format::RegRegReg);
        Instruction {
            rd,
            rs,
            rt,
            ..Instruction::blank(op)
        }
    }

    pub fn shift(op: Op, rd: Reg, rt: Reg, shamt: u8) -> Instruction {
        debug_assert_eq!(op.format(), Format::Shift);
        Instruction {
            rd,
            rt,
            shamt: shamt & 31,
            ..Instruction::blank(op)
        }
    }

    pub fn jr(rs: Reg) -> Instruction {
        Instruction {
            rs,
            ..Instruction::blank(Op::Jr)
        }
    }

    pub fn mult(rs: Reg, rt: Reg) -> Instruction {
        Instruction {
            rs,
            rt,
            ..Instruction::blank(Op::Mult)
        }
    }

    pub fn move_from(op: Op, rd: Reg) -> Instruction {
        debug_assert_eq!(op.format(), Format::MoveFrom);
        Instruction {
            rd,
            ..Instruction::blank(op)
        }
    }

    /// I-format with `rt` destination / `rs` source (also loads, stores,
    /// branches, where the roles follow MIPS convention).
    pub fn imm(op: Op, rt: Reg, rs: Reg, imm: u16) -> Instruction {
        debug_assert!(matches!(
            op.format(),
            Format::RegRegImm | Format::Memory | Format::Branch | Format::RegImm
        ));
        let rs = if op == Op::Lui { Reg::ZERO } else { rs };
        Instruction {
            rt,
            rs,
            imm,
            ..Instruction::blank(op)
        }
    }

    pub fn branch(op: Op, rs: Reg, rt: Reg, offset: i16) -> Instruction {
        debug_assert_eq!(op.format(), Format::Branch);
        Instruction {
            rs,
            rt,
            imm: offset as u16,
            ..Instruction::blank(op)
        }
    }

    pub fn jump(op: Op, target: u32) -> Instruction {
        debug_assert!(matches!(op.format(), Format::Jump | Format::Payload));
        Instruction {
            target: target & TARGET_MASK,
            ..Instruction::blank(op)
        }
    }

    pub fn chk(payload: u32) -> Instruction {
        Instruction::jump(Op::Chk, payload)
    }

    /// Sign- or zero-extended immediate per the operation.
    pub fn imm_value(&self) -> u32 {
        if self.op.signed_imm() {
            self.imm as i16 as i32 as u32
        } else {
            self.imm as u32
        }
    }

    pub fn branch_offset(&self) -> i32 {
        self.imm as i16 as i32
    }

    /// Static successor of a direct branch or jump at `pc`.
    pub fn direct_target(&self, pc: u32) -> Option<u32> {
        match self.op {
            Op::Beq | Op::Bne => Some(
                pc.wrapping_add(4)
                    .wrapping_add((self.branch_offset() << 2) as u32),
            ),
            Op::J | Op::Jal => Some((pc.wrapping_add(4) & 0xF000_0000) | (self.target << 2)),
            _ => None,
        }
    }

    /// Destination register written at retire, if any.
    pub fn dest(&self) -> Option<Reg> {
        let r = match self.op.format() {
            Format::RegRegReg | Format::Shift | Format::MoveFrom => self.rd,
            Format::RegRegImm | Format::RegImm => self.rt,
            Format::Memory if self.op == Op::Lw => self.rt,
            Format::Jump if self.op == Op::Jal => Reg::RA,
            _ => return None,
        };
        (r != Reg::ZERO).then_some(r)
    }

    /// Registers read by the instruction.
    pub fn sources(&self) -> Vec<Reg> {
        match self.op.format() {
            Format::RegRegReg | Format::RegPair | Format::Branch => vec![self.rs, self.rt],
            Format::Shift => vec![self.rt],
            Format::RegJump | Format::RegRegImm => vec![self.rs],
            Format::Memory if self.op == Op::Sw => vec![self.rs, self.rt],
            Format::Memory => vec![self.rs],
            _ => vec![],
        }
    }

    pub fn is_nop(&self) -> bool {
        *self == Instruction::nop()
    }
}

/// Packs an instruction into its 32-bit word.
pub fn encode(i: &Instruction) -> u32 {
    let op = i.op;
    let p = op.primary() << 26;
    match op.format() {
        Format::RegRegReg
        | Format::Shift
        | Format::RegJump
        | Format::RegPair
        | Format::MoveFrom
        | Format::Bare
            if p == 0 =>
        {
            (i.rs.bits() << 21)
                | (i.rt.bits() << 16)
                | (i.rd.bits() << 11)
                | ((i.shamt as u32 & 31) << 6)
                | op.funct()
        }
        Format::Bare => p,
        Format::Jump | Format::Payload => p | (i.target & TARGET_MASK),
        _ => p | (i.rs.bits() << 21) | (i.rt.bits() << 16) | i.imm as u32,
    }
}

/// Result of decoding an arbitrary word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoded {
    Valid(Instruction),
    Invalid(u32),
}

impl Decoded {
    pub fn valid(self) -> Option<Instruction> {
        match self {
            Decoded::Valid(i) => Some(i),
            Decoded::Invalid(_) => None,
        }
    }
}

/// Total decoder. Unknown opcodes, unknown function codes and non-zero
/// unused fields all yield [`Decoded::Invalid`].
pub fn decode(w: u32) -> Decoded {
    let primary = w >> 26;
    let rs = Reg(((w >> 21) & 31) as u8);
    let rt = Reg(((w >> 16) & 31) as u8);
    let rd = Reg(((w >> 11) & 31) as u8);
    let shamt = ((w >> 6) & 31) as u8;
    let imm = (w & 0xFFFF) as u16;
    let target = w & TARGET_MASK;

    let op = if primary == opcode::SPECIAL {
        Op::from_funct(w & 0x3F)
    } else {
        Op::from_primary(primary)
    };
    let Some(op) = op else {
        return Decoded::Invalid(w);
    };
    let i = match op.format() {
        Format::RegRegReg => Instruction::r3(op, rd, rs, rt),
        Format::Shift => Instruction::shift(op, rd, rt, shamt),
        Format::RegJump => Instruction::jr(rs),
        Format::RegPair => Instruction::mult(rs, rt),
        Format::MoveFrom => Instruction::move_from(op, rd),
        Format::Bare => Instruction::bare(op),
        Format::Jump | Format::Payload => Instruction::jump(op, target),
        Format::RegImm => Instruction::imm(op, rt, Reg::ZERO, imm),
        Format::RegRegImm | Format::Memory | Format::Branch => Instruction::imm(op, rt, rs, imm),
    };
    // Strictness: any bit the format ignores must be zero.
    if encode(&i) == w {
        Decoded::Valid(i)
    } else {
        Decoded::Invalid(w)
    }
}

impl fmt::Display for Instruction {
    /// Canonical assembly. Branch offsets print as signed word counts and
    /// jump targets as absolute byte addresses (relative to region 0).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_nop() {
            return f.write_str("nop");
        }
        let m = self.op.mnemonic();
        match self.op.format() {
            Format::RegRegReg => write!(f, "{m} {}, {}, {}", self.rd, self.rs, self.rt),
            Format::Shift => write!(f, "{m} {}, {}, {}", self.rd, self.rt, self.shamt),
            Format::RegJump => write!(f, "{m} {}", self.rs),
            Format::RegPair => write!(f, "{m} {}, {}", self.rs, self.rt),
            Format::MoveFrom => write!(f, "{m} {}", self.rd),
            Format::RegRegImm if self.op.signed_imm() => {
                write!(f, "{m} {}, {}, {}", self.rt, self.rs, self.imm as i16)
            }
            Format::RegRegImm => write!(f, "{m} {}, {}, {:#x}", self.rt, self.rs, self.imm),
            Format::RegImm => write!(f, "{m} {}, {:#x}", self.rt, self.imm),
            Format::Memory => write!(f, "{m} {}, {}({})", self.rt, self.imm as i16, self.rs),
            Format::Branch => write!(f, "{m} {}, {}, {}", self.rs, self.rt, self.imm as i16),
            Format::Jump => write!(f, "{m} {:#x}", self.target << 2),
            Format::Payload => write!(f, "{m} {:#x}", self.target),
            Format::Bare => f.write_str(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nop_is_all_zero() {
        assert_eq!(encode(&Instruction::nop()), 0);
        assert_eq!(decode(0), Decoded::Valid(Instruction::nop()));
        assert_eq!(Instruction::nop().op, Op::Sll);
    }

    #[test]
    fn field_packing() {
        let xor = Instruction::r3(Op::Xor, Reg::of(3), Reg::of(1), Reg::of(2));
        assert_eq!(encode(&xor), (1 << 21) | (2 << 16) | (3 << 11) | funct::XOR);
        assert_eq!(encode(&Instruction::jr(Reg::RA)), (31 << 21) | funct::JR);
        assert_eq!(encode(&Instruction::bare(Op::Halt)), opcode::HALT << 26);
        assert_eq!(encode(&Instruction::chk(0x123)), (opcode::CHK << 26) | 0x123);
    }

    #[test]
    fn every_primary_opcode_is_either_defined_or_invalid() {
        let mut defined = 0;
        for p in 0u32..64 {
            let w = p << 26;
            let primary_known = p == opcode::SPECIAL || Op::from_primary(p).is_some();
            match decode(w) {
                Decoded::Valid(i) => {
                    assert!(primary_known, "opcode {p:#x}");
                    assert_eq!(encode(&i), w);
                    defined += 1;
                }
                Decoded::Invalid(_) => assert!(!primary_known, "opcode {p:#x} rejected"),
            }
        }
        // SPECIAL with funct 0 is sll, plus 17 primary opcodes.
        assert_eq!(defined, 18);
    }

    #[test]
    fn strict_unused_fields() {
        assert_eq!(decode(0xFFFF_FFFF), Decoded::Invalid(0xFFFF_FFFF));
        // halt with a stray low bit
        assert!(decode((opcode::HALT << 26) | 1).valid().is_none());
        // add with non-zero shamt
        assert!(decode(funct::ADD | (1 << 6)).valid().is_none());
    }

    #[test]
    fn cfi_set() {
        let cfis: Vec<_> = Op::ALL.iter().filter(|o| o.is_cfi()).collect();
        assert_eq!(cfis.len(), 9);
        assert!(!Op::Chk.is_cfi());
    }

    fn arb_reg() -> impl Strategy<Value = Reg> {
        (0u8..32).prop_map(Reg::of)
    }

    pub(crate) fn arb_instruction() -> impl Strategy<Value = Instruction> {
        (
            proptest::sample::select(Op::ALL.to_vec()),
            arb_reg(),
            arb_reg(),
            arb_reg(),
            0u8..32,
            any::<u16>(),
            0u32..=TARGET_MASK,
        )
            .prop_map(|(op, rs, rt, rd, shamt, imm, target)| match op.format() {
                Format::RegRegReg => Instruction::r3(op, rd, rs, rt),
                Format::Shift => Instruction::shift(op, rd, rt, shamt),
                Format::RegJump => Instruction::jr(rs),
                Format::RegPair => Instruction::mult(rs, rt),
                Format::MoveFrom => Instruction::move_from(op, rd),
                Format::Bare => Instruction::bare(op),
                Format::Jump | Format::Payload => Instruction::jump(op, target),
                _ => Instruction::imm(op, rt, rs, imm),
            })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(i in arb_instruction()) {
            prop_assert_eq!(decode(encode(&i)), Decoded::Valid(i));
        }

        #[test]
        fn encode_fixes_valid_words(w in any::<u32>()) {
            if let Decoded::Valid(i) = decode(w) {
                prop_assert_eq!(encode(&i), w);
            }
        }
    }
}
