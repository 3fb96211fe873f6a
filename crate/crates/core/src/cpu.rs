//! One six-stage core.
//!
//! Timing is idealised: one fetch per cycle, an instruction fetched in cycle
//! `c` retires in cycle `c + 5`, no data hazards, branches predicted not taken
//! and resolved at retire. A retiring instruction whose successor is not the
//! next instruction in flight squashes everything younger; the target is
//! fetched in the following cycle. All architectural effects happen at
//! retire, while fetch reads instruction memory at fetch time, so a word
//! changed in memory after it was fetched still executes in its old form.

use std::collections::VecDeque;

use serde::Serialize;

use crate::checksum::{fold26, step as acc_step};
use crate::image::MemoryImage;
use crate::isa::{decode, Decoded, Instruction, Op, Reg};

pub const PIPELINE_DEPTH: u64 = 6;
pub const REG_HI: u8 = 32;
pub const REG_LO: u8 = 33;
/// r0..r31, PC, HI, LO, incHashedReg, hashedReg.
pub const CONTEXT_WORDS: usize = 37;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Fetch { pc: u32, word: u32 },
    Retire { pc: u32, word: u32 },
    /// `reg` 32 is HI, 33 is LO.
    RegWrite { reg: u8, value: u32 },
    MemRead { addr: u32, value: u32 },
    MemWrite { addr: u32, value: u32 },
    /// Accumulator before folding, at a CFI compare.
    CfiCheck { pc: u32, acc: u32, hashed: u32 },
    IntegrityException { pc: u32, expected: u32, got: u32 },
    IllegalInstruction { pc: u32, word: Option<u32> },
    MemoryFault { pc: u32, addr: u32 },
    StartBalRetired { pc: u32 },
    EndBalRetired { pc: u32 },
    NmiSent { pc: u32 },
    Halted { pc: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoreEvent {
    pub cycle: u64,
    pub core: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trap {
    Integrity,
    IllegalInstruction,
    MemoryFault,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    /// Stopped after `startBal`, `iret` or a victim's `endBal` until the
    /// controller writes the PC.
    Waiting,
    /// Not started yet; released by a PC write.
    Parked,
    Halted,
    Trapped(Trap),
}

/// Which memory pair the core is wired to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bank {
    Primary,
    Balance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Requester,
    Victim,
}

/// Per-cycle control input from the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    #[default]
    Run,
    /// No fetch; in-flight instructions keep retiring.
    Drain,
    /// Frozen: nothing fetches or retires.
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct InFlight {
    pc: u32,
    word: Option<u32>,
    retire_at: u64,
}

/// Checksum state that must survive an interrupt or a balancing preemption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub struct IntegrityState {
    pub hashed: u32,
    pub acc: u32,
    /// Words accumulated since the last chk or CFI.
    pub open: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoreStats {
    /// Retires from the primary bank.
    pub retired: u64,
    pub chk_retired: u64,
    /// Retires at addresses in `Core::watch`.
    pub watched_retired: u64,
    /// Retires while wired to the balance bank.
    pub balance_retired: u64,
    pub fetched: u64,
    pub held_cycles: u64,
    /// Cycle in which the core halted or trapped.
    pub stopped_at: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Core {
    pub id: usize,
    pub regs: [u32; 32],
    pub hi: u32,
    pub lo: u32,
    pub integrity: IntegrityState,
    pub fetch_pc: u32,
    pub status: Status,
    pub in_interrupt: bool,
    pub role: Option<Role>,
    pub bank: Bank,
    pub primary: MemoryImage,
    pub balance: Option<MemoryImage>,
    /// Integrity checking enabled.
    pub check: bool,
    /// startBal / endBal talk to the controller; otherwise they are no-ops.
    pub balancing: bool,
    pub stats: CoreStats,
    /// Addresses whose retires are counted in `stats.watched_retired`.
    pub watch: std::collections::BTreeSet<u32>,
    pipeline: VecDeque<InFlight>,
    shadow: Option<IntegrityState>,
    no_fetch_this_cycle: bool,
}

/// Effect of retiring one instruction.
enum Flow {
    Next(u32),
    Stop(Status),
}

impl Core {
    pub fn new(id: usize, image: MemoryImage) -> Core {
        let mut regs = [0; 32];
        regs[Reg::SP.index()] = image.stack_top().unwrap_or(0);
        Core {
            id,
            regs,
            hi: 0,
            lo: 0,
            integrity: IntegrityState::default(),
            fetch_pc: image.entry(),
            status: Status::Running,
            in_interrupt: false,
            role: None,
            bank: Bank::Primary,
            primary: image,
            balance: None,
            check: false,
            balancing: false,
            stats: CoreStats::default(),
            watch: Default::default(),
            pipeline: VecDeque::new(),
            shadow: None,
            no_fetch_this_cycle: false,
        }
    }

    pub fn memory(&self) -> &MemoryImage {
        match self.bank {
            Bank::Balance => self.balance.as_ref().unwrap_or(&self.primary),
            Bank::Primary => &self.primary,
        }
    }

    fn memory_mut(&mut self) -> &mut MemoryImage {
        match (self.bank, self.balance.as_mut()) {
            (Bank::Balance, Some(b)) => b,
            _ => &mut self.primary,
        }
    }

    pub fn is_stopped(&self) -> bool {
        matches!(self.status, Status::Halted | Status::Trapped(_))
    }

    pub fn pipeline_empty(&self) -> bool {
        self.pipeline.is_empty()
    }

    /// Address of the next instruction that would retire.
    pub fn resume_pc(&self) -> u32 {
        self.pipeline.front().map_or(self.fetch_pc, |f| f.pc)
    }

    /// Discards in-flight work and restarts fetch at `pc` from the next cycle.
    pub fn write_pc(&mut self, pc: u32) {
        self.pipeline.clear();
        self.fetch_pc = pc;
        self.status = Status::Running;
        self.no_fetch_this_cycle = true;
    }

    /// Interrupt entry after the pipeline has drained.
    pub fn enter_interrupt(&mut self, vector: u32) {
        self.shadow = Some(self.integrity);
        self.integrity.acc = 0;
        self.integrity.open = 0;
        self.in_interrupt = true;
        self.write_pc(vector);
    }

    /// Resume after `iret`: restores the checksum state saved at entry.
    pub fn leave_interrupt(&mut self, pc: u32) {
        if let Some(s) = self.shadow.take() {
            self.integrity = s;
        }
        self.in_interrupt = false;
        self.write_pc(pc);
    }

    /// Context word `i` in save order.
    pub fn context_word(&self, i: usize) -> u32 {
        match i {
            0..=31 => self.regs[i],
            32 => self.resume_pc(),
            33 => self.hi,
            34 => self.lo,
            35 => self.integrity.acc,
            36 => self.integrity.hashed,
            _ => panic!("context index {i}"),
        }
    }

    pub fn set_context_word(&mut self, i: usize, v: u32) {
        match i {
            0 => {}
            1..=31 => self.regs[i] = v,
            32 => self.fetch_pc = v,
            33 => self.hi = v,
            34 => self.lo = v,
            35 => self.integrity.acc = v,
            36 => self.integrity.hashed = v,
            _ => panic!("context index {i}"),
        }
    }

    /// Flips or replaces a word of instruction memory in the active bank.
    pub fn poke_code(&mut self, addr: u32, word: u32) -> bool {
        let m = self.memory_mut();
        m.is_code(addr) && m.set_word(addr, word).is_ok()
    }

    fn fetch_word(&self, pc: u32) -> Option<u32> {
        let m = self.memory();
        if pc % 4 != 0 || !m.is_code(pc) {
            return None;
        }
        m.word(pc)
    }

    /// Advances one clock.
    pub fn step(&mut self, cycle: u64, gate: Gate, out: &mut Vec<CoreEvent>) {
        let no_fetch = std::mem::take(&mut self.no_fetch_this_cycle);
        if self.is_stopped() {
            return;
        }
        if gate == Gate::Hold {
            self.stats.held_cycles += 1;
            for f in &mut self.pipeline {
                f.retire_at += 1;
            }
            return;
        }
        let mut redirected = false;
        if self.pipeline.front().is_some_and(|f| f.retire_at <= cycle) {
            let f = self.pipeline.pop_front().expect("front");
            match self.retire(cycle, f, out) {
                Flow::Stop(s) => {
                    self.status = s;
                    self.pipeline.clear();
                    if self.is_stopped() {
                        self.stats.stopped_at = Some(cycle);
                    }
                    return;
                }
                Flow::Next(next) => {
                    if next != self.resume_pc() {
                        self.pipeline.clear();
                        self.fetch_pc = next;
                        redirected = true;
                    }
                }
            }
        }
        if gate == Gate::Run && self.status == Status::Running && !redirected && !no_fetch {
            let pc = self.fetch_pc;
            let word = self.fetch_word(pc);
            if let Some(w) = word {
                out.push(self.ev(cycle, EventKind::Fetch { pc, word: w }));
            }
            self.stats.fetched += 1;
            self.pipeline.push_back(InFlight {
                pc,
                word,
                retire_at: cycle + PIPELINE_DEPTH - 1,
            });
            self.fetch_pc = pc.wrapping_add(4);
        }
    }

    fn ev(&self, cycle: u64, kind: EventKind) -> CoreEvent {
        CoreEvent {
            cycle,
            core: self.id,
            kind,
        }
    }

    fn trap(&self, cycle: u64, kind: EventKind, out: &mut Vec<CoreEvent>) -> Flow {
        out.push(self.ev(cycle, kind));
        Flow::Stop(Status::Trapped(match kind {
            EventKind::IntegrityException { .. } => Trap::Integrity,
            EventKind::MemoryFault { .. } => Trap::MemoryFault,
            _ => Trap::IllegalInstruction,
        }))
    }

    fn write_reg(&mut self, cycle: u64, r: Reg, v: u32, out: &mut Vec<CoreEvent>) {
        if r != Reg::ZERO {
            self.regs[r.index()] = v;
            out.push(self.ev(
                cycle,
                EventKind::RegWrite {
                    reg: r.index() as u8,
                    value: v,
                },
            ));
        }
    }

    fn retire(&mut self, cycle: u64, f: InFlight, out: &mut Vec<CoreEvent>) -> Flow {
        let pc = f.pc;
        let Some(word) = f.word else {
            return self.trap(cycle, EventKind::IllegalInstruction { pc, word: None }, out);
        };
        let ins = match decode(word) {
            Decoded::Valid(i) => i,
            Decoded::Invalid(w) => {
                return self.trap(cycle, EventKind::IllegalInstruction { pc, word: Some(w) }, out)
            }
        };
        let own = self.bank == Bank::Primary;
        if own {
            self.stats.retired += 1;
            if self.watch.contains(&pc) {
                self.stats.watched_retired += 1;
            }
        } else {
            self.stats.balance_retired += 1;
        }
        out.push(self.ev(cycle, EventKind::Retire { pc, word }));

        if ins.op == Op::Chk {
            if own {
                self.stats.chk_retired += 1;
            }
            if self.check {
                let s = &mut self.integrity;
                if s.open > 0 {
                    let (expected, got) = (s.hashed, fold26(s.acc).value());
                    return self.trap(cycle, EventKind::IntegrityException { pc, expected, got }, out);
                }
                s.hashed = ins.target;
                s.acc = 0;
            }
            return Flow::Next(pc.wrapping_add(4));
        }
        if self.check {
            let s = &mut self.integrity;
            s.acc = acc_step(s.acc, word);
            s.open += 1;
            if ins.op.is_cfi() {
                let (acc, hashed) = (s.acc, s.hashed);
                out.push(self.ev(cycle, EventKind::CfiCheck { pc, acc, hashed }));
                let s = &mut self.integrity;
                let got = fold26(s.acc).value();
                if got != s.hashed {
                    let expected = s.hashed;
                    return self.trap(cycle, EventKind::IntegrityException { pc, expected, got }, out);
                }
                s.acc = 0;
                s.open = 0;
            }
        }
        self.execute(cycle, pc, &ins, out)
    }

    fn load(&mut self, cycle: u64, pc: u32, addr: u32, out: &mut Vec<CoreEvent>) -> Result<u32, Flow> {
        let m = self.memory();
        let v = (addr % 4 == 0 && !m.is_code(addr))
            .then(|| m.word(addr))
            .flatten();
        match v {
            Some(v) => {
                out.push(self.ev(cycle, EventKind::MemRead { addr, value: v }));
                Ok(v)
            }
            None => Err(self.trap(cycle, EventKind::MemoryFault { pc, addr }, out)),
        }
    }

    fn store(&mut self, cycle: u64, pc: u32, addr: u32, v: u32, out: &mut Vec<CoreEvent>) -> Result<(), Flow> {
        let ok = addr % 4 == 0 && {
            let m = self.memory_mut();
            !m.is_code(addr) && m.set_word(addr, v).is_ok()
        };
        if ok {
            out.push(self.ev(cycle, EventKind::MemWrite { addr, value: v }));
            Ok(())
        } else {
            Err(self.trap(cycle, EventKind::MemoryFault { pc, addr }, out))
        }
    }

    fn execute(&mut self, cycle: u64, pc: u32, i: &Instruction, out: &mut Vec<CoreEvent>) -> Flow {
        let next = pc.wrapping_add(4);
        let rs = self.regs[i.rs.index()];
        let rt = self.regs[i.rt.index()];
        let imm = i.imm_value();
        let alu = |v: u32| Some(v);
        let result: Option<u32> = match i.op {
            Op::Add => alu(rs.wrapping_add(rt)),
            Op::Sub => alu(rs.wrapping_sub(rt)),
            Op::And => alu(rs & rt),
            Op::Or => alu(rs | rt),
            Op::Xor => alu(rs ^ rt),
            Op::Nor => alu(!(rs | rt)),
            Op::Slt => alu(((rs as i32) < (rt as i32)) as u32),
            Op::Sll => alu(rt << i.shamt),
            Op::Srl => alu(rt >> i.shamt),
            Op::Addi => alu(rs.wrapping_add(imm)),
            Op::Slti => alu(((rs as i32) < (imm as i32)) as u32),
            Op::Andi => alu(rs & imm),
            Op::Ori => alu(rs | imm),
            Op::Xori => alu(rs ^ imm),
            Op::Lui => alu(imm << 16),
            Op::Mfhi => alu(self.hi),
            Op::Mflo => alu(self.lo),
            Op::Lw => match self.load(cycle, pc, rs.wrapping_add(imm), out) {
                Ok(v) => Some(v),
                Err(f) => return f,
            },
            Op::Sw => {
                if let Err(f) = self.store(cycle, pc, rs.wrapping_add(imm), rt, out) {
                    return f;
                }
                None
            }
            Op::Mult => {
                let p = (rs as i32 as i64).wrapping_mul(rt as i32 as i64) as u64;
                self.hi = (p >> 32) as u32;
                self.lo = p as u32;
                out.push(self.ev(cycle, EventKind::RegWrite { reg: REG_HI, value: self.hi }));
                out.push(self.ev(cycle, EventKind::RegWrite { reg: REG_LO, value: self.lo }));
                None
            }
            Op::Beq | Op::Bne => {
                let taken = (rs == rt) == (i.op == Op::Beq);
                let t = i.direct_target(pc).expect("branch");
                return Flow::Next(if taken { t } else { next });
            }
            Op::J => return Flow::Next(i.direct_target(pc).expect("jump")),
            Op::Jal => {
                self.write_reg(cycle, Reg::RA, next, out);
                return Flow::Next(i.direct_target(pc).expect("jump"));
            }
            Op::Jr => return Flow::Next(rs),
            Op::Syscall | Op::Chk => None,
            Op::Halt => {
                out.push(self.ev(cycle, EventKind::Halted { pc }));
                return Flow::Stop(Status::Halted);
            }
            Op::StartBal => {
                if self.balancing {
                    out.push(self.ev(cycle, EventKind::StartBalRetired { pc }));
                    return Flow::Stop(Status::Waiting);
                }
                None
            }
            Op::EndBal => {
                if self.balancing {
                    out.push(self.ev(cycle, EventKind::EndBalRetired { pc }));
                    if self.role.take() == Some(Role::Victim) {
                        return Flow::Stop(Status::Waiting);
                    }
                }
                None
            }
            Op::Iret => {
                if !self.in_interrupt {
                    return self.trap(cycle, EventKind::IllegalInstruction { pc, word: Some(crate::isa::encode(i)) }, out);
                }
                out.push(self.ev(cycle, EventKind::NmiSent { pc }));
                return Flow::Stop(Status::Waiting);
            }
        };
        if let (Some(v), Some(d)) = (result, i.dest()) {
            self.write_reg(cycle, d, v, out);
        }
        Flow::Next(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn run(core: &mut Core, max: u64) -> Vec<CoreEvent> {
        let mut ev = Vec::new();
        for c in 0..max {
            core.step(c, Gate::Run, &mut ev);
            if core.is_stopped() {
                break;
            }
        }
        ev
    }

    #[test]
    fn one_instruction_retires_in_sixth_cycle() {
        let mut c = Core::new(0, assemble("halt\n").unwrap());
        run(&mut c, 20);
        assert_eq!(c.stats.stopped_at, Some(5));
    }

    #[test]
    fn straight_line_takes_n_plus_5() {
        for n in 1..=50u64 {
            let f = crate::fixtures::straight_line(n as usize);
            let mut c = Core::new(0, assemble(&f.source).unwrap());
            run(&mut c, 200);
            assert_eq!(c.stats.stopped_at.unwrap() + 1, n + 5, "n={n}");
        }
    }

    #[test]
    fn taken_branch_costs_five_bubbles() {
        // beq taken skips one instruction
        let img = assemble("beq r0, r0, t\naddi r1, r0, 1\nt: halt\n").unwrap();
        let mut c = Core::new(0, img);
        run(&mut c, 50);
        assert_eq!(c.regs[1], 0);
        // beq retires at 5, target fetched at 6, retires at 11
        assert_eq!(c.stats.stopped_at, Some(11));
    }

    #[test]
    fn jump_to_next_is_free() {
        let img = assemble("j n\nn: halt\n").unwrap();
        let mut c = Core::new(0, img);
        run(&mut c, 50);
        assert_eq!(c.stats.stopped_at, Some(6));
    }

    #[test]
    fn r0_stays_zero() {
        let img = assemble("addi r0, r0, 5\nlui r0, 0xffff\nnor r0, r0, r0\nadd r1, r0, r0\nhalt\n").unwrap();
        let mut c = Core::new(0, img);
        let ev = run(&mut c, 50);
        assert_eq!(c.regs[0], 0);
        assert_eq!(c.regs[1], 0);
        assert!(!ev.iter().any(|e| matches!(e.kind, EventKind::RegWrite { reg: 0, .. })));
    }

    #[test]
    fn alu_semantics() {
        let img = assemble(
            "addi r1, r0, -3\nslti r2, r1, 0\nsrl r3, r1, 28\nsll r4, r1, 4\nlui r5, 0x8000\nmult r1, r1\nmflo r6\nmfhi r7\nandi r8, r1, 0xff\nori r9, r0, 0xffff\nxori r10, r9, 0xf\nslt r11, r0, r1\nhalt\n",
        )
        .unwrap();
        let mut c = Core::new(0, img);
        run(&mut c, 100);
        let r = c.regs;
        assert_eq!(r[1], (-3i32) as u32);
        assert_eq!(r[2], 1);
        assert_eq!(r[3], 0xF);
        assert_eq!(r[4], (-48i32) as u32);
        assert_eq!(r[5], 0x8000_0000);
        assert_eq!((r[6], r[7]), (9, 0));
        assert_eq!(r[8], 0xFD);
        assert_eq!(r[9], 0xFFFF);
        assert_eq!(r[10], 0xFFF0);
        assert_eq!(r[11], 0);
    }

    #[test]
    fn memory_and_calls() {
        let img = assemble(
            "main: lw r1, x(r0)\njal f\nback: sw r2, y(r0)\nhalt\nf: add r2, r1, r1\nret: jr r31\n.jtargets ret: back\n.data\nx: .word 21\ny: .word 0\n",
        )
        .unwrap();
        let mut c = Core::new(0, img);
        run(&mut c, 100);
        assert_eq!(c.memory().word(c.memory().symbols.get("y").unwrap()), Some(42));
    }

    #[test]
    fn faults() {
        for (src, want) in [
            ("lw r1, 2(r0)\nhalt\n.data\n.word 0\n", Trap::MemoryFault),
            ("sw r1, 0(r0)\nhalt\n", Trap::MemoryFault),
            (".word 0xffffffff\n", Trap::IllegalInstruction),
            ("iret\n", Trap::IllegalInstruction),
            ("addi r1, r0, 1\n", Trap::IllegalInstruction),
        ] {
            let mut c = Core::new(0, assemble(src).unwrap());
            run(&mut c, 100);
            assert_eq!(c.status, Status::Trapped(want), "{src}");
        }
    }

    #[test]
    fn hold_freezes_state() {
        let f = crate::fixtures::straight_line(20);
        let mut a = Core::new(0, assemble(&f.source).unwrap());
        let mut ev = Vec::new();
        for c in 0..8 {
            a.step(c, Gate::Run, &mut ev);
        }
        let regs = a.regs;
        let before = a.stats.retired;
        for c in 8..18 {
            a.step(c, Gate::Hold, &mut ev);
        }
        assert_eq!(a.regs, regs);
        assert_eq!(a.stats.retired, before);
        for c in 18..100 {
            a.step(c, Gate::Run, &mut ev);
        }
        // 20 instructions + 5 fill + 10 held cycles
        assert_eq!(a.stats.stopped_at.unwrap() + 1, 25 + 10);
    }

    #[test]
    fn chk_and_compare() {
        let good = crate::instrument::insert_chk(
            &crate::asm::parse("main: addi r1, r0, 1\nbeq r1, r0, main\nhalt\n").unwrap(),
        )
        .unwrap();
        let mut c = Core::new(0, good.image.clone());
        c.check = true;
        run(&mut c, 100);
        assert_eq!(c.status, Status::Halted);

        // Flip one bit of the addi: the beq compare fails.
        let mut img = good.image.clone();
        let w = img.word(4).unwrap();
        img.set_word(4, w ^ 1).unwrap();
        let mut c = Core::new(0, img);
        c.check = true;
        let ev = run(&mut c, 100);
        assert_eq!(c.status, Status::Trapped(Trap::Integrity));
        assert!(matches!(ev.last().unwrap().kind, EventKind::IntegrityException { pc: 8, .. }));
    }

    #[test]
    fn two_consecutive_chk_use_the_second() {
        // second chk carries the right value for [halt]
        let halt = crate::isa::encode(&Instruction::bare(Op::Halt));
        let sum = crate::checksum::compute_checksum(&[halt]).value();
        let img = assemble(&format!("chk 0x123\nchk {sum:#x}\nhalt\n")).unwrap();
        let mut c = Core::new(0, img);
        c.check = true;
        run(&mut c, 50);
        assert_eq!(c.status, Status::Halted);
        assert_eq!(c.integrity.hashed, sum);
    }

    #[test]
    fn chk_only_sets_registers() {
        let mut c = Core::new(0, assemble("chk 0x123\n").unwrap());
        c.check = true;
        let mut ev = vec![];
        for cy in 0..6 {
            c.step(cy, Gate::Run, &mut ev);
        }
        assert_eq!(c.integrity.hashed, 0x123);
        assert_eq!(c.integrity.acc, 0);
    }

    #[test]
    fn wrong_path_does_not_accumulate() {
        // The not-taken path is fetched and squashed; checks still pass.
        let ins = crate::instrument::insert_chk(
            &crate::asm::parse("main: beq r0, r0, t\naddi r1, r0, 1\naddi r2, r0, 2\nt: halt\n").unwrap(),
        )
        .unwrap();
        let mut c = Core::new(0, ins.image);
        c.check = true;
        let ev = run(&mut c, 100);
        assert_eq!(c.status, Status::Halted);
        assert!(ev.iter().any(|e| matches!(e.kind, EventKind::Fetch { pc: 8, .. })));
        assert!(!ev.iter().any(|e| matches!(e.kind, EventKind::Retire { pc: 8, .. })));
    }

    #[test]
    fn chk_is_a_nop_when_checking_is_off() {
        let mut c = Core::new(0, assemble("chk 0x5\naddi r1, r0, 1\nhalt\n").unwrap());
        run(&mut c, 50);
        assert_eq!(c.status, Status::Halted);
        assert_eq!(c.integrity.hashed, 0);
        assert_eq!(c.stats.chk_retired, 1);
    }
}
