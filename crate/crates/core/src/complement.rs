//! Complement closure check and the complementary image.
//!
//! Inside a balanced region one core runs program A and the other runs Ā: the same
//! code over complemented data. For the two cores to stay in step and their
//! data values to cancel, every value the region computes must be either the
//! same in both programs (`Plain`) or differ by a fixed, statically known mask
//! (`Comp(m)`: Ā's value is A's value XOR `m`). The analysis below tracks that
//! tag for every register, HI/LO and statically addressed memory word.
//!
//! Bits outside a value's mask never depend on balanced data, so a
//! `Comp(m)` write leaks the constant `HW(m)` plus a public term in the summed
//! power of both cores.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::cfg::build_cfg;
use crate::error::InstrumentError;
use crate::image::{MemoryImage, SectionKind};
use crate::instrument::{find_regions, BalancedRegion, RegionSpan};
use crate::isa::{Instruction, Op, Reg};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Plain,
    /// Ā's value is A's value XOR the mask.
    Comp(u32),
    Unknown,
}

impl Tag {
    pub const FULL: Tag = Tag::Comp(u32::MAX);

    fn masked(m: u32) -> Tag {
        if m == 0 {
            Tag::Plain
        } else {
            Tag::Comp(m)
        }
    }

    fn join(self, o: Tag) -> Tag {
        if self == o {
            self
        } else {
            Tag::Unknown
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Plain => f.write_str("plain"),
            Tag::Comp(m) => write!(f, "comp({m:#x})"),
            Tag::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Offender {
    pub addr: u32,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClosureReport {
    pub startbal: u32,
    pub blocks: usize,
    pub offenders: Vec<Offender>,
}

impl ClosureReport {
    pub fn passed(&self) -> bool {
        self.offenders.is_empty()
    }

    pub fn addresses(&self) -> Vec<u32> {
        self.offenders.iter().map(|o| o.addr).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct State {
    regs: [Tag; 32],
    hi: Tag,
    lo: Tag,
    /// Statically addressed words whose tag differs from their section's
    /// default.
    mem: BTreeMap<u32, Tag>,
}

fn default_tag(img: &MemoryImage, addr: u32) -> Option<Tag> {
    Some(match img.section_at(addr)?.kind {
        SectionKind::Baldata => Tag::FULL,
        SectionKind::Baltable => Tag::Unknown,
        _ => Tag::Plain,
    })
}

impl State {
    fn join(&self, o: &State, img: &MemoryImage) -> State {
        let mut regs = self.regs;
        for (r, t) in regs.iter_mut().zip(o.regs) {
            *r = r.join(t);
        }
        let keys: BTreeSet<u32> = self.mem.keys().chain(o.mem.keys()).copied().collect();
        let mem = keys
            .into_iter()
            .map(|a| {
                let d = default_tag(img, a).unwrap_or(Tag::Unknown);
                let x = self.mem.get(&a).copied().unwrap_or(d);
                let y = o.mem.get(&a).copied().unwrap_or(d);
                (a, x.join(y))
            })
            .collect();
        State {
            regs,
            hi: self.hi.join(o.hi),
            lo: self.lo.join(o.lo),
            mem,
        }
    }

    fn get(&self, r: Reg) -> Tag {
        if r == Reg::ZERO {
            Tag::Plain
        } else {
            self.regs[r.index()]
        }
    }

    fn set(&mut self, r: Reg, t: Tag) {
        if r != Reg::ZERO {
            self.regs[r.index()] = t;
        }
    }
}

struct Walker<'a> {
    img: &'a MemoryImage,
    flags: BTreeMap<u32, String>,
}

impl Walker<'_> {
    fn flag(&mut self, pc: u32, why: impl Into<String>) -> Tag {
        self.flags.entry(pc).or_insert_with(|| why.into());
        Tag::Unknown
    }

    /// Section targeted by a base+offset access whose base is plain.
    fn section_of(&self, ins: &Instruction) -> Option<(SectionKind, u32, u32)> {
        let off = ins.imm_value();
        let s = self
            .img
            .section_at(off)
            .filter(|s| ins.rs == Reg::ZERO || !s.kind.is_code())
            .or_else(|| {
                (ins.rs == Reg::SP)
                    .then(|| self.img.sections_of(SectionKind::Stack).next())
                    .flatten()
            })?;
        Some((s.kind, s.start, s.end()))
    }

    /// Tag of a word read through a dynamic (plain, non-zero) base.
    fn dynamic_tag(&self, st: &State, kind: SectionKind, start: u32, end: u32) -> Tag {
        let d = default_tag(self.img, start).unwrap_or(Tag::Unknown);
        st.mem
            .range(start..end)
            .fold(d, |acc, (_, &t)| acc.join(t))
            .join(if kind == SectionKind::Baltable { Tag::Unknown } else { d })
    }

    fn step(&mut self, st: &mut State, pc: u32, ins: &Instruction) {
        use Tag::*;
        let rs = st.get(ins.rs);
        let rt = st.get(ins.rt);
        let unknown_in = ins.sources().iter().any(|&r| st.get(r) == Unknown);
        if unknown_in {
            let t = self.flag(pc, "reads an indeterminate value");
            if let Some(d) = ins.dest() {
                st.set(d, t);
            }
            if ins.op == Op::Mult {
                st.hi = Unknown;
                st.lo = Unknown;
            }
            return;
        }
        let imm = ins.imm_value();
        let out = match ins.op {
            Op::Add | Op::Or if ins.rt == Reg::ZERO => rs,
            Op::Add | Op::Or if ins.rs == Reg::ZERO => rt,
            Op::Sub if ins.rt == Reg::ZERO => rs,
            Op::Add | Op::Sub | Op::And | Op::Or | Op::Slt => match (rs, rt) {
                (Plain, Plain) => Plain,
                _ => self.flag(pc, format!("{} is not complement-closed", ins.op)),
            },
            Op::Nor => match (rs, rt) {
                (t, Plain) if ins.rt == Reg::ZERO => t,
                (Plain, t) if ins.rs == Reg::ZERO => t,
                (Plain, Plain) => Plain,
                _ => self.flag(pc, "nor is not complement-closed"),
            },
            Op::Xor => match (rs, rt) {
                (Plain, t) | (t, Plain) => t,
                (Comp(a), Comp(b)) if a & b == 0 => Comp(a | b),
                _ => self.flag(pc, "xor of overlapping complemented values exposes their relation"),
            },
            Op::Addi if imm == 0 => rs,
            Op::Addi | Op::Slti => match rs {
                Plain => Plain,
                _ => self.flag(pc, format!("{} is not complement-closed", ins.op)),
            },
            Op::Xori => rs,
            Op::Andi => match rs {
                Comp(m) => Tag::masked(m & imm),
                t => t,
            },
            Op::Ori => match rs {
                Comp(m) => Tag::masked(m & !imm),
                t => t,
            },
            Op::Lui => Plain,
            Op::Sll => match rt {
                Comp(m) => Tag::masked(m << ins.shamt),
                t => t,
            },
            Op::Srl => match rt {
                Comp(m) => Tag::masked(m >> ins.shamt),
                t => t,
            },
            Op::Mult => {
                let t = match (rs, rt) {
                    (Plain, Plain) => Plain,
                    _ => self.flag(pc, "mult is not complement-closed"),
                };
                st.hi = t;
                st.lo = t;
                return;
            }
            Op::Mfhi => st.hi,
            Op::Mflo => st.lo,
            Op::Jal => Plain,
            Op::Lw => self.load(st, pc, ins, rs),
            Op::Sw => {
                self.store(st, pc, ins, rs, rt);
                return;
            }
            Op::Beq | Op::Bne => {
                if rs != rt {
                    self.flag(pc, format!("branch compares {rs} with {rt}"));
                }
                return;
            }
            Op::Jr => {
                if rs != Plain {
                    self.flag(pc, "indirect jump through a complemented value");
                }
                return;
            }
            Op::Halt | Op::Iret | Op::StartBal => {
                self.flag(pc, format!("{} inside a balanced region", ins.op));
                return;
            }
            Op::J | Op::Chk | Op::EndBal | Op::Syscall => return,
        };
        if let Some(d) = ins.dest() {
            st.set(d, out);
        }
    }

    fn load(&mut self, st: &State, pc: u32, ins: &Instruction, base: Tag) -> Tag {
        match base {
            Tag::Plain if ins.rs == Reg::ZERO => {
                let a = ins.imm_value();
                match self.img.section_at(a).map(|s| s.kind) {
                    None => self.flag(pc, format!("load from unmapped {a:#x}")),
                    Some(SectionKind::Baltable) => self.flag(pc, "table read with a plain index"),
                    Some(_) => st
                        .mem
                        .get(&a)
                        .copied()
                        .or_else(|| default_tag(self.img, a))
                        .unwrap_or(Tag::Unknown),
                }
            }
            Tag::Plain => match self.section_of(ins) {
                Some((SectionKind::Baltable, ..)) => self.flag(pc, "table read with a plain index"),
                Some((kind, start, end)) => match self.dynamic_tag(st, kind, start, end) {
                    Tag::Unknown => self.flag(pc, "load from words with mixed tags"),
                    t => t,
                },
                None => self.flag(pc, "load target section unknown"),
            },
            Tag::Comp(m) => {
                let off = ins.imm_value();
                let Some(s) = self.img.section_at(off) else {
                    return self.flag(pc, "complemented index into unmapped memory");
                };
                let len = s.words.len() as u32;
                if s.kind != SectionKind::Baltable || s.start != off {
                    return self.flag(pc, "complemented index outside a table");
                }
                if !len.is_power_of_two() || m != (len - 1) << 2 {
                    return self.flag(
                        pc,
                        format!("index mask {m:#x} does not span the {len}-entry table"),
                    );
                }
                if s.words.iter().any(|&w| w > 0xFF) {
                    return self.flag(pc, "table entries exceed one byte");
                }
                Tag::Comp(0xFF)
            }
            Tag::Unknown => unreachable!("handled by caller"),
        }
    }

    fn store(&mut self, st: &mut State, pc: u32, ins: &Instruction, base: Tag, value: Tag) {
        if base != Tag::Plain {
            self.flag(pc, "store address depends on complemented data");
            return;
        }
        if ins.rs == Reg::ZERO {
            let a = ins.imm_value();
            match self.img.section_at(a).map(|s| s.kind) {
                None => {
                    self.flag(pc, format!("store to unmapped {a:#x}"));
                }
                Some(SectionKind::Text | SectionKind::Baltable) => {
                    self.flag(pc, "store into read-only section");
                }
                Some(_) => {
                    if Some(value) == default_tag(self.img, a) {
                        st.mem.remove(&a);
                    } else {
                        st.mem.insert(a, value);
                    }
                }
            }
            return;
        }
        match self.section_of(ins) {
            Some((SectionKind::Text | SectionKind::Baltable, ..)) => {
                self.flag(pc, "store into read-only section");
            }
            Some((_, start, _)) => {
                if Some(value) != default_tag(self.img, start) {
                    self.flag(pc, format!("{value} value stored through a dynamic address"));
                }
            }
            None => {
                self.flag(pc, "store target section unknown");
            }
        }
    }
}

fn analyse(img: &MemoryImage, span: &RegionSpan, complement: &[Reg]) -> Result<ClosureReport, InstrumentError> {
    let cfg = build_cfg(img)?;
    let mut regs = [Tag::Unknown; 32];
    regs[0] = Tag::Plain;
    for r in complement {
        regs[r.index()] = Tag::FULL;
    }
    let init = State {
        regs,
        hi: Tag::Unknown,
        lo: Tag::Unknown,
        mem: BTreeMap::new(),
    };
    let mut w = Walker {
        img,
        flags: BTreeMap::new(),
    };
    let mut entry_state: BTreeMap<usize, State> = BTreeMap::from([(span.entry, init)]);
    let mut work: VecDeque<usize> = VecDeque::from([span.entry]);
    let run = |w: &mut Walker, b: usize, st: &mut State| {
        let blk = &cfg.blocks[b];
        for (k, ins) in blk.instrs.iter().enumerate() {
            w.step(st, blk.start + 4 * k as u32, ins);
        }
    };
    while let Some(b) = work.pop_front() {
        let mut st = entry_state[&b].clone();
        let mut scratch = Walker {
            img,
            flags: BTreeMap::new(),
        };
        run(&mut scratch, b, &mut st);
        if cfg.blocks[b].cfi() == Some(Op::EndBal) {
            continue;
        }
        for s in cfg.successors(b).filter(|s| span.blocks.contains(s)) {
            let merged = match entry_state.get(&s) {
                Some(old) => old.join(&st, img),
                None => st.clone(),
            };
            if entry_state.get(&s) != Some(&merged) {
                entry_state.insert(s, merged);
                work.push_back(s);
            }
        }
    }
    // Flags come from the fixpoint states only.
    for (&b, st) in &entry_state {
        let mut st = st.clone();
        run(&mut w, b, &mut st);
    }
    Ok(ClosureReport {
        startbal: span.startbal,
        blocks: span.blocks.len(),
        offenders: w
            .flags
            .into_iter()
            .map(|(addr, reason)| Offender { addr, reason })
            .collect(),
    })
}

fn span_for(img: &MemoryImage, region: &BalancedRegion) -> Result<RegionSpan, InstrumentError> {
    let cfg = build_cfg(img)?;
    let start = img
        .symbols
        .get(&region.start)
        .ok_or_else(|| InstrumentError::MissingLabel(region.start.clone()))?;
    find_regions(&cfg)?
        .into_iter()
        .find(|r| cfg.blocks[r.entry].start == start)
        .ok_or_else(|| {
            InstrumentError::Region(format!("no startBal precedes `{}`", region.start))
        })
}

/// Tag dataflow over the region that starts at `region.start`.
pub fn verify_complement_closure(
    img: &MemoryImage,
    region: &BalancedRegion,
) -> Result<ClosureReport, InstrumentError> {
    analyse(img, &span_for(img, region)?, &region.complement)
}

/// Builds Ā: code unchanged, `.baldata` words complemented, each
/// `.baltable` of 2^k byte entries rewritten as `T'[j] = !T[j ^ (2^k - 1)] & 0xff`.
/// Refuses to run when the region fails the closure check.
pub fn generate_complement_image(
    img: &MemoryImage,
    region: &BalancedRegion,
) -> Result<MemoryImage, InstrumentError> {
    let report = verify_complement_closure(img, region)?;
    if !report.passed() {
        return Err(InstrumentError::ClosureFailed(report.addresses()));
    }
    complement_data(img)
}

/// The data transform alone, without the closure check.
pub fn complement_data(img: &MemoryImage) -> Result<MemoryImage, InstrumentError> {
    let mut out = img.clone();
    for s in &mut out.sections {
        match s.kind {
            SectionKind::Baldata => s.words.iter_mut().for_each(|w| *w = !*w),
            SectionKind::Baltable => {
                let n = s.words.len();
                if !n.is_power_of_two() {
                    return Err(InstrumentError::TableNotPowerOfTwo { start: s.start, len: n });
                }
                let t = s.words.clone();
                for (j, w) in s.words.iter_mut().enumerate() {
                    *w = !t[j ^ (n - 1)] & 0xFF;
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use proptest::prelude::*;

    fn report(text: &str) -> ClosureReport {
        let img = assemble(text).unwrap();
        verify_complement_closure(&img, &BalancedRegion::new("enc", "done")).unwrap()
    }

    #[test]
    fn load_xori_store_passes() {
        let r = report(
            "main: startBal\nenc: lw r1, x(r0)\nxori r1, r1, 0x55\nsw r1, x(r0)\nendBal\ndone: halt\n.baldata\nx: .word 7\n",
        );
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn add_on_complemented_flagged() {
        let r = report(
            "main: startBal\nenc: lw r1, x(r0)\nadd r2, r1, r1\nendBal\ndone: halt\n.baldata\nx: .word 7\n",
        );
        assert_eq!(r.addresses(), vec![8]);
    }

    #[test]
    fn cancelling_xor_flagged() {
        let r = report(
            "main: startBal\nenc: lw r1, x(r0)\nlw r2, y(r0)\nxor r3, r1, r2\nendBal\ndone: halt\n.baldata\nx: .word 7\ny: .word 9\n",
        );
        assert_eq!(r.addresses(), vec![12]);
    }

    #[test]
    fn uninitialised_register_flagged() {
        let r = report("main: startBal\nenc: sw r5, x(r0)\nendBal\ndone: halt\n.baldata\nx: .word 7\n");
        assert_eq!(r.addresses(), vec![4]);
    }

    fn table_src(index_mask_ok: bool) -> String {
        let shift = if index_mask_ok { 2 } else { 3 };
        let mut s = format!(
            "main: startBal\nenc: lw r1, p(r0)\nandi r1, r1, 3\nsll r1, r1, {shift}\nlw r2, t(r1)\nsw r2, p(r0)\nendBal\ndone: halt\n.baldata\np: .word 2\n.baltable\nt: .word 3, 1, 0, 2\n"
        );
        s.push('\n');
        s
    }

    #[test]
    fn table_lookup_passes_and_transform_matches() {
        let src = table_src(true);
        let r = report(&src);
        assert!(r.passed(), "{r:?}");
        let img = assemble(&src).unwrap();
        let bar = generate_complement_image(&img, &BalancedRegion::new("enc", "done")).unwrap();
        let t = bar.symbols.get("t").unwrap();
        let words: Vec<u32> = (0..4).map(|j| bar.word(t + 4 * j).unwrap()).collect();
        // T'[j] = !T[3 - j] & 0xff
        assert_eq!(words, vec![0xFD, 0xFF, 0xFE, 0xFC]);
        assert_eq!(bar.word(bar.symbols.get("p").unwrap()), Some(!2));
        assert_eq!(bar.code(), img.code());
    }

    #[test]
    fn wrong_index_mask_flagged() {
        let r = report(&table_src(false));
        // The bad lookup, then the store of its indeterminate result.
        assert_eq!(r.addresses(), vec![16, 20]);
        let img = assemble(&table_src(false)).unwrap();
        assert!(matches!(
            generate_complement_image(&img, &BalancedRegion::new("enc", "done")),
            Err(InstrumentError::ClosureFailed(_))
        ));
    }

    #[test]
    fn table_length_must_be_power_of_two() {
        let img = assemble(".baltable\n.word 1, 2, 3\n").unwrap();
        assert!(matches!(
            complement_data(&img),
            Err(InstrumentError::TableNotPowerOfTwo { len: 3, .. })
        ));
    }

    #[test]
    fn aes_sbox_spot_check() {
        let sbox = crate::fixtures::AES_SBOX;
        let words: Vec<String> = sbox.iter().map(|b| format!("{b:#x}")).collect();
        let img = assemble(&format!(".baltable\n.word {}\n", words.join(", "))).unwrap();
        let bar = complement_data(&img).unwrap();
        let t = &bar.sections[0].words;
        assert_eq!(t[255], !0x63u32 & 0xFF);
        for j in 0..256 {
            assert_eq!(t[j], !(sbox[255 - j] as u32) & 0xFF);
        }
    }

    #[test]
    fn loop_reaches_fixpoint() {
        let r = report(
            "main: startBal\nenc: addi r3, r0, 4\nloop: lw r1, x(r0)\nnor r1, r1, r0\nsw r1, x(r0)\naddi r3, r3, -1\nbne r3, r0, loop\nendBal\ndone: halt\n.baldata\nx: .word 7\n",
        );
        assert!(r.passed(), "{r:?}");
    }

    proptest! {
        #[test]
        fn transform_is_an_involution(
            bal in proptest::collection::vec(any::<u32>(), 1..8),
            table in proptest::collection::vec(0u32..256, 16),
        ) {
            let list = |v: &[u32]| v.iter().map(|w| format!("{w:#x}")).collect::<Vec<_>>().join(", ");
            let img = assemble(&format!(".baldata\n.word {}\n.baltable\n.word {}\n", list(&bal), list(&table))).unwrap();
            let twice = complement_data(&complement_data(&img).unwrap()).unwrap();
            prop_assert_eq!(twice, img);
        }
    }
}
