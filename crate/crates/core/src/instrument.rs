//! Checksum instrumentation and balanced-region marking.
//!
//! [`insert_chk`] rewrites a program so that every basic block starts with a
//! `chk` carrying the block's checksum and ends with a CFI. Labels move onto
//! the inserted `chk`, so every branch lands on the checksum word of its
//! target block. Blocks that fell through into a leader get an explicit `j`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::asm::{assemble_source, Directive, Expr, InstrStmt, Item, Operand, Source, Stmt};
use crate::cfg::{build_cfg, ControlFlowGraph};
use crate::checksum::ChecksumValue;
use crate::error::InstrumentError;
use crate::image::MemoryImage;
use crate::isa::{decode, Op, Reg};

/// One line of the instrumentation report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockReport {
    /// Address of the block's `chk`.
    pub addr: u32,
    /// Checksummed words (excludes the `chk`).
    pub size: usize,
    pub checksum: ChecksumValue,
    /// Mnemonic of the terminating CFI, or `none` at a section end.
    pub cfi: String,
    /// The terminating CFI is a `j` added by the instrumenter.
    pub inserted_jump: bool,
}

#[derive(Clone, Debug)]
pub struct Instrumented {
    pub source: Source,
    pub image: MemoryImage,
    pub blocks: Vec<BlockReport>,
}

impl Instrumented {
    pub fn chk_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn inserted_jumps(&self) -> usize {
        self.blocks.iter().filter(|b| b.inserted_jump).count()
    }

    /// One JSON object per block, in address order.
    pub fn report_jsonl(&self) -> String {
        self.blocks
            .iter()
            .map(|b| serde_json::to_string(b).expect("serialisable") + "\n")
            .collect()
    }
}

fn is_chk(s: &Stmt) -> bool {
    s.as_instr().is_some_and(|i| i.op == Op::Chk)
}

/// Instruments `src`: one `chk` per block, explicit jumps on fall-through.
pub fn insert_chk(src: &Source) -> Result<Instrumented, InstrumentError> {
    let asm = assemble_source(src)?;
    let img = &asm.image;
    for (i, s) in src.stmts.iter().enumerate() {
        let Some(a) = asm.stmt_addr[i] else { continue };
        if !img.is_code(a) {
            continue;
        }
        match &s.item {
            Some(Item::Instr(i)) if i.op == Op::Chk => {
                return Err(InstrumentError::AlreadyInstrumented(a))
            }
            Some(Item::Dir(Directive::Word(_))) => return Err(InstrumentError::DataInCode(a)),
            _ => {}
        }
    }
    let cfg = build_cfg(img)?;
    let leaders: BTreeSet<u32> = cfg.blocks.iter().map(|b| b.start).collect();
    let needs_jump: BTreeSet<u32> = cfg
        .blocks
        .iter()
        .filter(|b| b.cfi().is_none() && leaders.contains(&b.end()))
        .map(|b| b.end())
        .collect();

    // Every jump target and every fallen-into leader needs a label; numeric
    // branch offsets would go stale once words are inserted.
    let mut synth: BTreeMap<u32, String> = BTreeMap::new();
    let mut name_for = |a: u32| -> String {
        match img.symbols.labels_at(a).first() {
            Some(l) => l.to_string(),
            None => synth.entry(a).or_insert_with(|| format!("__bb_{a:08x}")).clone(),
        }
    };
    let mut retarget: BTreeMap<usize, String> = BTreeMap::new();
    for (idx, s) in src.stmts.iter().enumerate() {
        let (Some(a), Some(i)) = (asm.stmt_addr[idx], s.as_instr()) else { continue };
        if matches!(i.operands.last(), Some(Operand::Expr(Expr::Num(_))))
            && matches!(i.op, Op::Beq | Op::Bne | Op::J | Op::Jal)
        {
            let w = img.word(a).expect("placed");
            let t = decode(w).valid().and_then(|d| d.direct_target(a)).expect("decoded by cfg");
            retarget.insert(idx, name_for(t));
        }
    }
    let jump_label: BTreeMap<u32, String> = needs_jump.iter().map(|&a| (a, name_for(a))).collect();

    let mut out: Vec<Stmt> = Vec::with_capacity(src.stmts.len() * 2);
    let mut after_last_code = 0usize;
    let mut inserted: Vec<usize> = Vec::new();
    for (idx, s) in src.stmts.iter().enumerate() {
        let addr = asm.stmt_addr[idx].filter(|&a| img.is_code(a));
        let Some(a) = addr.filter(|_| s.as_instr().is_some()) else {
            out.push(s.clone());
            continue;
        };
        let mut body = Stmt {
            labels: vec![],
            ..s.clone()
        };
        if let (Some(l), Some(Item::Instr(i))) = (retarget.get(&idx), &mut body.item) {
            *i.operands.last_mut().expect("target operand") = Operand::Expr(Expr::Label(l.clone()));
        }
        if leaders.contains(&a) {
            let mut labels = s.labels.clone();
            labels.extend(synth.get(&a).cloned());
            if let Some(target) = jump_label.get(&a) {
                let mut j = Stmt::instr(InstrStmt::jump_to(target));
                j.line = s.line;
                out.insert(after_last_code, j);
                for k in inserted.iter_mut().filter(|k| **k >= after_last_code) {
                    *k += 1;
                }
                inserted.push(after_last_code);
            }
            out.push(Stmt {
                line: s.line,
                labels,
                item: Some(Item::Instr(InstrStmt::new(
                    Op::Chk,
                    vec![Operand::Expr(Expr::Num(0))],
                ))),
            });
            out.push(body);
        } else {
            out.push(Stmt {
                labels: s.labels.clone(),
                ..body
            });
        }
        after_last_code = out.len();
    }

    // Second pass: checksums come from the final words.
    let mut source = Source { stmts: out };
    let laid = assemble_source(&source)?;
    let cfg2 = build_cfg(&laid.image)?;
    for (idx, s) in source.stmts.iter_mut().enumerate() {
        if !is_chk(s) {
            continue;
        }
        let a = laid.stmt_addr[idx].expect("chk is placed");
        let b = cfg2.block_starting(a).expect("chk starts a block");
        let sum = cfg2.blocks[b].checksum().value();
        if let Some(Item::Instr(i)) = &mut s.item {
            i.operands = vec![Operand::Expr(Expr::Num(sum as i64))];
        }
    }
    let fin = assemble_source(&source)?;
    let cfg3 = build_cfg(&fin.image)?;
    let jump_addrs: BTreeSet<u32> = inserted.iter().filter_map(|&k| fin.stmt_addr[k]).collect();
    let blocks = cfg3
        .blocks
        .iter()
        .map(|b| {
            debug_assert!(b.has_chk());
            BlockReport {
                addr: b.start,
                size: b.body().len(),
                checksum: b.checksum(),
                cfi: b.cfi().map_or("none".to_string(), |op| op.mnemonic().to_string()),
                inserted_jump: jump_addrs.contains(&b.last_addr()),
            }
        })
        .collect();
    Ok(Instrumented {
        source,
        image: fin.image,
        blocks,
    })
}

/// A code range to run balanced, plus the registers that hold complemented
/// values on entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalancedRegion {
    /// Label of the first balanced instruction; `startBal` goes just before it.
    pub start: String,
    /// Label of the first instruction after the region; `endBal` goes just before it.
    pub end: String,
    pub complement: Vec<Reg>,
}

impl BalancedRegion {
    pub fn new(start: &str, end: &str) -> Self {
        BalancedRegion {
            start: start.to_string(),
            end: end.to_string(),
            complement: vec![],
        }
    }
}

impl std::str::FromStr for BalancedRegion {
    type Err = InstrumentError;

    /// `start:end`, optionally followed by `:r4,r5` naming registers that
    /// hold complemented values on entry.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InstrumentError::Region(format!("`{s}` is not start:end[:regs]"));
        let mut parts = s.split(':');
        let (Some(start), Some(end)) = (parts.next(), parts.next()) else {
            return Err(bad());
        };
        if start.is_empty() || end.is_empty() {
            return Err(bad());
        }
        let mut r = BalancedRegion::new(start.trim(), end.trim());
        if let Some(regs) = parts.next() {
            for name in regs.split(',').filter(|n| !n.trim().is_empty()) {
                r.complement.push(crate::asm::parse_reg(name.trim()).ok_or_else(bad)?);
            }
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(r)
    }
}

/// A balanced region as found in an assembled image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSpan {
    pub startbal: u32,
    /// Block entered right after `startBal` retires.
    pub entry: usize,
    pub blocks: BTreeSet<usize>,
    pub endbals: Vec<u32>,
}

/// Finds every `startBal` in the program and checks its region: single
/// entry, closed by `endBal` on every path, no nesting, no `halt`.
pub fn find_regions(cfg: &ControlFlowGraph) -> Result<Vec<RegionSpan>, InstrumentError> {
    let err = |m: String| InstrumentError::Region(m);
    let dom = cfg.dominators();
    let mut spans = Vec::new();
    for (bi, b) in cfg.blocks.iter().enumerate() {
        if b.cfi() != Some(Op::StartBal) {
            continue;
        }
        let sb = b.last_addr();
        let entry = cfg
            .block_starting(b.end())
            .ok_or_else(|| err(format!("startBal at {sb:#x} is the last instruction")))?;
        let ends_with = |x: usize, op| cfg.blocks[x].cfi() == Some(op);
        let blocks = cfg.reachable(entry, |x| ends_with(x, Op::EndBal));
        let mut endbals = Vec::new();
        for &x in &blocks {
            let xb = &cfg.blocks[x];
            match xb.cfi() {
                Some(Op::StartBal) => {
                    return Err(err(format!("nested startBal at {:#x} inside region at {sb:#x}", xb.last_addr())))
                }
                Some(Op::Halt) | Some(Op::Iret) => {
                    return Err(err(format!("region at {sb:#x} can exit through {:#x}", xb.last_addr())))
                }
                Some(Op::EndBal) => endbals.push(xb.last_addr()),
                _ => {}
            }
            for p in cfg.predecessors(x) {
                let outside = !blocks.contains(&p) && !(x == entry && p == bi);
                if outside {
                    return Err(err(format!(
                        "region at {sb:#x} is entered from {:#x} without startBal",
                        cfg.blocks[p].last_addr()
                    )));
                }
            }
            if x != entry && !dom.dominates(entry, x) && dom.is_reachable(x) {
                return Err(err(format!("region entry does not dominate {:#x}", xb.start)));
            }
        }
        if endbals.is_empty() {
            return Err(err(format!("region at {sb:#x} has no endBal")));
        }
        spans.push(RegionSpan {
            startbal: sb,
            entry,
            blocks,
            endbals,
        });
    }
    // An endBal outside every region.
    let covered: BTreeSet<u32> = spans.iter().flat_map(|s| s.endbals.iter().copied()).collect();
    for b in &cfg.blocks {
        if b.cfi() == Some(Op::EndBal) && !covered.contains(&b.last_addr()) {
            return Err(err(format!("endBal at {:#x} has no matching startBal", b.last_addr())));
        }
    }
    Ok(spans)
}

fn label_stmt(src: &Source, label: &str) -> Result<usize, InstrumentError> {
    src.stmts
        .iter()
        .position(|s| s.labels.iter().any(|l| l == label))
        .ok_or_else(|| InstrumentError::MissingLabel(label.to_string()))
}

/// Inserts `startBal` before `region.start` and `endBal` before
/// `region.end`, then checks the region is well formed.
pub fn mark_balancing(src: &Source, region: &BalancedRegion) -> Result<Source, InstrumentError> {
    let asm = assemble_source(src)?;
    for l in [&region.start, &region.end] {
        let a = asm
            .image
            .symbols
            .get(l)
            .ok_or_else(|| InstrumentError::MissingLabel(l.clone()))?;
        if !asm.image.is_code(a) {
            return Err(InstrumentError::Region(format!("label `{l}` is not in code")));
        }
    }
    let s = label_stmt(src, &region.start)?;
    let e = label_stmt(src, &region.end)?;
    if e <= s {
        return Err(InstrumentError::Region("end label precedes start label".into()));
    }
    let mut stmts = src.stmts.clone();
    let marker = |op| {
        let mut m = Stmt::instr(InstrStmt::bare(op));
        m.line = 0;
        m
    };
    stmts.insert(e, marker(Op::EndBal));
    stmts.insert(s, marker(Op::StartBal));
    let out = Source { stmts };
    let cfg = build_cfg(&assemble_source(&out)?.image)?;
    find_regions(&cfg)?;
    Ok(out)
}

/// Region spans keyed by `startBal` address, from an image.
pub fn regions_of(img: &MemoryImage) -> Result<BTreeMap<u32, RegionSpan>, InstrumentError> {
    let cfg = build_cfg(img)?;
    Ok(find_regions(&cfg)?.into_iter().map(|r| (r.startbal, r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, parse};
    use crate::checksum::compute_checksum;
    use crate::isa::{decode, Decoded};

    const THREE: &str = "
main:   addi r1, r0, 1
        beq r1, r0, skip
        addi r2, r0, 2
skip:   addi r3, r0, 3
        halt
";

    fn instrument(text: &str) -> Instrumented {
        insert_chk(&parse(text).unwrap()).unwrap()
    }

    /// Linear rescan of the final image: chk words start blocks, each block
    /// runs to the next CFI.
    fn rescan(img: &MemoryImage) -> Vec<(u32, u32, u32)> {
        let code = img.code();
        let mut out = vec![];
        let mut i = 0;
        while i < code.len() {
            let Decoded::Valid(c) = decode(code[i].1) else { panic!() };
            assert_eq!(c.op, Op::Chk, "block at {:#x} lacks chk", code[i].0);
            let mut j = i + 1;
            let mut words = vec![];
            loop {
                let ins = decode(code[j].1).valid().unwrap();
                words.push(code[j].1);
                j += 1;
                if ins.op.is_cfi() {
                    break;
                }
            }
            out.push((code[i].0, c.target, compute_checksum(&words).value()));
            i = j;
        }
        out
    }

    #[test]
    fn three_blocks() {
        let ins = instrument(THREE);
        assert_eq!(ins.chk_count(), 3);
        // blocks: [addi, beq] [addi, j skip] [addi, halt]
        assert_eq!(ins.inserted_jumps(), 1);
        assert_eq!(ins.image.code().len(), 5 + 3 + 1);
        for (_, payload, recomputed) in rescan(&ins.image) {
            assert_eq!(payload, recomputed);
        }
        assert_eq!(ins.report_jsonl().lines().count(), 3);
        // Branch now lands on skip's chk.
        let skip = ins.image.symbols.get("skip").unwrap();
        assert_eq!(decode(ins.image.word(skip).unwrap()).valid().unwrap().op, Op::Chk);
    }

    #[test]
    fn single_block_counts() {
        let ins = instrument("main: addi r1, r0, 1\naddi r2, r0, 2\nhalt\n");
        assert_eq!(ins.image.code().len(), 4);
        assert_eq!(ins.inserted_jumps(), 0);
        assert_eq!(ins.blocks[0].size, 3);
        assert_eq!(ins.blocks[0].cfi, "halt");
    }

    #[test]
    fn numeric_offsets_become_labels() {
        // Target of the numeric branch is an unlabelled leader that the
        // block before it falls into.
        let ins = instrument("main: beq r1, r0, 1\naddi r2, r0, 2\naddi r3, r0, 3\nhalt\n");
        assert_eq!(ins.inserted_jumps(), 1);
        let text = ins.source.to_string();
        assert!(text.contains("beq r1, r0, __bb_00000008"), "{text}");
        assert!(text.contains("j __bb_00000008"), "{text}");
        for (_, payload, recomputed) in rescan(&ins.image) {
            assert_eq!(payload, recomputed);
        }
    }

    #[test]
    fn instruments_a_disassembly() {
        let img = assemble(THREE).unwrap();
        let text = crate::asm::disassemble(&img);
        let ins = instrument(&text);
        assert_eq!(ins.chk_count(), 3);
        for (_, payload, recomputed) in rescan(&ins.image) {
            assert_eq!(payload, recomputed);
        }
    }

    #[test]
    fn reassembles_identically() {
        let ins = instrument(THREE);
        let again = assemble(&ins.source.to_string()).unwrap();
        assert_eq!(again.code(), ins.image.code());
    }

    #[test]
    fn rejects_double_instrumentation() {
        let ins = instrument(THREE);
        assert!(matches!(
            insert_chk(&ins.source),
            Err(InstrumentError::AlreadyInstrumented(_))
        ));
    }

    const BAL: &str = "
main:   addi r1, r0, 1
enc:    xori r2, r1, 5
        addi r1, r1, 0
done:   halt
";

    #[test]
    fn marking_inserts_one_pair() {
        let out = mark_balancing(&parse(BAL).unwrap(), &BalancedRegion::new("enc", "done")).unwrap();
        let ops: Vec<Op> = out.stmts.iter().filter_map(|s| s.as_instr()).map(|i| i.op).collect();
        assert_eq!(ops.iter().filter(|&&o| o == Op::StartBal).count(), 1);
        assert_eq!(ops.iter().filter(|&&o| o == Op::EndBal).count(), 1);
        let ins = insert_chk(&out).unwrap();
        // The markers are block terminators and are covered by checksums.
        let cfis: Vec<&str> = ins.blocks.iter().map(|b| b.cfi.as_str()).collect();
        assert_eq!(cfis, vec!["startBal", "endBal", "halt"]);
        for (_, payload, recomputed) in rescan(&ins.image) {
            assert_eq!(payload, recomputed);
        }
    }

    #[test]
    fn nested_rejected() {
        let once = mark_balancing(&parse(BAL).unwrap(), &BalancedRegion::new("enc", "done")).unwrap();
        let text = once.to_string().replace("    addi r1, r1, 0", "inner:\n    addi r1, r1, 0");
        let r = mark_balancing(&parse(&text).unwrap(), &BalancedRegion::new("inner", "done"));
        assert!(matches!(r, Err(InstrumentError::Region(_))), "{r:?}");
    }

    #[test]
    fn side_entry_rejected() {
        let src = "
main:   beq r0, r0, mid
enc:    xori r2, r1, 5
mid:    addi r1, r1, 0
done:   halt
";
        let r = mark_balancing(&parse(src).unwrap(), &BalancedRegion::new("enc", "done"));
        assert!(matches!(r, Err(InstrumentError::Region(_))), "{r:?}");
    }

    #[test]
    fn missing_label() {
        let r = mark_balancing(&parse(BAL).unwrap(), &BalancedRegion::new("nope", "done"));
        assert_eq!(r.unwrap_err(), InstrumentError::MissingLabel("nope".into()));
    }
}
