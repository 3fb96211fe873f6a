//! Control-flow graph over the code sections of an image.
//!
//! Leaders are the entry point, every static branch or jump target, every
//! declared indirect-jump target, every instruction following a CFI, every
//! code label and the first word of each code section. A block runs from its
//! leader up to and including the first CFI, or up to the next leader.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::dominators;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use crate::checksum::{compute_checksum, ChecksumValue};
use crate::error::InstrumentError;
use crate::image::MemoryImage;
use crate::isa::{decode, Decoded, Instruction, Op};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Taken,
    FallThrough,
    Jump,
    Call,
    /// Return point of a `jal`.
    Return,
    Indirect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub start: u32,
    /// Every word of the block, including a leading `chk` if present.
    pub words: Vec<u32>,
    pub instrs: Vec<Instruction>,
}

impl BasicBlock {
    pub fn end(&self) -> u32 {
        self.start + 4 * self.words.len() as u32
    }

    pub fn last_addr(&self) -> u32 {
        self.end() - 4
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.start && addr < self.end()
    }

    pub fn has_chk(&self) -> bool {
        self.instrs.first().is_some_and(|i| i.op == Op::Chk)
    }

    /// Payload of the leading `chk`, if present.
    pub fn chk_payload(&self) -> Option<u32> {
        self.instrs.first().filter(|i| i.op == Op::Chk).map(|i| i.target)
    }

    /// Words covered by the checksum: everything except a leading `chk`.
    pub fn body(&self) -> &[u32] {
        if self.has_chk() {
            &self.words[1..]
        } else {
            &self.words
        }
    }

    /// Address of the first checksummed word.
    pub fn body_start(&self) -> u32 {
        if self.has_chk() {
            self.start + 4
        } else {
            self.start
        }
    }

    pub fn checksum(&self) -> ChecksumValue {
        compute_checksum(self.body())
    }

    /// Terminating CFI, if the block ends with one.
    pub fn cfi(&self) -> Option<Op> {
        self.instrs.last().map(|i| i.op).filter(|op| op.is_cfi())
    }
}

#[derive(Clone, Debug)]
pub struct ControlFlowGraph {
    /// Sorted by start address.
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<Edge>,
    pub entry: usize,
}

impl ControlFlowGraph {
    pub fn block_at(&self, addr: u32) -> Option<usize> {
        let i = self.blocks.partition_point(|b| b.start <= addr);
        (i > 0 && self.blocks[i - 1].contains(addr)).then(|| i - 1)
    }

    pub fn block_starting(&self, addr: u32) -> Option<usize> {
        self.blocks.binary_search_by_key(&addr, |b| b.start).ok()
    }

    pub fn successors(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.from == b).map(|e| e.to)
    }

    pub fn predecessors(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.to == b).map(|e| e.from)
    }

    /// Immediate dominator of every block reachable from the entry.
    pub fn dominators(&self) -> Dominators {
        let mut g: DiGraph<(), ()> = DiGraph::new();
        let nodes: Vec<NodeIndex> = self.blocks.iter().map(|_| g.add_node(())).collect();
        for e in &self.edges {
            g.add_edge(nodes[e.from], nodes[e.to], ());
        }
        let d = dominators::simple_fast(&g, nodes[self.entry]);
        let idom = nodes
            .iter()
            .map(|&n| d.immediate_dominator(n).map(|p| p.index()))
            .collect();
        Dominators {
            entry: self.entry,
            idom,
        }
    }

    /// Blocks reachable from `from`, not following edges out of blocks for
    /// which `stop` holds.
    pub fn reachable(&self, from: usize, stop: impl Fn(usize) -> bool) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([from]);
        let mut work = vec![from];
        while let Some(b) = work.pop() {
            if stop(b) {
                continue;
            }
            for s in self.successors(b) {
                if seen.insert(s) {
                    work.push(s);
                }
            }
        }
        seen
    }
}

#[derive(Clone, Debug)]
pub struct Dominators {
    entry: usize,
    idom: Vec<Option<usize>>,
}

impl Dominators {
    pub fn is_reachable(&self, b: usize) -> bool {
        b == self.entry || self.idom[b].is_some()
    }

    /// Whether `a` dominates `b`. Unreachable blocks are dominated by nothing.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.is_reachable(b) {
            return false;
        }
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.idom[c];
        }
        false
    }
}

/// Builds the CFG of every code section in `img`.
pub fn build_cfg(img: &MemoryImage) -> Result<ControlFlowGraph, InstrumentError> {
    let code = img.code();
    if code.is_empty() {
        return Err(InstrumentError::NoCode);
    }
    let mut instrs: BTreeMap<u32, (u32, Instruction)> = BTreeMap::new();
    for &(addr, word) in &code {
        match decode(word) {
            Decoded::Valid(i) => {
                instrs.insert(addr, (word, i));
            }
            Decoded::Invalid(w) => return Err(InstrumentError::InvalidWord { addr, word: w }),
        }
    }

    let in_code = |a: u32| instrs.contains_key(&a);
    let mut leaders: BTreeSet<u32> = BTreeSet::new();
    let entry = img.entry();
    if !in_code(entry) {
        return Err(InstrumentError::TargetOutsideCode {
            from: entry,
            target: entry,
        });
    }
    leaders.insert(entry);
    for s in img.sections_of(crate::image::SectionKind::Text) {
        leaders.insert(s.start);
    }
    for &a in img.symbols.labels.values() {
        if in_code(a) {
            leaders.insert(a);
        }
    }
    let mut indirect: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&pc, &(_, i)) in &instrs {
        if !i.op.is_cfi() {
            continue;
        }
        if in_code(pc + 4) {
            leaders.insert(pc + 4);
        }
        if let Some(t) = i.direct_target(pc) {
            if !in_code(t) {
                return Err(InstrumentError::TargetOutsideCode { from: pc, target: t });
            }
            leaders.insert(t);
        }
        if i.op == Op::Jr {
            let ts = img
                .symbols
                .jtargets
                .get(&pc)
                .ok_or(InstrumentError::UnannotatedIndirectJump(pc))?;
            for &t in ts {
                if !in_code(t) {
                    return Err(InstrumentError::TargetOutsideCode { from: pc, target: t });
                }
                leaders.insert(t);
            }
            indirect.insert(pc, ts.clone());
        }
    }

    // Cut blocks.
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut cur: Option<BasicBlock> = None;
    let mut prev_pc: Option<u32> = None;
    for (&pc, &(word, i)) in &instrs {
        let contiguous = prev_pc == Some(pc.wrapping_sub(4));
        if leaders.contains(&pc) || !contiguous {
            if let Some(b) = cur.take() {
                blocks.push(b);
            }
        }
        let b = cur.get_or_insert_with(|| BasicBlock {
            start: pc,
            words: vec![],
            instrs: vec![],
        });
        b.words.push(word);
        b.instrs.push(i);
        if i.op.is_cfi() {
            blocks.push(cur.take().expect("open block"));
        }
        prev_pc = Some(pc);
    }
    if let Some(b) = cur {
        blocks.push(b);
    }

    let starts: BTreeMap<u32, usize> = blocks.iter().enumerate().map(|(i, b)| (b.start, i)).collect();
    let mut edges = Vec::new();
    for (bi, b) in blocks.iter().enumerate() {
        let last = *b.instrs.last().expect("non-empty block");
        let pc = b.last_addr();
        let next = starts.get(&b.end()).copied();
        let mut add = |to: Option<usize>, kind| {
            if let Some(to) = to {
                edges.push(Edge { from: bi, to, kind });
            }
        };
        let target = last.direct_target(pc).and_then(|t| starts.get(&t).copied());
        match last.op {
            Op::Beq | Op::Bne => {
                add(target, EdgeKind::Taken);
                add(next, EdgeKind::FallThrough);
            }
            Op::J => add(target, EdgeKind::Jump),
            Op::Jal => {
                add(target, EdgeKind::Call);
                add(next, EdgeKind::Return);
            }
            Op::Jr => {
                for t in &indirect[&pc] {
                    add(starts.get(t).copied(), EdgeKind::Indirect);
                }
            }
            Op::Halt | Op::Iret => {}
            Op::StartBal | Op::EndBal => add(next, EdgeKind::FallThrough),
            _ => add(next, EdgeKind::FallThrough),
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));
    edges.dedup_by_key(|e| (e.from, e.to));
    let entry = starts[&entry];
    Ok(ControlFlowGraph {
        blocks,
        edges,
        entry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    const LOOP: &str = "
main:   addi r1, r0, 3
loop:   addi r1, r1, -1
        bne r1, r0, loop
        xor r2, r2, r2
        halt
";

    #[test]
    fn loop_blocks() {
        let cfg = build_cfg(&assemble(LOOP).unwrap()).unwrap();
        let starts: Vec<u32> = cfg.blocks.iter().map(|b| b.start).collect();
        assert_eq!(starts, vec![0, 4, 12]);
        assert_eq!(cfg.blocks[1].cfi(), Some(Op::Bne));
        assert_eq!(cfg.blocks[0].cfi(), None);
        assert_eq!(
            cfg.edges,
            vec![
                Edge { from: 0, to: 1, kind: EdgeKind::FallThrough },
                Edge { from: 1, to: 1, kind: EdgeKind::Taken },
                Edge { from: 1, to: 2, kind: EdgeKind::FallThrough },
            ]
        );
        let d = cfg.dominators();
        assert!(d.dominates(0, 2) && d.dominates(1, 2) && !d.dominates(2, 1));
    }

    #[test]
    fn indirect_jump_needs_annotation() {
        let src = "main: jr r31\nother: halt\n";
        assert_eq!(
            build_cfg(&assemble(src).unwrap()).unwrap_err(),
            InstrumentError::UnannotatedIndirectJump(0)
        );
        let src = "main: jr r31\n.jtargets main: other\nother: halt\n";
        let cfg = build_cfg(&assemble(src).unwrap()).unwrap();
        assert_eq!(cfg.edges[0].kind, EdgeKind::Indirect);
    }

    #[test]
    fn invalid_word_rejected() {
        let img = assemble(".word 0xffffffff\n").unwrap();
        assert!(matches!(build_cfg(&img), Err(InstrumentError::InvalidWord { addr: 0, .. })));
    }

    #[test]
    fn unreachable_is_not_dominated() {
        let src = "main: halt\ndead: xor r1, r1, r1\nhalt\n";
        let cfg = build_cfg(&assemble(src).unwrap()).unwrap();
        let d = cfg.dominators();
        assert!(!d.is_reachable(1));
        assert!(!d.dominates(0, 1));
    }
}
