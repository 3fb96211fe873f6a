//! Assembler and disassembler.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! label:  mnemonic op, op, ...     # comment
//!         .text | .data | .baldata | .baltable
//!         .stack N[, addr]          # reserve N zero words of stack
//!         .word v[, v...]
//!         .org addr
//!         .jtargets jr_label: target, target, ...
//! ```
//!
//! Operands: registers `r0`..`r31`; numbers (decimal, `0x` hex, optionally
//! negative); labels; `%hi(label)` / `%lo(label)`; memory operands
//! `offset(rN)`. Branches take a label or a signed word offset; jumps take a
//! label or an absolute byte address.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{AsmError, AsmErrorKind};
use crate::image::{MemoryImage, Section, SectionKind, SymbolTable};
use crate::isa::{self, Decoded, Format, Instruction, Op, Reg};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Num(i64),
    Label(String),
    Hi(String),
    Lo(String),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) if *n < 10 => write!(f, "{n}"),
            Expr::Num(n) => write!(f, "{n:#x}"),
            Expr::Label(l) => f.write_str(l),
            Expr::Hi(l) => write!(f, "%hi({l})"),
            Expr::Lo(l) => write!(f, "%lo({l})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Reg(Reg),
    Expr(Expr),
    Mem { offset: Expr, base: Reg },
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Expr(e) => write!(f, "{e}"),
            Operand::Mem { offset, base } => write!(f, "{offset}({base})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstrStmt {
    pub op: Op,
    pub operands: Vec<Operand>,
    /// Written as `nop` in the source.
    pub nop_alias: bool,
    /// 1-based column of each operand, for diagnostics.
    pub columns: Vec<usize>,
}

impl InstrStmt {
    pub fn new(op: Op, operands: Vec<Operand>) -> Self {
        let columns = vec![0; operands.len()];
        InstrStmt {
            op,
            operands,
            nop_alias: false,
            columns,
        }
    }

    pub fn bare(op: Op) -> Self {
        InstrStmt::new(op, vec![])
    }

    /// `j label`
    pub fn jump_to(label: &str) -> Self {
        InstrStmt::new(Op::J, vec![Operand::Expr(Expr::Label(label.to_string()))])
    }

    /// Label named by a branch or jump operand, if any.
    pub fn label_target(&self) -> Option<&str> {
        match (self.op.format(), self.operands.last()) {
            (Format::Branch | Format::Jump, Some(Operand::Expr(Expr::Label(l)))) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for InstrStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.nop_alias {
            return f.write_str("nop");
        }
        f.write_str(self.op.mnemonic())?;
        for (i, o) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    Section(SectionKind),
    /// `.stack N[, addr]`
    Stack { words: u32, at: Option<u32> },
    Word(Vec<Expr>),
    Org(i64),
    JTargets { at: String, targets: Vec<String> },
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Section(k) => write!(f, ".{k}"),
            Directive::Stack { words, at: None } => write!(f, ".stack {words}"),
            Directive::Stack { words, at: Some(a) } => write!(f, ".stack {words}, {a:#x}"),
            Directive::Word(vs) => {
                let vs: Vec<String> = vs.iter().map(ToString::to_string).collect();
                write!(f, ".word {}", vs.join(", "))
            }
            Directive::Org(a) => write!(f, ".org {a:#x}"),
            Directive::JTargets { at, targets } => {
                write!(f, ".jtargets {at}: {}", targets.join(", "))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Instr(InstrStmt),
    Dir(Directive),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stmt {
    pub line: usize,
    pub labels: Vec<String>,
    pub item: Option<Item>,
}

impl Stmt {
    pub fn instr(i: InstrStmt) -> Self {
        Stmt {
            line: 0,
            labels: vec![],
            item: Some(Item::Instr(i)),
        }
    }

    pub fn as_instr(&self) -> Option<&InstrStmt> {
        match &self.item {
            Some(Item::Instr(i)) => Some(i),
            _ => None,
        }
    }
}

/// Parsed assembly source. `Display` prints canonical assembly that parses
/// back to the same statements (modulo line numbers and columns).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Source {
    pub stmts: Vec<Stmt>,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stmts {
            for l in &s.labels {
                writeln!(f, "{l}:")?;
            }
            match &s.item {
                Some(Item::Instr(i)) => writeln!(f, "    {i}")?,
                Some(Item::Dir(d)) => writeln!(f, "{d}")?,
                None => {}
            }
        }
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

pub(crate) fn parse_reg(s: &str) -> Option<Reg> {
    let n = s.strip_prefix('r').or_else(|| s.strip_prefix('R'))?;
    if n.is_empty() || !n.chars().all(|c| c.is_ascii_digit()) || (n.len() > 1 && n.starts_with('0'))
    {
        return None;
    }
    Reg::new(n.parse().ok()?)
}

fn parse_num(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else if !body.is_empty() && body.chars().all(|c| c.is_ascii_digit()) {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

fn parse_expr(s: &str) -> Option<Expr> {
    if let Some(n) = parse_num(s) {
        return Some(Expr::Num(n));
    }
    for (prefix, ctor) in [("%hi(", Expr::Hi as fn(String) -> Expr), ("%lo(", Expr::Lo)] {
        if let Some(rest) = s.strip_prefix(prefix) {
            let inner = rest.strip_suffix(')')?.trim();
            return is_ident(inner).then(|| ctor(inner.to_string()));
        }
    }
    (is_ident(s) && parse_reg(s).is_none()).then(|| Expr::Label(s.to_string()))
}

fn parse_operand(s: &str) -> Option<Operand> {
    if let Some(r) = parse_reg(s) {
        return Some(Operand::Reg(r));
    }
    if s.ends_with(')') {
        if let Some(open) = s.rfind('(') {
            if let Some(base) = parse_reg(s[open + 1..s.len() - 1].trim()) {
                let off = s[..open].trim();
                let offset = if off.is_empty() {
                    Expr::Num(0)
                } else {
                    parse_expr(off)?
                };
                return Some(Operand::Mem { offset, base });
            }
        }
    }
    parse_expr(s).map(Operand::Expr)
}

/// Splits on commas, returning (trimmed text, 1-based column) pairs.
fn split_operands(text: &str, base_col: usize) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ','))) {
        if c == ',' {
            let piece = &text[start..i];
            let lead = piece.len() - piece.trim_start().len();
            out.push((piece.trim().to_string(), base_col + start + lead));
            start = i + 1;
        }
    }
    out
}

/// Parses assembly text into statements. Only syntax is checked here.
pub fn parse(text: &str) -> Result<Source, AsmError> {
    let mut stmts = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut rest = code;
        let mut col = 1;
        let mut labels = Vec::new();
        // Leading `label:` prefixes.
        loop {
            let trimmed = rest.trim_start();
            col += rest.len() - trimmed.len();
            rest = trimmed;
            match rest.find(':') {
                Some(i) if is_ident(rest[..i].trim_end()) && !rest.starts_with('.') => {
                    labels.push(rest[..i].trim_end().to_string());
                    rest = &rest[i + 1..];
                    col += i + 1;
                }
                _ => break,
            }
        }
        let body = rest.trim_end();
        let syntax = |c: usize, msg: String| AsmError::new(line, c, AsmErrorKind::Syntax(msg));
        let item = if body.is_empty() {
            None
        } else if let Some(d) = body.strip_prefix('.') {
            let (name, args) = d.split_once(char::is_whitespace).unwrap_or((d, ""));
            let args = args.trim();
            let arg_col = col + body.len() - args.len();
            let number = |s: &str| {
                parse_num(s).ok_or_else(|| syntax(arg_col, format!("expected a number, found `{s}`")))
            };
            let dir = match name {
                "text" | "data" | "baldata" | "baltable" if args.is_empty() => {
                    Directive::Section(name.parse().expect("section name"))
                }
                "stack" => {
                    let (n, at) = match args.split_once(',') {
                        Some((n, a)) => (number(n.trim())?, Some(number(a.trim())?)),
                        None => (number(args)?, None),
                    };
                    if !(0..=1 << 20).contains(&n) {
                        return Err(syntax(arg_col, format!("bad stack size {n}")));
                    }
                    if at.is_some_and(|a| a < 0 || a % 4 != 0 || a > u32::MAX as i64) {
                        return Err(syntax(arg_col, "bad stack address".into()));
                    }
                    Directive::Stack {
                        words: n as u32,
                        at: at.map(|a| a as u32),
                    }
                }
                "org" => Directive::Org(number(args)?),
                "word" => {
                    let mut vs = Vec::new();
                    for (piece, c) in split_operands(args, arg_col) {
                        vs.push(
                            parse_expr(&piece)
                                .ok_or_else(|| syntax(c, format!("bad value `{piece}`")))?,
                        );
                    }
                    Directive::Word(vs)
                }
                "jtargets" => {
                    let (at, targets) = args
                        .split_once(':')
                        .ok_or_else(|| syntax(arg_col, "expected `label: targets`".into()))?;
                    let at = at.trim().to_string();
                    let targets: Vec<String> =
                        targets.split(',').map(|t| t.trim().to_string()).collect();
                    if !is_ident(&at) || targets.iter().any(|t| !is_ident(t)) {
                        return Err(syntax(arg_col, "bad .jtargets labels".into()));
                    }
                    Directive::JTargets { at, targets }
                }
                _ => return Err(syntax(col, format!("unknown directive `.{name}`"))),
            };
            Some(Item::Dir(dir))
        } else {
            let (mnem, args) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
            let args_trim = args.trim();
            let arg_col = col + body.len() - args_trim.len();
            let pieces = if args_trim.is_empty() {
                vec![]
            } else {
                split_operands(args_trim, arg_col)
            };
            let mut operands = Vec::new();
            let mut columns = Vec::new();
            for (p, c) in pieces {
                operands.push(parse_operand(&p).ok_or_else(|| syntax(c, format!("bad operand `{p}`")))?);
                columns.push(c);
            }
            if mnem.eq_ignore_ascii_case("nop") {
                if !operands.is_empty() {
                    return Err(syntax(arg_col, "nop takes no operands".into()));
                }
                let z = Operand::Reg(Reg::ZERO);
                Some(Item::Instr(InstrStmt {
                    op: Op::Sll,
                    operands: vec![z.clone(), z, Operand::Expr(Expr::Num(0))],
                    nop_alias: true,
                    columns: vec![col; 3],
                }))
            } else {
                let op = Op::from_mnemonic(mnem)
                    .ok_or_else(|| syntax(col, format!("unknown mnemonic `{mnem}`")))?;
                Some(Item::Instr(InstrStmt {
                    op,
                    operands,
                    nop_alias: false,
                    columns,
                }))
            }
        };
        if !labels.is_empty() || item.is_some() {
            stmts.push(Stmt {
                line,
                labels,
                item,
            });
        }
    }
    Ok(Source { stmts })
}

/// Output of [`assemble`]: the image plus the address of every instruction
/// statement (indexed like `Source::stmts`).
#[derive(Clone, Debug)]
pub struct Assembly {
    pub image: MemoryImage,
    pub stmt_addr: Vec<Option<u32>>,
}

struct Segment {
    kind: SectionKind,
    start: u32,
    len: u32,
    mergeable: bool,
}

/// Lays out and encodes a parsed program.
pub fn assemble_source(src: &Source) -> Result<Assembly, AsmError> {
    let mut counters: BTreeMap<SectionKind, u32> = SectionKind::ALL
        .iter()
        .map(|&k| (k, k.default_base()))
        .collect();
    let mut current = SectionKind::Text;
    let mut segments: Vec<Segment> = Vec::new();
    let mut open: Option<usize> = None;
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut stmt_addr = vec![None; src.stmts.len()];
    // (stmt index, segment index, word offset within segment)
    let mut placements: Vec<(usize, usize, u32)> = Vec::new();

    for (idx, s) in src.stmts.iter().enumerate() {
        let err = |kind| AsmError::new(s.line, 1, kind);
        let here = match &s.item {
            Some(Item::Dir(Directive::Stack { at: Some(a), .. })) => *a,
            Some(Item::Dir(Directive::Stack { .. })) => counters[&SectionKind::Stack],
            _ => counters[&current],
        };
        for l in &s.labels {
            if labels.insert(l.clone(), here).is_some() {
                return Err(err(AsmErrorKind::DuplicateLabel(l.clone())));
            }
        }
        let words = match &s.item {
            None => 0,
            Some(Item::Dir(Directive::Section(k))) => {
                current = *k;
                open = None;
                0
            }
            Some(Item::Dir(Directive::Org(a))) => {
                if *a < 0 || *a > u32::MAX as i64 || a % 4 != 0 {
                    return Err(err(AsmErrorKind::MisalignedTarget(*a)));
                }
                counters.insert(current, *a as u32);
                open = None;
                0
            }
            Some(Item::Dir(Directive::Stack { words: n, at })) => {
                let start = at.unwrap_or(counters[&SectionKind::Stack]);
                segments.push(Segment {
                    kind: SectionKind::Stack,
                    start,
                    len: *n,
                    mergeable: true,
                });
                counters.insert(SectionKind::Stack, start + 4 * n);
                continue;
            }
            Some(Item::Dir(Directive::JTargets { .. })) => 0,
            Some(Item::Dir(Directive::Word(vs))) => vs.len() as u32,
            Some(Item::Instr(_)) => 1,
        };
        if words == 0 {
            continue;
        }
        let at = counters[&current];
        let seg = match open {
            Some(i) if segments[i].start + 4 * segments[i].len == at => i,
            _ => {
                segments.push(Segment {
                    kind: current,
                    start: at,
                    len: 0,
                    mergeable: current != SectionKind::Baltable,
                });
                segments.len() - 1
            }
        };
        open = Some(seg);
        placements.push((idx, seg, segments[seg].len));
        segments[seg].len += words;
        stmt_addr[idx] = Some(at);
        counters.insert(current, at + 4 * words);
    }

    let mut sections: Vec<Section> = segments
        .iter()
        .map(|g| Section {
            kind: g.kind,
            start: g.start,
            words: vec![0; g.len as usize],
        })
        .collect();

    let resolve = |e: &Expr, line: usize, col: usize| -> Result<i64, AsmError> {
        let look = |l: &String| {
            labels
                .get(l)
                .map(|&a| a as i64)
                .ok_or_else(|| AsmError::new(line, col, AsmErrorKind::UndefinedLabel(l.clone())))
        };
        Ok(match e {
            Expr::Num(n) => *n,
            Expr::Label(l) => look(l)?,
            Expr::Hi(l) => look(l)? >> 16,
            Expr::Lo(l) => look(l)? & 0xFFFF,
        })
    };

    for (idx, seg, off) in placements {
        let s = &src.stmts[idx];
        let pc = segments[seg].start + 4 * off;
        match &s.item {
            Some(Item::Dir(Directive::Word(vs))) => {
                for (k, v) in vs.iter().enumerate() {
                    let v = resolve(v, s.line, 1)?;
                    if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                        return Err(AsmError::new(
                            s.line,
                            1,
                            AsmErrorKind::ImmediateOverflow { value: v, bits: 32 },
                        ));
                    }
                    sections[seg].words[off as usize + k] = v as u32;
                }
            }
            Some(Item::Instr(i)) => {
                let inst = encode_stmt(i, pc, s.line, &resolve)?;
                sections[seg].words[off as usize] = isa::encode(&inst);
            }
            _ => {}
        }
    }

    // Merge contiguous same-kind sections (tables stay separate).
    let mut order: Vec<usize> = (0..sections.len()).collect();
    order.sort_by_key(|&i| sections[i].start);
    let mut merged: Vec<Section> = Vec::new();
    let mut last_mergeable = false;
    for i in order {
        let s = std::mem::replace(
            &mut sections[i],
            Section {
                kind: SectionKind::Text,
                start: 0,
                words: vec![],
            },
        );
        if s.words.is_empty() {
            continue;
        }
        match merged.last_mut() {
            Some(m)
                if last_mergeable
                    && segments[i].mergeable
                    && m.kind == s.kind
                    && m.end() == s.start =>
            {
                m.words.extend(s.words)
            }
            _ => merged.push(s),
        }
        last_mergeable = segments[i].mergeable;
    }

    let mut symbols = SymbolTable {
        labels: labels.clone(),
        jtargets: BTreeMap::new(),
    };
    for s in &src.stmts {
        if let Some(Item::Dir(Directive::JTargets { at, targets })) = &s.item {
            let undefined = |l: &String| AsmError::new(s.line, 1, AsmErrorKind::UndefinedLabel(l.clone()));
            let a = *labels.get(at).ok_or_else(|| undefined(at))?;
            let ts = targets
                .iter()
                .map(|t| labels.get(t).copied().ok_or_else(|| undefined(t)))
                .collect::<Result<Vec<_>, _>>()?;
            symbols.jtargets.entry(a).or_default().extend(ts);
        }
    }
    let mut image = MemoryImage::new(merged, symbols)
        .map_err(|e| AsmError::new(0, 0, AsmErrorKind::Image(e)))?;
    // An annotation names the `jr` ending the labelled block, so it survives
    // words being inserted between the label and the jump.
    let jt = std::mem::take(&mut image.symbols.jtargets);
    let op_at = |img: &MemoryImage, pc: u32| {
        img.is_code(pc)
            .then(|| img.word(pc).and_then(|w| isa::decode(w).valid()))
            .flatten()
            .map(|i| i.op)
    };
    for (a, ts) in jt {
        let mut pc = a;
        while op_at(&image, pc).is_some_and(|op| !op.is_cfi()) {
            pc += 4;
        }
        let at = if op_at(&image, pc) == Some(Op::Jr) { pc } else { a };
        image.symbols.jtargets.entry(at).or_default().extend(ts);
    }
    Ok(Assembly { image, stmt_addr })
}

fn encode_stmt(
    i: &InstrStmt,
    pc: u32,
    line: usize,
    resolve: &dyn Fn(&Expr, usize, usize) -> Result<i64, AsmError>,
) -> Result<Instruction, AsmError> {
    let col = |k: usize| i.columns.get(k).copied().unwrap_or(1);
    let syntax = |k: usize, msg: &str| {
        AsmError::new(
            line,
            col(k),
            AsmErrorKind::Syntax(format!("{}: {msg}", i.op.mnemonic())),
        )
    };
    let expect = match i.op.format() {
        Format::RegRegReg | Format::Shift | Format::RegRegImm | Format::Branch => 3,
        Format::RegPair | Format::RegImm | Format::Memory => 2,
        Format::RegJump | Format::MoveFrom | Format::Jump | Format::Payload => 1,
        Format::Bare => 0,
    };
    if i.operands.len() != expect {
        return Err(syntax(0, &format!("expected {expect} operands")));
    }
    let reg = |k: usize| match &i.operands[k] {
        Operand::Reg(r) => Ok(*r),
        _ => Err(syntax(k, "expected a register")),
    };
    let value = |k: usize| match &i.operands[k] {
        Operand::Expr(e) => resolve(e, line, col(k)),
        _ => Err(syntax(k, "expected an immediate")),
    };
    let fit = |k: usize, v: i64, lo: i64, hi: i64, bits: u32| {
        if (lo..=hi).contains(&v) {
            Ok(v)
        } else {
            Err(AsmError::new(
                line,
                col(k),
                AsmErrorKind::ImmediateOverflow { value: v, bits },
            ))
        }
    };
    let signed16 = |k: usize, v: i64| fit(k, v, -32768, 32767, 16).map(|v| v as i16 as u16);
    let op = i.op;
    Ok(match op.format() {
        Format::RegRegReg => Instruction::r3(op, reg(0)?, reg(1)?, reg(2)?),
        Format::Shift => {
            let sh = fit(2, value(2)?, 0, 31, 5)?;
            Instruction::shift(op, reg(0)?, reg(1)?, sh as u8)
        }
        Format::RegJump => Instruction::jr(reg(0)?),
        Format::RegPair => Instruction::mult(reg(0)?, reg(1)?),
        Format::MoveFrom => Instruction::move_from(op, reg(0)?),
        Format::RegRegImm => {
            let v = value(2)?;
            let imm = if op.signed_imm() {
                signed16(2, v)?
            } else {
                fit(2, v, 0, 0xFFFF, 16)? as u16
            };
            Instruction::imm(op, reg(0)?, reg(1)?, imm)
        }
        Format::RegImm => {
            let v = fit(1, value(1)?, 0, 0xFFFF, 16)?;
            Instruction::imm(op, reg(0)?, Reg::ZERO, v as u16)
        }
        Format::Memory => match &i.operands[1] {
            Operand::Mem { offset, base } => {
                let v = signed16(1, resolve(offset, line, col(1))?)?;
                Instruction::imm(op, reg(0)?, *base, v)
            }
            _ => return Err(syntax(1, "expected offset(rN)")),
        },
        Format::Branch => {
            let off = match &i.operands[2] {
                Operand::Expr(Expr::Num(n)) => *n,
                Operand::Expr(e) => {
                    let t = resolve(e, line, col(2))?;
                    let delta = t - (pc as i64 + 4);
                    if delta % 4 != 0 {
                        return Err(AsmError::new(line, col(2), AsmErrorKind::MisalignedTarget(t)));
                    }
                    delta / 4
                }
                _ => return Err(syntax(2, "expected a label or offset")),
            };
            let off = fit(2, off, -32768, 32767, 16)?;
            Instruction::branch(op, reg(0)?, reg(1)?, off as i16)
        }
        Format::Jump => {
            let t = value(0)?;
            if t % 4 != 0 || t < 0 {
                return Err(AsmError::new(line, col(0), AsmErrorKind::MisalignedTarget(t)));
            }
            let region = (pc as i64 + 4) & 0xF000_0000;
            if t & !0x0FFF_FFFF != region {
                return Err(AsmError::new(
                    line,
                    col(0),
                    AsmErrorKind::ImmediateOverflow { value: t, bits: 28 },
                ));
            }
            Instruction::jump(op, ((t & 0x0FFF_FFFF) >> 2) as u32)
        }
        Format::Payload => {
            let v = fit(0, value(0)?, 0, isa::TARGET_MASK as i64, 26)?;
            Instruction::chk(v as u32)
        }
        Format::Bare => Instruction::bare(op),
    })
}

/// Parses and assembles assembly text.
pub fn assemble(text: &str) -> Result<MemoryImage, AsmError> {
    Ok(assemble_source(&parse(text)?)?.image)
}

/// Renders an image as assembly that reassembles to identical code words.
/// Words that do not decode print as `.word 0x........`.
pub fn disassemble(img: &MemoryImage) -> String {
    use std::fmt::Write as _;
    let mut names: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (n, &a) in &img.symbols.labels {
        names.entry(a).or_default().push(n.clone());
    }
    // jtargets need labels on both ends.
    let mut needed: HashSet<u32> = HashSet::new();
    for (a, ts) in &img.symbols.jtargets {
        needed.insert(*a);
        needed.extend(ts.iter().copied());
    }
    for a in needed {
        names
            .entry(a)
            .or_insert_with(|| vec![format!("L_{a:08x}")]);
    }

    let mut out = String::new();
    for s in &img.sections {
        if s.kind == SectionKind::Stack {
            let _ = writeln!(out, ".stack {}, {:#x}", s.words.len(), s.start);
            continue;
        }
        let _ = writeln!(out, ".{}", s.kind);
        let _ = writeln!(out, ".org {:#x}", s.start);
        for (a, w) in s.addresses() {
            for n in names.get(&a).into_iter().flatten() {
                let _ = writeln!(out, "{n}:");
            }
            let text = match (s.kind, isa::decode(w)) {
                (SectionKind::Text, Decoded::Valid(i)) => i.to_string(),
                _ => format!(".word {w:#010x}"),
            };
            let _ = writeln!(out, "    {text}");
        }
    }
    for (a, ts) in &img.symbols.jtargets {
        let at = &names[a][0];
        let ts: Vec<&str> = ts.iter().map(|t| names[t][0].as_str()).collect();
        let _ = writeln!(out, ".jtargets {at}: {}", ts.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(src: &str) -> u32 {
        assemble(src).unwrap().code()[0].1
    }

    #[test]
    fn nop_and_basic_words() {
        assert_eq!(word("nop"), 0);
        assert_eq!(
            word("xor r3, r1, r2"),
            isa::encode(&Instruction::r3(Op::Xor, Reg::of(3), Reg::of(1), Reg::of(2)))
        );
        assert_eq!(word("chk 0x123"), (isa::opcode::CHK << 26) | 0x123);
        assert_eq!(word("halt"), isa::opcode::HALT << 26);
    }

    #[test]
    fn labels_and_branches() {
        let img = assemble(
            "main: addi r1, r0, 3\nloop: addi r1, r1, -1\n bne r1, r0, loop\n j done\ndone: halt\n",
        )
        .unwrap();
        let code = img.code();
        let bne = isa::decode(code[2].1).valid().unwrap();
        assert_eq!(bne.branch_offset(), -2);
        assert_eq!(bne.direct_target(code[2].0), Some(4));
        let j = isa::decode(code[3].1).valid().unwrap();
        assert_eq!(j.direct_target(code[3].0), Some(16));
        assert_eq!(img.symbols.get("done"), Some(16));
    }

    #[test]
    fn sections_and_data() {
        let img = assemble(
            ".data\nx: .word 1, 2\n.baldata\ny: .word 0xffffffff\n.text\nlw r1, x(r0)\n.stack 8\nhalt\n",
        )
        .unwrap();
        assert_eq!(img.symbols.get("x"), Some(0x1000));
        assert_eq!(img.word(0x1004), Some(2));
        assert_eq!(img.word(0x1800), Some(0xffff_ffff));
        assert_eq!(img.stack_top(), Some(0x2000 + 32));
        assert_eq!(img.code().len(), 2);
    }

    #[test]
    fn baltables_stay_separate() {
        let img = assemble(".baltable\na: .word 1, 2\n.baltable\nb: .word 3, 4\n").unwrap();
        assert_eq!(img.sections_of(SectionKind::Baltable).count(), 2);
    }

    #[test]
    fn errors_carry_position() {
        let e = assemble("nop\n  frob r1").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));

        let e = assemble("j nowhere").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::UndefinedLabel("nowhere".into()));

        let e = assemble("addi r1, r0, 40000").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::ImmediateOverflow { value: 40000, bits: 16 });
        assert_eq!(e.column, 14);

        let e = assemble("j 0x6").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::MisalignedTarget(6));

        let e = assemble("chk 0x4000000").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::ImmediateOverflow { bits: 26, .. }));

        let e = assemble("a: nop\na: nop").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::DuplicateLabel("a".into()));
    }

    #[test]
    fn jtargets_annotation() {
        let img = assemble(
            "main: jal f\nret1: halt\nf: nop\nback: jr r31\n.jtargets back: ret1\n",
        )
        .unwrap();
        assert_eq!(img.symbols.jtargets.get(&12), Some(&vec![4]));
    }

    #[test]
    fn jtargets_anchor_moves_to_the_jump() {
        let img = assemble("main: jal f\nret1: halt\nf: nop\nback: chk 0\n jr r31\n.jtargets back: ret1\n").unwrap();
        assert_eq!(img.symbols.jtargets.get(&16), Some(&vec![4]));
    }

    #[test]
    fn disassemble_invalid_word() {
        let img = assemble(".word 0xffffffff\nnop").unwrap();
        let text = disassemble(&img);
        assert!(text.contains(".word 0xffffffff"), "{text}");
        assert!(text.contains("    nop"));
        let back = assemble(&text).unwrap();
        assert_eq!(back.code(), img.code());
    }

    #[test]
    fn source_printer_round_trips() {
        let text = "main: lw r1, %lo(x)(r0)\n addi r2, r1, -4\n beq r1, r2, main\n.data\nx: .word 5\n.jtargets main: main\n";
        let src = parse(text).unwrap();
        let again = parse(&src.to_string()).unwrap();
        assert_eq!(src.to_string(), again.to_string());
        assert_eq!(
            assemble_source(&src).unwrap().image,
            assemble_source(&again).unwrap().image
        );
    }
}
