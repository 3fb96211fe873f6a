//! Memory images, symbol tables and the text image file format.
//!
//! The file format is line oriented and stable across runs:
//!
//! ```text
//! @section text 00000000 0000000c
//! 00000000: 3a000123
//! 00000004: 00000000
//! 00000008: fc000000
//! @symbol main 00000000
//! @jtargets 00000010 00000004,00000020
//! ```
//!
//! Section `end` is exclusive. Word lines belong to the most recent header.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ImageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Text,
    Data,
    Baldata,
    Baltable,
    Stack,
}

impl SectionKind {
    pub const ALL: [SectionKind; 5] = [
        SectionKind::Text,
        SectionKind::Data,
        SectionKind::Baldata,
        SectionKind::Baltable,
        SectionKind::Stack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionKind::Text => "text",
            SectionKind::Data => "data",
            SectionKind::Baldata => "baldata",
            SectionKind::Baltable => "baltable",
            SectionKind::Stack => "stack",
        }
    }

    /// Default location counter for each kind. Everything below 0x8000 so a
    /// label can be used directly as a signed 16-bit load offset.
    pub fn default_base(self) -> u32 {
        match self {
            SectionKind::Text => 0x0000,
            SectionKind::Data => 0x1000,
            SectionKind::Baldata => 0x1800,
            SectionKind::Stack => 0x2000,
            SectionKind::Baltable => 0x3000,
        }
    }

    pub fn is_code(self) -> bool {
        self == SectionKind::Text
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SectionKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        SectionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or(())
    }
}

/// A contiguous, word-aligned run of memory with one tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub start: u32,
    pub words: Vec<u32>,
}

impl Section {
    pub fn end(&self) -> u32 {
        self.start + 4 * self.words.len() as u32
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.start && addr < self.end()
    }

    pub fn addresses(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.words
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.start + 4 * i as u32, w))
    }
}

/// Label addresses plus the annotations the instrumenter needs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    pub labels: BTreeMap<String, u32>,
    /// Address of an indirect jump -> declared targets.
    pub jtargets: BTreeMap<u32, Vec<u32>>,
}

impl SymbolTable {
    pub fn get(&self, label: &str) -> Option<u32> {
        self.labels.get(label).copied()
    }

    /// Labels attached to `addr`, in name order.
    pub fn labels_at(&self, addr: u32) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, &a)| a == addr)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// An assembled program: tagged sections plus symbols.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryImage {
    pub sections: Vec<Section>,
    pub symbols: SymbolTable,
}

impl MemoryImage {
    /// Sorts sections and checks they are aligned and disjoint.
    pub fn new(mut sections: Vec<Section>, symbols: SymbolTable) -> Result<Self, ImageError> {
        sections.retain(|s| !s.words.is_empty());
        sections.sort_by_key(|s| s.start);
        for s in &sections {
            if s.start % 4 != 0 {
                return Err(ImageError::Misaligned(s.start));
            }
        }
        for pair in sections.windows(2) {
            if pair[0].end() > pair[1].start {
                return Err(ImageError::Overlap {
                    first: pair[0].start,
                    second: pair[1].start,
                });
            }
        }
        Ok(MemoryImage { sections, symbols })
    }

    pub fn sections_of(&self, kind: SectionKind) -> impl Iterator<Item = &Section> {
        self.sections.iter().filter(move |s| s.kind == kind)
    }

    pub fn section_at(&self, addr: u32) -> Option<&Section> {
        self.sections.iter().find(|s| s.contains(addr))
    }

    pub fn word(&self, addr: u32) -> Option<u32> {
        let s = self.section_at(addr)?;
        s.words.get(((addr - s.start) / 4) as usize).copied()
    }

    pub fn set_word(&mut self, addr: u32, value: u32) -> Result<(), ImageError> {
        let s = self
            .sections
            .iter_mut()
            .find(|s| s.contains(addr))
            .ok_or(ImageError::Unmapped(addr))?;
        let i = ((addr - s.start) / 4) as usize;
        s.words[i] = value;
        Ok(())
    }

    /// `(address, word)` for every code word, in address order.
    pub fn code(&self) -> Vec<(u32, u32)> {
        self.sections_of(SectionKind::Text)
            .flat_map(|s| s.addresses())
            .collect()
    }

    pub fn is_code(&self, addr: u32) -> bool {
        self.section_at(addr).is_some_and(|s| s.kind.is_code())
    }

    /// First code address; execution starts here.
    pub fn entry(&self) -> u32 {
        self.symbols
            .get("main")
            .or_else(|| self.sections_of(SectionKind::Text).next().map(|s| s.start))
            .unwrap_or(0)
    }

    /// Initial stack pointer: the exclusive end of the first stack section.
    pub fn stack_top(&self) -> Option<u32> {
        self.sections_of(SectionKind::Stack).next().map(|s| s.end())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let _ = writeln!(out, "@section {} {:08x} {:08x}", s.kind, s.start, s.end());
            for (a, w) in s.addresses() {
                let _ = writeln!(out, "{a:08x}: {w:08x}");
            }
        }
        for (name, addr) in &self.symbols.labels {
            let _ = writeln!(out, "@symbol {name} {addr:08x}");
        }
        for (addr, targets) in &self.symbols.jtargets {
            let list: Vec<String> = targets.iter().map(|t| format!("{t:08x}")).collect();
            let _ = writeln!(out, "@jtargets {addr:08x} {}", list.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ImageError> {
        let hex = |s: &str, line: usize| {
            u32::from_str_radix(s, 16).map_err(|_| ImageError::Parse {
                line,
                msg: format!("bad hex `{s}`"),
            })
        };
        let mut sections: Vec<(Section, u32)> = Vec::new();
        let mut symbols = SymbolTable::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let l = raw.trim();
            if l.is_empty() {
                continue;
            }
            let parts: Vec<&str> = l.split_whitespace().collect();
            match parts[0] {
                "@section" if parts.len() == 4 => {
                    let kind = parts[1].parse().map_err(|_| ImageError::Parse {
                        line,
                        msg: format!("unknown section `{}`", parts[1]),
                    })?;
                    let start = hex(parts[2], line)?;
                    let end = hex(parts[3], line)?;
                    sections.push((
                        Section {
                            kind,
                            start,
                            words: Vec::new(),
                        },
                        end,
                    ));
                }
                "@symbol" if parts.len() == 3 => {
                    symbols
                        .labels
                        .insert(parts[1].to_string(), hex(parts[2], line)?);
                }
                "@jtargets" if parts.len() == 3 => {
                    let targets = parts[2]
                        .split(',')
                        .map(|t| hex(t, line))
                        .collect::<Result<Vec<_>, _>>()?;
                    symbols.jtargets.insert(hex(parts[1], line)?, targets);
                }
                _ => {
                    let (a, w) = l.split_once(':').ok_or_else(|| ImageError::Parse {
                        line,
                        msg: format!("unrecognised line `{l}`"),
                    })?;
                    let (a, w) = (hex(a.trim(), line)?, hex(w.trim(), line)?);
                    let (s, _) = sections.last_mut().ok_or_else(|| ImageError::Parse {
                        line,
                        msg: "word before any @section".into(),
                    })?;
                    if a != s.end() {
                        return Err(ImageError::Parse {
                            line,
                            msg: format!("address {a:08x} out of sequence"),
                        });
                    }
                    s.words.push(w);
                }
            }
        }
        for (s, end) in &sections {
            if s.end() != *end {
                return Err(ImageError::Parse {
                    line: 0,
                    msg: format!("section at {:08x} declares end {end:08x}", s.start),
                });
            }
        }
        MemoryImage::new(sections.into_iter().map(|(s, _)| s).collect(), symbols)
    }
}
