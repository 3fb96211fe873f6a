//! Code injection and detection measurement.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::cfg::build_cfg;
use crate::cpu::{EventKind, Status, Trap};
use crate::error::AttackError;
use crate::image::MemoryImage;
use crate::sim::{Mode, Program, Simulation, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    BitFlip { addr: u32, bit: u8 },
    WordReplace { addr: u32, word: u32 },
    PcRedirect { pc: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InjectionSpec {
    pub injection: Injection,
    /// Applied before this cycle's fetch; 0 means before the run starts.
    pub trigger: u64,
}

impl InjectionSpec {
    pub fn bit_flip(addr: u32, bit: u8) -> Self {
        InjectionSpec {
            injection: Injection::BitFlip { addr, bit },
            trigger: 0,
        }
    }

    pub fn word_replace(addr: u32, word: u32) -> Self {
        InjectionSpec {
            injection: Injection::WordReplace { addr, word },
            trigger: 0,
        }
    }

    pub fn pc_redirect(cycle: u64, pc: u32) -> Self {
        InjectionSpec {
            injection: Injection::PcRedirect { pc },
            trigger: cycle,
        }
    }

    pub fn at(mut self, cycle: u64) -> Self {
        self.trigger = cycle;
        self
    }

    fn addr(&self) -> Option<u32> {
        match self.injection {
            Injection::BitFlip { addr, .. } | Injection::WordReplace { addr, .. } => Some(addr),
            Injection::PcRedirect { .. } => None,
        }
    }

    pub fn validate(&self, img: &MemoryImage) -> Result<(), AttackError> {
        if let Injection::BitFlip { bit, .. } = self.injection {
            if bit >= 32 {
                return Err(AttackError::BadBit(bit));
            }
        }
        match self.addr() {
            Some(a) if !img.is_code(a) || a % 4 != 0 => Err(AttackError::OutsideCode(a)),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    IntegrityException,
    /// Undecodable word, fetch outside code, or a faulting memory access.
    IllegalInstruction,
    Silent,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::IntegrityException => "integrity-exception",
            Outcome::IllegalInstruction => "illegal-instruction",
            Outcome::Silent => "silent",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn detected(self) -> bool {
        matches!(self, Outcome::IntegrityException | Outcome::IllegalInstruction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DetectionReport {
    pub spec: InjectionSpec,
    pub outcome: Outcome,
    pub detection_pc: Option<u32>,
    pub detection_cycle: Option<u64>,
    /// Instructions retired after the first corrupted one, up to and
    /// including the one that raised the exception.
    pub latency_instructions: Option<u64>,
    pub latency_cycles: Option<u64>,
    /// The corrupted word (or redirected path) reached retire.
    pub executed: bool,
}

impl DetectionReport {
    pub fn detected(&self) -> bool {
        self.outcome.detected()
    }
}

fn mutate(sim: &mut Simulation, spec: &InjectionSpec) {
    let core = &mut sim.cores[0];
    match spec.injection {
        Injection::BitFlip { addr, bit } => {
            if let Some(w) = core.memory().word(addr) {
                core.poke_code(addr, w ^ (1 << bit));
            }
        }
        Injection::WordReplace { addr, word } => {
            core.poke_code(addr, word);
        }
        Injection::PcRedirect { pc } => core.write_pc(pc),
    }
}

/// Runs `program` alone on core 0 with one injection.
pub fn measure_detection(
    program: &Program,
    mode: Mode,
    spec: &InjectionSpec,
    max_cycles: u64,
) -> Result<DetectionReport, AttackError> {
    spec.validate(program.image(mode))?;
    let cfg = SystemConfig {
        max_cycles,
        ..SystemConfig::with_mode(mode)
    };
    let mut sim = Simulation::new(cfg, [Some(program), None])?;
    let target = spec.addr();
    let redirect = target.is_none();
    let mut first: Option<(u64, u64)> = None;
    let mut retired = 0u64;
    let mut detection = None;
    while !sim.finished() && sim.cycle < max_cycles {
        if sim.cycle == spec.trigger {
            mutate(&mut sim, spec);
        }
        let armed = sim.cycle >= spec.trigger;
        let events = sim.step()?;
        let had_retire = events.iter().any(|e| e.core == 0 && matches!(e.kind, EventKind::Retire { .. }));
        for e in events.iter().filter(|e| e.core == 0) {
            let pc = match e.kind {
                EventKind::Retire { pc, .. } => {
                    retired += 1;
                    pc
                }
                EventKind::IntegrityException { pc, .. }
                | EventKind::IllegalInstruction { pc, .. }
                | EventKind::MemoryFault { pc, .. } => {
                    if !had_retire {
                        // Undecodable words trap without a retire event.
                        retired += 1;
                    }
                    detection = Some((pc, e.cycle, retired));
                    pc
                }
                _ => continue,
            };
            if first.is_none() && armed && (redirect || Some(pc) == target) {
                first = Some((e.cycle, retired));
            }
        }
    }
    let status = sim.cores[0].status;
    let outcome = match status {
        Status::Trapped(Trap::Integrity) => Outcome::IntegrityException,
        Status::Trapped(_) => Outcome::IllegalInstruction,
        Status::Halted => Outcome::Silent,
        _ => Outcome::Timeout,
    };
    let (lat_i, lat_c) = match (first, detection) {
        (Some((c0, r0)), Some((_, c1, r1))) => (Some(r1 - r0), Some(c1 - c0)),
        _ => (None, None),
    };
    Ok(DetectionReport {
        spec: *spec,
        outcome,
        detection_pc: detection.map(|d| d.0),
        detection_cycle: detection.map(|d| d.1),
        latency_instructions: lat_i,
        latency_cycles: lat_c,
        executed: first.is_some(),
    })
}

/// Addresses retired by an unmodified run.
pub fn executed_addresses(program: &Program, mode: Mode, max_cycles: u64) -> Result<BTreeSet<u32>, AttackError> {
    let cfg = SystemConfig {
        max_cycles,
        ..SystemConfig::with_mode(mode)
    };
    let mut sim = Simulation::new(cfg, [Some(program), None])?;
    let mut seen = BTreeSet::new();
    while !sim.finished() && sim.cycle < max_cycles {
        for e in sim.step()? {
            if let (0, EventKind::Retire { pc, .. }) = (e.core, e.kind) {
                seen.insert(pc);
            }
        }
    }
    Ok(seen)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SweepEntry {
    pub report: DetectionReport,
    /// The flipped word lies in a block the clean run executed.
    pub in_executed_block: bool,
    /// Words in the containing block, its chk included.
    pub block_words: u64,
    /// Address just past the containing block.
    pub block_end: u32,
}

impl SweepEntry {
    /// Detected no later than the end of the containing block.
    pub fn within_block(&self) -> bool {
        self.report.latency_instructions.is_some_and(|l| l <= self.block_words)
            && self.report.detection_pc.is_some_and(|pc| pc <= self.block_end)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SweepSummary {
    pub flips: usize,
    pub executed_flips: usize,
    pub integrity: usize,
    pub illegal: usize,
    pub silent_executed: usize,
    pub silent_unexecuted: usize,
    pub timeouts: usize,
    pub late_detections: usize,
    pub max_latency_instructions: u64,
}

impl SweepSummary {
    pub fn detection_rate(&self) -> f64 {
        let det = self.executed_flips - self.silent_executed;
        det as f64 / self.executed_flips.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub mode: Mode,
    pub entries: Vec<SweepEntry>,
    pub summary: SweepSummary,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("address,bit,outcome,detection_pc,latency_instructions,latency_cycles,executed\n");
        let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
        for e in &self.entries {
            let r = &e.report;
            let (addr, bit) = match r.spec.injection {
                Injection::BitFlip { addr, bit } => (addr, bit),
                _ => continue,
            };
            s.push_str(&format!(
                "{:#010x},{},{},{},{},{},{}\n",
                addr,
                bit,
                r.outcome.name(),
                r.detection_pc.map_or(String::new(), |p| format!("{p:#010x}")),
                opt(r.latency_instructions),
                opt(r.latency_cycles),
                e.in_executed_block
            ));
        }
        s
    }
}

/// Flips every bit of every code word, one run per flip.
pub fn sweep_bitflips(program: &Program, mode: Mode, max_cycles: u64) -> Result<SweepReport, AttackError> {
    let img = program.image(mode);
    let cfg = build_cfg(img)?;
    let executed = executed_addresses(program, mode, max_cycles)?;
    let specs: Vec<(u32, u8)> = img.code().iter().flat_map(|&(a, _)| (0..32).map(move |b| (a, b))).collect();
    let entries = specs
        .par_iter()
        .map(|&(addr, bit)| {
            let report = measure_detection(program, mode, &InjectionSpec::bit_flip(addr, bit), max_cycles)?;
            let b = cfg.block_at(addr).map(|i| &cfg.blocks[i]);
            Ok(SweepEntry {
                report,
                in_executed_block: b.is_some_and(|b| executed.iter().any(|&pc| b.contains(pc))),
                block_words: b.map_or(0, |b| b.words.len() as u64),
                block_end: b.map_or(addr, |b| b.end()),
            })
        })
        .collect::<Result<Vec<_>, AttackError>>()?;
    let mut s = SweepSummary {
        flips: entries.len(),
        ..Default::default()
    };
    for e in &entries {
        let o = e.report.outcome;
        match o {
            Outcome::IntegrityException => s.integrity += 1,
            Outcome::IllegalInstruction => s.illegal += 1,
            Outcome::Timeout => s.timeouts += 1,
            Outcome::Silent => {}
        }
        if e.in_executed_block {
            s.executed_flips += 1;
            if !o.detected() {
                s.silent_executed += 1;
            } else if !e.within_block() {
                s.late_detections += 1;
            }
        } else if o == Outcome::Silent {
            s.silent_unexecuted += 1;
        }
        if let Some(l) = e.report.latency_instructions {
            s.max_latency_instructions = s.max_latency_instructions.max(l);
        }
    }
    Ok(SweepReport {
        mode,
        entries,
        summary: s,
    })
}
