//! Two cores and the controller clocked from one loop.
//!
//! Each cycle: post scheduled interrupts, tick the controller, step core 0,
//! step core 1, record power, audit lock-step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asm::{assemble_source, parse};
use crate::complement::generate_complement_image;
use crate::controller::{Accounting, BalanceRound, Controller, DelayTable, Phase, Request};
use crate::cpu::{Core, CoreEvent, EventKind, Status, Trap};
use crate::error::{InstrumentError, SimError};
use crate::fixtures::{self, Fixture};
use crate::image::{MemoryImage, SectionKind};
use crate::instrument::{insert_chk, mark_balancing, BalancedRegion, Instrumented};
use crate::power::{LeakageConfig, PowerTrace, Recorder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    NonSecured,
    SecuredI,
    SecuredM,
    Secured,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NonSecured, Mode::SecuredI, Mode::SecuredM, Mode::Secured];

    pub fn integrity(self) -> bool {
        matches!(self, Mode::SecuredI | Mode::Secured)
    }

    pub fn balancing(self) -> bool {
        matches!(self, Mode::SecuredM | Mode::Secured)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::NonSecured => "NON_SECURED",
            Mode::SecuredI => "SECURED_I",
            Mode::SecuredM => "SECURED_M",
            Mode::Secured => "SECURED",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Mode, SimError> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| SimError::Config(format!("unknown mode `{s}`")))
    }
}

/// How the partner of a balanced application is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// The partner starts only once the balanced region has been exited.
    #[default]
    PartnerWaits,
    /// Both start at once; the partner is preempted at startBal.
    Preemptive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vector {
    Addr(u32),
    Label(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterruptSpec {
    pub cycle: u64,
    pub core: usize,
    pub vector: Vector,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub events: bool,
    pub power: bool,
}

/// An application slot in a configuration file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Shipped fixture name.
    pub fixture: Option<String>,
    /// Assembly file, used when no fixture is named.
    pub source: Option<String>,
    /// Balanced region as `start:end`, for `source` apps.
    pub region: Option<String>,
    pub isr: bool,
    pub inputs: BTreeMap<String, Vec<u32>>,
}

impl AppConfig {
    /// Builds the application. Relative source paths resolve against `dir`;
    /// fixture ciphers take their key from `seed`.
    pub fn program(&self, seed: u64, dir: &Path) -> Result<Program, SimError> {
        let cfg_err = |m: String| SimError::Config(m);
        let mut f = match (&self.fixture, &self.source) {
            (Some(name), None) => {
                fixtures::by_name(name, seed).ok_or_else(|| cfg_err(format!("unknown fixture `{name}`")))?
            }
            (None, Some(path)) => {
                let full = dir.join(path);
                let source = std::fs::read_to_string(&full)
                    .map_err(|e| cfg_err(format!("{}: {e}", full.display())))?;
                let region = self
                    .region
                    .as_deref()
                    .map(str::parse::<BalancedRegion>)
                    .transpose()
                    .map_err(|e| cfg_err(e.to_string()))?;
                let name = Path::new(path)
                    .file_stem()
                    .map_or_else(|| path.clone(), |s| s.to_string_lossy().into_owned());
                Fixture {
                    name,
                    source,
                    region,
                    inputs: vec![],
                    outputs: vec![],
                }
            }
            _ => return Err(cfg_err("an application needs exactly one of `fixture` and `source`".into())),
        };
        if self.isr {
            f = f.with_isr();
        }
        let mut p = Program::from_fixture(&f).map_err(|e| cfg_err(format!("{}: {e}", f.name)))?;
        for (name, values) in &self.inputs {
            p.set_input(name, values)?;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub version: u32,
    pub mode: Mode,
    pub policy: Policy,
    pub max_cycles: u64,
    pub seed: u64,
    pub leakage: LeakageConfig,
    pub trace: TraceConfig,
    pub interrupts: Vec<InterruptSpec>,
    pub core1: Option<AppConfig>,
    pub core2: Option<AppConfig>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            version: 1,
            mode: Mode::NonSecured,
            policy: Policy::default(),
            max_cycles: 1_000_000,
            seed: 0,
            leakage: LeakageConfig::default(),
            trace: TraceConfig::default(),
            interrupts: Vec::new(),
            core1: None,
            core2: None,
        }
    }
}

impl SystemConfig {
    pub fn with_mode(mode: Mode) -> SystemConfig {
        SystemConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<SystemConfig, SimError> {
        let c: SystemConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        if c.version != 1 {
            return Err(SimError::Config(format!("unsupported config version {}", c.version)));
        }
        c.leakage.validate().map_err(SimError::Config)?;
        if c.interrupts.iter().any(|i| i.core > 1) {
            return Err(SimError::Config("interrupt core must be 0 or 1".into()));
        }
        Ok(c)
    }

    /// The two applications named by `core1` and `core2`.
    pub fn programs(&self, dir: &Path) -> Result<[Option<Program>; 2], SimError> {
        let load = |a: &Option<AppConfig>| a.as_ref().map(|a| a.program(self.seed, dir)).transpose();
        Ok([load(&self.core1)?, load(&self.core2)?])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// One application in every form the four modes need.
#[derive(Clone, Debug)]
pub struct Program {
    pub name: String,
    pub region: Option<BalancedRegion>,
    /// Marked, not instrumented.
    pub plain: MemoryImage,
    pub instrumented: Instrumented,
    plain_comp: Option<MemoryImage>,
    inst_comp: Option<MemoryImage>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Program {
    pub fn build(name: &str, source: &str, region: Option<BalancedRegion>) -> Result<Program, InstrumentError> {
        let mut src = parse(source)?;
        if let Some(r) = &region {
            src = mark_balancing(&src, r)?;
        }
        let plain = assemble_source(&src)?.image;
        let instrumented = insert_chk(&src)?;
        let (plain_comp, inst_comp) = match &region {
            Some(r) => (
                Some(generate_complement_image(&plain, r)?),
                Some(generate_complement_image(&instrumented.image, r)?),
            ),
            None => (None, None),
        };
        Ok(Program {
            name: name.to_string(),
            region,
            plain,
            instrumented,
            plain_comp,
            inst_comp,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn from_fixture(f: &Fixture) -> Result<Program, InstrumentError> {
        let mut p = Program::build(&f.name, &f.source, f.region.clone())?;
        p.inputs = f.inputs.clone();
        p.outputs = f.outputs.clone();
        Ok(p)
    }

    pub fn is_balanced(&self) -> bool {
        self.region.is_some()
    }

    pub fn image(&self, mode: Mode) -> &MemoryImage {
        if mode.integrity() {
            &self.instrumented.image
        } else {
            &self.plain
        }
    }

    pub fn complement(&self, mode: Mode) -> Option<&MemoryImage> {
        if mode.integrity() {
            self.inst_comp.as_ref()
        } else {
            self.plain_comp.as_ref()
        }
    }

    /// Addresses of the jumps the instrumenter added.
    pub fn inserted_jumps(&self) -> BTreeSet<u32> {
        self.instrumented
            .blocks
            .iter()
            .filter(|b| b.inserted_jump)
            .map(|b| b.addr + 4 * b.size as u32)
            .collect()
    }

    /// Writes consecutive words at `name` in every image; complement images
    /// get the inverted value where the symbol lies in balanced data.
    pub fn set_input(&mut self, name: &str, values: &[u32]) -> Result<(), SimError> {
        let images = [
            (&mut self.plain, false),
            (&mut self.instrumented.image, false),
        ]
        .into_iter()
        .chain(self.plain_comp.as_mut().map(|i| (i, true)))
        .chain(self.inst_comp.as_mut().map(|i| (i, true)));
        for (img, comp) in images {
            let base = img
                .symbols
                .get(name)
                .ok_or_else(|| SimError::Config(format!("{}: no symbol `{name}`", self.name)))?;
            for (i, &v) in values.iter().enumerate() {
                let addr = base + 4 * i as u32;
                let bal = img.section_at(addr).is_some_and(|s| s.kind == SectionKind::Baldata);
                let w = if comp && bal { !v } else { v };
                if img.is_code(addr) || img.set_word(addr, w).is_err() {
                    return Err(SimError::Config(format!("{}: `{name}`+{i} is not writable data", self.name)));
                }
            }
        }
        Ok(())
    }
}

/// Reads `n` words at `name` from a core's primary memory.
pub fn read_symbol(core: &Core, name: &str, n: usize) -> Option<Vec<u32>> {
    let base = core.primary.symbols.get(name)?;
    (0..n).map(|i| core.primary.word(base + 4 * i as u32)).collect()
}

/// Image for a core with no application: halts at once, but has a stack so
/// the controller can save its context. It carries a `chk` so that it also
/// passes the integrity check.
pub fn idle_image() -> MemoryImage {
    let src = parse(".text\nidle: halt\n.stack 64\n").expect("idle source parses");
    insert_chk(&src).expect("idle image instruments").image
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Halted,
    IntegrityException,
    IllegalInstruction,
    MemoryFault,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AppResult {
    pub core: usize,
    pub name: String,
    pub exit: ExitStatus,
    /// Cycles from reset to the halting retire, inclusive.
    pub cycles: Option<u64>,
    pub retired: u64,
    pub chk_retired: u64,
    pub inserted_jump_retired: u64,
}

/// Whether both cores executed the same instruction stream while balancing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LockstepAudit {
    pub balanced_cycles: u64,
    pub paired_retires: u64,
    pub skew_cycles: u64,
    pub first_skew: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub mode: Mode,
    pub policy: Policy,
    pub cycles: u64,
    pub timed_out: bool,
    /// Longest application runtime.
    pub net_runtime: Option<u64>,
    pub apps: Vec<AppResult>,
    pub rounds: Vec<BalanceRound>,
    pub accounting: Accounting,
    pub exceptions: Vec<CoreEvent>,
    pub lockstep: LockstepAudit,
    #[serde(skip)]
    pub power: Option<PowerTrace>,
    #[serde(skip)]
    pub events: Vec<CoreEvent>,
}

impl RunResult {
    pub fn app(&self, core: usize) -> Option<&AppResult> {
        self.apps.iter().find(|a| a.core == core)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialises")
    }
}

pub struct Simulation {
    pub config: SystemConfig,
    pub cores: [Core; 2],
    pub controller: Controller,
    pub recorder: Option<Recorder>,
    pub cycle: u64,
    names: [Option<String>; 2],
    interrupts: Vec<(u64, usize, Vector)>,
    prev: Vec<CoreEvent>,
    events: Vec<CoreEvent>,
    exceptions: Vec<CoreEvent>,
    audit: LockstepAudit,
}

impl Simulation {
    pub fn new(config: SystemConfig, programs: [Option<&Program>; 2]) -> Result<Simulation, SimError> {
        let mode = config.mode;
        let mk = |k: usize| {
            let mut c = Core::new(k, programs[k].map_or_else(idle_image, |p| p.image(mode).clone()));
            c.check = mode.integrity();
            c.balancing = mode.balancing();
            if let Some(p) = programs[k].filter(|_| mode.integrity()) {
                c.watch = p.inserted_jumps();
            }
            if mode.balancing() {
                c.balance = programs[1 - k].and_then(|p| p.complement(mode)).cloned();
            }
            c
        };
        let mut cores = [mk(0), mk(1)];
        if mode.balancing() && config.policy == Policy::PartnerWaits {
            for k in 0..2 {
                let (me, partner) = (programs[k], programs[1 - k]);
                if me.is_some_and(|p| p.is_balanced()) && partner.is_some_and(|p| !p.is_balanced()) {
                    cores[1 - k].status = Status::Parked;
                }
            }
        }
        let mut interrupts: Vec<(u64, usize, Vector)> = config
            .interrupts
            .iter()
            .map(|i| (i.cycle, i.core, i.vector.clone()))
            .collect();
        interrupts.sort_by_key(|i| std::cmp::Reverse(i.0));
        let mut controller = Controller::new(DelayTable::default());
        controller.trace = config.trace.events;
        let recorder = config.trace.power.then(|| Recorder::new(config.leakage));
        Ok(Simulation {
            names: [0, 1].map(|k| programs[k].map(|p| p.name.clone())),
            config,
            cores,
            controller,
            recorder,
            cycle: 0,
            interrupts,
            prev: Vec::new(),
            events: Vec::new(),
            exceptions: Vec::new(),
            audit: LockstepAudit::default(),
        })
    }

    fn post_interrupts(&mut self) -> Result<(), SimError> {
        while self.interrupts.last().is_some_and(|i| i.0 <= self.cycle) {
            let (_, core, v) = self.interrupts.pop().expect("non-empty");
            let vector = match v {
                Vector::Addr(a) => a,
                Vector::Label(l) => self.cores[core]
                    .memory()
                    .symbols
                    .get(&l)
                    .ok_or_else(|| SimError::Config(format!("no interrupt vector `{l}` on core {core}")))?,
            };
            self.controller.post(Request::Interrupt { core, vector });
        }
        Ok(())
    }

    /// Advances one clock and returns the events both cores produced.
    pub fn step(&mut self) -> Result<&[CoreEvent], SimError> {
        self.post_interrupts()?;
        let c = self.cycle;
        let gates = self.controller.tick(c, &mut self.cores, &self.prev)?;
        self.prev.clear();
        self.cores[0].step(c, gates[0], &mut self.prev);
        let split = self.prev.len();
        self.cores[1].step(c, gates[1], &mut self.prev);
        let (e0, e1) = self.prev.split_at(split);
        if let Some(r) = self.recorder.as_mut() {
            r.record(e0, e1);
        }
        if self.controller.executed == Phase::Balancing {
            let retire = |es: &[CoreEvent]| {
                es.iter().find_map(|e| match e.kind {
                    EventKind::Retire { pc, word } => Some((pc, word)),
                    _ => None,
                })
            };
            let fetch = |es: &[CoreEvent]| {
                es.iter().find_map(|e| match e.kind {
                    EventKind::Fetch { pc, .. } => Some(pc),
                    _ => None,
                })
            };
            let (r0, r1) = (retire(e0), retire(e1));
            let running = self.cores.iter().all(|k| k.status == Status::Running);
            let a = &mut self.audit;
            a.balanced_cycles += 1;
            if r0.is_some() && r0 == r1 {
                a.paired_retires += 1;
            }
            if r0 != r1 || (running && fetch(e0) != fetch(e1)) {
                a.skew_cycles += 1;
                a.first_skew.get_or_insert(c);
            }
        }
        for e in &self.prev {
            if matches!(
                e.kind,
                EventKind::IntegrityException { .. } | EventKind::IllegalInstruction { .. } | EventKind::MemoryFault { .. }
            ) {
                self.exceptions.push(*e);
            }
        }
        if self.config.trace.events {
            self.events.extend_from_slice(&self.prev);
        }
        self.cycle += 1;
        Ok(&self.prev)
    }

    /// All applications have stopped and the controller is at rest.
    pub fn finished(&self) -> bool {
        (0..2).all(|k| self.names[k].is_none() || self.cores[k].is_stopped())
            && self.controller.phase == Phase::Idle
    }

    pub fn run(&mut self) -> Result<RunResult, SimError> {
        while !self.finished() && self.cycle < self.config.max_cycles {
            self.step()?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> RunResult {
        let apps: Vec<AppResult> = (0..2)
            .filter_map(|k| {
                let name = self.names[k].clone()?;
                let c = &self.cores[k];
                let exit = match c.status {
                    Status::Halted => ExitStatus::Halted,
                    Status::Trapped(Trap::Integrity) => ExitStatus::IntegrityException,
                    Status::Trapped(Trap::IllegalInstruction) => ExitStatus::IllegalInstruction,
                    Status::Trapped(Trap::MemoryFault) => ExitStatus::MemoryFault,
                    _ => ExitStatus::Timeout,
                };
                Some(AppResult {
                    core: k,
                    name,
                    exit,
                    cycles: c.stats.stopped_at.map(|s| s + 1),
                    retired: c.stats.retired,
                    chk_retired: c.stats.chk_retired,
                    inserted_jump_retired: c.stats.watched_retired,
                })
            })
            .collect();
        let timed_out = !self.finished();
        let net_runtime = if timed_out {
            None
        } else {
            apps.iter().filter_map(|a| a.cycles).max()
        };
        RunResult {
            mode: self.config.mode,
            policy: self.config.policy,
            cycles: self.cycle,
            timed_out,
            net_runtime,
            apps,
            rounds: self.controller.rounds.clone(),
            accounting: self.controller.accounting.clone(),
            exceptions: self.exceptions.clone(),
            lockstep: self.audit,
            power: self.recorder.as_ref().map(|r| PowerTrace {
                label: format!("{} {}", self.config.mode, self.names.iter().flatten().cloned().collect::<Vec<_>>().join(" | ")),
                ..r.trace.clone()
            }),
            events: self.events.clone(),
        }
    }
}

/// Runs one configuration to completion.
pub fn run(config: &SystemConfig, programs: [Option<&Program>; 2]) -> Result<(RunResult, Simulation), SimError> {
    let mut sim = Simulation::new(config.clone(), programs)?;
    let r = sim.run()?;
    Ok((r, sim))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub net_runtime: u64,
    /// Percent over NON_SECURED.
    pub overhead_pct: f64,
    pub retired: u64,
    pub chk_retired: u64,
    pub inserted_jump_retired: u64,
    pub switch_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    pub apps: Vec<String>,
    pub rows: Vec<ModeRow>,
    /// SECURED_I minus NON_SECURED runtime, per application.
    pub integrity_delta: Vec<u64>,
    /// chk plus inserted-jump retires in SECURED_I, per application.
    pub integrity_added: Vec<u64>,
    /// chk retires over NON_SECURED retires, summed over applications.
    pub chk_fraction: f64,
}

impl OverheadReport {
    /// Each application's integrity cost is exactly the instructions the
    /// instrumenter added.
    pub fn identity_holds(&self) -> bool {
        self.integrity_delta == self.integrity_added
    }

    pub fn row(&self, m: Mode) -> &ModeRow {
        self.rows.iter().find(|r| r.mode == m).expect("all modes present")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("apps: {}\n", self.apps.join(" | "));
        s.push_str("mode         net_cycles  overhead%  retired  chk  jumps  switch\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>10}  {:>9.3}  {:>7}  {:>3}  {:>5}  {:>6}\n",
                r.mode.name(),
                r.net_runtime,
                r.overhead_pct,
                r.retired,
                r.chk_retired,
                r.inserted_jump_retired,
                r.switch_cycles
            ));
        }
        s.push_str(&format!(
            "integrity cost = added instructions: {}\nchk retires / baseline retires = {:.6}\n",
            self.identity_holds(),
            self.chk_fraction
        ));
        s
    }
}

/// Runs the same applications in every mode.
pub fn compare_modes(base: &SystemConfig, programs: [Option<&Program>; 2]) -> Result<OverheadReport, SimError> {
    let mut results = Vec::new();
    for m in Mode::ALL {
        let cfg = SystemConfig {
            mode: m,
            trace: TraceConfig::default(),
            ..base.clone()
        };
        let (r, _) = run(&cfg, programs)?;
        if r.timed_out {
            return Err(SimError::Timeout(cfg.max_cycles));
        }
        results.push(r);
    }
    let base_rt = results[0].net_runtime.unwrap_or(0) as f64;
    let rows = results
        .iter()
        .map(|r| ModeRow {
            mode: r.mode,
            net_runtime: r.net_runtime.unwrap_or(0),
            overhead_pct: 100.0 * (r.net_runtime.unwrap_or(0) as f64 - base_rt) / base_rt,
            retired: r.apps.iter().map(|a| a.retired).sum(),
            chk_retired: r.apps.iter().map(|a| a.chk_retired).sum(),
            inserted_jump_retired: r.apps.iter().map(|a| a.inserted_jump_retired).sum(),
            switch_cycles: r.accounting.balance_total(),
        })
        .collect();
    let (non, sec_i) = (&results[0], &results[1]);
    let cyc = |r: &RunResult, k| r.app(k).and_then(|a| a.cycles).unwrap_or(0);
    let cores: Vec<usize> = non.apps.iter().map(|a| a.core).collect();
    let integrity_delta = cores.iter().map(|&k| cyc(sec_i, k) - cyc(non, k)).collect();
    let integrity_added = cores
        .iter()
        .map(|&k| sec_i.app(k).map_or(0, |a| a.chk_retired + a.inserted_jump_retired))
        .collect();
    let base_retired: u64 = non.apps.iter().map(|a| a.retired).sum();
    let chk: u64 = sec_i.apps.iter().map(|a| a.chk_retired).sum();
    Ok(OverheadReport {
        apps: non.apps.iter().map(|a| a.name.clone()).collect(),
        rows,
        integrity_delta,
        integrity_added,
        chk_fraction: chk as f64 / base_retired.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn mode_flags() {
        let t: Vec<(bool, bool)> = Mode::ALL.iter().map(|m| (m.integrity(), m.balancing())).collect();
        assert_eq!(t, [(false, false), (true, false), (false, true), (true, true)]);
        assert_eq!("secured-i".parse::<Mode>().unwrap(), Mode::SecuredI);
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn config_round_trip() {
        let mut c = SystemConfig::with_mode(Mode::Secured);
        c.interrupts.push(InterruptSpec {
            cycle: 10,
            core: 0,
            vector: Vector::Label("isr".into()),
        });
        c.core1 = Some(AppConfig {
            fixture: Some("toy-aes".into()),
            ..Default::default()
        });
        let back = SystemConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(SystemConfig::from_toml("version = 2\n").is_err());
        assert!(SystemConfig::from_toml("version = 1\nbogus = 3\n").is_err());
    }

    #[test]
    fn config_loads_programs() {
        let dir = std::env::temp_dir().join(format!("secured-sim-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("app.s"), ".text\nmain:\nenc: lw r1, x(r0)\n sw r1, y(r0)\ndone: halt\n.baldata\nx: .word 0\ny: .word 0\n.stack 64\n").unwrap();
        let c = SystemConfig::from_toml(
            "mode = \"SECURED\"\n[core1]\nsource = \"app.s\"\nregion = \"enc:done\"\ninputs = { x = [9] }\n[core2]\nfixture = \"crc-like\"\nisr = true\n",
        )
        .unwrap();
        let [a, b] = c.programs(&dir).unwrap();
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.name, "app");
        assert!(a.is_balanced());
        assert!(b.plain.symbols.get("isr").is_some());
        let (r, sim) = run(&c, [Some(&a), Some(&b)]).unwrap();
        assert!(!r.timed_out);
        assert_eq!(read_symbol(&sim.cores[0], "y", 1).unwrap(), [9]);
        let bad = AppConfig::default().program(0, &dir);
        assert!(bad.is_err());
        assert!("enc".parse::<BalancedRegion>().is_err());
        assert_eq!("a:b:r4, r5".parse::<BalancedRegion>().unwrap().complement.len(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn solo_straight_line() {
        let p = Program::from_fixture(&fixtures::straight_line(10)).unwrap();
        let (r, _) = run(&SystemConfig::default(), [Some(&p), None]).unwrap();
        assert_eq!(r.net_runtime, Some(15));
        assert_eq!(r.apps[0].exit, ExitStatus::Halted);
    }

    #[test]
    fn balanced_round_costs_748() {
        let f = fixtures::toy_des([1, 2, 3, 4]);
        let p = Program::from_fixture(&f).unwrap();
        let (r, sim) = run(&SystemConfig::with_mode(Mode::SecuredM), [Some(&p), None]).unwrap();
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.accounting.balance_total(), 748);
        let rd = r.rounds[0];
        assert_eq!(rd.broadcast - rd.startbal_retired, 377);
        assert_eq!(rd.exit.unwrap() - rd.endbal_retired.unwrap(), 371);
        assert_eq!(r.lockstep.skew_cycles, 0);
        assert!(r.lockstep.paired_retires > 0);
        let out = read_symbol(&sim.cores[0], "bl", 1).unwrap()[0];
        let outr = read_symbol(&sim.cores[0], "br", 1).unwrap()[0];
        let want = fixtures::toy_des_reference([1, 2, 3, 4], 0);
        assert_eq!(((out << 4) | outr) as u8, want);
    }
}
