use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use secured::asm::{assemble, disassemble, parse};
use secured::attack::{measure_detection, sweep_bitflips, InjectionSpec};
use secured::cfg::build_cfg;
use secured::checksum::fold26;
use secured::complement::generate_complement_image;
use secured::controller::DelayTable;
use secured::cpu::{Bank, EventKind};
use secured::fixtures;
use secured::image::MemoryImage;
use secured::instrument::{insert_chk, mark_balancing, BalancedRegion};
use secured::power::{cpa_attack, sbox_hw, KeyRanking, PowerTrace};
use secured::sim::{
    self, compare_modes, idle_image, AppConfig, InterruptSpec, Mode, Policy, Program, RunResult, Simulation,
    SystemConfig, Vector,
};

use crate::{AppArgs, AttackKind, DpaArgs, Global, InjectArgs, ReportArgs, RunArgs};

pub enum Status {
    Ok,
    ExpectationFailed(String),
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn region(s: &str) -> Result<BalancedRegion> {
    s.parse().map_err(|e| anyhow!("{e}"))
}

pub fn asm(input: &Path, output: Option<&Path>, disasm: bool) -> Result<Status> {
    let text = read(input)?;
    let out = if disasm {
        let img = MemoryImage::from_text(&text).with_context(|| input.display().to_string())?;
        disassemble(&img)
    } else {
        assemble(&text).map_err(|e| anyhow!("{}:{e}", input.display()))?.to_text()
    };
    write_out(output, &out)?;
    Ok(Status::Ok)
}

pub fn instrument(
    input: &Path,
    output: Option<&Path>,
    report: Option<&Path>,
    image: Option<&Path>,
    reg: Option<&str>,
) -> Result<Status> {
    let mut src = parse(&read(input)?).map_err(|e| anyhow!("{}:{e}", input.display()))?;
    if let Some(r) = reg {
        src = mark_balancing(&src, &region(r)?)?;
    }
    let inst = insert_chk(&src)?;
    write_out(output, &inst.source.to_string())?;
    if let Some(p) = report {
        fs::write(p, inst.report_jsonl()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = image {
        fs::write(p, inst.image.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("{} blocks, {} inserted jumps", inst.chk_count(), inst.inserted_jumps());
    Ok(Status::Ok)
}

pub fn complement(input: &Path, reg: &str, output: Option<&Path>) -> Result<Status> {
    let img = MemoryImage::from_text(&read(input)?).with_context(|| input.display().to_string())?;
    let out = generate_complement_image(&img, &region(reg)?)?;
    write_out(output, &out.to_text())?;
    Ok(Status::Ok)
}

/// Configuration file (if any) with global overrides, and the directory its
/// relative paths resolve against.
fn load_config(g: &Global) -> Result<(SystemConfig, PathBuf)> {
    let (mut c, dir) = match &g.config {
        Some(p) => {
            let c = SystemConfig::from_toml(&read(p)?).with_context(|| p.display().to_string())?;
            let dir = p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            (c, dir)
        }
        None => (SystemConfig::default(), PathBuf::from(".")),
    };
    if let Some(m) = g.mode {
        c.mode = m;
    }
    if let Some(s) = g.seed {
        c.seed = s;
        c.leakage.seed = s;
    }
    Ok((c, dir))
}

fn app_config(spec: &str, reg: Option<&String>, isr: bool) -> Result<AppConfig> {
    let mut a = AppConfig {
        isr,
        ..Default::default()
    };
    if fixtures::NAMES.contains(&spec) {
        if reg.is_some() {
            bail!("fixture `{spec}` has a fixed region");
        }
        a.fixture = Some(spec.to_string());
    } else {
        let p = std::path::absolute(spec).with_context(|| spec.to_string())?;
        a.source = Some(p.to_string_lossy().into_owned());
        a.region = reg.cloned();
    }
    Ok(a)
}

fn apply_apps(c: &mut SystemConfig, a: &AppArgs) -> Result<()> {
    if let Some(s) = &a.app1 {
        c.core1 = Some(app_config(s, a.region1.as_ref(), a.isr)?);
    }
    if let Some(s) = &a.app2 {
        c.core2 = Some(app_config(s, a.region2.as_ref(), a.isr)?);
    }
    if a.isr {
        for app in [&mut c.core1, &mut c.core2].into_iter().flatten() {
            app.isr = true;
        }
    }
    Ok(())
}

fn load_programs(c: &SystemConfig, dir: &Path) -> Result<[Option<Program>; 2]> {
    let p = c.programs(dir)?;
    if p.iter().all(Option::is_none) {
        bail!("no application: pass --app1/--app2 or a configuration with [core1] or [core2]");
    }
    Ok(p)
}

fn refs(p: &[Option<Program>; 2]) -> [Option<&Program>; 2] {
    [p[0].as_ref(), p[1].as_ref()]
}

fn parse_interrupt(s: &str) -> Result<InterruptSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let [cycle, core, vector] = parts[..] else {
        bail!("interrupt `{s}` is not cycle:core:vector");
    };
    let core = match core {
        "0" => 0,
        "1" => 1,
        _ => bail!("interrupt core must be 0 or 1, got `{core}`"),
    };
    let vector = match crate::parse_u32(vector) {
        Ok(a) => Vector::Addr(a),
        Err(_) => Vector::Label(vector.to_string()),
    };
    Ok(InterruptSpec {
        cycle: cycle.parse().with_context(|| format!("interrupt cycle `{cycle}`"))?,
        core,
        vector,
    })
}

fn summary(r: &RunResult) -> String {
    let mut s = String::new();
    let net = r.net_runtime.map_or("-".to_string(), |n| n.to_string());
    let _ = writeln!(s, "mode {}  policy {:?}  cycles {}  net {net}", r.mode, r.policy, r.cycles);
    if r.timed_out {
        let _ = writeln!(s, "timed out");
    }
    for a in &r.apps {
        let _ = writeln!(
            s,
            "core{} {:<12} {:<20} cycles {:>7}  retired {:>6}  chk {:>5}  jumps {:>4}",
            a.core,
            a.name,
            format!("{:?}", a.exit).to_lowercase(),
            a.cycles.map_or("-".to_string(), |c| c.to_string()),
            a.retired,
            a.chk_retired,
            a.inserted_jump_retired
        );
    }
    for (i, rd) in r.rounds.iter().enumerate() {
        let _ = write!(
            s,
            "round {}: requester core{}, startBal {}, broadcast {} (+{})",
            i + 1,
            rd.requester,
            rd.startbal_retired,
            rd.broadcast,
            rd.broadcast - rd.startbal_retired
        );
        if let (Some(e), Some(x)) = (rd.endbal_retired, rd.exit) {
            let _ = write!(s, ", endBal {e}, exit {x} (+{})", x - e);
        }
        s.push('\n');
    }
    let a = &r.accounting;
    if !r.rounds.is_empty() {
        let _ = writeln!(
            s,
            "switching: flush {} saving {} broadcast {} restoring {} exit {} = {}",
            a.flush,
            a.saving,
            a.broadcast,
            a.restoring,
            a.exit,
            a.balance_total()
        );
        let l = &r.lockstep;
        let _ = writeln!(
            s,
            "lockstep: {} balanced cycles, {} paired retires, {} skewed cycles",
            l.balanced_cycles, l.paired_retires, l.skew_cycles
        );
    }
    if a.interrupt_switch > 0 {
        let _ = writeln!(
            s,
            "interrupts: {} served, drain {} switch {} exit {}",
            a.interrupt_switch, a.interrupt_flush, a.interrupt_switch, a.interrupt_exit
        );
    }
    for e in &r.exceptions {
        let _ = writeln!(s, "exception: {}", serde_json::to_string(e).expect("event serialises"));
    }
    s
}

pub fn run(g: &Global, a: &RunArgs) -> Result<Status> {
    let (mut c, dir) = load_config(g)?;
    apply_apps(&mut c, &a.apps)?;
    if let Some(p) = a.policy {
        c.policy = p.into();
    }
    for i in &a.interrupts {
        c.interrupts.push(parse_interrupt(i)?);
    }
    c.trace.events |= a.events;
    c.trace.power |= a.power;
    let progs = load_programs(&c, &dir)?;
    let (r, _) = sim::run(&c, refs(&progs))?;
    print!("{}", summary(&r));
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("result.json"), r.to_json() + "\n")?;
        if c.trace.events {
            let mut s = String::new();
            for e in &r.events {
                s.push_str(&serde_json::to_string(e)?);
                s.push('\n');
            }
            fs::write(out.join("events.jsonl"), s)?;
        }
        if let Some(t) = &r.power {
            fs::write(out.join("trace.csv"), t.to_csv(&c.leakage))?;
        }
    }
    if let Some(n) = a.expect_switch {
        if r.rounds.is_empty() {
            return Ok(Status::ExpectationFailed("no balance round ran".into()));
        }
        for rd in &r.rounds {
            let (Some(e), Some(x)) = (rd.endbal_retired, rd.exit) else {
                return Ok(Status::ExpectationFailed("a balance round did not finish".into()));
            };
            let cost = (rd.broadcast - rd.startbal_retired) + (x - e);
            if cost != n {
                return Ok(Status::ExpectationFailed(format!("round cost {cost} cycles, expected {n}")));
            }
        }
        if r.accounting.balance_total() != n * r.rounds.len() as u64 {
            return Ok(Status::ExpectationFailed(format!(
                "controller accounted {} cycles over {} rounds",
                r.accounting.balance_total(),
                r.rounds.len()
            )));
        }
    }
    if a.expect_lockstep && (r.rounds.is_empty() || r.lockstep.skew_cycles > 0) {
        return Ok(Status::ExpectationFailed(format!(
            "{} skewed cycles over {} rounds",
            r.lockstep.skew_cycles,
            r.rounds.len()
        )));
    }
    Ok(Status::Ok)
}

fn first_program(g: &Global, apps: &AppArgs) -> Result<(SystemConfig, Program)> {
    let (mut c, dir) = load_config(g)?;
    apply_apps(&mut c, apps)?;
    let [a, b] = load_programs(&c, &dir)?;
    let p = a.or(b).expect("checked non-empty");
    Ok((c, p))
}

/// Cycle budget per injected run: generous against the clean run, so
/// corrupted loop bounds end as timeouts quickly.
fn budget(c: &SystemConfig, p: &Program) -> Result<u64> {
    let (r, _) = sim::run(c, [Some(p), None])?;
    if r.timed_out {
        bail!("{} does not finish within {} cycles", p.name, c.max_cycles);
    }
    Ok((r.cycles * 4 + 1000).min(c.max_cycles))
}

pub fn inject(g: &Global, a: &InjectArgs) -> Result<Status> {
    let (c, p) = first_program(g, &a.apps)?;
    let max = budget(&c, &p)?;
    if a.sweep {
        let rep = sweep_bitflips(&p, c.mode, max)?;
        write_out(a.output.as_deref(), &rep.to_csv())?;
        let s = &rep.summary;
        let late = rep
            .entries
            .iter()
            .filter(|e| e.in_executed_block && e.report.outcome.detected() && !e.within_block())
            .count();
        let missed = rep
            .entries
            .iter()
            .filter(|e| e.in_executed_block && !e.report.outcome.detected())
            .count();
        eprintln!(
            "{} {}: {} flips, {} in executed blocks; integrity {}, illegal {}, silent {} (+{} unexecuted), timeouts {}; detection {:.2}%; max latency {} instructions; {late} late",
            p.name,
            c.mode,
            s.flips,
            s.executed_flips,
            s.integrity,
            s.illegal,
            s.silent_executed,
            s.silent_unexecuted,
            s.timeouts,
            100.0 * s.detection_rate(),
            s.max_latency_instructions,
        );
        if a.expect_detect && (missed > 0 || late > 0) {
            return Ok(Status::ExpectationFailed(format!(
                "{missed} executed flips undetected, {late} detected past their block"
            )));
        }
        return Ok(Status::Ok);
    }
    let spec = match (a.addr, a.bit, a.word, a.redirect) {
        (Some(addr), Some(bit), None, None) => InjectionSpec::bit_flip(addr, bit),
        (Some(addr), None, Some(w), None) => InjectionSpec::word_replace(addr, w),
        (None, None, None, Some(pc)) => InjectionSpec::pc_redirect(a.at, pc),
        _ => bail!("give --sweep, --addr with --bit or --word, or --redirect"),
    }
    .at(a.at);
    let r = measure_detection(&p, c.mode, &spec, max)?;
    let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = String::from("injection,outcome,detection_pc,latency_instructions,latency_cycles,executed\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        serde_json::to_string(&spec.injection)?.replace(',', ";"),
        r.outcome.name(),
        r.detection_pc.map_or(String::new(), |p| format!("{p:#010x}")),
        opt(r.latency_instructions),
        opt(r.latency_cycles),
        r.executed
    );
    write_out(a.output.as_deref(), &csv)?;
    if a.expect_detect && r.executed && !r.detected() {
        return Ok(Status::ExpectationFailed(format!("outcome {}", r.outcome.name())));
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct DpaReport {
    attack: &'static str,
    mode: Mode,
    traces: usize,
    byte: usize,
    median_rank: f64,
    ranks: Vec<usize>,
    flat: Option<bool>,
    repetitions: Vec<KeyRanking>,
}

fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

fn rank_ok(spec: &str, rank: f64) -> Result<bool> {
    let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("rank bound `{t}`"));
    Ok(match spec.split_once(':') {
        Some((lo, hi)) => rank >= num(lo)? && rank <= num(hi)?,
        None => rank <= num(spec)?,
    })
}

pub fn dpa(g: &Global, a: &DpaArgs) -> Result<Status> {
    let (mut c, _) = load_config(g)?;
    if a.byte > 3 {
        bail!("toy-AES has key bytes 0..=3");
    }
    if a.traces < 2 || a.reps == 0 {
        bail!("need at least two traces and one repetition");
    }
    c.mode = match a.attack {
        AttackKind::Single if c.mode.balancing() => Mode::NonSecured,
        AttackKind::Combined if !c.mode.balancing() => Mode::Secured,
        _ => c.mode,
    };
    c.trace.power = true;
    if let Some(s) = a.sigma {
        c.leakage.sigma = s;
    }
    c.leakage.validate().map_err(|e| anyhow!(e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut reps = Vec::new();
    let mut flat = true;
    for rep in 0..a.reps {
        let key: [u8; 4] = rng.random();
        let pts: Vec<[u8; 4]> = (0..a.traces).map(|_| rng.random()).collect();
        let base = Program::from_fixture(&fixtures::toy_aes(key))?;
        let runs: Vec<(PowerTrace, Option<(usize, usize)>)> = pts
            .par_iter()
            .enumerate()
            .map(|(i, pt)| -> Result<_> {
                let mut p = base.clone();
                for (j, b) in pt.iter().enumerate() {
                    p.set_input(&format!("p{j}"), &[*b as u32])?;
                }
                let mut cfg = c.clone();
                cfg.leakage.seed = c.leakage.seed.wrapping_add((rep * a.traces + i) as u64);
                let (r, _) = sim::run(&cfg, [Some(&p), None])?;
                let window = r
                    .rounds
                    .first()
                    .and_then(|rd| Some((rd.broadcast as usize + 1, rd.endbal_retired? as usize + 1)));
                let mut t = r.power.expect("power recorded");
                t.plaintext = Some(pt.to_vec());
                t.label = format!("toy-aes {} trace {i}", c.mode);
                Ok((t, window))
            })
            .collect::<Result<_>>()?;
        if a.attack == AttackKind::Combined {
            let w: Vec<Vec<f64>> = runs
                .iter()
                .map(|(t, w)| w.map_or_else(Vec::new, |(f, e)| t.window(f, e).combined))
                .collect();
            flat &= !w[0].is_empty() && w.iter().all(|x| *x == w[0]);
        }
        if rep == 0 {
            if let Some(dir) = &a.trace_dir {
                fs::create_dir_all(dir)?;
                for (i, (t, _)) in runs.iter().enumerate() {
                    fs::write(dir.join(format!("trace_{i:04}.csv")), t.to_csv(&c.leakage))?;
                }
            }
        }
        let traces: Vec<Vec<f64>> = runs
            .into_iter()
            .map(|(t, _)| match a.attack {
                AttackKind::Single => t.cores[0].clone(),
                AttackKind::Combined => t.combined,
            })
            .collect();
        let pb: Vec<u8> = pts.iter().map(|p| p[a.byte]).collect();
        let r = cpa_attack(&traces, &pb, sbox_hw, Some(key[a.byte]), c.seed.wrapping_add(rep as u64))?;
        reps.push(r);
    }
    let ranks: Vec<usize> = reps.iter().map(|r| r.true_rank.expect("true key given")).collect();
    let med = median(&ranks);
    let report = DpaReport {
        attack: match a.attack {
            AttackKind::Single => "single",
            AttackKind::Combined => "combined",
        },
        mode: c.mode,
        traces: a.traces,
        byte: a.byte,
        median_rank: med,
        ranks: ranks.clone(),
        flat: (a.attack == AttackKind::Combined).then_some(flat),
        repetitions: reps,
    };
    let json = match a.output {
        Some(_) => serde_json::to_string_pretty(&report)?,
        None => serde_json::to_string(&report)?,
    };
    write_out(a.output.as_deref(), &(json + "\n"))?;
    eprintln!("{} attack, {} traces x {} reps: median true-key rank {med}", report.attack, a.traces, a.reps);
    if let Some(spec) = &a.expect_rank {
        if !rank_ok(spec, med)? {
            return Ok(Status::ExpectationFailed(format!("median rank {med} outside {spec}")));
        }
    }
    if a.expect_flat && !(a.attack == AttackKind::Combined && flat) {
        return Ok(Status::ExpectationFailed("balanced combined traces differ".into()));
    }
    Ok(Status::Ok)
}

/// Fixture pairs the report runs when given nothing else.
const SUITE: [(&str, Option<&str>); 6] = [
    ("toy-des", Some("adpcm-like")),
    ("toy-aes", Some("crc-like")),
    ("xor-cipher", Some("sweep")),
    ("adpcm-like", Some("crc-like")),
    ("sweep", None),
    ("crc-like", Some("sweep")),
];

fn solo_runtime(c: &SystemConfig, p: &Program, m: Mode) -> Result<RunResult> {
    let cfg = SystemConfig {
        mode: m,
        ..c.clone()
    };
    Ok(sim::run(&cfg, [Some(p), None])?.0)
}

/// Checks the runtime composition rules for one pair; `None` when they do
/// not apply.
fn composition(c: &SystemConfig, p: &[Option<Program>; 2], net: u64) -> Result<Option<String>> {
    let d = DelayTable::default();
    match (&p[0], &p[1]) {
        (Some(a), Some(b)) if a.is_balanced() != b.is_balanced() && c.policy == Policy::PartnerWaits => {
            let (bal, other) = if a.is_balanced() { (a, b) } else { (b, a) };
            let alone = solo_runtime(c, bal, Mode::SecuredM)?;
            let e = alone.rounds[0].endbal_retired.ok_or_else(|| anyhow!("region never ended"))?;
            let t_bal = e + 1 - d.entry();
            let t_other = solo_runtime(c, other, Mode::SecuredM)?.net_runtime.unwrap_or(0);
            let want = t_bal + d.total() + t_other;
            Ok(Some(if net == want {
                String::new()
            } else {
                format!("net {net} != {t_bal} + {} + {t_other}", d.total())
            }))
        }
        _ => Ok(None),
    }
}

pub fn report(g: &Global, a: &ReportArgs) -> Result<Status> {
    let (base, dir) = load_config(g)?;
    let mut pairs: Vec<(SystemConfig, [Option<Program>; 2])> = Vec::new();
    for path in &a.configs {
        let c = SystemConfig::from_toml(&read(path)?).with_context(|| path.display().to_string())?;
        let d = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let p = load_programs(&c, &d)?;
        pairs.push((c, p));
    }
    for spec in &a.pairs {
        let mut c = base.clone();
        let mut it = spec.split(',');
        c.core1 = it.next().map(|s| app_config(s.trim(), None, false)).transpose()?;
        c.core2 = it.next().map(|s| app_config(s.trim(), None, false)).transpose()?;
        let p = load_programs(&c, &dir)?;
        pairs.push((c, p));
    }
    if pairs.is_empty() {
        for (x, y) in SUITE {
            let mut c = base.clone();
            c.core1 = Some(app_config(x, None, false)?);
            c.core2 = y.map(|s| app_config(s, None, false)).transpose()?;
            let p = load_programs(&c, &dir)?;
            pairs.push((c, p));
        }
    }
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for (c, p) in &pairs {
        let rep = compare_modes(c, refs(p))?;
        let n = |m| rep.row(m).net_runtime;
        let (non, i, m, s) = (n(Mode::NonSecured), n(Mode::SecuredI), n(Mode::SecuredM), n(Mode::Secured));
        let label = rep.apps.join("+");
        if a.expect_order {
            let balanced = p.iter().flatten().any(Program::is_balanced);
            if !(non <= i && non <= m && m <= s) {
                failures.push(format!("{label}: ordering {non} {i} {m} {s}"));
            }
            if !balanced && s != i {
                failures.push(format!("{label}: SECURED {s} != SECURED_I {i}"));
            }
            if !rep.identity_holds() {
                failures.push(format!("{label}: integrity cost {:?} != added {:?}", rep.integrity_delta, rep.integrity_added));
            }
        }
        if a.expect_compose {
            if let Some(e) = composition(c, p, m)? {
                if !e.is_empty() {
                    failures.push(format!("{label}: {e}"));
                }
            } else if !p.iter().flatten().any(Program::is_balanced) {
                for mode in Mode::ALL {
                    let solo: Vec<u64> = p
                        .iter()
                        .flatten()
                        .map(|q| solo_runtime(c, q, mode).map(|r| r.net_runtime.unwrap_or(0)))
                        .collect::<Result<_>>()?;
                    let want = solo.iter().copied().max().unwrap_or(0);
                    if n(mode) != want {
                        failures.push(format!("{label}: {mode} net {} != max {want}", n(mode)));
                    }
                }
            }
        }
        if !a.json {
            println!("{}", rep.to_table());
        }
        reports.push(rep);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    }
    if failures.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::ExpectationFailed(failures.join("; ")))
    }
}

type BlockTable = BTreeMap<u32, (u32, u32)>;

/// CFI address -> (pre-fold accumulator, chk payload) for every checked block.
fn static_table(img: &MemoryImage) -> Result<BlockTable> {
    Ok(build_cfg(img)?
        .blocks
        .iter()
        .filter_map(|b| {
            let acc = b.body().iter().fold(0u32, |a, &w| a.rotate_left(1) ^ w);
            Some((b.last_addr(), (acc, b.chk_payload()?)))
        })
        .collect())
}

pub fn verify(g: &Global, apps: &AppArgs) -> Result<Status> {
    let (c, dir) = load_config(g)?;
    let mut c = c;
    apply_apps(&mut c, apps)?;
    let progs = load_programs(&c, &dir)?;
    let idle = static_table(&idle_image())?;
    let mut bad = Vec::new();
    for p in progs.iter().flatten() {
        let own = static_table(p.image(Mode::SecuredI))?;
        let comp = p.complement(Mode::Secured).map(static_table).transpose()?;
        let modes: &[Mode] = if comp.is_some() { &[Mode::SecuredI, Mode::Secured] } else { &[Mode::SecuredI] };
        let mut checks = 0;
        let mut seen = BTreeSet::new();
        for &m in modes {
            let cfg = SystemConfig {
                mode: m,
                ..SystemConfig::default()
            };
            let mut sim = Simulation::new(cfg, [Some(p), None])?;
            while !sim.finished() && sim.cycle < c.max_cycles {
                let events = sim.step()?.to_vec();
                for e in events {
                    let EventKind::CfiCheck { pc, acc, .. } = e.kind else { continue };
                    let balance = sim.cores[e.core].bank == Bank::Balance;
                    let table = match (e.core, balance) {
                        (0, false) => &own,
                        (1, true) => comp.as_ref().unwrap_or(&idle),
                        _ => &idle,
                    };
                    match table.get(&pc) {
                        Some(&(want, payload)) if want == acc && fold26(acc).value() == payload => {
                            checks += 1;
                            seen.insert((e.core, balance, pc));
                        }
                        Some(&(want, payload)) => bad.push(format!(
                            "{}: block ending {pc:#010x} accumulated {acc:#010x}, static {want:#010x}, chk {payload:#09x}",
                            p.name
                        )),
                        None => bad.push(format!("{}: CFI at {pc:#010x} ends no checked block", p.name)),
                    }
                }
            }
        }
        let total = own.len() + comp.as_ref().map_or(0, BTreeMap::len);
        println!(
            "{}: {checks} CFI checks over {} of {total} blocks agree with the static checksums",
            p.name,
            seen.len()
        );
    }
    if bad.is_empty() {
        Ok(Status::Ok)
    } else {
        for b in &bad {
            eprintln!("{b}");
        }
        Ok(Status::ExpectationFailed(format!("{} mismatched blocks", bad.len())))
    }
}

pub fn fixture(g: &Global, name: Option<&str>, output: Option<&Path>) -> Result<Status> {
    match name {
        None => {
            for n in fixtures::NAMES {
                println!("{n}");
            }
        }
        Some(n) => {
            let f = fixtures::by_name(n, g.seed.unwrap_or(0)).ok_or_else(|| anyhow!("unknown fixture `{n}`"))?;
            let mut text = f.source.clone();
            if let Some(r) = &f.region {
                text = format!("# balanced region {}:{}\n{text}", r.start, r.end);
            }
            write_out(output, &text)?;
        }
    }
    Ok(Status::Ok)
}
