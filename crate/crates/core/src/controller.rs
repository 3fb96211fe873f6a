//! The controller shared by both cores.
//!
//! It starts and stops balancing, saves and restores the preempted core's
//! context with fixed per-register costs, writes both PCs in one cycle, and
//! routes interrupts in and out of balancing. It is ticked once per cycle
//! before the cores, sees the events the cores produced in the previous
//! cycle, and answers with one [`Gate`] per core.
//!
//! Phase transitions go through [`next_phase`], a pure function over the
//! finite phase graph, so the graph can be model-checked on its own.

use std::collections::VecDeque;

use serde::Serialize;

use crate::cpu::{Bank, Core, CoreEvent, EventKind, Gate, Role, Status, CONTEXT_WORDS};
use crate::error::SimError;

/// Cycle costs of the controller's bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DelayTable {
    pub save_per_reg: u64,
    pub restore_per_reg: u64,
    pub flush: u64,
    pub switch: u64,
    pub exit: u64,
}

impl Default for DelayTable {
    fn default() -> Self {
        DelayTable {
            save_per_reg: 10,
            restore_per_reg: 10,
            flush: 6,
            switch: 1,
            exit: 1,
        }
    }
}

impl DelayTable {
    pub fn store_regfile(&self) -> u64 {
        32 * self.save_per_reg
    }
    pub fn store_pc_hi_lo(&self) -> u64 {
        3 * self.save_per_reg
    }
    pub fn store_hashed(&self) -> u64 {
        2 * self.save_per_reg
    }
    pub fn saving(&self) -> u64 {
        CONTEXT_WORDS as u64 * self.save_per_reg
    }
    pub fn restoring(&self) -> u64 {
        CONTEXT_WORDS as u64 * self.restore_per_reg
    }
    /// startBal retire to the cycle both PCs are written.
    pub fn entry(&self) -> u64 {
        self.flush + self.saving() + self.switch
    }
    /// endBal retire to the cycle the victim's PC is written.
    pub fn exit_cost(&self) -> u64 {
        self.restoring() + self.exit
    }
    pub fn total(&self) -> u64 {
        self.entry() + self.exit_cost()
    }

    /// One row per bookkeeping item of a balance round trip.
    pub fn rows(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("store register-file", self.store_regfile()),
            ("store pc, hi, lo", self.store_pc_hi_lo()),
            ("store inc-hashed, hashed", self.store_hashed()),
            ("restore register-file", 32 * self.restore_per_reg),
            ("restore pc, hi, lo", 3 * self.restore_per_reg),
            ("restore inc-hashed, hashed", 2 * self.restore_per_reg),
            ("flush pipelines", self.flush),
            ("interrupt to switch", self.switch),
            ("exit the interrupt", self.exit),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Balance { requester: usize },
    Interrupt {
        target: usize,
        during_balance: bool,
        /// endBal retired while draining for the interrupt.
        balance_over: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    FlushWait { purpose: Purpose },
    Saving,
    Broadcast,
    Balancing,
    IntSwitch { target: usize, during_balance: bool },
    IntService { target: usize, during_balance: bool },
    IntExit { target: usize, during_balance: bool },
    Restoring,
    Exit,
}

impl Phase {
    /// Length of a timed phase; `None` for phases that wait on an input.
    pub fn duration(self, d: &DelayTable) -> Option<u64> {
        match self {
            Phase::Idle | Phase::Balancing | Phase::IntService { .. } => None,
            Phase::FlushWait { .. } => Some(d.flush),
            Phase::Saving => Some(d.saving()),
            Phase::Restoring => Some(d.restoring()),
            Phase::Broadcast | Phase::IntSwitch { .. } => Some(d.switch),
            Phase::IntExit { .. } | Phase::Exit => Some(d.exit),
        }
    }

    pub fn is_balanced(self) -> bool {
        match self {
            Phase::Broadcast | Phase::Balancing | Phase::Restoring => true,
            Phase::FlushWait { purpose } => matches!(
                purpose,
                Purpose::Interrupt {
                    during_balance: true,
                    ..
                }
            ),
            Phase::IntSwitch { during_balance, .. }
            | Phase::IntService { during_balance, .. }
            | Phase::IntExit { during_balance, .. } => during_balance,
            _ => false,
        }
    }
}

/// Input to the phase graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stimulus {
    /// The current timed phase ran out.
    Expire,
    StartBal(usize),
    EndBal,
    Nmi(usize),
    Irq(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    Stay,
    Go(Phase),
    /// Not accepted now; the request waits in the queue.
    Queue,
    Violation(&'static str),
}

/// The phase graph.
pub fn next_phase(phase: Phase, s: Stimulus) -> Transition {
    use Stimulus::*;
    use Transition::*;
    match (phase, s) {
        (Phase::Idle, StartBal(c)) => Go(Phase::FlushWait {
            purpose: Purpose::Balance { requester: c },
        }),
        (Phase::Idle, Irq(t)) => Go(Phase::FlushWait {
            purpose: Purpose::Interrupt {
                target: t,
                during_balance: false,
                balance_over: false,
            },
        }),
        (Phase::Balancing, Irq(t)) => Go(Phase::FlushWait {
            purpose: Purpose::Interrupt {
                target: t,
                during_balance: true,
                balance_over: false,
            },
        }),
        (Phase::Balancing, EndBal) => Go(Phase::Restoring),
        (
            Phase::FlushWait {
                purpose:
                    Purpose::Interrupt {
                        target,
                        during_balance: true,
                        ..
                    },
            },
            EndBal,
        ) => Go(Phase::FlushWait {
            purpose: Purpose::Interrupt {
                target,
                during_balance: true,
                balance_over: true,
            },
        }),
        (_, EndBal) => Violation("endBal outside balancing"),
        (Phase::IntService { target, during_balance }, Nmi(c)) if c == target => {
            Go(Phase::IntExit { target, during_balance })
        }
        (_, Nmi(_)) => Violation("iret without an interrupt in service"),
        (_, StartBal(_) | Irq(_)) => Queue,
        (Phase::Idle | Phase::Balancing | Phase::IntService { .. }, Expire) => Stay,
        (Phase::FlushWait { purpose }, Expire) => Go(match purpose {
            Purpose::Balance { .. } => Phase::Saving,
            Purpose::Interrupt {
                balance_over: true, ..
            } => Phase::Restoring,
            Purpose::Interrupt {
                target,
                during_balance,
                ..
            } => Phase::IntSwitch {
                target,
                during_balance,
            },
        }),
        (Phase::Saving, Expire) => Go(Phase::Broadcast),
        (Phase::Broadcast, Expire) => Go(Phase::Balancing),
        (Phase::IntSwitch { target, during_balance }, Expire) => {
            Go(Phase::IntService { target, during_balance })
        }
        (Phase::IntExit { during_balance, .. }, Expire) => Go(if during_balance {
            Phase::Balancing
        } else {
            Phase::Idle
        }),
        (Phase::Restoring, Expire) => Go(Phase::Exit),
        (Phase::Exit, Expire) => Go(Phase::Idle),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    StartBal { core: usize, pc: u32, retired: u64 },
    Interrupt { core: usize, vector: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerEventKind {
    Phase { from: Phase, to: Phase, countdown: u64 },
    PcWrite { core: usize, pc: u32 },
    ContextStore { core: usize, index: usize, addr: u32, value: u32 },
    ContextLoad { core: usize, index: usize, addr: u32, value: u32 },
    InterruptDropped { core: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ControllerEvent {
    pub cycle: u64,
    #[serde(flatten)]
    pub kind: ControllerEventKind,
}

/// Timeline of one balance round trip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BalanceRound {
    pub requester: usize,
    pub victim: usize,
    pub startbal_retired: u64,
    pub broadcast: u64,
    pub endbal_retired: Option<u64>,
    pub exit: Option<u64>,
}

/// Cycles the controller spent per bookkeeping item.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Accounting {
    pub flush: u64,
    pub saving: u64,
    pub broadcast: u64,
    pub restoring: u64,
    pub exit: u64,
    pub interrupt_flush: u64,
    pub interrupt_switch: u64,
    pub interrupt_exit: u64,
}

impl Accounting {
    pub fn balance_total(&self) -> u64 {
        self.flush + self.saving + self.broadcast + self.restoring + self.exit
    }
}

/// State of the preempted core that lives outside its registers.
#[derive(Clone, Copy, Debug)]
struct VictimMicro {
    status: Status,
    open: u32,
}

#[derive(Clone, Debug)]
struct BalanceCtx {
    requester: usize,
    victim: usize,
    entry: u32,
    sp: u32,
    saved: Vec<u32>,
    micro: Option<VictimMicro>,
}

#[derive(Clone, Copy, Debug)]
struct InterruptCtx {
    target: usize,
    vector: u32,
    resume: [u32; 2],
}

#[derive(Clone, Debug)]
pub struct Controller {
    pub delays: DelayTable,
    pub phase: Phase,
    /// Phase that ran in the most recent tick.
    pub executed: Phase,
    countdown: u64,
    elapsed: u64,
    queue: VecDeque<Request>,
    balance: Option<BalanceCtx>,
    interrupt: Option<InterruptCtx>,
    pub rounds: Vec<BalanceRound>,
    pub accounting: Accounting,
    /// Filled only when `trace` is set.
    pub events: Vec<ControllerEvent>,
    pub trace: bool,
}

impl Default for Controller {
    fn default() -> Self {
        Controller::new(DelayTable::default())
    }
}

fn other(c: usize) -> usize {
    1 - c
}

impl Controller {
    pub fn new(delays: DelayTable) -> Controller {
        Controller {
            delays,
            phase: Phase::Idle,
            executed: Phase::Idle,
            countdown: 0,
            elapsed: 0,
            queue: VecDeque::new(),
            balance: None,
            interrupt: None,
            rounds: Vec::new(),
            accounting: Accounting::default(),
            events: Vec::new(),
            trace: false,
        }
    }

    pub fn countdown(&self) -> u64 {
        self.countdown
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Context words saved for the current round, in save order.
    pub fn saved_context(&self) -> Option<&[u32]> {
        self.balance
            .as_ref()
            .filter(|b| b.saved.len() == CONTEXT_WORDS)
            .map(|b| b.saved.as_slice())
    }

    /// Stack address of context word `i` below stack pointer `sp`.
    pub fn save_slot(sp: u32, i: usize) -> u32 {
        sp.wrapping_sub(4 * (i as u32 + 1))
    }

    pub fn post(&mut self, r: Request) {
        self.queue.push_back(r);
    }

    fn log(&mut self, cycle: u64, kind: ControllerEventKind) {
        if self.trace {
            self.events.push(ControllerEvent { cycle, kind });
        }
    }

    fn enter(&mut self, cycle: u64, to: Phase) {
        let from = self.phase;
        self.phase = to;
        if matches!((from, to), (Phase::FlushWait { .. }, Phase::FlushWait { .. })) {
            // Only the purpose changed; the drain keeps its timing.
            return self.log(cycle, ControllerEventKind::Phase { from, to, countdown: self.countdown });
        }
        self.elapsed = 0;
        self.countdown = match to {
            Phase::FlushWait { .. } | Phase::Saving | Phase::Restoring => {
                to.duration(&self.delays).unwrap_or(0)
            }
            _ => 0,
        };
        let countdown = self.countdown;
        self.log(cycle, ControllerEventKind::Phase { from, to, countdown });
    }

    fn violation(cycle: u64, msg: &str) -> SimError {
        SimError::Protocol {
            cycle,
            msg: msg.to_string(),
        }
    }

    fn apply(&mut self, cycle: u64, s: Stimulus) -> Result<bool, SimError> {
        match next_phase(self.phase, s) {
            Transition::Go(p) => {
                self.enter(cycle, p);
                Ok(true)
            }
            Transition::Stay | Transition::Queue => Ok(false),
            Transition::Violation(m) => Err(Self::violation(cycle, m)),
        }
    }

    fn write_pc(&mut self, cycle: u64, core: &mut Core, pc: u32) {
        core.write_pc(pc);
        self.log(cycle, ControllerEventKind::PcWrite { core: core.id, pc });
    }

    /// Picks the first queued request that can start now.
    fn dequeue(&mut self, cycle: u64, cores: &mut [Core; 2]) -> Result<(), SimError> {
        let mut i = 0;
        while i < self.queue.len() {
            if !matches!(self.phase, Phase::Idle | Phase::Balancing) {
                return Ok(());
            }
            let r = self.queue[i];
            match r {
                Request::StartBal { core, pc, retired } if self.phase == Phase::Idle => {
                    self.queue.remove(i);
                    self.apply(cycle, Stimulus::StartBal(core))?;
                    self.balance = Some(BalanceCtx {
                        requester: core,
                        victim: other(core),
                        entry: pc.wrapping_add(4),
                        sp: 0,
                        saved: Vec::new(),
                        micro: None,
                    });
                    self.rounds.push(BalanceRound {
                        requester: core,
                        victim: other(core),
                        startbal_retired: retired,
                        ..Default::default()
                    });
                    return Ok(());
                }
                Request::Interrupt { core, vector } => {
                    let c = &cores[core];
                    if c.is_stopped() {
                        self.queue.remove(i);
                        self.log(cycle, ControllerEventKind::InterruptDropped { core });
                        continue;
                    }
                    if c.in_interrupt || c.status != Status::Running {
                        i += 1;
                        continue;
                    }
                    self.queue.remove(i);
                    self.apply(cycle, Stimulus::Irq(core))?;
                    self.interrupt = Some(InterruptCtx {
                        target: core,
                        vector,
                        resume: [0; 2],
                    });
                    return Ok(());
                }
                _ => i += 1,
            }
        }
        Ok(())
    }

    /// One clock. `inputs` are the core events of the previous cycle.
    pub fn tick(
        &mut self,
        cycle: u64,
        cores: &mut [Core; 2],
        inputs: &[CoreEvent],
    ) -> Result<[Gate; 2], SimError> {
        let mut endbal = None;
        for e in inputs {
            match e.kind {
                EventKind::StartBalRetired { pc } => self.post(Request::StartBal {
                    core: e.core,
                    pc,
                    retired: e.cycle,
                }),
                EventKind::EndBalRetired { .. } => endbal = Some(e.cycle),
                EventKind::NmiSent { .. } => {
                    self.apply(cycle, Stimulus::Nmi(e.core))?;
                }
                _ => {}
            }
        }
        if let Some(at) = endbal {
            if self.apply(cycle, Stimulus::EndBal)? && self.phase == Phase::Restoring {
                self.begin_restore(cores);
            }
            if let Some(r) = self.rounds.last_mut() {
                r.endbal_retired = Some(at);
            }
        }
        self.dequeue(cycle, cores)?;
        self.executed = self.phase;
        let gates = self.execute(cycle, cores)?;
        self.elapsed += 1;
        let expired = match self.phase.duration(&self.delays) {
            Some(d) => {
                self.countdown = self.countdown.saturating_sub(1);
                self.elapsed >= d
            }
            None => false,
        };
        if expired {
            let was = self.phase;
            self.apply(cycle, Stimulus::Expire)?;
            self.on_entered(was, cores);
        }
        Ok(gates)
    }

    fn begin_restore(&mut self, cores: &mut [Core; 2]) {
        if let Some(b) = &self.balance {
            cores[b.victim].bank = Bank::Primary;
        }
    }

    /// Setup that must happen between the last cycle of one phase and the
    /// first cycle of the next.
    fn on_entered(&mut self, was: Phase, cores: &mut [Core; 2]) {
        match (was, self.phase) {
            (Phase::FlushWait { .. }, Phase::Restoring) => {
                // The region ended while draining for an interrupt; serve it
                // once the victim is back.
                if let Some(ic) = self.interrupt.take() {
                    self.queue.push_front(Request::Interrupt {
                        core: ic.target,
                        vector: ic.vector,
                    });
                }
                self.begin_restore(cores);
            }
            (_, Phase::Saving) => {
                if let Some(b) = self.balance.as_mut() {
                    let v = &cores[b.victim];
                    b.sp = v.regs[crate::isa::Reg::SP.index()];
                    b.saved = (0..CONTEXT_WORDS).map(|i| v.context_word(i)).collect();
                    b.micro = Some(VictimMicro {
                        status: v.status,
                        open: v.integrity.open,
                    });
                }
            }
            _ => {}
        }
    }

    fn execute(&mut self, cycle: u64, cores: &mut [Core; 2]) -> Result<[Gate; 2], SimError> {
        let mut gates = [Gate::Run; 2];
        let k = self.elapsed;
        match self.phase {
            Phase::Idle | Phase::Balancing => {}
            Phase::FlushWait { purpose } => match purpose {
                Purpose::Balance { requester } => {
                    self.accounting.flush += 1;
                    gates[other(requester)] = Gate::Drain;
                }
                Purpose::Interrupt {
                    target,
                    during_balance,
                    ..
                } => {
                    self.accounting.interrupt_flush += 1;
                    gates[target] = Gate::Drain;
                    if during_balance {
                        gates[other(target)] = Gate::Drain;
                    }
                }
            },
            Phase::Saving => {
                self.accounting.saving += 1;
                let per = self.delays.save_per_reg;
                let b = self.balance.as_ref().expect("balance context");
                gates[b.victim] = Gate::Drain;
                if (k + 1) % per == 0 {
                    let i = (k / per) as usize;
                    let (victim, addr, value) = (b.victim, Self::save_slot(b.sp, i), b.saved[i]);
                    if cores[victim].primary.set_word(addr, value).is_err() || cores[victim].primary.is_code(addr) {
                        return Err(Self::violation(cycle, "victim stack is not mapped"));
                    }
                    self.log(cycle, ControllerEventKind::ContextStore { core: victim, index: i, addr, value });
                }
            }
            Phase::Broadcast => {
                self.accounting.broadcast += 1;
                let b = self.balance.clone().expect("balance context");
                if cores[b.victim].balance.is_none() {
                    return Err(Self::violation(cycle, "no complement image loaded on the victim core"));
                }
                let (r, v) = (b.requester, b.victim);
                cores[r].role = Some(Role::Requester);
                let vc = &mut cores[v];
                vc.bank = Bank::Balance;
                vc.role = Some(Role::Victim);
                vc.integrity.acc = 0;
                vc.integrity.open = 0;
                self.write_pc(cycle, &mut cores[r], b.entry);
                self.write_pc(cycle, &mut cores[v], b.entry);
                if let Some(round) = self.rounds.last_mut() {
                    round.broadcast = cycle;
                }
            }
            Phase::IntSwitch {
                target,
                during_balance,
            } => {
                self.accounting.interrupt_switch += 1;
                let ic = self.interrupt.as_mut().expect("interrupt context");
                ic.resume = [cores[0].resume_pc(), cores[1].resume_pc()];
                let vector = ic.vector;
                cores[target].enter_interrupt(vector);
                self.log(cycle, ControllerEventKind::PcWrite { core: target, pc: vector });
                if during_balance {
                    gates[other(target)] = Gate::Hold;
                }
            }
            Phase::IntService {
                target,
                during_balance,
            } => {
                if during_balance {
                    gates[other(target)] = Gate::Hold;
                }
            }
            Phase::IntExit {
                target,
                during_balance,
            } => {
                self.accounting.interrupt_exit += 1;
                let ic = self.interrupt.take().expect("interrupt context");
                cores[target].leave_interrupt(ic.resume[target]);
                self.log(cycle, ControllerEventKind::PcWrite { core: target, pc: ic.resume[target] });
                if during_balance {
                    let o = other(target);
                    self.write_pc(cycle, &mut cores[o], ic.resume[o]);
                }
            }
            Phase::Restoring => {
                self.accounting.restoring += 1;
                let per = self.delays.restore_per_reg;
                let b = self.balance.as_ref().expect("balance context");
                gates[b.victim] = Gate::Drain;
                if (k + 1) % per == 0 {
                    let i = (k / per) as usize;
                    let (victim, addr) = (b.victim, Self::save_slot(b.sp, i));
                    let Some(value) = cores[victim].primary.word(addr) else {
                        return Err(Self::violation(cycle, "victim stack is not mapped"));
                    };
                    cores[victim].set_context_word(i, value);
                    self.log(cycle, ControllerEventKind::ContextLoad { core: victim, index: i, addr, value });
                }
            }
            Phase::Exit => {
                self.accounting.exit += 1;
                let b = self.balance.take().expect("balance context");
                let micro = b.micro.expect("saved victim state");
                let pc = cores[b.victim].fetch_pc;
                self.write_pc(cycle, &mut cores[b.victim], pc);
                let v = &mut cores[b.victim];
                v.role = None;
                v.integrity.open = micro.open;
                v.status = match micro.status {
                    Status::Parked => Status::Running,
                    s => s,
                };
                if let Some(r) = self.rounds.last_mut() {
                    r.exit = Some(cycle);
                }
            }
        }
        Ok(gates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashSet};

    #[test]
    fn delay_table_rows() {
        let d = DelayTable::default();
        let rows: Vec<u64> = d.rows().iter().map(|r| r.1).collect();
        assert_eq!(rows, [320, 30, 20, 320, 30, 20, 6, 1, 1]);
        assert_eq!(rows.iter().sum::<u64>(), 748);
        assert_eq!(d.total(), 748);
        assert_eq!((d.entry(), d.exit_cost()), (377, 371));
    }

    fn stimuli() -> Vec<Stimulus> {
        let mut v = vec![Stimulus::Expire, Stimulus::EndBal];
        for c in 0..2 {
            v.extend([Stimulus::StartBal(c), Stimulus::Nmi(c), Stimulus::Irq(c)]);
        }
        v
    }

    fn reachable() -> HashSet<Phase> {
        let mut seen = HashSet::from([Phase::Idle]);
        let mut work = vec![Phase::Idle];
        while let Some(p) = work.pop() {
            for s in stimuli() {
                if let Transition::Go(q) = next_phase(p, s) {
                    if seen.insert(q) {
                        work.push(q);
                    }
                }
            }
        }
        seen
    }

    #[test]
    fn phase_graph_is_total_and_live() {
        let seen = reachable();
        // Every phase kind is reachable.
        let kinds: BTreeSet<&str> = seen
            .iter()
            .map(|p| match p {
                Phase::Idle => "idle",
                Phase::FlushWait { .. } => "flush",
                Phase::Saving => "saving",
                Phase::Broadcast => "broadcast",
                Phase::Balancing => "balancing",
                Phase::IntSwitch { .. } => "switch",
                Phase::IntService { .. } => "service",
                Phase::IntExit { .. } => "int_exit",
                Phase::Restoring => "restoring",
                Phase::Exit => "exit",
            })
            .collect();
        assert_eq!(kinds.len(), 10);
        let d = DelayTable::default();
        for &p in &seen {
            // Timed phases always leave on expiry; waiting phases stay.
            match (p.duration(&d), next_phase(p, Stimulus::Expire)) {
                (Some(_), Transition::Go(_)) | (None, Transition::Stay) => {}
                other => panic!("{p:?}: {other:?}"),
            }
            // Requests are never lost: they start or queue.
            for c in 0..2 {
                for s in [Stimulus::StartBal(c), Stimulus::Irq(c)] {
                    assert!(matches!(next_phase(p, s), Transition::Go(_) | Transition::Queue));
                }
            }
            // Idle is reachable from every state (no deadlock), given the
            // completion signals a running program produces.
            let mut q = p;
            for _ in 0..10 {
                if q == Phase::Idle {
                    break;
                }
                q = [Stimulus::Expire, Stimulus::EndBal, Stimulus::Nmi(0), Stimulus::Nmi(1)]
                    .into_iter()
                    .find_map(|s| match next_phase(q, s) {
                        Transition::Go(n) => Some(n),
                        _ => None,
                    })
                    .unwrap_or_else(|| panic!("stuck in {q:?}"));
            }
            assert_eq!(q, Phase::Idle, "from {p:?}");
        }
    }

    #[test]
    fn only_completion_signals_can_violate() {
        for p in reachable() {
            for s in stimuli() {
                if let Transition::Violation(_) = next_phase(p, s) {
                    assert!(matches!(s, Stimulus::EndBal | Stimulus::Nmi(_)), "{p:?} {s:?}");
                }
            }
            assert!(matches!(next_phase(p, Stimulus::EndBal), Transition::Violation(_)) != matches!(p, Phase::Balancing | Phase::FlushWait { purpose: Purpose::Interrupt { during_balance: true, .. } }));
        }
    }

    #[test]
    fn idle_expire_is_a_noop() {
        assert_eq!(next_phase(Phase::Idle, Stimulus::Expire), Transition::Stay);
        let mut c = Controller::default();
        let img = crate::asm::assemble("halt\n").unwrap();
        let mut cores = [Core::new(0, img.clone()), Core::new(1, img)];
        for cy in 0..10 {
            assert_eq!(c.tick(cy, &mut cores, &[]).unwrap(), [Gate::Run; 2]);
        }
        assert_eq!(c.phase, Phase::Idle);
        assert_eq!(c.accounting, Accounting::default());
    }

    #[test]
    fn save_slots_descend() {
        let sp = 0x2100;
        let slots: Vec<u32> = (0..CONTEXT_WORDS).map(|i| Controller::save_slot(sp, i)).collect();
        assert_eq!(slots[0], 0x20FC);
        assert_eq!(slots[36], 0x2100 - 37 * 4);
        assert!(slots.windows(2).all(|w| w[0] - w[1] == 4));
    }
}
