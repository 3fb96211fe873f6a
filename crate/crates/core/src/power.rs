//! Per-cycle leakage model, trace recording and correlation power analysis.
//!
//! Only data values leak: register writes, memory data and fetched words.
//! Addresses do not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpu::{CoreEvent, EventKind};
use crate::error::PowerError;
use crate::fixtures::AES_SBOX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageModel {
    /// Weight of the value on the bus.
    #[default]
    HammingWeight,
    /// Bits toggled relative to the previous value on the same bus.
    HammingDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub seed: u64,
    pub model: LeakageModel,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        LeakageConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            sigma: 0.0,
            seed: 0,
            model: LeakageModel::HammingWeight,
        }
    }
}

impl LeakageConfig {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.alpha, self.beta, self.gamma, self.sigma];
        if w.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err("leakage weights and sigma must be finite and non-negative".into())
        }
    }
}

fn hw(x: u32) -> f64 {
    x.count_ones() as f64
}

/// Last value seen on each bus of one core, for the distance model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Buses {
    pub reg: u32,
    pub mem: u32,
    pub fetch: u32,
}

/// Noise-free power of one core in one cycle.
pub fn sample_cycle(events: &[CoreEvent], cfg: &LeakageConfig, buses: &mut Buses) -> f64 {
    let mut s = 0.0;
    let hd = cfg.model == LeakageModel::HammingDistance;
    let mut leak = |bus: &mut u32, v: u32, w: f64| {
        let x = if hd { *bus ^ v } else { v };
        *bus = v;
        s += w * hw(x);
    };
    for e in events {
        match e.kind {
            EventKind::RegWrite { value, .. } => leak(&mut buses.reg, value, cfg.alpha),
            EventKind::MemRead { value, .. } | EventKind::MemWrite { value, .. } => {
                leak(&mut buses.mem, value, cfg.beta)
            }
            EventKind::Fetch { word, .. } => leak(&mut buses.fetch, word, cfg.gamma),
            _ => {}
        }
    }
    s
}

/// Per-core and combined power, one sample per cycle.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PowerTrace {
    pub cores: [Vec<f64>; 2],
    pub combined: Vec<f64>,
    pub plaintext: Option<Vec<u8>>,
    pub label: String,
}

impl PowerTrace {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }

    pub fn window(&self, from: usize, to: usize) -> PowerTrace {
        let cut = |v: &Vec<f64>| v[from.min(v.len())..to.min(v.len())].to_vec();
        PowerTrace {
            cores: [cut(&self.cores[0]), cut(&self.cores[1])],
            combined: cut(&self.combined),
            plaintext: self.plaintext.clone(),
            label: self.label.clone(),
        }
    }

    pub fn to_csv(&self, cfg: &LeakageConfig) -> String {
        let mut out = format!(
            "# {}\n# alpha={} beta={} gamma={} sigma={} seed={} model={:?}\n",
            self.label, cfg.alpha, cfg.beta, cfg.gamma, cfg.sigma, cfg.seed, cfg.model
        );
        if let Some(p) = &self.plaintext {
            let hex: String = p.iter().map(|b| format!("{b:02x}")).collect();
            out.push_str(&format!("# plaintext={hex}\n"));
        }
        out.push_str("cycle,core1,core2,combined\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                self.cores[0][i], self.cores[1][i], self.combined[i]
            ));
        }
        out
    }
}

/// Builds a trace cycle by cycle. Each of the three sequences gets its own
/// noise draw, so the combined sequence is the sum of the noise-free core
/// samples plus one measurement of noise.
#[derive(Clone, Debug)]
pub struct Recorder {
    pub cfg: LeakageConfig,
    buses: [Buses; 2],
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    pub trace: PowerTrace,
}

impl Recorder {
    pub fn new(cfg: LeakageConfig) -> Recorder {
        let noise = (cfg.sigma > 0.0).then(|| Normal::new(0.0, cfg.sigma).expect("sigma"));
        Recorder {
            cfg,
            buses: Default::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise,
            trace: PowerTrace::default(),
        }
    }

    fn noise(&mut self) -> f64 {
        match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }

    pub fn record(&mut self, core0: &[CoreEvent], core1: &[CoreEvent]) {
        let a = sample_cycle(core0, &self.cfg, &mut self.buses[0]);
        let b = sample_cycle(core1, &self.cfg, &mut self.buses[1]);
        let (na, nb, nc) = (self.noise(), self.noise(), self.noise());
        self.trace.cores[0].push(a + na);
        self.trace.cores[1].push(b + nb);
        self.trace.combined.push(a + b + nc);
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= f64::EPSILON * n || syy <= f64::EPSILON * n {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// HW(S(p ^ k)) for the AES S-box.
pub fn sbox_hw(p: u8, k: u8) -> f64 {
    AES_SBOX[(p ^ k) as usize].count_ones() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyRanking {
    /// Peak |r| per key guess.
    pub peaks: Vec<f64>,
    /// Cycle at which each guess peaked.
    pub peak_cycles: Vec<usize>,
    /// Guesses from best to worst.
    pub order: Vec<u8>,
    pub true_key: Option<u8>,
    pub true_rank: Option<usize>,
}

impl KeyRanking {
    /// 1-based rank of `k`.
    pub fn rank_of(&self, k: u8) -> usize {
        self.order.iter().position(|&g| g == k).expect("all guesses ranked") + 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking serialises")
    }
}

/// Correlates `predict(p, k)` against every cycle of every trace.
///
/// Ties in peak correlation are ordered by a permutation drawn from `seed`.
pub fn cpa_attack(
    traces: &[Vec<f64>],
    plaintexts: &[u8],
    predict: impl Fn(u8, u8) -> f64 + Sync,
    true_key: Option<u8>,
    seed: u64,
) -> Result<KeyRanking, PowerError> {
    if traces.len() < 2 {
        return Err(PowerError::TooFewTraces(traces.len()));
    }
    if traces.len() != plaintexts.len() {
        return Err(PowerError::CountMismatch {
            traces: traces.len(),
            plaintexts: plaintexts.len(),
        });
    }
    let len = traces[0].len();
    if let Some((index, t)) = traces.iter().enumerate().find(|(_, t)| t.len() != len) {
        return Err(PowerError::LengthMismatch {
            index,
            len: t.len(),
            expected: len,
        });
    }
    let columns: Vec<Vec<f64>> = (0..len).map(|c| traces.iter().map(|t| t[c]).collect()).collect();
    let peaks: Vec<(f64, usize)> = (0..=255u8)
        .into_par_iter()
        .map(|k| {
            let h: Vec<f64> = plaintexts.iter().map(|&p| predict(p, k)).collect();
            columns
                .iter()
                .enumerate()
                .map(|(c, col)| (pearson(&h, col).abs(), c))
                .fold((0.0, 0), |best, x| if x.0 > best.0 { x } else { best })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiebreak: Vec<u64> = (0..256).map(|_| rng.random()).collect();
    let mut order: Vec<u8> = (0..=255).collect();
    order.sort_by(|&a, &b| {
        peaks[b as usize]
            .0
            .total_cmp(&peaks[a as usize].0)
            .then(tiebreak[a as usize].cmp(&tiebreak[b as usize]))
    });
    let mut r = KeyRanking {
        peaks: peaks.iter().map(|p| p.0).collect(),
        peak_cycles: peaks.iter().map(|p| p.1).collect(),
        order,
        true_key,
        true_rank: None,
    };
    r.true_rank = true_key.map(|k| r.rank_of(k));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ev(kind: EventKind) -> CoreEvent {
        CoreEvent { cycle: 0, core: 0, kind }
    }

    #[test]
    fn zero_write_is_silent() {
        let e = [ev(EventKind::RegWrite { reg: 1, value: 0 })];
        assert_eq!(sample_cycle(&e, &LeakageConfig::default(), &mut Buses::default()), 0.0);
    }

    #[test]
    fn defaults() {
        let c = LeakageConfig::default();
        assert_eq!((c.alpha, c.beta, c.gamma, c.sigma), (1.0, 1.0, 0.5, 0.0));
        assert!(c.validate().is_ok());
        assert!(LeakageConfig { beta: -1.0, ..c }.validate().is_err());
    }

    proptest! {
        #[test]
        fn complement_writes_cancel(x: u32, halves in 0u32..8) {
            let alpha = halves as f64 / 2.0;
            let cfg = LeakageConfig { alpha, gamma: 0.0, ..Default::default() };
            let mut r = Recorder::new(cfg);
            r.record(&[ev(EventKind::RegWrite { reg: 1, value: x })], &[ev(EventKind::RegWrite { reg: 1, value: !x })]);
            prop_assert_eq!(r.trace.combined[0], alpha * 32.0);
        }

        #[test]
        fn combined_is_sum_without_noise(a: u32, b: u32, w: u32) {
            let mut r = Recorder::new(LeakageConfig::default());
            r.record(
                &[ev(EventKind::RegWrite { reg: 1, value: a }), ev(EventKind::Fetch { pc: 0, word: w })],
                &[ev(EventKind::MemRead { addr: 0, value: b })],
            );
            let t = &r.trace;
            prop_assert_eq!(t.combined[0], t.cores[0][0] + t.cores[1][0]);
            prop_assert_eq!(t.cores[0][0], hw(a) + 0.5 * hw(w));
        }
    }

    #[test]
    fn distance_model_does_not_cancel() {
        // HD(!a, !b) = HD(a, b): the two cores leak the same amount.
        let cfg = LeakageConfig { model: LeakageModel::HammingDistance, gamma: 0.0, ..Default::default() };
        let mut r = Recorder::new(cfg);
        for a in [0x0F0Fu32, 0x1234, 0] {
            r.record(&[ev(EventKind::RegWrite { reg: 1, value: a })], &[ev(EventKind::RegWrite { reg: 1, value: !a })]);
        }
        // Both buses start at zero, so only later transitions match.
        let t = &r.trace;
        assert_eq!(t.cores[0][1..], t.cores[1][1..]);
        assert_eq!(t.cores[0], vec![8.0, hw(0x0F0F ^ 0x1234), hw(0x1234)]);
        assert_ne!(t.combined[1], t.combined[2]);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = LeakageConfig { sigma: 1.0, seed: 9, ..Default::default() };
        let run = || {
            let mut r = Recorder::new(cfg);
            for _ in 0..50 {
                r.record(&[], &[]);
            }
            r.trace
        };
        assert_eq!(run(), run());
        assert!(run().combined.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn one_trace_is_an_error() {
        assert_eq!(
            cpa_attack(&[vec![1.0]], &[0], sbox_hw, None, 0).unwrap_err(),
            PowerError::TooFewTraces(1)
        );
    }

    #[test]
    fn synthetic_leak_is_found() {
        let key = 0x3C;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<u8> = (0..300).map(|_| rng.random()).collect();
        let traces: Vec<Vec<f64>> = pts.iter().map(|&p| vec![3.0, sbox_hw(p, key), 1.0]).collect();
        let r = cpa_attack(&traces, &pts, sbox_hw, Some(key), 0).unwrap();
        assert_eq!(r.true_rank, Some(1));
        assert!((r.peaks[key as usize] - 1.0).abs() < 1e-12);
        assert_eq!(r.peak_cycles[key as usize], 1);
        let mut seen = r.order.clone();
        seen.sort();
        assert_eq!(seen, (0..=255).collect::<Vec<u8>>());
    }

    #[test]
    fn flat_traces_tie_everywhere() {
        let pts: Vec<u8> = (0..50).collect();
        let traces = vec![vec![7.0; 4]; 50];
        let a = cpa_attack(&traces, &pts, sbox_hw, Some(0), 1).unwrap();
        let b = cpa_attack(&traces, &pts, sbox_hw, Some(0), 2).unwrap();
        assert!(a.peaks.iter().all(|&p| p == 0.0));
        assert_ne!(a.order, b.order);
    }
}
