use proptest::prelude::*;

use secured::asm::assemble;
use secured::complement::verify_complement_closure;
use secured::cpu::Core;
use secured::fixtures;
use secured::image::SectionKind;
use secured::instrument::BalancedRegion;
use secured::power::{cpa_attack, sbox_hw, LeakageConfig};
use secured::sim::{
    read_symbol, run, ExitStatus, InterruptSpec, Mode, Policy, Program, SystemConfig, Vector,
};

fn program(f: &fixtures::Fixture) -> Program {
    Program::from_fixture(f).expect("fixture builds")
}

fn data_words(core: &Core) -> Vec<(u32, u32)> {
    let skip = core.primary.symbols.get("irq_count");
    core.primary
        .sections
        .iter()
        .filter(|s| matches!(s.kind, SectionKind::Data | SectionKind::Baldata))
        .flat_map(|s| s.addresses())
        .filter(|(a, _)| Some(*a) != skip)
        .collect()
}

fn word(core: &Core, name: &str) -> u32 {
    read_symbol(core, name, 1).unwrap()[0]
}

#[test]
fn every_mode_computes_the_same_result() {
    for name in fixtures::NAMES {
        let p = program(&fixtures::by_name(name, 0xa5a5_0101).unwrap());
        let mut seen = None;
        for m in Mode::ALL {
            let (r, sim) = run(&SystemConfig::with_mode(m), [Some(&p), None]).unwrap();
            assert_eq!(r.apps[0].exit, ExitStatus::Halted, "{name} in {}", m.name());
            let d = data_words(&sim.cores[0]);
            match &seen {
                None => seen = Some(d),
                Some(s) => assert_eq!(&d, s, "{name} in {}", m.name()),
            }
        }
    }
}

#[test]
fn fixtures_match_their_references() {
    let mut p = program(&fixtures::toy_aes([1, 2, 3, 4]));
    for (i, b) in [0x10u32, 0x20, 0x30, 0xff].iter().enumerate() {
        p.set_input(&format!("p{i}"), &[*b]).unwrap();
    }
    let (_, sim) = run(&SystemConfig::with_mode(Mode::Secured), [Some(&p), None]).unwrap();
    let c: Vec<u8> = (0..4).map(|i| word(&sim.cores[0], &format!("c{i}")) as u8).collect();
    assert_eq!(c, fixtures::toy_aes_reference([1, 2, 3, 4], [0x10, 0x20, 0x30, 0xff]));

    let mut p = program(&fixtures::xor_cipher(0xdead_beef));
    p.set_input("p0", &[1, 2, 3, 4]).unwrap();
    let (_, sim) = run(&SystemConfig::with_mode(Mode::Secured), [Some(&p), None]).unwrap();
    let c: Vec<u32> = (0..4).map(|i| word(&sim.cores[0], &format!("c{i}"))).collect();
    assert_eq!(c, fixtures::xor_cipher_reference(0xdead_beef, [1, 2, 3, 4]));

    let keys = [0xa, 0x3, 0x7, 0xe];
    for block in [0u8, 0x5c, 0xff] {
        let mut p = program(&fixtures::toy_des(keys));
        p.set_input("bl", &[(block >> 4) as u32]).unwrap();
        p.set_input("br", &[(block & 0xf) as u32]).unwrap();
        let (_, sim) = run(&SystemConfig::with_mode(Mode::SecuredM), [Some(&p), None]).unwrap();
        let out = (word(&sim.cores[0], "bl") << 4) | word(&sim.cores[0], "br");
        assert_eq!(out as u8, fixtures::toy_des_reference(keys, block));
    }

    let (_, sim) = run(&SystemConfig::default(), [Some(&program(&fixtures::adpcm_like())), None]).unwrap();
    let (codes, pred) = fixtures::adpcm_reference();
    assert_eq!(read_symbol(&sim.cores[0], "codes", 16).unwrap(), codes);
    assert_eq!(word(&sim.cores[0], "pred"), pred);

    let (_, sim) = run(&SystemConfig::default(), [Some(&program(&fixtures::crc_like())), None]).unwrap();
    assert_eq!(word(&sim.cores[0], "crc"), fixtures::crc_reference());
}

#[test]
fn runs_are_deterministic() {
    let des = program(&fixtures::toy_des([1, 5, 9, 13]));
    let crc = program(&fixtures::crc_like());
    let mut cfg = SystemConfig::with_mode(Mode::Secured);
    cfg.trace.power = true;
    cfg.leakage = LeakageConfig {
        sigma: 0.5,
        seed: 11,
        ..LeakageConfig::default()
    };
    let a = run(&cfg, [Some(&des), Some(&crc)]).unwrap().0;
    let b = run(&cfg, [Some(&des), Some(&crc)]).unwrap().0;
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.power, b.power);
    cfg.leakage.seed = 12;
    let c = run(&cfg, [Some(&des), Some(&crc)]).unwrap().0;
    assert_eq!(a.to_json(), c.to_json());
    assert_ne!(a.power, c.power);
}

#[test]
fn preempted_application_is_unaffected() {
    let fillers = [fixtures::adpcm_like(), fixtures::crc_like(), fixtures::sweep_target()];
    let ciphers = [fixtures::toy_des([2, 4, 6, 8]), fixtures::toy_aes([9, 8, 7, 6]), fixtures::xor_cipher(77)];
    for m in [Mode::SecuredM, Mode::Secured] {
        for f in &fillers {
            let fp = program(f);
            let (_, alone) = run(&SystemConfig::with_mode(m), [None, Some(&fp)]).unwrap();
            for c in &ciphers {
                let cp = program(c);
                let mut cfg = SystemConfig::with_mode(m);
                cfg.policy = Policy::Preemptive;
                let (r, sim) = run(&cfg, [Some(&cp), Some(&fp)]).unwrap();
                assert_eq!(r.rounds.len(), 1);
                assert!(r.exceptions.is_empty(), "{:?}", r.exceptions);
                assert_eq!(r.lockstep.skew_cycles, 0);
                assert_eq!(data_words(&sim.cores[1]), data_words(&alone.cores[1]), "{} beside {}", f.name, c.name);
                let (_, solo) = run(&SystemConfig::with_mode(m), [Some(&cp), None]).unwrap();
                assert_eq!(data_words(&sim.cores[0]), data_words(&solo.cores[0]));
            }
        }
    }
}

#[test]
fn interrupt_outside_balancing_touches_only_its_core() {
    let a = program(&fixtures::adpcm_like().with_isr());
    let b = program(&fixtures::crc_like());
    for m in Mode::ALL {
        let cfg = SystemConfig::with_mode(m);
        let (clean, clean_sim) = run(&cfg, [Some(&a), Some(&b)]).unwrap();
        let mut with = cfg.clone();
        with.interrupts.push(InterruptSpec {
            cycle: 100,
            core: 0,
            vector: Vector::Label("isr".into()),
        });
        let (r, sim) = run(&with, [Some(&a), Some(&b)]).unwrap();
        assert_eq!(word(&sim.cores[0], "irq_count"), 1);
        assert_eq!(data_words(&sim.cores[0]), data_words(&clean_sim.cores[0]));
        assert_eq!(data_words(&sim.cores[1]), data_words(&clean_sim.cores[1]));
        assert_eq!(r.app(1).unwrap().cycles, clean.app(1).unwrap().cycles);
        assert!(r.app(0).unwrap().cycles > clean.app(0).unwrap().cycles);
        assert_eq!(r.accounting.interrupt_switch, 1);
    }
}

#[test]
fn interrupt_to_a_stopped_core_is_dropped() {
    let a = program(&fixtures::straight_line(4).with_isr());
    let mut cfg = SystemConfig::default();
    cfg.interrupts.push(InterruptSpec {
        cycle: 50,
        core: 0,
        vector: Vector::Label("isr".into()),
    });
    let (r, sim) = run(&cfg, [Some(&a), None]).unwrap();
    assert_eq!(r.accounting.interrupt_switch, 0);
    assert_eq!(word(&sim.cores[0], "irq_count"), 0);
}

#[test]
fn cipher_regions_are_complement_closed() {
    for seed in [0u64, 1, 0xdead_beef, u64::MAX] {
        for name in ["xor-cipher", "toy-aes", "toy-des"] {
            let f = fixtures::by_name(name, seed).unwrap();
            let p = program(&f);
            let region = f.region.as_ref().unwrap();
            for img in [&p.plain, &p.instrumented.image] {
                let rep = verify_complement_closure(img, region).unwrap();
                assert!(rep.passed(), "{name}: {:?}", rep.addresses());
            }
        }
    }
}

#[test]
fn combining_two_complemented_values_is_rejected() {
    let src = ".text\nmain:\nenc: lw r1, a(r0)\n lw r2, b(r0)\n xor r3, r1, r2\n sw r3, c(r0)\ndone: halt\n.baldata\na: .word 0\nb: .word 0\nc: .word 0\n.stack 64\n";
    let err = Program::build("leak", src, Some(BalancedRegion::new("enc", "done")));
    assert!(err.is_err());
}

#[test]
fn single_core_sbox_output_correlates_perfectly() {
    let key = [0x3c, 0, 0, 0];
    let base = program(&fixtures::toy_aes(key));
    let mut cfg = SystemConfig::default();
    cfg.trace.power = true;
    let mut traces = Vec::new();
    let mut pts = Vec::new();
    for i in 0..64u32 {
        let pt = (i * 37 + 5) as u8;
        let mut p = base.clone();
        p.set_input("p0", &[pt as u32]).unwrap();
        traces.push(run(&cfg, [Some(&p), None]).unwrap().0.power.unwrap().cores[0].clone());
        pts.push(pt);
    }
    let r = cpa_attack(&traces, &pts, sbox_hw, Some(0x3c), 0).unwrap();
    assert_eq!(r.true_rank, Some(1));
    assert!((r.peaks[0x3c] - 1.0).abs() < 1e-12, "{}", r.peaks[0x3c]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn r0_stays_zero(imm in -32768i32..32768, rs in 3u8..32, shamt in 0u8..32) {
        let src = format!(
            ".text\nmain: addi r{rs}, r0, {imm}\n addi r0, r{rs}, 1\n add r0, r{rs}, r{rs}\n sll r0, r{rs}, {shamt}\n lui r0, 0xffff\n nor r0, r0, r0\n or r2, r0, r0\n halt\n.stack 64\n"
        );
        let p = Program::build("r0", &src, None).unwrap();
        for m in [Mode::NonSecured, Mode::SecuredI] {
            let (_, sim) = run(&SystemConfig::with_mode(m), [Some(&p), None]).unwrap();
            prop_assert_eq!(sim.cores[0].regs[0], 0);
            prop_assert_eq!(sim.cores[0].regs[2], 0);
            prop_assert_eq!(sim.cores[0].regs[rs as usize], imm as u32);
        }
    }

    #[test]
    fn assembly_survives_instrumentation(n in 1usize..80) {
        let f = fixtures::straight_line(n);
        let p = program(&f);
        let plain = assemble(&f.source).unwrap();
        let (a, _) = run(&SystemConfig::default(), [Some(&p), None]).unwrap();
        let (b, _) = run(&SystemConfig::with_mode(Mode::SecuredI), [Some(&p), None]).unwrap();
        prop_assert_eq!(a.net_runtime, Some(n as u64 + 5));
        prop_assert_eq!(b.net_runtime, Some(n as u64 + 6));
        prop_assert_eq!(plain.code().len(), n);
    }
}
