use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BRANCHY: &str = ".text
main: addi r1, r0, 1
 addi r2, r0, 2
 beq r1, r2, skip
 add r3, r1, r2
skip: sw r3, out(r0)
 halt
.data
out: .word 0
.stack 64
";

fn secured(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secured"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn instrument_reports_one_line_per_block() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("b.s"), BRANCHY).unwrap();
    let o = secured(d.path(), &["instrument", "b.s", "-o", "bi.s", "--report", "r.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(d.path().join("r.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    let src = fs::read_to_string(d.path().join("bi.s")).unwrap();
    assert_eq!(src.matches("chk").count(), 3);
}

#[test]
fn straight_line_costs_five_extra_cycles() {
    let d = tempfile::tempdir().unwrap();
    let n = 12;
    let mut src = String::from(".text\nmain:\n");
    for i in 0..n - 1 {
        src += &format!(" addi r{}, r0, {i}\n", 1 + i % 8);
    }
    src += " halt\n.stack 64\n";
    fs::write(d.path().join("s.s"), src).unwrap();
    let o = secured(d.path(), &["run", "--app1", "s.s", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/result.json")).unwrap()).unwrap();
    assert_eq!(r["net_runtime"], n as u64 + 5);
}

#[test]
fn single_core_attack_ranks_the_key_first() {
    let d = tempfile::tempdir().unwrap();
    let o = secured(d.path(), &["dpa", "--attack", "single", "--traces", "200", "--expect-rank", "1", "-o", "d.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(r["median_rank"], 1.0);
}

#[test]
fn balanced_round_costs_748_cycles() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "run", "--mode", "secured-m", "--app1", "toy-des", "--app2", "adpcm-like", "--expect-switch", "748", "--expect-lockstep",
    ];
    let o = secured(d.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("= 748"));
}

#[test]
fn failed_expectation_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = secured(d.path(), &["run", "--mode", "secured", "--app1", "xor-cipher", "--expect-switch", "5"]);
    assert_eq!(code(&o), 2);
    let o = secured(d.path(), &["inject", "--mode", "non-secured", "--app1", "sweep", "--sweep", "--expect-detect", "-o", "s.csv"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&secured(d.path(), &["run", "--app1", "missing.s"])), 1);
    fs::write(d.path().join("bad.s"), ".text\nmain: frob r1\n").unwrap();
    assert_eq!(code(&secured(d.path(), &["asm", "bad.s"])), 1);
    assert_eq!(code(&secured(d.path(), &["fixture", "no-such-thing"])), 1);
}

#[test]
fn asm_round_trips_through_disassembly() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("b.s"), BRANCHY).unwrap();
    assert_eq!(code(&secured(d.path(), &["asm", "b.s", "-o", "b.img"])), 0);
    let o = secured(d.path(), &["asm", "b.img", "--disassemble", "-o", "b2.s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&secured(d.path(), &["asm", "b2.s", "-o", "b2.img"])), 0);
    let a = fs::read_to_string(d.path().join("b.img")).unwrap();
    let b = fs::read_to_string(d.path().join("b2.img")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn complement_flips_only_balanced_data() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&secured(d.path(), &["fixture", "xor-cipher", "-o", "x.s"])), 0);
    let o = secured(d.path(), &["instrument", "x.s", "--region", "enc:done", "--image", "x.img", "-o", "xi.s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = secured(d.path(), &["complement", "x.img", "--region", "enc:done", "-o", "xc.img"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(d.path().join("x.img")).unwrap();
    let c = fs::read_to_string(d.path().join("xc.img")).unwrap();
    let differ: Vec<(&str, &str)> = a.lines().zip(c.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(differ.len(), 8);
    for (x, y) in differ {
        let w = |l: &str| u32::from_str_radix(l.split(": ").nth(1).unwrap(), 16).unwrap();
        assert_eq!(w(x), !w(y));
    }
}

#[test]
fn report_orders_the_modes() {
    let d = tempfile::tempdir().unwrap();
    let o = secured(d.path(), &["report", "--pair", "toy-des,crc-like", "--expect-order", "--expect-compose", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
}
