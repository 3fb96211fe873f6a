//! Shipped workloads.
//!
//! Ciphers are generated per key: the key is folded into their lookup
//! tables, so the balanced code never combines two complemented values that
//! would cancel. All fixtures keep the default section layout and a 64-word
//! stack, so a preempted core's stack pointer stays valid in any image.

use std::fmt::Write as _;

use crate::instrument::BalancedRegion;

pub const AES_SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// PRESENT 4-bit S-box.
pub const SBOX4: [u8; 16] = [
    0xc, 0x5, 0x6, 0xb, 0x9, 0x0, 0xa, 0xd, 0x3, 0xe, 0xf, 0x8, 0x4, 0x7, 0x1, 0x2,
];

pub const DES_ROUNDS: usize = 4;

/// A workload: assembly text plus what the harnesses need to drive it.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub source: String,
    pub region: Option<BalancedRegion>,
    /// Symbols holding the plaintext, one word each.
    pub inputs: Vec<String>,
    /// Symbols holding the result.
    pub outputs: Vec<String>,
}

impl Fixture {
    /// Appends the default interrupt routine at label `isr`. It counts
    /// interrupts in `irq_count` and preserves every register it touches.
    pub fn with_isr(mut self) -> Self {
        self.source.push_str(ISR);
        self
    }
}

pub const ISR: &str = "
.text
isr:    addi r29, r29, -8
        sw r8, 0(r29)
        sw r9, 4(r29)
        lw r8, irq_count(r0)
        addi r9, r0, 1
        add r8, r8, r9
        sw r8, irq_count(r0)
        lw r9, 4(r29)
        lw r8, 0(r29)
        addi r29, r29, 8
        iret
.data
irq_count: .word 0
";

fn words(out: &mut String, vals: impl IntoIterator<Item = u32>) {
    let v: Vec<String> = vals.into_iter().map(|w| format!("{w:#x}")).collect();
    for chunk in v.chunks(16) {
        let _ = writeln!(out, "        .word {}", chunk.join(", "));
    }
}

/// XOR of four plaintext words with a 32-bit key held in `.data`.
pub fn xor_cipher(key: u32) -> Fixture {
    let mut s = String::from(".text\nmain:\nenc:    lw r5, key(r0)\n");
    for i in 0..4 {
        let _ = write!(
            s,
            "        lw r1, p{i}(r0)\n        xor r1, r1, r5\n        sw r1, c{i}(r0)\n"
        );
    }
    s.push_str("done:   halt\n.data\n");
    let _ = writeln!(s, "key:    .word {key:#x}");
    s.push_str(".baldata\n");
    for i in 0..4 {
        let _ = writeln!(s, "p{i}:     .word 0");
    }
    for i in 0..4 {
        let _ = writeln!(s, "c{i}:     .word 0");
    }
    s.push_str(".stack 64\n");
    Fixture {
        name: "xor-cipher".into(),
        source: s,
        region: Some(BalancedRegion::new("enc", "done")),
        inputs: (0..4).map(|i| format!("p{i}")).collect(),
        outputs: (0..4).map(|i| format!("c{i}")).collect(),
    }
}

pub fn xor_cipher_reference(key: u32, pt: [u32; 4]) -> [u32; 4] {
    pt.map(|p| p ^ key)
}

/// One keyed S-box layer over a 4-byte state: `c[i] = S[p[i] ^ k[i]]`.
/// The key byte is folded into table `t{i}[j] = S[j ^ k[i]]`.
pub fn toy_aes(key: [u8; 4]) -> Fixture {
    let mut s = String::from(".text\nmain:\nenc:\n");
    for i in 0..4 {
        let _ = write!(
            s,
            "        lw r1, p{i}(r0)\n        andi r1, r1, 0xff\n        sll r1, r1, 2\n        lw r2, t{i}(r1)\n        sw r2, c{i}(r0)\n"
        );
    }
    s.push_str("done:   halt\n.baldata\n");
    for i in 0..4 {
        let _ = writeln!(s, "p{i}:     .word 0");
    }
    for i in 0..4 {
        let _ = writeln!(s, "c{i}:     .word 0");
    }
    for (i, &k) in key.iter().enumerate() {
        let _ = writeln!(s, ".baltable\nt{i}:");
        words(&mut s, (0..256).map(|j| AES_SBOX[j ^ k as usize] as u32));
    }
    s.push_str(".stack 64\n");
    Fixture {
        name: "toy-aes".into(),
        source: s,
        region: Some(BalancedRegion::new("enc", "done")),
        inputs: (0..4).map(|i| format!("p{i}")).collect(),
        outputs: (0..4).map(|i| format!("c{i}")).collect(),
    }
}

pub fn toy_aes_reference(key: [u8; 4], pt: [u8; 4]) -> [u8; 4] {
    let mut c = [0; 4];
    for i in 0..4 {
        c[i] = AES_SBOX[(pt[i] ^ key[i]) as usize];
    }
    c
}

/// Four-round Feistel network over an 8-bit block split into nibbles.
/// Round `i` computes `(l, r) <- (r, l ^ S4[r ^ k[i]])` with a single lookup
/// into `ft{i}[(l << 4) | r]`.
pub fn toy_des(keys: [u8; DES_ROUNDS]) -> Fixture {
    let mut s = String::from(
        ".text\nmain:\nenc:    lw r1, bl(r0)\n        andi r1, r1, 0xf\n        lw r2, br(r0)\n        andi r2, r2, 0xf\n",
    );
    for i in 0..DES_ROUNDS {
        let _ = write!(
            s,
            "        sll r3, r1, 4\n        xor r3, r3, r2\n        sll r3, r3, 2\n        lw r3, ft{i}(r3)\n        andi r3, r3, 0xf\n        or r1, r2, r0\n        or r2, r3, r0\n"
        );
    }
    s.push_str("        sw r1, bl(r0)\n        sw r2, br(r0)\ndone:   halt\n.baldata\nbl:     .word 0\nbr:     .word 0\n");
    for (i, &k) in keys.iter().enumerate() {
        let _ = writeln!(s, ".baltable\nft{i}:");
        words(
            &mut s,
            (0..256u32).map(|j| {
                let (l, r) = (j >> 4, j & 0xf);
                l ^ SBOX4[(r ^ (k as u32 & 0xf)) as usize] as u32
            }),
        );
    }
    s.push_str(".stack 64\n");
    Fixture {
        name: "toy-des".into(),
        source: s,
        region: Some(BalancedRegion::new("enc", "done")),
        inputs: vec!["bl".into(), "br".into()],
        outputs: vec!["bl".into(), "br".into()],
    }
}

pub fn toy_des_reference(keys: [u8; DES_ROUNDS], block: u8) -> u8 {
    let (mut l, mut r) = (block >> 4, block & 0xf);
    for k in keys {
        let f = l ^ SBOX4[((r ^ k) & 0xf) as usize];
        l = r;
        r = f;
    }
    (l << 4) | r
}

pub const ADPCM_SAMPLES: [i32; 16] = [
    0, 40, 120, 260, 300, 180, -20, -150, -400, -380, -90, 60, 200, 210, 90, 10,
];

/// Delta quantiser in the style of ADPCM: 3-bit magnitude codes plus a sign.
pub fn adpcm_like() -> Fixture {
    let mut s = String::from(
        "
.text
main:   addi r1, r0, 0
        addi r2, r0, 0
        addi r6, r0, 16
loop:   sll r3, r1, 2
        lw r4, samples(r3)
        sub r5, r4, r2
        slt r7, r5, r0
        beq r7, r0, pos
        sub r5, r0, r5
        addi r8, r0, 1
        j quant
pos:    addi r8, r0, 0
quant:  srl r5, r5, 4
        slti r7, r5, 8
        bne r7, r0, ok
        addi r5, r0, 7
ok:     sll r9, r5, 4
        beq r8, r0, up
        sub r2, r2, r9
        sll r10, r8, 3
        or r5, r5, r10
        j store
up:     add r2, r2, r9
store:  sw r5, codes(r3)
        addi r1, r1, 1
        bne r1, r6, loop
        sw r2, pred(r0)
        halt
.data
samples:
",
    );
    words(&mut s, ADPCM_SAMPLES.iter().map(|&v| v as u32));
    s.push_str("codes:\n");
    words(&mut s, [0; 16]);
    s.push_str("pred:   .word 0\n.stack 64\n");
    Fixture {
        name: "adpcm-like".into(),
        source: s,
        region: None,
        inputs: vec![],
        outputs: vec!["pred".into()],
    }
}

/// (codes, final predictor) as the fixture computes them.
pub fn adpcm_reference() -> ([u32; 16], u32) {
    let mut codes = [0u32; 16];
    let mut pred: i32 = 0;
    for (i, &x) in ADPCM_SAMPLES.iter().enumerate() {
        let d = x.wrapping_sub(pred);
        let neg = d < 0;
        let mag = ((d.unsigned_abs()) >> 4).min(7);
        let step = (mag << 4) as i32;
        if neg {
            pred = pred.wrapping_sub(step);
            codes[i] = mag | 8;
        } else {
            pred = pred.wrapping_add(step);
            codes[i] = mag;
        }
    }
    (codes, pred as u32)
}

pub const CRC_MESSAGE: [u32; 6] = [
    0x6c6c_6548, 0x6f77_206f, 0x646c_726f, 0x0102_0304, 0xdead_beef, 0x0000_0000,
];

/// Reflected CRC-32 over whole words, least significant bit first.
pub fn crc_like() -> Fixture {
    let mut s = String::from(
        "
.text
main:   addi r1, r0, 0
        lui r10, 0xedb8
        ori r10, r10, 0x8320
        nor r2, r0, r0
        addi r6, r0, 6
outer:  sll r3, r1, 2
        lw r4, msg(r3)
        xor r2, r2, r4
        addi r5, r0, 32
inner:  andi r7, r2, 1
        srl r2, r2, 1
        beq r7, r0, skip
        xor r2, r2, r10
skip:   addi r5, r5, -1
        bne r5, r0, inner
        addi r1, r1, 1
        bne r1, r6, outer
        nor r2, r2, r0
        sw r2, crc(r0)
        halt
.data
msg:
",
    );
    words(&mut s, CRC_MESSAGE);
    s.push_str("crc:    .word 0\n.stack 64\n");
    Fixture {
        name: "crc-like".into(),
        source: s,
        region: None,
        inputs: vec![],
        outputs: vec!["crc".into()],
    }
}

pub fn crc_reference() -> u32 {
    let mut crc = !0u32;
    for w in CRC_MESSAGE {
        crc ^= w;
        for _ in 0..32 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb != 0 {
                crc ^= 0xedb8_8320;
            }
        }
    }
    !crc
}

/// A longer straight-line-heavy program for exhaustive bit-flip sweeps:
/// a short loop, a call through `jr`, a guard branch to an error block that
/// never runs, and mixed ALU, multiply and memory traffic.
pub fn sweep_target() -> Fixture {
    let mut s = String::from(
        "
.text
main:   addi r1, r0, 3
        lw r2, seed(r0)
        addi r3, r0, 0
loop:   xor r3, r3, r2
        sll r4, r2, 3
        srl r5, r2, 5
        xor r2, r4, r5
        addi r2, r2, 0x1234
        andi r6, r2, 0xff
        add r3, r3, r6
        addi r1, r1, -1
        bne r1, r0, loop
        sw r3, out0(r0)
        jal mix
back:   sw r7, out1(r0)
        bne r0, r0, error
",
    );
    // Straight-line mixing blocks.
    for b in 0..6 {
        let _ = write!(
            s,
            "blk{b}:   lw r8, tab{b}(r0)
        ori r9, r8, {or:#x}
        nor r10, r9, r3
        slt r11, r10, r8
        addi r12, r11, {b}
        mult r8, r9
        mflo r13
        mfhi r14
        xor r13, r13, r14
        sub r15, r13, r12
        lui r16, {lui:#x}
        xori r16, r16, {xr:#x}
        and r17, r15, r16
        sw r17, res{b}(r0)
        beq r17, r17, next{b}
next{b}:  add r3, r3, r17
",
            or = 0x11 * (b + 1),
            lui = 0x100 + b,
            xr = 0x5a5 ^ b,
        );
    }
    s.push_str(
        "        sw r3, out2(r0)
        slti r18, r3, 0
        addi r19, r0, 2
        slt r20, r19, r18
        bne r20, r0, error
        halt
mix:    addi r7, r0, 7
        sll r7, r7, 4
        or r7, r7, r3
        srl r21, r7, 2
        xor r7, r7, r21
ret:    jr r31
.jtargets ret: back
error:  addi r22, r0, -1
        sw r22, status(r0)
        halt
.data
seed:   .word 0x2545f491
out0:   .word 0
out1:   .word 0
out2:   .word 0
status: .word 0
",
    );
    for b in 0..6 {
        let _ = writeln!(s, "tab{b}:   .word {:#x}", 0x9e37_79b9u32.wrapping_mul(b + 1));
        let _ = writeln!(s, "res{b}:   .word 0");
    }
    s.push_str(".stack 64\n");
    Fixture {
        name: "sweep".into(),
        source: s,
        region: None,
        inputs: vec![],
        outputs: vec!["out0".into(), "out1".into(), "out2".into(), "status".into()],
    }
}

/// Straight-line program of `n` instructions ending in `halt`.
pub fn straight_line(n: usize) -> Fixture {
    assert!(n >= 1);
    let mut s = String::from(".text\nmain:\n");
    for i in 0..n - 1 {
        let _ = writeln!(s, "        addi r{}, r0, {}", 1 + i % 30, i);
    }
    s.push_str("        halt\n.stack 64\n");
    Fixture {
        name: format!("straight-{n}"),
        source: s,
        region: None,
        inputs: vec![],
        outputs: vec![],
    }
}

pub const NAMES: [&str; 6] = ["xor-cipher", "toy-aes", "toy-des", "adpcm-like", "crc-like", "sweep"];

/// Fixture by name; ciphers take their key from `seed`.
pub fn by_name(name: &str, seed: u64) -> Option<Fixture> {
    let b = seed.to_le_bytes();
    Some(match name {
        "xor-cipher" => xor_cipher(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        "toy-aes" => toy_aes([b[0], b[1], b[2], b[3]]),
        "toy-des" => toy_des([b[0] & 0xf, b[1] & 0xf, b[2] & 0xf, b[3] & 0xf]),
        "adpcm-like" => adpcm_like(),
        "crc-like" => crc_like(),
        "sweep" => sweep_target(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    #[test]
    fn all_assemble() {
        for n in NAMES {
            let f = by_name(n, 7).unwrap();
            assemble(&f.source).unwrap_or_else(|e| panic!("{n}: {e}"));
            assemble(&f.clone().with_isr().source).unwrap_or_else(|e| panic!("{n}: {e}"));
        }
    }

    #[test]
    fn sweep_target_is_large_enough() {
        let img = assemble(&sweep_target().source).unwrap();
        assert!(img.code().len() >= 100, "{}", img.code().len());
    }

    #[test]
    fn des_reference_is_a_permutation() {
        let keys = [3, 9, 0xc, 5];
        let mut seen = [false; 256];
        for b in 0..=255u8 {
            seen[toy_des_reference(keys, b) as usize] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn crc_reference_matches_bytewise_crc32() {
        // Word-wise LSB-first processing equals byte-wise CRC-32 over the
        // little-endian bytes of each word.
        let bytes: Vec<u8> = CRC_MESSAGE.iter().flat_map(|w| w.to_le_bytes()).collect();
        let mut crc = !0u32;
        for b in bytes {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
            }
        }
        assert_eq!(crc_reference(), !crc);
    }
}
