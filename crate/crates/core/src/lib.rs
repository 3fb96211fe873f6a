//! Cycle-accurate dual-core processor model with runtime basic-block
//! integrity checking and complementary-data power balancing, plus the
//! toolchain around it: assembler, instrumenter, complement-image
//! generator, fault injector and a correlation power-analysis harness.

pub mod asm;
pub mod attack;
pub mod cfg;
pub mod cpu;
pub mod checksum;
pub mod complement;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod instrument;
pub mod isa;
pub mod power;
pub mod sim;

pub use error::{AsmError, ImageError};
pub use image::{MemoryImage, Section, SectionKind, SymbolTable};
pub use isa::{decode, encode, Decoded, Instruction, Op, Reg};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/isa.md")]
    mod isa {}
    #[doc = include_str!("../../../book/src/integrity.md")]
    mod integrity {}
    #[doc = include_str!("../../../book/src/balancing.md")]
    mod balancing {}
    #[doc = include_str!("../../../book/src/power.md")]
    mod power {}
    #[doc = include_str!("../../../book/src/faults.md")]
    mod faults {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
