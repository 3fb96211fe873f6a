use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("section at {0:#010x} is not word aligned")]
    Misaligned(u32),
    #[error("sections at {first:#010x} and {second:#010x} overlap")]
    Overlap { first: u32, second: u32 },
    #[error("address {0:#010x} is not mapped")]
    Unmapped(u32),
    #[error("image line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("immediate {value} does not fit in {bits} bits")]
    ImmediateOverflow { value: i64, bits: u32 },
    #[error("target {0:#x} is not word aligned")]
    MisalignedTarget(i64),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{column}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub kind: AsmErrorKind,
}

impl AsmError {
    pub fn new(line: usize, column: usize, kind: AsmErrorKind) -> Self {
        AsmError { line, column, kind }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstrumentError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error("invalid instruction word {word:#010x} at {addr:#010x}")]
    InvalidWord { addr: u32, word: u32 },
    #[error("indirect jump at {0:#010x} has no .jtargets annotation")]
    UnannotatedIndirectJump(u32),
    #[error("jump target {target:#010x} from {from:#010x} is outside the code section")]
    TargetOutsideCode { from: u32, target: u32 },
    #[error("program has no code section")]
    NoCode,
    #[error("label `{0}` not found")]
    MissingLabel(String),
    #[error("balanced region: {0}")]
    Region(String),
    #[error("table at {start:#010x} has {len} entries, not a power of two")]
    TableNotPowerOfTwo { start: u32, len: usize },
    #[error("program already contains chk at {0:#010x}")]
    AlreadyInstrumented(u32),
    #[error("data word in code section at {0:#010x}")]
    DataInCode(u32),
    #[error("complement closure failed at {0:?}")]
    ClosureFailed(Vec<u32>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("exceeded the cycle bound of {0}")]
    Timeout(u64),
    #[error("controller protocol violation at cycle {cycle}: {msg}")]
    Protocol { cycle: u64, msg: String },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PowerError {
    #[error("correlation needs at least two traces, got {0}")]
    TooFewTraces(usize),
    #[error("trace {index} has {len} samples, expected {expected}")]
    LengthMismatch {
        index: usize,
        len: usize,
        expected: usize,
    },
    #[error("{traces} traces but {plaintexts} plaintexts")]
    CountMismatch { traces: usize, plaintexts: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("injection address {0:#010x} is not in the code section")]
    OutsideCode(u32),
    #[error("bit index {0} out of range")]
    BadBit(u8),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Program(#[from] InstrumentError),
}
