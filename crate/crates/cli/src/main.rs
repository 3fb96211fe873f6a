//! `secured`: assemble, instrument, complement, run, attack and report.
//!
//! Exit codes: 0 success, 1 error, 2 an `--expect-*` check failed.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use secured::sim::{Mode, Policy};

#[derive(Parser)]
#[command(name = "secured", version, about = "Dual-core secure processor toolchain and simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Global {
    /// Seed for fixture keys, plaintexts and measurement noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// NON_SECURED, SECURED_I, SECURED_M or SECURED (case and dashes ignored).
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// System configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sweeps and trace collection.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// An application: a fixture name or a path to an assembly file.
#[derive(Args, Clone, Debug, Default)]
pub struct AppArgs {
    /// Application on core 0: a fixture name or an assembly file.
    #[arg(long)]
    pub app1: Option<String>,
    /// Balanced region of `--app1` as start:end[:regs].
    #[arg(long)]
    pub region1: Option<String>,
    /// Application on core 1.
    #[arg(long)]
    pub app2: Option<String>,
    /// Balanced region of `--app2`.
    #[arg(long)]
    pub region2: Option<String>,
    /// Append the default interrupt routine (label `isr`) to both applications.
    #[arg(long)]
    pub isr: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a source file into an image, or disassemble an image.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Treat the input as an image and print assembly.
        #[arg(long)]
        disassemble: bool,
    },
    /// Insert `chk` instructions (and balancing markers) into a source file.
    Instrument {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Per-block report, one JSON object per line.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the assembled image.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Mark start:end[:regs] as a balanced region first.
        #[arg(long)]
        region: Option<String>,
    },
    /// Build the complementary image for a balanced region.
    Complement {
        input: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one system configuration.
    Run(RunArgs),
    /// Inject a fault into the first application and report detection.
    Inject(InjectArgs),
    /// Collect toy-AES power traces and rank key guesses by correlation.
    Dpa(DpaArgs),
    /// Compare all four modes on pairs of applications.
    Report(ReportArgs),
    /// Check every runtime block accumulator against the static checksums.
    Verify {
        #[command(flatten)]
        apps: AppArgs,
    },
    /// Print a shipped fixture's source, or list them.
    Fixture {
        name: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub apps: AppArgs,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Interrupt as cycle:core:vector, core 0 or 1, vector a label or address.
    #[arg(long = "interrupt")]
    pub interrupts: Vec<String>,
    /// Record the event stream.
    #[arg(long)]
    pub events: bool,
    /// Record power traces.
    #[arg(long)]
    pub power: bool,
    /// Directory for result.json, events.jsonl and trace.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Require every balance round to cost exactly this many cycles.
    #[arg(long)]
    pub expect_switch: Option<u64>,
    /// Require zero lock-step skew while balancing.
    #[arg(long)]
    pub expect_lockstep: bool,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[command(flatten)]
    pub apps: AppArgs,
    /// Flip every bit of every code word.
    #[arg(long)]
    pub sweep: bool,
    /// Address to corrupt.
    #[arg(long, value_parser = parse_u32)]
    pub addr: Option<u32>,
    /// Bit to flip at `--addr`.
    #[arg(long)]
    pub bit: Option<u8>,
    /// Replace the word at `--addr` instead of flipping a bit.
    #[arg(long, value_parser = parse_u32)]
    pub word: Option<u32>,
    /// Redirect the PC here instead of corrupting memory.
    #[arg(long, value_parser = parse_u32)]
    pub redirect: Option<u32>,
    /// Cycle at which the injection happens.
    #[arg(long, default_value_t = 0)]
    pub at: u64,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Exit 2 unless every executed corruption is detected.
    #[arg(long)]
    pub expect_detect: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    /// One core running toy-AES unbalanced; attacks that core's trace.
    Single,
    /// Balanced toy-AES; attacks the combined trace of both cores.
    Combined,
}

#[derive(Args, Debug)]
pub struct DpaArgs {
    #[arg(long, default_value_t = 1000)]
    pub traces: usize,
    #[arg(long, value_enum, default_value_t = AttackKind::Single)]
    pub attack: AttackKind,
    /// Key byte under attack.
    #[arg(long, default_value_t = 0)]
    pub byte: usize,
    /// Independent repetitions, each with a fresh key; the median rank is reported.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Measurement noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// JSON output; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write the traces of the first repetition as CSV files here.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Require the (median) true-key rank to be at most R, or within LO:HI.
    #[arg(long)]
    pub expect_rank: Option<String>,
    /// Require the balanced-window combined traces to be identical.
    #[arg(long)]
    pub expect_flat: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Configuration files, one application pair each.
    pub configs: Vec<PathBuf>,
    /// A pair of fixtures as a,b (or a single fixture); repeatable.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    #[arg(long)]
    pub json: bool,
    /// Require the mode ordering and the integrity-cost identity.
    #[arg(long)]
    pub expect_order: bool,
    /// Require net runtimes to follow the composition rules.
    #[arg(long)]
    pub expect_compose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    PartnerWaits,
    Preemptive,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Policy {
        match p {
            PolicyArg::PartnerWaits => Policy::PartnerWaits,
            PolicyArg::Preemptive => Policy::Preemptive,
        }
    }
}

pub fn parse_u32(s: &str) -> Result<u32, String> {
    let t = s.trim();
    let r = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(&h.replace('_', ""), 16),
        None => t.replace('_', "").parse(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let g = &cli.global;
    let r = match cli.command {
        Command::Asm {
            input,
            output,
            disassemble,
        } => cmd::asm(&input, output.as_deref(), disassemble),
        Command::Instrument {
            input,
            output,
            report,
            image,
            region,
        } => cmd::instrument(&input, output.as_deref(), report.as_deref(), image.as_deref(), region.as_deref()),
        Command::Complement { input, region, output } => cmd::complement(&input, &region, output.as_deref()),
        Command::Run(a) => cmd::run(g, &a),
        Command::Inject(a) => cmd::inject(g, &a),
        Command::Dpa(a) => cmd::dpa(g, &a),
        Command::Report(a) => cmd::report(g, &a),
        Command::Verify { apps } => cmd::verify(g, &apps),
        Command::Fixture { name, output } => cmd::fixture(g, name.as_deref(), output.as_deref()),
    };
    match r {
        Ok(cmd::Status::Ok) => ExitCode::SUCCESS,
        Ok(cmd::Status::ExpectationFailed(why)) => {
            eprintln!("expectation failed: {why}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
