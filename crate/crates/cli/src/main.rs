//! `squeezepass`: graph rewrites, delegation reports, compression and
//! scheduling from the command line.
//!
//! Reports go to standard output as JSON, human-readable notes to standard
//! error. Exit codes: 0 success, 1 usage, 2 invalid input, 3 pass failure,
//! 4 equivalence failure, 5 incomplete delegation.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use squeezepass_core::demo::SizeClass;
use squeezepass_core::interp::ExecMode;

use exit::{Code, Failure};

#[derive(Parser)]
#[command(name = "squeezepass", version, about = "Make diffusion-model graphs fit a mobile GPU delegate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Capability profile: a JSON file, or the built-in `mobile-gpu` / `unlimited`.
    #[arg(long, global = true, default_value = "mobile-gpu")]
    pub profile: String,
    /// Precision for equivalence checks.
    #[arg(long, global = true, value_enum, default_value_t = Mode::F32)]
    pub mode: Mode,
    /// Seed for random inputs, calibration data and demo weights.
    #[arg(long, global = true, env = "SQUEEZEPASS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Absolute tolerance for equivalence checks.
    #[arg(long, global = true)]
    pub max_abs: Option<f64>,
    /// Relative tolerance for equivalence checks.
    #[arg(long, global = true)]
    pub max_rel: Option<f64>,
    /// Number of random input sets for equivalence checks.
    #[arg(long, global = true, default_value_t = 8)]
    pub samples: usize,
    /// Where to write the resulting graph or report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    F32,
    F16,
}

impl From<Mode> for ExecMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::F32 => ExecMode::F32,
            Mode::F16 => ExecMode::F16Emulated,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Debug)]
pub enum PassName {
    /// The full pipeline.
    Pipeline,
    /// Broadcast-free GroupNorm lowering.
    Groupnorm,
    /// The converter's rank-5 GroupNorm lowering.
    GroupnormNaive,
    /// GELU lowering with the clipped tanh argument.
    Gelu,
    GeluNaive,
    FcToConv,
    /// Serialize every conv rejected only for its activation size.
    Serialize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Size {
    Tiny,
    PaperShape,
}

impl From<Size> for SizeClass {
    fn from(s: Size) -> Self {
        match s {
            Size::Tiny => SizeClass::Tiny,
            Size::PaperShape => SizeClass::PaperShape,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Both,
    Naive,
    Pipelined,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a graph until the profile admits it, then check equivalence.
    Optimize {
        graph: PathBuf,
        /// Comma-separated passes to run in order.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "pipeline")]
        passes: Vec<PassName>,
    },
    /// Compare two graphs with the same signature on random inputs.
    Verify { reference: PathBuf, candidate: PathBuf },
    /// Partition a graph against the profile and estimate its cost.
    DelegateReport { graph: PathBuf },
    /// Prune and/or quantize weights and report the reconstruction error.
    Compress {
        graph: PathBuf,
        /// JSON compression config; overrides the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prune a conv: `<node>:<sparsity>`. Repeatable.
        #[arg(long)]
        prune: Vec<String>,
        /// Skip weight quantization.
        #[arg(long)]
        no_quantize: bool,
        #[arg(long)]
        per_tensor: bool,
        #[arg(long, default_value_t = 127)]
        qmax: i8,
    },
    /// Simulate component loading under a memory budget.
    Schedule {
        /// Scenario JSON; the built-in illustrative scenario when omitted.
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        /// Width of the text Gantt chart on stderr.
        #[arg(long, default_value_t = 72)]
        width: usize,
    },
    /// Emit a demo graph as JSON.
    Demo {
        name: String,
        #[arg(long, value_enum, default_value_t = Size::Tiny)]
        size: Size,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Code::Usage.as_i32() as u8 } else { 0 });
        }
    };
    let c = &cli.common;
    let result = match cli.command {
        Command::Optimize { graph, passes } => commands::optimize(c, &graph, &passes),
        Command::Verify { reference, candidate } => commands::verify(c, &reference, &candidate),
        Command::DelegateReport { graph } => commands::delegate_report(c, &graph),
        Command::Compress {
            graph,
            config,
            prune,
            no_quantize,
            per_tensor,
            qmax,
        } => commands::compress(
            c,
            &graph,
            commands::CompressArgs {
                config,
                prune,
                quantize: !no_quantize,
                per_tensor,
                qmax,
            },
        ),
        Command::Schedule { scenario, strategy, width } => commands::schedule(c, scenario.as_deref(), strategy, width),
        Command::Demo { name, size } => commands::demo(c, &name, size),
    };
    let code = match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            let body = serde_json::json!({ "error": f.message, "exit_code": f.code.as_i32() });
            commands::print_text(&serde_json::to_string_pretty(&body).expect("json"));
            f.code
        }
    };
    ExitCode::from(code.as_i32() as u8)
}

/// Validation failures as a [`Failure`].
pub fn invalid(what: &str, e: impl std::fmt::Display) -> Failure {
    Failure::validation(format!("{what}: {e}"))
}
