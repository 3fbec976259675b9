//! `pdm`: encode/decode PDM streams, synthesize data, train and evaluate
//! the keyword-spotting network, and report efficiency metrics.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    BenchArgs, DecodeArgs, EncodeArgs, EvalArgs, MetricsArgs, ParamsArgs, SweepArgs, SynthArgs,
    TrainArgs,
};

/// Environment variable naming the default dataset directory.
pub const DATA_ENV: &str = "PDM_KWS_DATA";

#[derive(Debug, Parser)]
#[command(
    name = "pdm",
    version,
    about = "Keyword spotting on raw PDM bitstreams"
)]
struct Cli {
    /// Worker threads; 1 is the deterministic single-threaded reference.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a 16-bit mono WAV into a PDM1 bitstream.
    Encode(EncodeArgs),
    /// Decimate a PDM1 bitstream back into a 16-bit WAV.
    Decode(DecodeArgs),
    /// Time the sequential and scan encoders.
    BenchCodec(BenchArgs),
    /// Write a synthetic keyword dataset in the Speech Commands layout.
    SynthData(SynthArgs),
    /// Train the network and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Accuracy and spike metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Parameter/rate table row for a checkpoint: alpha,sparsity,params,isr,sr,rsr.
    Metrics(MetricsArgs),
    /// Print the trainable parameter count of an architecture.
    Params(ParamsArgs),
    /// Train and test across oversampling ratios or sparsity levels.
    Sweep(SweepArgs),
}

/// Failures carry the exit code they map to: 1 for bad input, 2 for
/// internal faults.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<pdm_kws::Error> for CliError {
    fn from(e: pdm_kws::Error) -> Self {
        Self {
            code: if e.is_user_error() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::user("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                code: 2,
                message: format!("thread pool: {e}"),
            })?;
    }
    let ctx = commands::Context {
        argv: argv.to_vec(),
        workers: cli.workers,
    };
    match cli.command {
        Command::Encode(a) => commands::encode(&ctx, a),
        Command::Decode(a) => commands::decode(&ctx, a),
        Command::BenchCodec(a) => commands::bench_codec(&ctx, a),
        Command::SynthData(a) => commands::synth_data(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Metrics(a) => commands::metrics(&ctx, a),
        Command::Params(a) => commands::params(a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
