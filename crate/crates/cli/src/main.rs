//! `splitmerge`: generate synthetic tables, decode prediction bundles,
//! score structures and check the numeric kernels.

mod check;
mod decode;
mod error;
mod eval;
mod heads;
mod io;
mod syngen;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitmerge_core::bundle::parse_json;
use splitmerge_core::RunConfig;

use crate::error::{CliError, CliResult};

const THREADS_ENV: &str = "SEMV3_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "splitmerge",
    version,
    about = "Split-and-merge table structure toolkit"
)]
struct Cli {
    /// JSON run configuration (stride, thresholds, IoUs, workers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic tables with ground-truth structures and bundles.
    Syngen(syngen::SyngenArgs),
    /// Decode prediction bundles into cell structures.
    Decode(decode::DecodeArgs),
    /// Score predicted structures against ground truth.
    Eval(eval::EvalArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(check::GradcheckArgs),
    /// Time the keypoint split path against a per-line mask baseline.
    Bench(check::BenchArgs),
    /// Run the prediction heads on a feature pack and write a bundle.
    RunHeads(heads::RunHeadsArgs),
    /// Write a seeded demo feature pack.
    MakePack(heads::MakePackArgs),
}

fn load_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::at(p)(e.into()))?;
            parse_json::<RunConfig>(&text).map_err(CliError::at(p))?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn init_pool(cfg: &RunConfig) -> CliResult {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                return Err(CliError::Input(format!(
                    "{THREADS_ENV}={v} is not a positive integer"
                )))
            }
        },
        Err(_) => None,
    };
    if let Some(n) = from_env.or(cfg.workers) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(cli.config.as_ref())?;
    init_pool(&cfg)?;
    match cli.command {
        Command::Syngen(a) => syngen::run(a, &cfg),
        Command::Decode(a) => decode::run(a, &cfg),
        Command::Eval(a) => eval::run(a, &cfg),
        Command::Gradcheck(a) => check::gradcheck(a),
        Command::Bench(a) => check::bench(a),
        Command::RunHeads(a) => heads::run_heads_cmd(a, &cfg),
        Command::MakePack(a) => heads::make_pack_cmd(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
