use std::path::PathBuf;

use clap::Args;
use splitmerge_core::runner::{
    make_pack, run_heads, FeaturePack, DEFAULT_CHANNELS, DEFAULT_GRID_CHANNELS,
};
use splitmerge_core::{ImageSize, RunConfig};

use crate::error::{CliError, CliResult};
use crate::io::{parse_image, write_json};

#[derive(Debug, Args)]
pub struct RunHeadsArgs {
    /// Feature pack in the SEMF container format.
    #[arg(long)]
    pack: PathBuf,
    /// Output bundle.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_heads_cmd(args: RunHeadsArgs, cfg: &RunConfig) -> CliResult {
    let fp = FeaturePack::read(&args.pack).map_err(CliError::at(&args.pack))?;
    let bundle = run_heads(&fp, cfg.start_threshold).map_err(CliError::at(&args.pack))?;
    write_json(&args.out, &bundle)
}

#[derive(Debug, Args)]
pub struct MakePackArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "512", value_parser = parse_image)]
    image: ImageSize,
    #[arg(long, default_value_t = DEFAULT_CHANNELS)]
    channels: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_CHANNELS)]
    grid_channels: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn make_pack_cmd(args: MakePackArgs, cfg: &RunConfig) -> CliResult {
    let mut fp = make_pack(args.seed, args.image, args.channels, args.grid_channels)?;
    fp.stride = cfg.stride;
    fp.write(&args.out).map_err(CliError::at(&args.out))
}
