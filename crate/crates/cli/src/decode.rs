use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use splitmerge_core::{decode_bundle, Error, PredictionBundle, RunConfig, StructureFile};

use crate::error::{CliError, CliResult};
use crate::io::{collect_inputs, create_dir, write_json, BUNDLE_SUFFIX, STRUCTURE_SUFFIX};

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// A bundle file, or a directory of `*.bundle.json` files.
    #[arg(long)]
    bundle: PathBuf,
    /// Output file, or output directory when decoding a directory.
    #[arg(long)]
    out: PathBuf,
    /// Record split and merge wall times in each output.
    #[arg(long)]
    timings: bool,
}

fn decode_one(path: &Path, cfg: &RunConfig, timings: bool) -> CliResult<StructureFile> {
    let b = PredictionBundle::read(path).map_err(CliError::at(path))?;
    let d = decode_bundle(&b, cfg.start_threshold).map_err(CliError::at(path))?;
    if let Err(e) = d.structure.validate() {
        return Err(CliError::at(path)(Error::Invariant(format!(
            "decoded cells are not a partition: {e}"
        ))));
    }
    if !d.summary.is_clean() {
        log::warn!("{}: decoded with repairs", path.display());
    }
    let mut out = StructureFile::new(b.image_size, d.lattice, &d.structure);
    out.report = Some(d.summary);
    out.config = Some(cfg.clone());
    out.timings = timings.then_some(d.timings);
    Ok(out)
}

pub fn run(args: DecodeArgs, cfg: &RunConfig) -> CliResult {
    if !args.bundle.is_dir() {
        let out = decode_one(&args.bundle, cfg, args.timings)?;
        return write_json(&args.out, &out);
    }
    let inputs = collect_inputs(&args.bundle, BUNDLE_SUFFIX)?;
    let decoded = inputs
        .par_iter()
        .map(|(_, p)| decode_one(p, cfg, args.timings))
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(&args.out)?;
    for ((id, _), s) in inputs.iter().zip(&decoded) {
        write_json(&args.out.join(format!("{id}{STRUCTURE_SUFFIX}")), s)?;
    }
    log::info!(
        "decoded {} bundles into {}",
        decoded.len(),
        args.out.display()
    );
    Ok(())
}
