use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use splitmerge_core::syngen::{
    generate_sample, max_amplitude, render_sample, SynParams, DEFAULT_MAX_SPAN,
};
use splitmerge_core::{ImageSize, RunConfig, StructureFile, TableStyle};

use crate::error::{CliError, CliResult};
use crate::io::{create_dir, parse_image, write_json, BUNDLE_SUFFIX, STRUCTURE_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleArg {
    Wired,
    Wireless,
    /// Each sample picks wired or wireless from its own seed.
    Mixed,
}

#[derive(Debug, Args)]
pub struct SyngenArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Probability that a grid tries to absorb a neighbour.
    #[arg(long, default_value_t = 0.3)]
    span_prob: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SPAN)]
    max_span: usize,
    /// Line warp amplitude in pixels.
    #[arg(long, default_value_t = 0.0)]
    amplitude: f64,
    #[arg(long, value_enum, default_value_t = StyleArg::Wired)]
    style: StyleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "512", value_parser = parse_image)]
    image: ImageSize,
    /// Also write a PGM raster per sample.
    #[arg(long)]
    render: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ManifestEntry {
    id: String,
    seed: u64,
    style: TableStyle,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    n: usize,
    seed: u64,
    style: StyleArg,
    render: bool,
    params: &'a SynParams,
    config: &'a RunConfig,
    samples: Vec<ManifestEntry>,
}

pub fn run(args: SyngenArgs, cfg: &RunConfig) -> CliResult {
    let params = SynParams {
        image: args.image,
        rows: args.rows,
        cols: args.cols,
        span_prob: args.span_prob,
        max_span: args.max_span,
        amplitude: args.amplitude,
        style: match args.style {
            StyleArg::Wireless => TableStyle::Wireless,
            _ => TableStyle::Wired,
        },
        stride: cfg.stride,
    };
    if args.rows > 0 && args.cols > 0 {
        let bound = max_amplitude(args.rows, args.cols, args.image);
        if !(args.amplitude >= 0.0 && args.amplitude < bound) {
            return Err(CliError::Input(format!(
                "--amplitude {} must lie in [0, {bound}) for a {}x{} grid in a {}x{} image",
                args.amplitude, args.rows, args.cols, args.image.width, args.image.height
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let entries: Vec<ManifestEntry> = (0..args.n)
        .map(|i| {
            let seed: u64 = rng.random();
            let style = match args.style {
                StyleArg::Wired => TableStyle::Wired,
                StyleArg::Wireless => TableStyle::Wireless,
                StyleArg::Mixed if seed & 1 == 0 => TableStyle::Wired,
                StyleArg::Mixed => TableStyle::Wireless,
            };
            ManifestEntry {
                id: format!("sample_{i:05}"),
                seed,
                style,
            }
        })
        .collect();
    let samples = entries
        .par_iter()
        .map(|e| {
            generate_sample(
                &SynParams {
                    style: e.style,
                    ..params.clone()
                },
                e.seed,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    create_dir(&args.out)?;
    for (e, s) in entries.iter().zip(&samples) {
        let gt = StructureFile::new(s.image_size, s.lattice.clone(), &s.structure);
        write_json(&args.out.join(format!("{}{STRUCTURE_SUFFIX}", e.id)), &gt)?;
        write_json(
            &args.out.join(format!("{}{BUNDLE_SUFFIX}", e.id)),
            &s.bundle,
        )?;
        if args.render {
            let path = args.out.join(format!("{}.pgm", e.id));
            let f = File::create(&path).map_err(|err| CliError::at(&path)(err.into()))?;
            let mut w = BufWriter::new(f);
            render_sample(s).write_pgm(&mut w)?;
            w.flush()?;
        }
    }
    let manifest = Manifest {
        command: "syngen",
        version: env!("CARGO_PKG_VERSION"),
        n: args.n,
        seed: args.seed,
        style: args.style,
        render: args.render,
        params: &params,
        config: cfg,
        samples: entries,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} samples to {}", args.n, args.out.display());
    Ok(())
}
