use std::path::PathBuf;

use clap::Args;
use splitmerge_core::gradcheck::run_gradcheck;
use splitmerge_core::timing::{
    check_trend, run_bench, BenchRow, BenchSettings, TrendCheck, DEFAULT_BENCH_CHANNELS,
};

use crate::error::{CliError, CliResult};
use crate::io::write_json;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per loss family.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale analytic gradients to check that the harness notices.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let r = run_gradcheck(args.trials, args.seed, args.corrupt_gradient)?;
    println!("step={:e} tolerance={:e}", r.step, r.tolerance);
    for f in &r.families {
        println!(
            "{:<20} trials={} worst_rel_err={:.3e} (trial {}) {}",
            f.family,
            f.trials,
            f.worst_rel_err,
            f.worst_trial,
            if f.pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "focal(gamma=0, alpha=1) vs cross-entropy max diff={:.3e}",
        r.focal_ce_max_diff
    );
    if let Some(path) = &args.out {
        write_json(path, &r)?;
    }
    if !r.pass {
        return Err(CliError::Acceptance("gradient check failed".into()));
    }
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, String> {
    let sizes = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad size `{t}`: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.is_empty() {
        return Err("no sizes given".into());
    }
    Ok(sizes)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated totals of table rows plus columns.
    #[arg(long, default_value = "20,40,60,80,100,120")]
    sizes: String,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 512)]
    image: u32,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Feature channels of the synthetic workload.
    #[arg(long, default_value_t = DEFAULT_BENCH_CHANNELS)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail unless the smallest-to-largest size trend holds.
    #[arg(long)]
    check: bool,
    /// Write the table and trend as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct BenchReport<'a> {
    settings: &'a BenchSettings,
    rows: &'a [BenchRow],
    trend: Option<TrendCheck>,
}

pub fn bench(args: BenchArgs) -> CliResult {
    let sizes = parse_sizes(&args.sizes).map_err(CliError::Input)?;
    let settings = BenchSettings {
        image: args.image,
        channels: args.channels,
        repeats: args.repeats,
        seed: args.seed,
    };
    let rows = run_bench(&sizes, &settings)?;
    println!(
        "{:>6} {:>14} {:>10} {:>14} {:>10} {:>14} {:>10}",
        "size", "kor_split_us", "mad", "kor_decode_us", "mad", "is_us", "mad"
    );
    for r in &rows {
        println!(
            "{:>6} {:>14.1} {:>10.1} {:>14.1} {:>10.1} {:>14.1} {:>10.1}",
            r.size,
            r.kor_split.median_us,
            r.kor_split.mad_us,
            r.kor_decode.median_us,
            r.kor_decode.mad_us,
            r.is_baseline.median_us,
            r.is_baseline.mad_us
        );
    }
    let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
    let trend = if lo < hi {
        Some(check_trend(&rows, lo, hi)?)
    } else {
        None
    };
    if let Some(t) = &trend {
        println!(
            "trend {lo}->{hi}: kor x{:.2}  is x{:.2}  is/kor at {hi} x{:.2}  decode-only x{:.2}  {}",
            t.kor_ratio,
            t.is_ratio,
            t.is_over_kor,
            t.decode_ratio,
            if t.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.out {
        write_json(
            path,
            &BenchReport {
                settings: &settings,
                rows: &rows,
                trend,
            },
        )?;
    }
    if args.check {
        match trend {
            Some(t) if t.pass => {}
            Some(_) => return Err(CliError::Acceptance("bench trend check failed".into())),
            None => {
                return Err(CliError::Input(
                    "--check needs at least two distinct sizes".into(),
                ))
            }
        }
    }
    Ok(())
}
