//! Shared workloads for the criterion benches.

use splitmerge_core::syngen::{generate_sample, max_amplitude, SynParams, SynSample};
use splitmerge_core::timing::{split_workload, SplitWorkload, DEFAULT_BENCH_CHANNELS};
use splitmerge_core::{ImageSize, Result, TableStyle};

pub const IMAGE: u32 = 512;
pub const SIZES: [usize; 6] = [20, 40, 60, 80, 100, 120];

/// Split-stage workload for a `rows + cols` total, rows taking the smaller half.
pub fn split_case(size: usize) -> Result<SplitWorkload> {
    let rows = size / 2;
    split_workload(
        rows,
        size - rows,
        ImageSize::new(IMAGE, IMAGE),
        DEFAULT_BENCH_CHANNELS,
        0,
    )
}

/// Ground-truth sample with a warp at 30% of the line spacing.
pub fn warped_sample(rows: usize, cols: usize, style: TableStyle, seed: u64) -> Result<SynSample> {
    let image = ImageSize::new(IMAGE, IMAGE);
    let params = SynParams {
        image,
        rows,
        cols,
        amplitude: 0.6 * max_amplitude(rows, cols, image),
        style,
        ..SynParams::default()
    };
    generate_sample(&params, seed)
}
