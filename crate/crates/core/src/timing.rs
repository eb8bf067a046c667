//! Timing workloads comparing keypoint-offset line decoding against a
//! per-line dense mask baseline.
//!
//! Both paths share the start-point heads and the lattice builder. The
//! keypoint path then regresses one offset per keypoint from sampled line
//! features; the baseline computes a full-resolution mask per line with a
//! line-specific kernel and reads each keypoint off the mask argmax.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::geometry::{GridLattice, ImageSize, TableStructure};
use crate::heads::{
    line_mean_feature, offset_head, sample_proposal_features, start_point_head, BranchWeights,
    FeatureMap, Tensor,
};
use crate::kor::{
    apply_offsets, build_lattice, detect_start_indices, detect_start_points, make_proposals,
    num_keypoints, Axis, SeparationLine, DEFAULT_START_THRESHOLD, DEFAULT_STRIDE,
};
use crate::merge::{encode_actions, MergeActionMap};
use crate::pipeline::decode_bundle;
use crate::runner::feature_dims;
use crate::syngen::line_positions;

pub const DEFAULT_BENCH_CHANNELS: usize = 64;
const START_LEVEL: f64 = 3.0;
const OFFSET_WEIGHT_SCALE: f64 = 0.01;

/// Inputs for one `rows + cols` size.
#[derive(Debug, Clone)]
pub struct SplitWorkload {
    pub rows: usize,
    pub cols: usize,
    pub image: ImageSize,
    pub stride: u32,
    pub f: FeatureMap,
    pub row_sd: FeatureMap,
    pub row_lr: FeatureMap,
    pub col_sd: FeatureMap,
    pub col_lr: FeatureMap,
    pub row: BranchWeights,
    pub col: BranchWeights,
    /// Equivalent bundle for timing the decoder alone.
    pub bundle: PredictionBundle,
}

fn random_map(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap {
    let data = (0..c * h * w)
        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) as f64)
        .collect();
    FeatureMap {
        channels: c,
        height: h,
        width: w,
        data,
    }
}

fn branch_weights(c: usize, rng: &mut impl Rng) -> BranchWeights {
    let mut start_weight = Tensor::zeros(&[2, c]);
    start_weight.data[0] = -1.0;
    start_weight.data[c] = 1.0;
    let offset_weight = Tensor {
        dims: vec![2 * c, 3],
        data: (0..6 * c)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * OFFSET_WEIGHT_SCALE)
            .collect(),
    };
    BranchWeights {
        start_weight,
        start_bias: Tensor::zeros(&[2]),
        offset_weight,
        offset_bias: Tensor::zeros(&[1]),
    }
}

/// A `rows x cols` table on `image`: starts are planted in channel 0 of the
/// start-detection maps at evenly spaced lines.
pub fn split_workload(
    rows: usize,
    cols: usize,
    image: ImageSize,
    channels: usize,
    seed: u64,
) -> Result<SplitWorkload> {
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(Error::invalid(
            "workload needs positive rows, columns and channels",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = channels;
    let [(fh, fw), (rh, rw), (ch, cw)] = feature_dims(image);
    let row_pos: Vec<usize> = line_positions(rows + 1, image.height)
        .iter()
        .map(|p| (p / 2.0) as usize)
        .collect();
    let col_pos: Vec<usize> = line_positions(cols + 1, image.width)
        .iter()
        .map(|p| (p / 2.0) as usize)
        .collect();
    if row_pos.windows(2).any(|w| w[1] <= w[0] + 1) || col_pos.windows(2).any(|w| w[1] <= w[0] + 1)
    {
        return Err(Error::invalid(format!(
            "{rows}x{cols} lines do not fit a {}x{} image",
            image.width, image.height
        )));
    }
    let f = random_map(c, fh, fw, &mut rng);
    let mut row_sd = random_map(c, rh, rw, &mut rng);
    let row_lr = random_map(c, rh, rw, &mut rng);
    let mut col_sd = random_map(c, ch, cw, &mut rng);
    let col_lr = random_map(c, ch, cw, &mut rng);
    for y in 0..rh {
        let v = if row_pos.contains(&y) {
            START_LEVEL
        } else {
            -START_LEVEL
        };
        (0..rw).for_each(|x| *row_sd.at_mut(0, y, x) = v);
    }
    for x in 0..cw {
        let v = if col_pos.contains(&x) {
            START_LEVEL
        } else {
            -START_LEVEL
        };
        (0..ch).for_each(|y| *col_sd.at_mut(0, y, x) = v);
    }
    let row = branch_weights(c, &mut rng);
    let col = branch_weights(c, &mut rng);

    let spike = |len: usize, at: &[usize]| -> Vec<f64> {
        (0..len).map(|i| at.contains(&i) as u8 as f64).collect()
    };
    let map: MergeActionMap = encode_actions(&TableStructure::singletons(rows, cols))?;
    let bundle = PredictionBundle {
        image_size: image,
        stride: DEFAULT_STRIDE,
        row_start_prob: spike(image.half_height(), &row_pos),
        col_start_prob: spike(image.half_width(), &col_pos),
        row_offsets: vec![vec![0.0; num_keypoints(image.width, DEFAULT_STRIDE)?]; rows + 1],
        col_offsets: vec![vec![0.0; num_keypoints(image.height, DEFAULT_STRIDE)?]; cols + 1],
        actions: map.to_strings(),
        start_grid: map.start_grid_rows(),
    };
    Ok(SplitWorkload {
        rows,
        cols,
        image,
        stride: DEFAULT_STRIDE,
        f,
        row_sd,
        row_lr,
        col_sd,
        col_lr,
        row,
        col,
        bundle,
    })
}

impl SplitWorkload {
    fn maps(&self, axis: Axis) -> (&FeatureMap, &FeatureMap, &BranchWeights) {
        match axis {
            Axis::Row => (&self.row_sd, &self.row_lr, &self.row),
            Axis::Col => (&self.col_sd, &self.col_lr, &self.col),
        }
    }
}

fn kor_lines(w: &SplitWorkload, axis: Axis) -> Result<Vec<SeparationLine>> {
    let (sd, lr, bw) = w.maps(axis);
    let probs = start_point_head(sd, axis, bw)?;
    detect_start_points(&probs, DEFAULT_START_THRESHOLD)?
        .into_iter()
        .map(|s| {
            let props = make_proposals(axis.point(0.0, s), axis, w.image, w.stride)?;
            let k = sample_proposal_features(lr, &props);
            let mean = line_mean_feature(&k)?;
            let delta = offset_head(axis, &k, &mean, bw)?;
            apply_offsets(&props, &delta)
        })
        .collect()
}

/// Keypoint path: start heads, detection, proposals, offset regression and
/// lattice.
pub fn kor_split(w: &SplitWorkload) -> Result<GridLattice> {
    let rows = kor_lines(w, Axis::Row)?;
    let cols = kor_lines(w, Axis::Col)?;
    Ok(build_lattice(&rows, &cols)?.0)
}

/// Decoder alone on the equivalent bundle.
pub fn kor_decode(w: &SplitWorkload) -> Result<GridLattice> {
    Ok(decode_bundle(&w.bundle, DEFAULT_START_THRESHOLD)?.lattice)
}

fn mask_lines(w: &SplitWorkload, axis: Axis) -> Result<Vec<SeparationLine>> {
    let (sd, _, bw) = w.maps(axis);
    let probs = start_point_head(sd, axis, bw)?;
    let starts = detect_start_indices(&probs, DEFAULT_START_THRESHOLD)?;
    let f = &w.f;
    let (fh, fw) = (f.height, f.width);
    let plane = fh * fw;
    let across_len = match axis {
        Axis::Row => fh,
        Axis::Col => fw,
    };
    let nk = num_keypoints(axis.along_extent(w.image), w.stride)?;
    let mut mask = vec![0.0; plane];
    let mut lines = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        // Line kernel: the feature vector at the start point.
        let kernel: Vec<f64> = (0..f.channels)
            .map(|c| match axis {
                Axis::Row => f.at(c, s, 0),
                Axis::Col => f.at(c, 0, s),
            })
            .collect();
        mask.iter_mut().for_each(|v| *v = 0.0);
        for (c, &kc) in kernel.iter().enumerate() {
            let src = &f.data[c * plane..(c + 1) * plane];
            for (m, v) in mask.iter_mut().zip(src) {
                *m += kc * v;
            }
        }
        // Each line owns the band halfway to its neighbours.
        let lo = if k == 0 {
            0
        } else {
            (starts[k - 1] + s) / 2 + 1
        };
        let hi = starts.get(k + 1).map_or(across_len, |&n| (s + n) / 2 + 1);
        let keypoints = (0..nk)
            .map(|j| {
                let along = (j as u64 * w.stride as u64) as f64;
                let t = ((along / 2.0) as usize).min(match axis {
                    Axis::Row => fw - 1,
                    Axis::Col => fh - 1,
                });
                let at = |a: usize| match axis {
                    Axis::Row => mask[a * fw + t],
                    Axis::Col => mask[t * fw + a],
                };
                let mut best = lo;
                for a in lo + 1..hi {
                    if at(a) > at(best) {
                        best = a;
                    }
                }
                axis.point(along, 2.0 * best as f64)
            })
            .collect();
        lines.push(SeparationLine {
            axis,
            start: axis.point(0.0, 2.0 * s as f64),
            keypoints,
            extent: axis.along_extent(w.image) as f64,
        });
    }
    Ok(lines)
}

/// Dense-mask baseline: start heads, detection, one `C x H/2 x W/2` mask
/// per line, keypoint argmax and lattice.
pub fn is_baseline(w: &SplitWorkload) -> Result<GridLattice> {
    let rows = mask_lines(w, Axis::Row)?;
    let cols = mask_lines(w, Axis::Col)?;
    Ok(build_lattice(&rows, &cols)?.0)
}

/// Median and median absolute deviation, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub median_us: f64,
    pub mad_us: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl Stat {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut v = samples.to_vec();
        let m = median(&mut v);
        let mut dev: Vec<f64> = samples.iter().map(|x| (x - m).abs()).collect();
        Stat {
            median_us: m,
            mad_us: median(&mut dev),
        }
    }
}

fn time_once<T>(f: impl FnOnce() -> Result<T>) -> Result<f64> {
    let t = Instant::now();
    std::hint::black_box(f()?);
    Ok(t.elapsed().as_secs_f64() * 1e6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Table rows plus columns.
    pub size: usize,
    pub kor_split: Stat,
    pub kor_decode: Stat,
    pub is_baseline: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub image: u32,
    pub channels: usize,
    pub repeats: usize,
    pub seed: u64,
}

/// Times all three paths for each `rows + cols` total, split as evenly as
/// possible between rows and columns.
pub fn run_bench(sizes: &[usize], s: &BenchSettings) -> Result<Vec<BenchRow>> {
    if s.repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    let image = ImageSize::new(s.image, s.image);
    let workloads = sizes
        .iter()
        .map(|&size| {
            if size < 2 {
                return Err(Error::invalid(format!(
                    "size {size} needs at least one row and one column"
                )));
            }
            let rows = size / 2;
            let w = split_workload(rows, size - rows, image, s.channels, s.seed)?;
            // One untimed pass per path to warm caches.
            kor_split(&w)?;
            is_baseline(&w)?;
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    // Repeats are interleaved across sizes and paths so slow drift in machine
    // load lands on every cell of the table alike.
    let mut samples = vec![[const { Vec::new() }; 3]; sizes.len()];
    for _ in 0..s.repeats {
        for (w, cell) in workloads.iter().zip(samples.iter_mut()) {
            cell[0].push(time_once(|| kor_split(w))?);
            cell[1].push(time_once(|| kor_decode(w))?);
            cell[2].push(time_once(|| is_baseline(w))?);
        }
    }
    Ok(sizes
        .iter()
        .zip(&samples)
        .map(|(&size, cell)| BenchRow {
            size,
            kor_split: Stat::from_samples(&cell[0]),
            kor_decode: Stat::from_samples(&cell[1]),
            is_baseline: Stat::from_samples(&cell[2]),
        })
        .collect())
}

/// Growth ratios between two sizes of a bench table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub small: usize,
    pub large: usize,
    /// KOR time at `large` over KOR time at `small`.
    pub kor_ratio: f64,
    pub is_ratio: f64,
    /// Baseline time over KOR time, both at `large`.
    pub is_over_kor: f64,
    pub decode_ratio: f64,
    pub pass: bool,
}

pub const MAX_KOR_RATIO: f64 = 5.0;
pub const MIN_IS_RATIO: f64 = 4.0;
pub const MIN_IS_OVER_KOR: f64 = 3.0;

pub fn check_trend(rows: &[BenchRow], small: usize, large: usize) -> Result<TrendCheck> {
    let find = |n: usize| {
        rows.iter()
            .find(|r| r.size == n)
            .ok_or_else(|| Error::invalid(format!("bench table has no size {n}")))
    };
    let (a, b) = (find(small)?, find(large)?);
    let kor_ratio = b.kor_split.median_us / a.kor_split.median_us;
    let is_ratio = b.is_baseline.median_us / a.is_baseline.median_us;
    let is_over_kor = b.is_baseline.median_us / b.kor_split.median_us;
    Ok(TrendCheck {
        small,
        large,
        kor_ratio,
        is_ratio,
        is_over_kor,
        decode_ratio: b.kor_decode.median_us / a.kor_decode.median_us,
        pass: kor_ratio <= MAX_KOR_RATIO
            && is_ratio >= MIN_IS_RATIO
            && is_over_kor >= MIN_IS_OVER_KOR,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SplitWorkload {
        split_workload(3, 4, ImageSize::new(128, 128), 4, 1).unwrap()
    }

    #[test]
    fn both_paths_find_the_lattice() {
        let w = small();
        let a = kor_split(&w).unwrap();
        let b = is_baseline(&w).unwrap();
        let d = kor_decode(&w).unwrap();
        assert_eq!((a.rows, a.cols), (3, 4));
        assert_eq!((b.rows, b.cols), (3, 4));
        assert_eq!((d.rows, d.cols), (3, 4));
    }

    #[test]
    fn kor_stays_near_straight() {
        let w = small();
        let lat = kor_split(&w).unwrap();
        let want = kor_decode(&w).unwrap();
        for (p, q) in lat.corners.iter().zip(&want.corners) {
            assert!((p.x - q.x).abs() < 1.0 && (p.y - q.y).abs() < 1.0);
        }
    }

    #[test]
    fn stat_median_and_mad() {
        let s = Stat::from_samples(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.median_us, 2.5);
        assert_eq!(s.mad_us, 1.0);
    }

    #[test]
    fn too_dense_is_rejected() {
        assert!(split_workload(100, 2, ImageSize::new(128, 128), 2, 0).is_err());
    }
}
