//! Synthetic deformed tables with exact ground truth.
//!
//! A sample is a random rectangular partition laid over a lattice of gently
//! warped lines, plus the prediction bundle a perfect model would emit for
//! it. Decoding that bundle must give back the partition exactly.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::geometry::{CellSpan, GridLattice, ImageSize, TableStructure};
use crate::kor::{build_lattice, make_proposals, Axis, SeparationLine, DEFAULT_STRIDE};
use crate::losses::{dilate_start_gt, TableStyle};
use crate::merge::{cell_polygons, encode_actions, MergeAction};

/// Smallest allowed distance between neighbouring base lines, in pixels.
/// Keeps the dilated start targets of adjacent lines apart.
pub const MIN_LINE_SPACING: f64 = 20.0;
pub const DEFAULT_MAX_SPAN: usize = 4;
/// Half thickness, in half-resolution indices, of a wireless separation
/// region.
pub const WIRELESS_HALF_THICKNESS: usize = 3;
/// Per-index falloff of start probabilities away from the line centre.
const TENT_SLOPE: f64 = 0.04;
/// Keypoint coordinates are snapped to this grid so offsets add back
/// exactly.
const COORD_QUANTUM: f64 = 256.0;
/// Warp frequency range, in cycles per image extent.
const FREQ_RANGE: (f64, f64) = (0.25, 1.0);
const MERGE_PASSES: usize = 2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random partition with spans capped at [`DEFAULT_MAX_SPAN`].
pub fn gen_layout(seed: u64, rows: usize, cols: usize, span_prob: f64) -> Result<TableStructure> {
    gen_layout_bounded(seed, rows, cols, span_prob, DEFAULT_MAX_SPAN)
}

/// Starts from singletons and, over a few passes in canonical cell order,
/// merges each cell with probability `span_prob` into its right or lower
/// neighbour when that neighbour covers exactly the same rows (resp.
/// columns) and the merged span stays within `max_span`.
pub fn gen_layout_bounded(
    seed: u64,
    rows: usize,
    cols: usize,
    span_prob: f64,
    max_span: usize,
) -> Result<TableStructure> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "layout needs at least one row and column, got {rows}x{cols}"
        )));
    }
    if !(0.0..1.0).contains(&span_prob) {
        return Err(Error::invalid(format!(
            "span probability {span_prob} outside [0, 1)"
        )));
    }
    if max_span == 0 {
        return Err(Error::invalid("maximum span must be positive"));
    }
    let mut rng = rng(seed);
    let mut cells: Vec<Option<CellSpan>> = TableStructure::singletons(rows, cols)
        .cells
        .into_iter()
        .map(Some)
        .collect();
    let mut owner: Vec<usize> = (0..rows * cols).collect();
    for _ in 0..MERGE_PASSES {
        for k in 0..cells.len() {
            let Some(c) = cells[k] else { continue };
            if !rng.random_bool(span_prob) {
                continue;
            }
            let right = rng.random_bool(0.5);
            let other = if right {
                (c.col_end + 1 < cols).then(|| owner[c.row_start * cols + c.col_end + 1])
            } else {
                (c.row_end + 1 < rows).then(|| owner[(c.row_end + 1) * cols + c.col_start])
            };
            let Some(o) = other else { continue };
            let d = cells[o].expect("owner map points at live cells");
            let merged = if right {
                (d.row_start == c.row_start
                    && d.row_end == c.row_end
                    && d.col_end - c.col_start < max_span)
                    .then(|| CellSpan::new(c.row_start, c.row_end, c.col_start, d.col_end))
            } else {
                (d.col_start == c.col_start
                    && d.col_end == c.col_end
                    && d.row_end - c.row_start < max_span)
                    .then(|| CellSpan::new(c.row_start, d.row_end, c.col_start, c.col_end))
            };
            let Some(m) = merged else { continue };
            for r in d.row_start..=d.row_end {
                for cc in d.col_start..=d.col_end {
                    owner[r * cols + cc] = k;
                }
            }
            cells[k] = Some(m);
            cells[o] = None;
        }
    }
    TableStructure::new(rows, cols, cells.into_iter().flatten().collect())
}

/// `n` base positions evenly spread over `extent`, each snapped to an even
/// pixel so it is representable by a half-resolution start index.
pub fn line_positions(n: usize, extent: u32) -> Vec<f64> {
    let s = extent as f64 / n as f64;
    (0..n)
        .map(|k| 2.0 * ((s / 2.0 + k as f64 * s) / 2.0).round())
        .collect()
}

fn min_spacing(pos: &[f64]) -> f64 {
    pos.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Exclusive upper bound on the warp amplitude for a `rows x cols` grid:
/// half the smallest base spacing on either axis.
pub fn max_amplitude(rows: usize, cols: usize, image: ImageSize) -> f64 {
    let r = min_spacing(&line_positions(rows + 1, image.height));
    let c = min_spacing(&line_positions(cols + 1, image.width));
    r.min(c) / 2.0
}

/// Smooth displacement `a(s) = A/2 * sum_k w_k (sin(2 pi f_k s / L + phi_k) - sin phi_k)`.
///
/// `a(0) = 0` and `|a| <= A` everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineWarp {
    pub amplitude: f64,
    pub weights: [f64; 2],
    /// Cycles per image extent.
    pub freqs: [f64; 2],
    pub phases: [f64; 2],
    pub extent: f64,
}

impl LineWarp {
    fn random(amplitude: f64, extent: f64, rng: &mut impl Rng) -> Self {
        let w0: f64 = rng.random();
        let mut f = || rng.random_range(FREQ_RANGE.0..FREQ_RANGE.1);
        let freqs = [f(), f()];
        let phases = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
        LineWarp {
            amplitude,
            weights: [w0, 1.0 - w0],
            freqs,
            phases,
            extent,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..2 {
            let arg = TAU * self.freqs[k] * s / self.extent + self.phases[k];
            acc += self.weights[k] * (arg.sin() - self.phases[k].sin());
        }
        self.amplitude / 2.0 * acc
    }
}

fn quantize(v: f64) -> f64 {
    (v * COORD_QUANTUM).round() / COORD_QUANTUM
}

/// Warped lines together with the warp of each line.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedLines {
    pub row_lines: Vec<SeparationLine>,
    pub col_lines: Vec<SeparationLine>,
    pub row_warps: Vec<LineWarp>,
    pub col_warps: Vec<LineWarp>,
}

/// `rows + 1` row lines and `cols + 1` column lines with keypoints at the
/// given stride, each displaced by its own random [`LineWarp`].
pub fn warp_lattice_detailed(
    rows: usize,
    cols: usize,
    image: ImageSize,
    amplitude: f64,
    stride: u32,
    seed: u64,
) -> Result<WarpedLines> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "lattice needs at least one row and column, got {rows}x{cols}"
        )));
    }
    let bound = max_amplitude(rows, cols, image);
    if 2.0 * bound < MIN_LINE_SPACING {
        return Err(Error::invalid(format!(
            "{rows}x{cols} grid leaves {:.1} px between lines in a {}x{} image; at least {MIN_LINE_SPACING} needed",
            2.0 * bound,
            image.width,
            image.height
        )));
    }
    if !(amplitude >= 0.0 && amplitude < bound) {
        return Err(Error::invalid(format!(
            "amplitude {amplitude} must lie in [0, {bound}) for a {rows}x{cols} grid"
        )));
    }
    let mut rng = rng(seed);
    let mut axis_lines = |axis: Axis, n: usize| -> Result<(Vec<SeparationLine>, Vec<LineWarp>)> {
        let along = axis.along_extent(image) as f64;
        let hi = axis.across_extent(image) as f64 - 1.0;
        let mut lines = Vec::with_capacity(n);
        let mut warps = Vec::with_capacity(n);
        for base in line_positions(n, axis.across_extent(image)) {
            let warp = LineWarp::random(amplitude, along, &mut rng);
            let props = make_proposals(axis.point(0.0, base), axis, image, stride)?;
            let keypoints = props
                .points
                .iter()
                .map(|p| {
                    let s = axis.along(*p);
                    axis.point(s, quantize(base + warp.eval(s)).clamp(0.0, hi))
                })
                .collect();
            lines.push(SeparationLine {
                axis,
                start: props.start,
                keypoints,
                extent: along,
            });
            warps.push(warp);
        }
        Ok((lines, warps))
    };
    let (row_lines, row_warps) = axis_lines(Axis::Row, rows + 1)?;
    let (col_lines, col_warps) = axis_lines(Axis::Col, cols + 1)?;
    Ok(WarpedLines {
        row_lines,
        col_lines,
        row_warps,
        col_warps,
    })
}

pub fn warp_lattice(
    rows: usize,
    cols: usize,
    image: ImageSize,
    amplitude: f64,
    stride: u32,
    seed: u64,
) -> Result<(Vec<SeparationLine>, Vec<SeparationLine>)> {
    let w = warp_lattice_detailed(rows, cols, image, amplitude, stride, seed)?;
    Ok((w.row_lines, w.col_lines))
}

/// Start probabilities a perfect detector would output: the dilated
/// target, peaked at each line centre so the run argmax lands on it.
pub fn start_prob_vector(starts: &[usize], style: TableStyle, len: usize) -> Result<Vec<f64>> {
    let regions: Vec<(usize, usize)> = starts
        .iter()
        .map(|&c| {
            (
                c.saturating_sub(WIRELESS_HALF_THICKNESS),
                c + WIRELESS_HALF_THICKNESS,
            )
        })
        .collect();
    let mut p = dilate_start_gt(starts, style, Some(&regions), len)?;
    for (i, v) in p.iter_mut().enumerate() {
        if *v > 0.0 {
            let d = starts.iter().map(|&c| c.abs_diff(i)).min().unwrap_or(0);
            *v = 1.0 - TENT_SLOPE * d as f64;
        }
    }
    Ok(p)
}

fn start_index(line: &SeparationLine) -> Result<usize> {
    let s = line.start_coord();
    if s < 0.0 || s.fract() != 0.0 || s % 2.0 != 0.0 {
        return Err(Error::invalid(format!(
            "line start {s} is not an even pixel"
        )));
    }
    Ok((s / 2.0) as usize)
}

/// Bundle a perfect model would produce for `structure` over these lines.
pub fn emit_gt_bundle(
    structure: &TableStructure,
    row_lines: &[SeparationLine],
    col_lines: &[SeparationLine],
    image: ImageSize,
    style: TableStyle,
    stride: u32,
) -> Result<PredictionBundle> {
    if row_lines.len() != structure.rows + 1 || col_lines.len() != structure.cols + 1 {
        return Err(Error::shape(format!(
            "{}x{} structure needs {} row and {} column lines, got {} and {}",
            structure.rows,
            structure.cols,
            structure.rows + 1,
            structure.cols + 1,
            row_lines.len(),
            col_lines.len()
        )));
    }
    let mut probs = Vec::new();
    let mut offsets = Vec::new();
    for (axis, lines, len) in [
        (Axis::Row, row_lines, image.half_height()),
        (Axis::Col, col_lines, image.half_width()),
    ] {
        let starts = lines.iter().map(start_index).collect::<Result<Vec<_>>>()?;
        probs.push(start_prob_vector(&starts, style, len)?);
        let mut axis_offsets = Vec::with_capacity(lines.len());
        for l in lines {
            let props = make_proposals(l.start, axis, image, stride)?;
            if props.points.len() != l.keypoints.len() {
                return Err(Error::shape(format!(
                    "line at {} has {} keypoints, stride {stride} gives {}",
                    l.start_coord(),
                    l.keypoints.len(),
                    props.points.len()
                )));
            }
            axis_offsets.push(
                props
                    .points
                    .iter()
                    .zip(&l.keypoints)
                    .map(|(p, k)| axis.across(*k) - axis.across(*p))
                    .collect(),
            );
        }
        offsets.push(axis_offsets);
    }
    let map = encode_actions(structure)?;
    let col_offsets = offsets.pop().unwrap();
    let row_offsets = offsets.pop().unwrap();
    let col_start_prob = probs.pop().unwrap();
    let row_start_prob = probs.pop().unwrap();
    Ok(PredictionBundle {
        image_size: image,
        stride,
        row_start_prob,
        col_start_prob,
        row_offsets,
        col_offsets,
        actions: map.to_strings(),
        start_grid: map.start_grid_rows(),
    })
}

/// Gaussian noise on probabilities (clamped to `[0, 1]`) and offsets, and
/// uniform relabelling of a `flip_rate` fraction of merge actions. Start
/// flags are left alone. Zero noise returns the bundle unchanged.
pub fn perturb_bundle(
    b: &PredictionBundle,
    sigma_prob: f64,
    sigma_offset: f64,
    flip_rate: f64,
    seed: u64,
) -> Result<PredictionBundle> {
    let valid_sigma = |s: f64| s >= 0.0 && s.is_finite();
    if !valid_sigma(sigma_prob) || !valid_sigma(sigma_offset) {
        return Err(Error::invalid(
            "noise levels must be finite and non-negative",
        ));
    }
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::invalid(format!(
            "flip rate {flip_rate} outside [0, 1]"
        )));
    }
    let mut rng = rng(seed);
    let mut out = b.clone();
    if sigma_prob > 0.0 {
        let n = Normal::new(0.0, sigma_prob).map_err(|e| Error::invalid(e.to_string()))?;
        for v in out
            .row_start_prob
            .iter_mut()
            .chain(out.col_start_prob.iter_mut())
        {
            *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if sigma_offset > 0.0 {
        let n = Normal::new(0.0, sigma_offset).map_err(|e| Error::invalid(e.to_string()))?;
        for v in out
            .row_offsets
            .iter_mut()
            .chain(out.col_offsets.iter_mut())
            .flatten()
        {
            *v += n.sample(&mut rng);
        }
    }
    if flip_rate > 0.0 {
        for row in out.actions.iter_mut() {
            *row = row
                .chars()
                .map(|ch| {
                    if !rng.random_bool(flip_rate) {
                        return ch;
                    }
                    let cur = MergeAction::from_char(ch).map_or(0, MergeAction::index);
                    let k = (cur + rng.random_range(1..4)) % 4;
                    MergeAction::ALL[k].as_char()
                })
                .collect();
        }
    }
    Ok(out)
}

/// Generator settings for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynParams {
    pub image: ImageSize,
    pub rows: usize,
    pub cols: usize,
    pub span_prob: f64,
    pub max_span: usize,
    /// Warp amplitude in pixels.
    pub amplitude: f64,
    pub style: TableStyle,
    pub stride: u32,
}

impl Default for SynParams {
    fn default() -> Self {
        SynParams {
            image: ImageSize::new(512, 512),
            rows: 4,
            cols: 4,
            span_prob: 0.3,
            max_span: DEFAULT_MAX_SPAN,
            amplitude: 0.0,
            style: TableStyle::Wired,
            stride: DEFAULT_STRIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynSample {
    pub image_size: ImageSize,
    /// Ground-truth cells with polygons.
    pub structure: TableStructure,
    pub lattice: GridLattice,
    pub bundle: PredictionBundle,
    pub seed: u64,
    pub style: TableStyle,
}

/// One sample, a pure function of `(params, seed)`.
pub fn generate_sample(params: &SynParams, seed: u64) -> Result<SynSample> {
    let mut r = rng(seed);
    let (layout_seed, warp_seed): (u64, u64) = (r.random(), r.random());
    let structure = gen_layout_bounded(
        layout_seed,
        params.rows,
        params.cols,
        params.span_prob,
        params.max_span,
    )?;
    let (row_lines, col_lines) = warp_lattice(
        params.rows,
        params.cols,
        params.image,
        params.amplitude,
        params.stride,
        warp_seed,
    )?;
    let bundle = emit_gt_bundle(
        &structure,
        &row_lines,
        &col_lines,
        params.image,
        params.style,
        params.stride,
    )?;
    let (lattice, _) = build_lattice(&row_lines, &col_lines)?;
    let structure = cell_polygons(&structure, &lattice)?;
    Ok(SynSample {
        image_size: params.image,
        structure,
        lattice,
        bundle,
        seed,
        style: params.style,
    })
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (`P5`).
    pub fn write_pgm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }
}

pub const BACKGROUND: u8 = 255;
pub const STROKE: u8 = 0;
const SHADES: [u8; 2] = [240, 222];

/// Wired samples draw every separation line one pixel wide; wireless
/// samples shade each cell instead.
pub fn render_sample(s: &SynSample) -> GrayImage {
    let (w, h) = (s.image_size.width as usize, s.image_size.height as usize);
    let mut pixels = vec![BACKGROUND; w * h];
    let lat = &s.lattice;
    match s.style {
        TableStyle::Wired => {
            for l in &lat.row_lines {
                for x in 0..w {
                    let y = l.value_at(x as f64).round().clamp(0.0, (h - 1) as f64) as usize;
                    pixels[y * w + x] = STROKE;
                }
            }
            for l in &lat.col_lines {
                for y in 0..h {
                    let x = l.value_at(y as f64).round().clamp(0.0, (w - 1) as f64) as usize;
                    pixels[y * w + x] = STROKE;
                }
            }
        }
        TableStyle::Wireless => {
            let owner = s.structure.owner_map();
            for y in 0..h {
                for x in 0..w {
                    let (fx, fy) = (x as f64, y as f64);
                    let i = lat.row_lines.partition_point(|l| l.value_at(fx) <= fy);
                    let j = lat.col_lines.partition_point(|l| l.value_at(fy) <= fx);
                    if i == 0 || j == 0 || i > lat.rows || j > lat.cols {
                        continue;
                    }
                    let c = &s.structure.cells[owner[(i - 1) * lat.cols + (j - 1)]];
                    pixels[y * w + x] = SHADES[(c.row_start + c.col_start) % 2];
                }
            }
        }
    }
    GrayImage {
        width: w,
        height: h,
        pixels,
    }
}
