//! Forward passes of the prediction heads over supplied feature maps.
//!
//! Nothing here is trained: weights come from a container file or from a
//! seeded generator. The heads are deterministic and reentrant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{GridLattice, ImageSize};
use crate::kor::{Axis, OffsetVector, ProposalSet, StartProbVector};

/// Downsampling factor of the line-regression features along the line
/// direction.
pub const LINE_FEATURE_DOWNSAMPLE: f64 = 32.0;

/// Output bins per side of the grid RoiAlign.
pub const DEFAULT_POOL: usize = 3;

/// Dense `channels x height x width` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature value at flat index {i}"
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![v; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Bilinear sample of channel `c` at fractional texel coordinates,
    /// clamped to the map. Texel `(y, x)` sits at integer coordinates.
    pub fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
        let bottom = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Named dense tensor as stored in weight containers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, rounded through `f32`
    /// so the values survive the container format unchanged.
    pub fn uniform(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (fan_in.max(1) as f32).sqrt();
        let n = dims.iter().product();
        let data = (0..n)
            .map(|_| ((rng.random::<f32>() * 2.0 - 1.0) * scale) as f64)
            .collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    fn check(&self, name: &str, dims: &[usize]) -> Result<()> {
        if self.dims != dims || self.data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{name}: expected dims {dims:?}, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Start-point and offset parameters of one split branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    /// `[2, C]`: logits for (not start, start).
    pub start_weight: Tensor,
    pub start_bias: Tensor,
    /// `[2C, 3]`: width-3 kernel over concatenated keypoint features.
    pub offset_weight: Tensor,
    pub offset_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// Every learnable parameter of the split and merge heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub channels: usize,
    pub grid_channels: usize,
    pub pool: usize,
    pub row: BranchWeights,
    pub col: BranchWeights,
    /// `[C_g, C * P * P]`.
    pub grid_proj_weight: Tensor,
    pub grid_proj_bias: Tensor,
    /// `[C_g, 4]` over normalized (x0, y0, x1, y1).
    pub pe_weight: Tensor,
    pub pe_bias: Tensor,
    pub row_attention: AttentionWeights,
    pub col_attention: AttentionWeights,
    /// `[C_g, C_g, 3, 3]`.
    pub start_conv_weight: Tensor,
    pub start_conv_bias: Tensor,
    /// `[C_g]`.
    pub start_cls_weight: Tensor,
    pub start_cls_bias: Tensor,
    /// `[4, 2 C_g]` over (E_s, E).
    pub action_cls_weight: Tensor,
    pub action_cls_bias: Tensor,
}

impl BranchWeights {
    fn build(c: usize, mut make: impl FnMut(&[usize], usize) -> Tensor) -> Self {
        BranchWeights {
            start_weight: make(&[2, c], c),
            start_bias: make(&[2], c),
            offset_weight: make(&[2 * c, 3], 6 * c),
            offset_bias: make(&[1], 6 * c),
        }
    }
}

impl AttentionWeights {
    fn build(g: usize, mut make: impl FnMut(&[usize], usize) -> Tensor) -> Self {
        AttentionWeights {
            query: make(&[g, g], g),
            key: make(&[g, g], g),
            value: make(&[g, g], g),
        }
    }
}

impl HeadWeights {
    fn build(
        c: usize,
        g: usize,
        p: usize,
        mut make: impl FnMut(&[usize], usize) -> Tensor,
    ) -> Self {
        HeadWeights {
            channels: c,
            grid_channels: g,
            pool: p,
            row: BranchWeights::build(c, &mut make),
            col: BranchWeights::build(c, &mut make),
            grid_proj_weight: make(&[g, c * p * p], c * p * p),
            grid_proj_bias: make(&[g], c * p * p),
            pe_weight: make(&[g, 4], 4),
            pe_bias: make(&[g], 4),
            row_attention: AttentionWeights::build(g, &mut make),
            col_attention: AttentionWeights::build(g, &mut make),
            start_conv_weight: make(&[g, g, 3, 3], 9 * g),
            start_conv_bias: make(&[g], 9 * g),
            start_cls_weight: make(&[g], g),
            start_cls_bias: make(&[1], g),
            action_cls_weight: make(&[4, 2 * g], 2 * g),
            action_cls_bias: make(&[4], 2 * g),
        }
    }

    pub fn zeros(channels: usize, grid_channels: usize, pool: usize) -> Self {
        Self::build(channels, grid_channels, pool, |d, _| Tensor::zeros(d))
    }

    /// Seeded uniform initialization with scale `1/sqrt(fan_in)`.
    pub fn random(channels: usize, grid_channels: usize, pool: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(channels, grid_channels, pool, |d, fan| {
            Tensor::uniform(d, fan, &mut rng)
        })
    }

    pub fn branch(&self, axis: Axis) -> &BranchWeights {
        match axis {
            Axis::Row => &self.row,
            Axis::Col => &self.col,
        }
    }

    pub fn branch_mut(&mut self, axis: Axis) -> &mut BranchWeights {
        match axis {
            Axis::Row => &mut self.row,
            Axis::Col => &mut self.col,
        }
    }

    /// Stable names for every tensor, in container order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (axis, b) in [("row", &self.row), ("col", &self.col)] {
            out.push((format!("{axis}.start.weight"), &b.start_weight));
            out.push((format!("{axis}.start.bias"), &b.start_bias));
            out.push((format!("{axis}.offset.weight"), &b.offset_weight));
            out.push((format!("{axis}.offset.bias"), &b.offset_bias));
        }
        out.push(("grid.proj.weight".into(), &self.grid_proj_weight));
        out.push(("grid.proj.bias".into(), &self.grid_proj_bias));
        out.push(("grid.pe.weight".into(), &self.pe_weight));
        out.push(("grid.pe.bias".into(), &self.pe_bias));
        for (axis, a) in [("row", &self.row_attention), ("col", &self.col_attention)] {
            out.push((format!("attn.{axis}.query"), &a.query));
            out.push((format!("attn.{axis}.key"), &a.key));
            out.push((format!("attn.{axis}.value"), &a.value));
        }
        out.push(("merge.start_conv.weight".into(), &self.start_conv_weight));
        out.push(("merge.start_conv.bias".into(), &self.start_conv_bias));
        out.push(("merge.start_cls.weight".into(), &self.start_cls_weight));
        out.push(("merge.start_cls.bias".into(), &self.start_cls_bias));
        out.push(("merge.action_cls.weight".into(), &self.action_cls_weight));
        out.push(("merge.action_cls.bias".into(), &self.action_cls_bias));
        out
    }

    /// Rebuilds weights from named tensors, checking every shape.
    pub fn from_named(
        channels: usize,
        grid_channels: usize,
        pool: usize,
        mut lookup: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let template = Self::zeros(0, 0, 0);
        let names: Vec<String> = template
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut it = names.into_iter();
        let mut missing = None;
        let w = Self::build(channels, grid_channels, pool, |_, _| {
            let name = it.next().expect("tensor name order matches build order");
            lookup(&name).unwrap_or_else(|| {
                missing.get_or_insert(name);
                Tensor::zeros(&[0])
            })
        });
        if let Some(name) = missing {
            return Err(Error::schema(name, "tensor missing from container"));
        }
        w.validate()?;
        Ok(w)
    }

    /// Checks every tensor against the declared `C`, `C_g` and `P`.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(self.channels, self.grid_channels, self.pool);
        for ((name, t), (_, e)) in self
            .named_tensors()
            .into_iter()
            .zip(expected.named_tensors())
        {
            t.check(&name, &e.dims)?;
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name}: non-finite weight")));
            }
        }
        Ok(())
    }
}

/// Grid representation of shape `rows x cols x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEmbedding {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl GridEmbedding {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        GridEmbedding {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.cols + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.cols + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }
}

/// Starting-grid probabilities and 4-way merge action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbs {
    pub rows: usize,
    pub cols: usize,
    pub start_grid: Vec<f64>,
    /// Probabilities in `S, L, U, X` order.
    pub actions: Vec<[f64; 4]>,
}

/// `out = W x + b` for a row-major `[rows, cols]` matrix.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b.map_or(0.0, |b| b[r]);
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Probability of a starting point for every spatial row (row axis) or
/// column (column axis) of the start-detection feature.
///
/// Each position is projected to two logits, the logits are averaged along
/// the line direction, and a two-way softmax gives the start probability.
pub fn start_point_head(
    f_sd: &FeatureMap,
    axis: Axis,
    w: &BranchWeights,
) -> Result<StartProbVector> {
    let c = f_sd.channels;
    w.start_weight.check("start.weight", &[2, c])?;
    w.start_bias.check("start.bias", &[2])?;
    let (len, across) = match axis {
        Axis::Row => (f_sd.height, f_sd.width),
        Axis::Col => (f_sd.width, f_sd.height),
    };
    if across == 0 {
        return Err(Error::shape(
            "start-detection feature has zero extent along the line",
        ));
    }
    let wt = &w.start_weight.data;
    let mut probs = Vec::with_capacity(len);
    let mut mean = vec![0.0; c];
    for i in 0..len {
        for (ch, m) in mean.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..across {
                acc += match axis {
                    Axis::Row => f_sd.at(ch, i, k),
                    Axis::Col => f_sd.at(ch, k, i),
                };
            }
            *m = acc / across as f64;
        }
        let mut logits = [0.0; 2];
        affine(wt, Some(&w.start_bias.data), &mean, &mut logits);
        probs.push(sigmoid(logits[1] - logits[0]));
    }
    Ok(StartProbVector::new(axis, probs))
}

/// Line-regression features at each proposal, one `C`-vector per keypoint.
///
/// Proposal `(x, y)` of a row line samples texel coordinates
/// `(y / 2, x / 32)`; column lines mirror this.
pub fn sample_proposal_features(f_lr: &FeatureMap, props: &ProposalSet) -> Vec<Vec<f64>> {
    props
        .points
        .iter()
        .map(|p| {
            let (ty, tx) = match props.axis {
                Axis::Row => (p.y / 2.0, p.x / LINE_FEATURE_DOWNSAMPLE),
                Axis::Col => (p.y / LINE_FEATURE_DOWNSAMPLE, p.x / 2.0),
            };
            (0..f_lr.channels).map(|c| f_lr.sample(c, ty, tx)).collect()
        })
        .collect()
}

/// Mean of the proposal features of one line.
pub fn line_mean_feature(k: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = k.first() else {
        return Err(Error::invalid(
            "cannot average features of a line without keypoints",
        ));
    };
    let mut s = vec![0.0; first.len()];
    for kp in k {
        if kp.len() != s.len() {
            return Err(Error::shape("keypoint features differ in channel count"));
        }
        for (a, v) in s.iter_mut().zip(kp) {
            *a += v;
        }
    }
    let n = k.len() as f64;
    s.iter_mut().for_each(|v| *v /= n);
    Ok(s)
}

/// Width-3, zero-padded convolution along the keypoint axis over each
/// proposal feature concatenated with the line feature.
pub fn offset_head(
    axis: Axis,
    k: &[Vec<f64>],
    s: &[f64],
    w: &BranchWeights,
) -> Result<OffsetVector> {
    let c = s.len();
    w.offset_weight.check("offset.weight", &[2 * c, 3])?;
    w.offset_bias.check("offset.bias", &[1])?;
    if k.iter().any(|v| v.len() != c) {
        return Err(Error::shape(
            "keypoint features and line feature differ in channel count",
        ));
    }
    let wt = &w.offset_weight.data;
    // Contribution of the line feature is identical at every keypoint for
    // each tap, so it is folded once per tap.
    let line_tap: [f64; 3] =
        std::array::from_fn(|tap| (0..c).map(|ch| wt[(c + ch) * 3 + tap] * s[ch]).sum());
    let proposal_tap =
        |kp: &[f64], tap: usize| -> f64 { (0..c).map(|ch| wt[ch * 3 + tap] * kp[ch]).sum() };
    let n = k.len();
    let deltas = (0..n)
        .map(|j| {
            let mut acc = w.offset_bias.data[0];
            for (tap, lt) in line_tap.iter().enumerate() {
                let Some(src) = (j + tap).checked_sub(1).filter(|&s| s < n) else {
                    continue;
                };
                acc += proposal_tap(&k[src], tap) + lt;
            }
            acc
        })
        .collect();
    Ok(OffsetVector::new(axis, deltas))
}

/// Result of grid embedding, with grids whose box had no area.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEmbedOutput {
    pub embedding: GridEmbedding,
    pub degenerate: Vec<(usize, usize)>,
}

/// RoiAlign over a box's axis-aligned bounds: `pool x pool` bins, one
/// bilinear sample at each bin center. Output order is channel-major.
pub fn roi_align(f: &FeatureMap, x0: f64, y0: f64, x1: f64, y1: f64, pool: usize) -> Vec<f64> {
    let (bw, bh) = ((x1 - x0) / pool as f64, (y1 - y0) / pool as f64);
    let mut out = Vec::with_capacity(f.channels * pool * pool);
    for c in 0..f.channels {
        for py in 0..pool {
            let y = y0 + (py as f64 + 0.5) * bh;
            for px in 0..pool {
                let x = x0 + (px as f64 + 0.5) * bw;
                out.push(f.sample(c, y, x));
            }
        }
    }
    out
}

/// Grid features as pooled visual features plus a position embedding of
/// each box's normalized top-left and bottom-right corners.
///
/// `f` is at half the image resolution; boxes are scaled by 1/2 into it.
pub fn grid_embed(
    f: &FeatureMap,
    lattice: &GridLattice,
    image: ImageSize,
    w: &HeadWeights,
) -> Result<GridEmbedOutput> {
    let (c, g, p) = (w.channels, w.grid_channels, w.pool);
    if f.channels != c {
        return Err(Error::shape(format!(
            "feature has {} channels, weights expect {c}",
            f.channels
        )));
    }
    w.grid_proj_weight
        .check("grid.proj.weight", &[g, c * p * p])?;
    w.pe_weight.check("grid.pe.weight", &[g, 4])?;
    let (iw, ih) = (image.width as f64, image.height as f64);
    let mut emb = GridEmbedding::zeros(lattice.rows, lattice.cols, g);
    let mut degenerate = Vec::new();
    let mut visual = vec![0.0; g];
    let mut pe = vec![0.0; g];
    for i in 0..lattice.rows {
        for j in 0..lattice.cols {
            let quad = lattice.box_at(i, j);
            let (bx0, by0, bx1, by1) = quad.bounds();
            if bx1 - bx0 <= 0.0 || by1 - by0 <= 0.0 {
                degenerate.push((i, j));
                visual.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let pooled = roi_align(f, bx0 / 2.0, by0 / 2.0, bx1 / 2.0, by1 / 2.0, p);
                affine(
                    &w.grid_proj_weight.data,
                    Some(&w.grid_proj_bias.data),
                    &pooled,
                    &mut visual,
                );
            }
            let (tl, br) = (quad.top_left(), quad.bottom_right());
            let coords = [tl.x / iw, tl.y / ih, br.x / iw, br.y / ih];
            affine(&w.pe_weight.data, Some(&w.pe_bias.data), &coords, &mut pe);
            for ((o, v), q) in emb.cell_mut(i, j).iter_mut().zip(&visual).zip(&pe) {
                *o = v + q;
            }
        }
    }
    if !degenerate.is_empty() {
        log::warn!(
            "{} degenerate grid boxes embedded with zero visual features",
            degenerate.len()
        );
    }
    Ok(GridEmbedOutput {
        embedding: emb,
        degenerate,
    })
}

/// One residual self-attention pass over groups of grids. Each entry of
/// `groups` lists the flat grid indices of one group.
fn attend_groups(e: &GridEmbedding, a: &AttentionWeights, groups: &[Vec<usize>]) -> GridEmbedding {
    let g = e.channels;
    let scale = 1.0 / (g as f64).sqrt();
    let mut out = e.clone();
    let n = e.rows * e.cols;
    let project = |t: &Tensor| -> Vec<f64> {
        let mut v = vec![0.0; n * g];
        for idx in 0..n {
            affine(
                &t.data,
                None,
                &e.data[idx * g..(idx + 1) * g],
                &mut v[idx * g..(idx + 1) * g],
            );
        }
        v
    };
    let (q, k, v) = (project(&a.query), project(&a.key), project(&a.value));
    let mut scores = Vec::new();
    for members in groups {
        for &qi in members {
            scores.clear();
            let qv = &q[qi * g..(qi + 1) * g];
            scores.extend(members.iter().map(|&ki| {
                let kv = &k[ki * g..(ki + 1) * g];
                qv.iter().zip(kv).map(|(x, y)| x * y).sum::<f64>() * scale
            }));
            softmax_in_place(&mut scores);
            let dst = &mut out.data[qi * g..(qi + 1) * g];
            for (&ki, &wgt) in members.iter().zip(&scores) {
                for (d, s) in dst.iter_mut().zip(&v[ki * g..(ki + 1) * g]) {
                    *d += wgt * s;
                }
            }
        }
    }
    out
}

/// Single-head attention within each lattice row, then within each lattice
/// column, each with a residual connection.
pub fn rowcol_attention(e: &GridEmbedding, w: &HeadWeights) -> Result<GridEmbedding> {
    let g = w.grid_channels;
    if e.channels != g {
        return Err(Error::shape(format!(
            "embedding has {} channels, weights expect {g}",
            e.channels
        )));
    }
    for a in [&w.row_attention, &w.col_attention] {
        for t in [&a.query, &a.key, &a.value] {
            t.check("attention projection", &[g, g])?;
        }
    }
    let (m, n) = (e.rows, e.cols);
    let rows: Vec<Vec<usize>> = (0..m)
        .map(|i| (0..n).map(|j| i * n + j).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..m).map(|i| i * n + j).collect())
        .collect();
    let after_rows = attend_groups(e, &w.row_attention, &rows);
    Ok(attend_groups(&after_rows, &w.col_attention, &cols))
}

/// Starting-grid and merge-action heads.
///
/// A 3x3 convolution over the lattice turns `E` into the starting-grid
/// feature `E_s`; a logistic classifier on `E_s` gives the start
/// probability and a softmax classifier on `(E_s, E)` gives the actions.
pub fn merge_heads(e: &GridEmbedding, w: &HeadWeights) -> Result<ActionProbs> {
    let g = w.grid_channels;
    if e.channels != g {
        return Err(Error::shape(format!(
            "embedding has {} channels, weights expect {g}",
            e.channels
        )));
    }
    w.start_conv_weight
        .check("merge.start_conv.weight", &[g, g, 3, 3])?;
    w.start_cls_weight.check("merge.start_cls.weight", &[g])?;
    w.action_cls_weight
        .check("merge.action_cls.weight", &[4, 2 * g])?;
    let (m, n) = (e.rows, e.cols);
    let conv = &w.start_conv_weight.data;
    let mut start_grid = Vec::with_capacity(m * n);
    let mut actions = Vec::with_capacity(m * n);
    let mut es = vec![0.0; g];
    let mut joint = vec![0.0; 2 * g];
    for i in 0..m {
        for j in 0..n {
            es.copy_from_slice(&w.start_conv_bias.data);
            for di in 0..3 {
                let Some(ii) = (i + di).checked_sub(1).filter(|&v| v < m) else {
                    continue;
                };
                for dj in 0..3 {
                    let Some(jj) = (j + dj).checked_sub(1).filter(|&v| v < n) else {
                        continue;
                    };
                    let src = e.cell(ii, jj);
                    for (o, acc) in es.iter_mut().enumerate() {
                        let base = o * g * 9 + di * 3 + dj;
                        let mut s = 0.0;
                        for (ci, x) in src.iter().enumerate() {
                            s += conv[base + ci * 9] * x;
                        }
                        *acc += s;
                    }
                }
            }
            let z: f64 = w.start_cls_bias.data[0]
                + es.iter()
                    .zip(&w.start_cls_weight.data)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            start_grid.push(sigmoid(z));
            joint[..g].copy_from_slice(&es);
            joint[g..].copy_from_slice(e.cell(i, j));
            let mut logits = [0.0; 4];
            affine(
                &w.action_cls_weight.data,
                Some(&w.action_cls_bias.data),
                &joint,
                &mut logits,
            );
            softmax_in_place(&mut logits);
            actions.push(logits);
        }
    }
    Ok(ActionProbs {
        rows: m,
        cols: n,
        start_grid,
        actions,
    })
}
