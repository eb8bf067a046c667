//! End-to-end forward pass of all heads over a feature pack, producing a
//! prediction bundle.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::PredictionBundle;
use crate::container;
use crate::error::{Error, Result};
use crate::geometry::{GridLattice, ImageSize};
use crate::heads::{
    grid_embed, line_mean_feature, merge_heads, offset_head, rowcol_attention,
    sample_proposal_features, start_point_head, ActionProbs, FeatureMap, GridEmbedding,
    HeadWeights, Tensor, DEFAULT_POOL, LINE_FEATURE_DOWNSAMPLE,
};
use crate::kor::{
    apply_offsets, build_lattice, detect_start_points, make_proposals, Axis, SeparationLine,
    StartProbVector, DEFAULT_STRIDE,
};
use crate::merge::actions_from_probs;
use crate::syngen::line_positions;

pub const DEFAULT_CHANNELS: usize = 256;
pub const DEFAULT_GRID_CHANNELS: usize = 512;
/// Minimum spacing of the start rows planted in demo packs, in pixels.
const DEMO_LINE_SPACING: u32 = 24;
const DEMO_MAX_LINES: usize = 8;
const DEMO_START_LEVEL: f64 = 3.0;

/// Feature maps and weights for one image.
///
/// `f` is at half resolution; the row maps keep half resolution vertically
/// and 1/32 horizontally, the column maps mirror that.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    pub image: ImageSize,
    pub stride: u32,
    pub f: FeatureMap,
    pub row_sd: FeatureMap,
    pub row_lr: FeatureMap,
    pub col_sd: FeatureMap,
    pub col_lr: FeatureMap,
    pub weights: HeadWeights,
}

fn coarse(n: u32) -> usize {
    (n as f64 / LINE_FEATURE_DOWNSAMPLE).ceil() as usize
}

/// `(height, width)` of the full, row and column feature maps.
pub fn feature_dims(image: ImageSize) -> [(usize, usize); 3] {
    let (h2, w2) = (image.half_height(), image.half_width());
    [
        (h2, w2),
        (h2, coarse(image.width)),
        (coarse(image.height), w2),
    ]
}

impl FeaturePack {
    pub fn maps(&self) -> [(&'static str, &FeatureMap); 5] {
        [
            ("features.f", &self.f),
            ("features.row.sd", &self.row_sd),
            ("features.row.lr", &self.row_lr),
            ("features.col.sd", &self.col_sd),
            ("features.col.lr", &self.col_lr),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.weights.channels;
        let [full, row, col] = feature_dims(self.image);
        for ((name, m), (h, w)) in self.maps().into_iter().zip([full, row, row, col, col]) {
            if m.dims() != [c, h, w] {
                return Err(Error::shape(format!(
                    "{name}: expected {c}x{h}x{w}, got {:?}",
                    m.dims()
                )));
            }
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        self.weights.validate()
    }

    fn meta(&self) -> Tensor {
        let w = &self.weights;
        Tensor {
            dims: vec![6],
            data: [
                self.image.width as usize,
                self.image.height as usize,
                self.stride as usize,
                w.channels,
                w.grid_channels,
                w.pool,
            ]
            .map(|v| v as f64)
            .to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = self.meta();
        let maps: Vec<(&str, Tensor)> = self
            .maps()
            .into_iter()
            .map(|(n, m)| {
                (
                    n,
                    Tensor {
                        dims: m.dims().to_vec(),
                        data: m.data.clone(),
                    },
                )
            })
            .collect();
        let named = self.weights.named_tensors();
        let all = std::iter::once(("meta", &meta))
            .chain(maps.iter().map(|(n, t)| (*n, t)))
            .chain(named.iter().map(|(n, t)| (n.as_str(), *t)));
        let mut buf = Vec::new();
        container::write_tensors(&mut buf, all)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut tensors: HashMap<String, Tensor> = container::parse(bytes)?.into_iter().collect();
        let meta = tensors
            .remove("meta")
            .ok_or_else(|| Error::schema("meta", "tensor missing from container"))?;
        if meta.data.len() != 6 || meta.data.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::schema("meta", "expected six non-negative integers"));
        }
        let m: Vec<usize> = meta.data.iter().map(|&v| v as usize).collect();
        let image = ImageSize::new(m[0] as u32, m[1] as u32);
        let mut map = |name: &str| -> Result<FeatureMap> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::schema(name, "tensor missing from container"))?;
            let [c, h, w] = t.dims[..] else {
                return Err(Error::schema(
                    name,
                    format!("expected rank 3, got {:?}", t.dims),
                ));
            };
            FeatureMap::new(c, h, w, t.data)
        };
        let (f, row_sd, row_lr, col_sd, col_lr) = (
            map("features.f")?,
            map("features.row.sd")?,
            map("features.row.lr")?,
            map("features.col.sd")?,
            map("features.col.lr")?,
        );
        let weights = HeadWeights::from_named(m[3], m[4], m[5], |n| tensors.remove(n))?;
        let pack = FeaturePack {
            image,
            stride: m[2] as u32,
            f,
            row_sd,
            row_lr,
            col_sd,
            col_lr,
            weights,
        };
        pack.validate()?;
        Ok(pack)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
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

/// Seeded features and weights at the declared resolutions.
///
/// Channel 0 of each start-detection map carries `+3` on a few evenly
/// spaced planted start rows (columns) and `-3` elsewhere, and both start
/// classifiers read that channel with weights `(-1, +1)`, so the heads find
/// a small table. All values are `f32`-representable.
pub fn make_pack(
    seed: u64,
    image: ImageSize,
    channels: usize,
    grid_channels: usize,
) -> Result<FeaturePack> {
    if image.width == 0 || image.height == 0 || channels == 0 || grid_channels == 0 {
        return Err(Error::invalid(
            "image size and channel counts must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = channels;
    let [(fh, fw), (rh, rw), (ch, cw)] = feature_dims(image);
    let f = random_map(c, fh, fw, &mut rng);
    let mut row_sd = random_map(c, rh, rw, &mut rng);
    let row_lr = random_map(c, rh, rw, &mut rng);
    let mut col_sd = random_map(c, ch, cw, &mut rng);
    let col_lr = random_map(c, ch, cw, &mut rng);
    let mut weights = HeadWeights::random(c, grid_channels, DEFAULT_POOL, rng.random());
    for (axis, map) in [(Axis::Row, &mut row_sd), (Axis::Col, &mut col_sd)] {
        let extent = axis.across_extent(image);
        let most = ((extent / DEMO_LINE_SPACING) as usize).clamp(2, DEMO_MAX_LINES);
        let n = rng.random_range(2..=most);
        let planted: Vec<usize> = line_positions(n, extent)
            .iter()
            .map(|p| (p / 2.0) as usize)
            .collect();
        let len = match axis {
            Axis::Row => map.height,
            Axis::Col => map.width,
        };
        for i in 0..len {
            let v = if planted.contains(&i) {
                DEMO_START_LEVEL
            } else {
                -DEMO_START_LEVEL
            };
            match axis {
                Axis::Row => (0..map.width).for_each(|x| *map.at_mut(0, i, x) = v),
                Axis::Col => (0..map.height).for_each(|y| *map.at_mut(0, y, i) = v),
            }
        }
        let sw = &mut weights.branch_mut(axis).start_weight.data;
        sw[0] = -1.0;
        sw[c] = 1.0;
    }
    Ok(FeaturePack {
        image,
        stride: DEFAULT_STRIDE,
        f,
        row_sd,
        row_lr,
        col_sd,
        col_lr,
        weights,
    })
}

/// [`make_pack`] with the default channel counts.
pub fn make_demo_pack(seed: u64, image: ImageSize) -> Result<FeaturePack> {
    make_pack(seed, image, DEFAULT_CHANNELS, DEFAULT_GRID_CHANNELS)
}

/// Output of one branch of the split stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub probs: StartProbVector,
    pub offsets: Vec<Vec<f64>>,
    pub lines: Vec<SeparationLine>,
}

/// Intermediate tensors of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadsTrace {
    pub row: BranchOutput,
    pub col: BranchOutput,
    pub lattice: GridLattice,
    pub embedding: GridEmbedding,
    pub attended: GridEmbedding,
    pub probs: ActionProbs,
}

/// Start head, detection and offset regression for one axis.
pub fn run_branch(fp: &FeaturePack, axis: Axis, threshold: f64) -> Result<BranchOutput> {
    let (sd, lr) = match axis {
        Axis::Row => (&fp.row_sd, &fp.row_lr),
        Axis::Col => (&fp.col_sd, &fp.col_lr),
    };
    let stage = |s: &'static str| move |e: Error| e.at_stage(s);
    let w = fp.weights.branch(axis);
    let probs = start_point_head(sd, axis, w).map_err(stage("start_head"))?;
    let starts = detect_start_points(&probs, threshold).map_err(stage("detect"))?;
    if starts.is_empty() {
        return Err(Error::NoSeparationLines(axis.name()).at_stage("detect"));
    }
    let mut offsets = Vec::with_capacity(starts.len());
    let mut lines = Vec::with_capacity(starts.len());
    for s in starts {
        let props = make_proposals(axis.point(0.0, s), axis, fp.image, fp.stride)
            .map_err(stage("proposals"))?;
        let k = sample_proposal_features(lr, &props);
        let mean = line_mean_feature(&k).map_err(stage("line_feature"))?;
        let delta = offset_head(axis, &k, &mean, w).map_err(stage("offset_head"))?;
        lines.push(apply_offsets(&props, &delta).map_err(stage("offsets"))?);
        offsets.push(delta.deltas);
    }
    Ok(BranchOutput {
        probs,
        offsets,
        lines,
    })
}

/// Runs every head and returns the bundle with all intermediates.
///
/// The row and column branches run concurrently.
pub fn run_heads_traced(
    fp: &FeaturePack,
    threshold: f64,
) -> Result<(PredictionBundle, HeadsTrace)> {
    fp.validate()?;
    let (row, col) = rayon::join(
        || run_branch(fp, Axis::Row, threshold),
        || run_branch(fp, Axis::Col, threshold),
    );
    let (row, col) = (row?, col?);
    let (lattice, warnings) =
        build_lattice(&row.lines, &col.lines).map_err(|e| e.at_stage("lattice"))?;
    if !warnings.is_empty() {
        log::warn!(
            "{} lattice corners had multiple intersections",
            warnings.len()
        );
    }
    let embedding = grid_embed(&fp.f, &lattice, fp.image, &fp.weights)
        .map_err(|e| e.at_stage("grid_embed"))?
        .embedding;
    let attended =
        rowcol_attention(&embedding, &fp.weights).map_err(|e| e.at_stage("attention"))?;
    let probs = merge_heads(&attended, &fp.weights).map_err(|e| e.at_stage("merge_heads"))?;
    let map = actions_from_probs(&probs);
    let bundle = PredictionBundle {
        image_size: fp.image,
        stride: fp.stride,
        row_start_prob: row.probs.probs.clone(),
        col_start_prob: col.probs.probs.clone(),
        row_offsets: row.offsets.clone(),
        col_offsets: col.offsets.clone(),
        actions: map.to_strings(),
        start_grid: map.start_grid_rows(),
    };
    bundle.validate().map_err(|e| e.at_stage("bundle"))?;
    Ok((
        bundle,
        HeadsTrace {
            row,
            col,
            lattice,
            embedding,
            attended,
            probs,
        },
    ))
}

pub fn run_heads(fp: &FeaturePack, threshold: f64) -> Result<PredictionBundle> {
    run_heads_traced(fp, threshold).map(|(b, _)| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kor::DEFAULT_START_THRESHOLD;

    fn small(seed: u64) -> FeaturePack {
        make_pack(seed, ImageSize::new(128, 96), 8, 16).unwrap()
    }

    #[test]
    fn resolutions() {
        let p = small(1);
        assert_eq!(p.f.dims(), [8, 48, 64]);
        assert_eq!(p.row_sd.dims(), [8, 48, 4]);
        assert_eq!(p.col_lr.dims(), [8, 3, 64]);
        p.validate().unwrap();
    }

    #[test]
    fn demo_defaults() {
        let w = HeadWeights::zeros(DEFAULT_CHANNELS, DEFAULT_GRID_CHANNELS, DEFAULT_POOL);
        assert_eq!((w.channels, w.grid_channels), (256, 512));
    }

    #[test]
    fn pack_round_trips_through_container() {
        let p = small(2);
        let bytes = p.to_bytes().unwrap();
        assert_eq!(FeaturePack::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn deterministic_bundle() {
        let a = run_heads(&small(3), DEFAULT_START_THRESHOLD).unwrap();
        let b = run_heads(&small(3), DEFAULT_START_THRESHOLD).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn planted_rows_are_found() {
        let p = small(4);
        let (_, trace) = run_heads_traced(&p, DEFAULT_START_THRESHOLD).unwrap();
        assert!(trace.row.lines.len() >= 2 && trace.col.lines.len() >= 2);
        assert_eq!(trace.lattice.rows, trace.row.lines.len() - 1);
    }

    #[test]
    fn no_starts_is_an_error() {
        let mut p = small(5);
        p.weights
            .row
            .start_weight
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
        p.weights.row.start_bias.data = vec![1.0, 0.0];
        let err = run_heads(&p, DEFAULT_START_THRESHOLD).unwrap_err();
        assert!(err.to_string().contains("no separation lines"), "{err}");
        assert!(matches!(
            err,
            Error::Stage {
                stage: "detect",
                ..
            }
        ));
    }
}
