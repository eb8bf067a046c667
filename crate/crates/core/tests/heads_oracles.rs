#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitmerge_core::bundle::{to_json, PredictionBundle};
use splitmerge_core::geometry::ImageSize;
use splitmerge_core::heads::{
    grid_embed, line_mean_feature, merge_heads, offset_head, roi_align, rowcol_attention,
    sample_proposal_features, start_point_head, FeatureMap, GridEmbedding, HeadWeights,
};
use splitmerge_core::kor::{
    apply_offsets, build_lattice, detect_start_points, make_proposals, Axis,
};
use splitmerge_core::merge::actions_from_probs;
use splitmerge_core::pipeline::decode_bundle;
use splitmerge_core::runner::{make_pack, run_branch, run_heads, run_heads_traced, FeaturePack};
use splitmerge_core::Error;

fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..c * h * w)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

fn random_embedding(m: usize, n: usize, g: usize, rng: &mut ChaCha8Rng) -> GridEmbedding {
    let mut e = GridEmbedding::zeros(m, n, g);
    e.data
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    e
}

#[test]
fn offset_head_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let c = rng.random_range(1..6);
        let n = rng.random_range(1..12);
        let w = HeadWeights::random(c, 2, 1, trial).row;
        let k: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let s: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = offset_head(Axis::Row, &k, &s, &w).unwrap();
        // Concatenate, pad with a zero column on both ends, then slide the kernel.
        let mut padded = vec![vec![0.0; 2 * c]; n + 2];
        for (j, kp) in k.iter().enumerate() {
            padded[j + 1][..c].copy_from_slice(kp);
            padded[j + 1][c..].copy_from_slice(&s);
        }
        for j in 0..n {
            let mut want = w.offset_bias.data[0];
            for ch in 0..2 * c {
                for tap in 0..3 {
                    want += w.offset_weight.data[ch * 3 + tap] * padded[j + tap][ch];
                }
            }
            assert!((got.deltas[j] - want).abs() < 1e-12, "trial {trial} j {j}");
        }
    }
}

#[test]
fn roi_on_texel_centres_is_texel_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let f = random_map(3, 12, 14, &mut rng);
        let p = rng.random_range(1..5);
        let (x, y) = (rng.random_range(0..14 - p), rng.random_range(0..12 - p));
        // Each of the p bins is one texel wide and centred on a texel.
        let pooled = roi_align(
            &f,
            x as f64 - 0.5,
            y as f64 - 0.5,
            (x + p) as f64 - 0.5,
            (y + p) as f64 - 0.5,
            p,
        );
        for c in 0..3 {
            let got: f64 = pooled[c * p * p..(c + 1) * p * p].iter().sum::<f64>() / (p * p) as f64;
            let mut want = 0.0;
            for yy in y..y + p {
                for xx in x..x + p {
                    want += f.at(c, yy, xx);
                }
            }
            want /= (p * p) as f64;
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_is_equivariant_to_row_and_column_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let (m, n, g) = (rng.random_range(1..5), rng.random_range(1..5), 6);
        let w = HeadWeights::random(2, g, 1, 100 + trial);
        let e = random_embedding(m, n, g, &mut rng);
        let mut rp: Vec<usize> = (0..m).collect();
        let mut cp: Vec<usize> = (0..n).collect();
        for i in (1..m).rev() {
            rp.swap(i, rng.random_range(0..=i));
        }
        for j in (1..n).rev() {
            cp.swap(j, rng.random_range(0..=j));
        }
        let permute = |x: &GridEmbedding| {
            let mut out = GridEmbedding::zeros(m, n, g);
            for i in 0..m {
                for j in 0..n {
                    out.cell_mut(i, j).copy_from_slice(x.cell(rp[i], cp[j]));
                }
            }
            out
        };
        let a = permute(&rowcol_attention(&e, &w).unwrap());
        let b = rowcol_attention(&permute(&e), &w).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn heads_outputs_are_normalized_and_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let w = HeadWeights::random(3, 8, 3, seed);
        let e = random_embedding(3, 4, 8, &mut rng);
        let e = rowcol_attention(&e, &w).unwrap();
        assert!(e.data.iter().all(|v| v.is_finite()));
        let p = merge_heads(&e, &w).unwrap();
        for a in &p.actions {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(p.start_grid.iter().all(|v| (0.0..=1.0).contains(v)));
        let sd = random_map(3, 10, 4, &mut rng);
        let probs = start_point_head(&sd, Axis::Row, &w.row).unwrap();
        assert_eq!(probs.probs.len(), 10);
        assert!(probs.probs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn small_pack(seed: u64) -> FeaturePack {
    make_pack(seed, ImageSize::new(160, 128), 6, 12).unwrap()
}

/// Every head called by hand, one stage at a time.
fn staged(fp: &FeaturePack) -> PredictionBundle {
    let mut branches = Vec::new();
    for (axis, sd, lr) in [
        (Axis::Row, &fp.row_sd, &fp.row_lr),
        (Axis::Col, &fp.col_sd, &fp.col_lr),
    ] {
        let w = fp.weights.branch(axis);
        let probs = start_point_head(sd, axis, w).unwrap();
        let mut offsets = Vec::new();
        let mut lines = Vec::new();
        for s in detect_start_points(&probs, 0.5).unwrap() {
            let props = make_proposals(axis.point(0.0, s), axis, fp.image, fp.stride).unwrap();
            let k = sample_proposal_features(lr, &props);
            let d = offset_head(axis, &k, &line_mean_feature(&k).unwrap(), w).unwrap();
            lines.push(apply_offsets(&props, &d).unwrap());
            offsets.push(d.deltas);
        }
        branches.push((probs.probs, offsets, lines));
    }
    let (col_probs, col_offsets, col_lines) = branches.pop().unwrap();
    let (row_probs, row_offsets, row_lines) = branches.pop().unwrap();
    let (lattice, _) = build_lattice(&row_lines, &col_lines).unwrap();
    let e = grid_embed(&fp.f, &lattice, fp.image, &fp.weights)
        .unwrap()
        .embedding;
    let e = rowcol_attention(&e, &fp.weights).unwrap();
    let map = actions_from_probs(&merge_heads(&e, &fp.weights).unwrap());
    PredictionBundle {
        image_size: fp.image,
        stride: fp.stride,
        row_start_prob: row_probs,
        col_start_prob: col_probs,
        row_offsets,
        col_offsets,
        actions: map.to_strings(),
        start_grid: map.start_grid_rows(),
    }
}

#[test]
fn staged_and_fused_runs_agree_bytewise() {
    for seed in 0..5 {
        let fp = small_pack(seed);
        let fused = run_heads(&fp, 0.5).unwrap();
        assert_eq!(to_json(&staged(&fp)).unwrap(), to_json(&fused).unwrap());
    }
}

#[test]
fn bundle_from_heads_decodes_to_the_traced_lattice() {
    for seed in 0..5 {
        let fp = small_pack(seed);
        let (b, trace) = run_heads_traced(&fp, 0.5).unwrap();
        let reparsed = PredictionBundle::from_json(&to_json(&b).unwrap()).unwrap();
        assert_eq!(reparsed, b);
        let d = decode_bundle(&reparsed, 0.5).unwrap();
        assert_eq!(d.lattice, trace.lattice);
        d.structure.validate().unwrap();
    }
}

#[test]
fn zero_offset_weights_give_straight_lines_at_planted_starts() {
    let mut fp = small_pack(21);
    for axis in [Axis::Row, Axis::Col] {
        let b = fp.weights.branch_mut(axis);
        b.offset_weight.data.iter_mut().for_each(|v| *v = 0.0);
        b.offset_bias.data[0] = 0.0;
    }
    let (_, trace) = run_heads_traced(&fp, 0.5).unwrap();
    assert!(trace.row.lines.len() >= 2 && trace.col.lines.len() >= 2);
    for l in &trace.row.lines {
        let y = l.start_coord();
        assert_eq!(fp.row_sd.at(0, (y / 2.0) as usize, 0), 3.0);
        assert!(l.keypoints.iter().all(|k| k.y == y));
    }
    for l in &trace.col.lines {
        let x = l.start_coord();
        assert_eq!(fp.col_sd.at(0, 0, (x / 2.0) as usize), 3.0);
        assert!(l.keypoints.iter().all(|k| k.x == x));
    }
    let planted_rows = (0..fp.row_sd.height)
        .filter(|&i| fp.row_sd.at(0, i, 0) > 0.0)
        .count();
    assert_eq!(trace.row.lines.len(), planted_rows);
}

#[test]
fn pack_survives_the_container() {
    let fp = small_pack(3);
    let bytes = fp.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"SEMF");
    let back = FeaturePack::from_bytes(&bytes).unwrap();
    assert_eq!(back, fp);
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn truncated_pack_is_a_schema_error() {
    let bytes = small_pack(3).to_bytes().unwrap();
    for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
        let err = FeaturePack::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(
            matches!(err.root(), Error::Schema { .. }),
            "cut {cut}: {err}"
        );
    }
}

#[test]
fn mismatched_weights_name_the_stage() {
    let mut fp = small_pack(1);
    fp.weights.row.start_weight.dims = vec![3, 6];
    fp.weights.row.start_weight.data = vec![0.0; 18];
    assert!(matches!(
        run_heads(&fp, 0.5).unwrap_err().root(),
        Error::Shape(_)
    ));
    let err = run_branch(&fp, Axis::Row, 0.5).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Stage {
                stage: "start_head",
                ..
            }
        ),
        "{err}"
    );
    assert!(matches!(err.root(), Error::Shape(_)), "{err}");
}

proptest! {
    #[test]
    fn grid_embedding_splits_into_visual_and_position(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fp = small_pack(seed % 7);
        let (_, trace) = run_heads_traced(&fp, 0.5).unwrap();
        let mut w = HeadWeights::random(6, 12, 3, seed);
        let f = random_map(6, fp.f.height, fp.f.width, &mut rng);
        let full = grid_embed(&f, &trace.lattice, fp.image, &w).unwrap().embedding;
        let zero = FeatureMap::zeros(6, fp.f.height, fp.f.width);
        let pe_only = grid_embed(&zero, &trace.lattice, fp.image, &w).unwrap().embedding;
        w.pe_weight.data.iter_mut().for_each(|v| *v = 0.0);
        w.pe_bias.data.iter_mut().for_each(|v| *v = 0.0);
        let visual = grid_embed(&f, &trace.lattice, fp.image, &w).unwrap().embedding;
        // With zero features the visual part reduces to the projection bias.
        let bias = &w.grid_proj_bias.data;
        for i in 0..full.rows {
            for j in 0..full.cols {
                for ch in 0..12 {
                    let sum = visual.cell(i, j)[ch] + pe_only.cell(i, j)[ch] - bias[ch];
                    prop_assert!((full.cell(i, j)[ch] - sum).abs() < 1e-12);
                }
            }
        }
    }
}
