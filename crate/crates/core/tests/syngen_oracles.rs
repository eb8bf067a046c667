use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitmerge_core::geometry::ImageSize;
use splitmerge_core::kor::Axis;
use splitmerge_core::losses::TableStyle;
use splitmerge_core::merge::decode_actions;
use splitmerge_core::metrics::{cell_adjacency_f1, grid_f1, CELL_IOU, GRID_IOU};
use splitmerge_core::pipeline::decode_bundle;
use splitmerge_core::syngen::{
    generate_sample, line_positions, max_amplitude, perturb_bundle, render_sample,
    warp_lattice_detailed, SynParams, BACKGROUND, STROKE,
};

fn params(rows: usize, cols: usize, amp_frac: f64, style: TableStyle) -> SynParams {
    let image = ImageSize::new(512, 512);
    SynParams {
        image,
        rows,
        cols,
        amplitude: amp_frac * 2.0 * max_amplitude(rows, cols, image),
        style,
        ..SynParams::default()
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> SynParams {
    let style = if rng.random_bool(0.5) {
        TableStyle::Wired
    } else {
        TableStyle::Wireless
    };
    params(
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        rng.random_range(0.0..0.4),
        style,
    )
}

#[test]
fn decoded_ground_truth_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..150 {
        let p = random_params(&mut rng);
        let s = generate_sample(&p, seed).unwrap();
        let d = decode_bundle(&s.bundle, 0.5).unwrap();
        assert!(d.summary.is_clean(), "seed {seed}: {:?}", d.summary);
        assert_eq!(d.lattice, s.lattice, "seed {seed}");
        assert!(d.structure.same_spans(&s.structure), "seed {seed}");
        assert_eq!(
            cell_adjacency_f1(&d.structure, &s.structure, CELL_IOU)
                .unwrap()
                .f1,
            1.0
        );
        assert_eq!(grid_f1(&d.lattice, &s.lattice, GRID_IOU).f1, 1.0);
    }
}

/// Closed form of the warp, written out separately from the generator.
fn displacement(amp: f64, w: [f64; 2], f: [f64; 2], phi: [f64; 2], extent: f64, s: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = w[0] * ((two_pi * f[0] * s / extent + phi[0]).sin() - phi[0].sin());
    let b = w[1] * ((two_pi * f[1] * s / extent + phi[1]).sin() - phi[1].sin());
    amp * 0.5 * (a + b)
}

#[test]
fn offsets_follow_the_sinusoid() {
    let image = ImageSize::new(512, 384);
    let (rows, cols) = (5, 6);
    let amp = 0.8 * max_amplitude(rows, cols, image);
    for seed in 0..20 {
        let w = warp_lattice_detailed(rows, cols, image, amp, 32, seed).unwrap();
        for (axis, lines, warps, extent) in [
            (Axis::Row, &w.row_lines, &w.row_warps, image.height),
            (Axis::Col, &w.col_lines, &w.col_warps, image.width),
        ] {
            let bases = line_positions(lines.len(), extent);
            for ((line, warp), base) in lines.iter().zip(warps).zip(bases) {
                assert!((warp.weights[0] + warp.weights[1] - 1.0).abs() < 1e-12);
                assert!(warp.weights.iter().all(|&v| (0.0..=1.0).contains(&v)));
                for k in &line.keypoints {
                    let s = axis.along(*k);
                    let want = displacement(
                        warp.amplitude,
                        warp.weights,
                        warp.freqs,
                        warp.phases,
                        warp.extent,
                        s,
                    );
                    let got = axis.across(*k) - base;
                    assert!(
                        (got - want).abs() <= 1.0 / 512.0 + 1e-9,
                        "seed {seed}: {got} vs {want}"
                    );
                    assert!(want.abs() <= amp + 1e-12);
                }
            }
        }
    }
}

#[test]
fn small_offset_noise_keeps_grids() {
    // 8 lines on a 512 px side leaves a 64 px pitch.
    for seed in 0..60 {
        let p = params(
            7,
            7,
            0.3,
            if seed % 2 == 0 {
                TableStyle::Wired
            } else {
                TableStyle::Wireless
            },
        );
        let s = generate_sample(&p, seed).unwrap();
        for sigma in [0.1, 0.25, 0.5] {
            let noisy = perturb_bundle(&s.bundle, 0.0, sigma, 0.0, seed + 1000).unwrap();
            let d = decode_bundle(&noisy, 0.5).unwrap();
            assert_eq!(
                grid_f1(&d.lattice, &s.lattice, GRID_IOU).f1,
                1.0,
                "seed {seed} sigma {sigma}"
            );
            assert!(d.structure.same_spans(&s.structure));
        }
    }
}

#[test]
fn relabelled_actions_still_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..200 {
        let p = random_params(&mut rng);
        let s = generate_sample(&p, seed).unwrap();
        let rate = if seed % 4 == 0 {
            1.0
        } else {
            rng.random_range(0.0..1.0)
        };
        let noisy = perturb_bundle(&s.bundle, 0.0, 0.0, rate, seed).unwrap();
        let (ts, _) = decode_actions(&noisy.action_map().unwrap());
        ts.validate().unwrap();
        let d = decode_bundle(&noisy, 0.5).unwrap();
        d.structure.validate().unwrap();
    }
}

#[test]
fn probability_noise_only_moves_probabilities() {
    let s = generate_sample(&params(4, 4, 0.2, TableStyle::Wired), 3).unwrap();
    let noisy = perturb_bundle(&s.bundle, 0.2, 0.0, 0.0, 9).unwrap();
    assert_eq!(noisy.row_offsets, s.bundle.row_offsets);
    assert_eq!(noisy.actions, s.bundle.actions);
    assert!(noisy
        .row_start_prob
        .iter()
        .chain(&noisy.col_start_prob)
        .all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(noisy.row_start_prob, s.bundle.row_start_prob);
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let p = params(6, 5, 0.35, TableStyle::Wireless);
    let a = generate_sample(&p, 77).unwrap();
    let b = generate_sample(&p, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(render_sample(&a), render_sample(&b));
    assert_ne!(generate_sample(&p, 78).unwrap().bundle, a.bundle);
}

#[test]
fn wired_render_marks_the_lines() {
    let s = generate_sample(&params(3, 3, 0.0, TableStyle::Wired), 1).unwrap();
    let img = render_sample(&s);
    for l in &s.lattice.row_lines {
        let y = l.start_coord() as usize;
        assert!((0..img.width).all(|x| img.get(x, y) == STROKE));
    }
    let ink = img.pixels.iter().filter(|&&p| p == STROKE).count();
    assert!(ink < img.pixels.len() / 10);
    assert!(img.pixels.iter().all(|&p| p == STROKE || p == BACKGROUND));
}

#[test]
fn pgm_header() {
    let s = generate_sample(&params(2, 2, 0.1, TableStyle::Wireless), 4).unwrap();
    let img = render_sample(&s);
    let mut buf = Vec::new();
    img.write_pgm(&mut buf).unwrap();
    assert!(buf.starts_with(b"P5\n512 512\n255\n"));
    assert_eq!(buf.len(), b"P5\n512 512\n255\n".len() + 512 * 512);
}
