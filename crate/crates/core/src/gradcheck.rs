//! Randomized finite-difference verification of every loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    action_loss, cross_entropy, fd_gradcheck, focal_loss, loss_delta, loss_sp, start_grid_loss,
    OffsetLossKind, DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA,
};
use crate::merge::MergeAction;

pub const FD_STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-5;
pub const FOCAL_CE_TOL: f64 = 1e-12;
/// Probabilities are drawn from this range, away from the clamp and from
/// the flat tails where focal gradients vanish.
const PROB_RANGE: (f64, f64) = (0.05, 0.95);
const MAX_LEN: usize = 30;

pub const FAMILIES: [&str; 4] = [
    "start_point_bce",
    "keypoint_offset",
    "start_grid_focal",
    "merge_action_focal",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: String,
    pub trials: usize,
    pub worst_rel_err: f64,
    pub worst_trial: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub families: Vec<FamilyResult>,
    /// Largest loss or gradient difference between focal loss with
    /// `gamma = 0, alpha = 1` and cross-entropy.
    pub focal_ce_max_diff: f64,
    pub pass: bool,
}

type Objective = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

fn probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(PROB_RANGE.0..PROB_RANGE.1))
        .collect()
}

fn bits(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect()
}

/// A random instance of `family` as a flat objective and its input point.
fn instance(family: usize, rng: &mut impl Rng) -> (Objective, Vec<f64>) {
    let n = rng.random_range(1..=MAX_LEN);
    match family {
        0 => {
            let t = bits(rng, n);
            (
                Box::new(move |x: &[f64]| loss_sp(x, &t).unwrap()),
                probs(rng, n),
            )
        }
        1 => {
            let nk = rng.random_range(1..=8);
            let lines = rng.random_range(1..=4);
            let kind = if rng.random_bool(0.5) {
                OffsetLossKind::Abs
            } else {
                OffsetLossKind::Squared
            };
            let target: Vec<f64> = (0..lines * nk)
                .map(|_| rng.random_range(-10.0..10.0))
                .collect();
            // Keep every residual clear of the kink at zero.
            let x = target
                .iter()
                .map(|t| {
                    let d: f64 = rng.random_range(0.01..5.0);
                    if rng.random_bool(0.5) {
                        t + d
                    } else {
                        t - d
                    }
                })
                .collect();
            let f = move |x: &[f64]| {
                let split = |v: &[f64]| v.chunks(nk).map(<[f64]>::to_vec).collect::<Vec<_>>();
                let (l, g) = loss_delta(&split(x), &split(&target), kind).unwrap();
                (l, g.concat())
            };
            (Box::new(f), x)
        }
        2 => {
            let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let f = move |x: &[f64]| {
                start_grid_loss(x, &t, DEFAULT_FOCAL_GAMMA, DEFAULT_FOCAL_ALPHA).unwrap()
            };
            (Box::new(f), probs(rng, n))
        }
        _ => {
            let t: Vec<MergeAction> = (0..n)
                .map(|_| MergeAction::ALL[rng.random_range(0..4)])
                .collect();
            let f = move |x: &[f64]| {
                let p: Vec<[f64; 4]> = x.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
                let (l, g) = action_loss(&p, &t, DEFAULT_FOCAL_GAMMA, DEFAULT_FOCAL_ALPHA).unwrap();
                (l, g.concat())
            };
            (Box::new(f), probs(rng, 4 * n))
        }
    }
}

/// Checks `trials` random instances of each loss family. With `corrupt`,
/// every analytic gradient is scaled by 1.01 before comparison, which must
/// make the check fail.
pub fn run_gradcheck(trials: usize, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let mut families = Vec::with_capacity(FAMILIES.len());
    for (k, name) in FAMILIES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut worst = (0.0f64, 0);
        for trial in 0..trials {
            let (f, x) = instance(k, &mut rng);
            let err = if corrupt {
                fd_gradcheck(
                    |x: &[f64]| {
                        let (l, g) = f(x);
                        (l, g.into_iter().map(|v| v * 1.01).collect())
                    },
                    &x,
                    FD_STEP,
                )?
            } else {
                fd_gradcheck(&f, &x, FD_STEP)?
            };
            if err > worst.0 || trial == 0 {
                worst = (err, trial);
            }
        }
        families.push(FamilyResult {
            family: name.to_string(),
            trials,
            worst_rel_err: worst.0,
            worst_trial: worst.1,
            pass: worst.0 < MAX_REL_ERR,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(FAMILIES.len() as u64));
    let mut diff = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..=MAX_LEN);
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t = bits(&mut rng, n);
        let (fl, fg) = focal_loss(&p, &t, 0.0, 1.0)?;
        let (cl, cg) = cross_entropy(&p, &t)?;
        diff = diff.max((fl - cl).abs());
        for (a, b) in fg.iter().zip(&cg) {
            diff = diff.max((a - b).abs());
        }
    }
    let pass = families.iter().all(|f| f.pass) && diff <= FOCAL_CE_TOL;
    Ok(GradcheckReport {
        step: FD_STEP,
        tolerance: MAX_REL_ERR,
        families,
        focal_ce_max_diff: diff,
        pass,
    })
}
