//! Training objectives with analytic gradients.
//!
//! Every loss returns its value together with the gradient with respect to
//! the prediction it consumes, so a trainer can backpropagate without an
//! autodiff framework. [`fd_gradcheck`] verifies the gradients numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::MergeAction;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Half-width of the wired start-point neighborhood, in half-resolution
/// indices (a width-8 neighborhood, inclusive at both ends).
pub const WIRED_HALF_WIDTH: usize = 4;

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableStyle {
    /// Visible ruling lines.
    Wired,
    /// Structure implied by whitespace separation regions.
    Wireless,
}

/// Binary start-point target of length `len`.
///
/// Wired tables mark every index within [`WIRED_HALF_WIDTH`] of a start;
/// wireless tables mark the given separation-region intervals (inclusive).
pub fn dilate_start_gt(
    starts: &[usize],
    style: TableStyle,
    regions: Option<&[(usize, usize)]>,
    len: usize,
) -> Result<Vec<f64>> {
    let mut y = vec![0.0; len];
    match style {
        TableStyle::Wired => {
            for &s in starts {
                if s >= len {
                    return Err(Error::invalid(format!(
                        "start index {s} outside [0, {len})"
                    )));
                }
                let lo = s.saturating_sub(WIRED_HALF_WIDTH);
                let hi = (s + WIRED_HALF_WIDTH).min(len - 1);
                y[lo..=hi].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        TableStyle::Wireless => {
            let regions = regions
                .ok_or_else(|| Error::invalid("wireless targets need separation regions"))?;
            for &(lo, hi) in regions {
                if lo > hi || lo >= len {
                    return Err(Error::invalid(format!(
                        "separation region [{lo}, {hi}] outside [0, {len})"
                    )));
                }
                y[lo..=hi.min(len - 1)].iter_mut().for_each(|v| *v = 1.0);
            }
        }
    }
    Ok(y)
}

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c == p)
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!(
            "{what}: prediction has {a} entries, target has {b}"
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over start-point probabilities.
pub fn loss_sp(p: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(p.len(), target.len(), "start-point loss")?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(target)
        .map(|(&pi, &yi)| {
            let (c, inside) = clamp_prob(pi);
            loss -= yi * c.ln() + (1.0 - yi) * (1.0 - c).ln();
            if inside {
                (c - yi) / (c * (1.0 - c)) / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetLossKind {
    /// Per-keypoint absolute error (the norm of a scalar offset).
    #[default]
    Abs,
    /// Per-keypoint squared error.
    Squared,
}

/// Mean keypoint offset error over `N` lines of `N_k` offsets each.
/// The subgradient at exact equality is 0.
pub fn loss_delta(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    kind: OffsetLossKind,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len(pred.len(), target.len(), "offset loss lines")?;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        check_len(p.len(), t.len(), &format!("offset loss line {i}"))?;
    }
    let count: usize = pred.iter().map(Vec::len).sum();
    if count == 0 {
        return Ok((0.0, pred.iter().map(|_| Vec::new()).collect()));
    }
    let n = count as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(&a, &b)| {
                    let d = a - b;
                    match kind {
                        OffsetLossKind::Abs => {
                            loss += d.abs();
                            if d > 0.0 {
                                1.0 / n
                            } else if d < 0.0 {
                                -1.0 / n
                            } else {
                                0.0
                            }
                        }
                        OffsetLossKind::Squared => {
                            loss += d * d;
                            2.0 * d / n
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean binary focal loss `-alpha (1 - p_t)^gamma ln p_t`, where `p_t` is
/// the probability given to the true class.
pub fn focal_loss(p: &[f64], target: &[f64], gamma: f64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_len(p.len(), target.len(), "focal loss")?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(target) {
        let (term, g) = focal_term(pi, yi, gamma, alpha);
        loss += term;
        grad.push(g / n);
    }
    Ok((loss / n, grad))
}

/// Loss and derivative (w.r.t. `p`) of one focal term.
fn focal_term(p: f64, y: f64, gamma: f64, alpha: f64) -> (f64, f64) {
    let (c, inside) = clamp_prob(p);
    let positive = y >= 0.5;
    let pt = if positive { c } else { 1.0 - c };
    let q = 1.0 - pt;
    let ln_pt = pt.ln();
    let loss = -alpha * q.powf(gamma) * ln_pt;
    if !inside {
        return (loss, 0.0);
    }
    // d/dpt [-(1-pt)^g ln pt] = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt
    let mut dpt = -(q.powf(gamma) / pt);
    if gamma != 0.0 {
        dpt += gamma * q.powf(gamma - 1.0) * ln_pt;
    }
    let d = alpha * dpt;
    (loss, if positive { d } else { -d })
}

/// Mean binary cross-entropy written as `-ln p_t`; the `gamma = 0,
/// alpha = 1` case of [`focal_loss`].
pub fn cross_entropy(p: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(p.len(), target.len(), "cross-entropy")?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(target) {
        let (c, inside) = clamp_prob(pi);
        let positive = yi >= 0.5;
        let pt = if positive { c } else { 1.0 - c };
        loss += -pt.ln();
        let d = if inside { -(1.0 / pt) } else { 0.0 };
        grad.push((if positive { d } else { -d }) / n);
    }
    Ok((loss / n, grad))
}

/// Starting-grid loss: focal loss averaged over the `M x N` lattice.
pub fn start_grid_loss(
    p: &[f64],
    is_start: &[bool],
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let target: Vec<f64> = is_start.iter().map(|&b| b as u8 as f64).collect();
    focal_loss(p, &target, gamma, alpha)
}

/// Merge-action loss: one-vs-rest focal terms summed over the four actions
/// and averaged over the `M x N` lattice.
pub fn action_loss(
    p: &[[f64; 4]],
    target: &[MergeAction],
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Vec<[f64; 4]>)> {
    check_len(p.len(), target.len(), "merge-action loss")?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(target)
        .map(|(probs, t)| {
            let mut g = [0.0; 4];
            for a in MergeAction::ALL {
                let y = (a == *t) as u8 as f64;
                let (term, d) = focal_term(probs[a.index()], y, gamma, alpha);
                loss += term;
                g[a.index()] = d / n;
            }
            g
        })
        .collect();
    Ok((loss / n, grad))
}

/// The six component losses of the overall objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    SpRow,
    SpCol,
    DeltaRow,
    DeltaCol,
    Ma,
    Sg,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::SpRow,
        LossTerm::SpCol,
        LossTerm::DeltaRow,
        LossTerm::DeltaCol,
        LossTerm::Ma,
        LossTerm::Sg,
    ];
}

/// Gradients of the overall loss with respect to every prediction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossGradients {
    pub row_start: Vec<f64>,
    pub col_start: Vec<f64>,
    pub row_offsets: Vec<Vec<f64>>,
    pub col_offsets: Vec<Vec<f64>>,
    pub start_grid: Vec<f64>,
    pub actions: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sp_row: f64,
    pub l_sp_col: f64,
    pub l_delta_row: f64,
    pub l_delta_col: f64,
    pub l_ma: f64,
    pub l_sg: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradients: Option<LossGradients>,
}

/// Unweighted sum of the six component losses, given in any order.
pub fn total_loss(parts: &[(LossTerm, f64)]) -> Result<LossReport> {
    let mut values = [None; 6];
    for &(term, v) in parts {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Invariant(format!(
                "loss {term:?} = {v} is not a finite non-negative value"
            )));
        }
        let slot = &mut values[term as usize];
        if slot.is_some() {
            return Err(Error::invalid(format!("loss {term:?} given twice")));
        }
        *slot = Some(v);
    }
    let mut got = [0.0; 6];
    for (k, v) in values.iter().enumerate() {
        got[k] = v.ok_or_else(|| Error::invalid(format!("loss {:?} missing", LossTerm::ALL[k])))?;
    }
    Ok(LossReport {
        l_sp_row: got[0],
        l_sp_col: got[1],
        l_delta_row: got[2],
        l_delta_col: got[3],
        l_ma: got[4],
        l_sg: got[5],
        total: got.iter().sum(),
        gradients: None,
    })
}

/// Model outputs consumed by the losses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossInputs {
    pub row_start: Vec<f64>,
    pub col_start: Vec<f64>,
    pub row_offsets: Vec<Vec<f64>>,
    pub col_offsets: Vec<Vec<f64>>,
    pub start_grid: Vec<f64>,
    pub actions: Vec<[f64; 4]>,
}

/// Supervision targets matching [`LossInputs`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTargets {
    pub row_start: Vec<f64>,
    pub col_start: Vec<f64>,
    pub row_offsets: Vec<Vec<f64>>,
    pub col_offsets: Vec<Vec<f64>>,
    pub start_grid: Vec<bool>,
    pub actions: Vec<MergeAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub offset_kind: OffsetLossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            focal_alpha: DEFAULT_FOCAL_ALPHA,
            offset_kind: OffsetLossKind::Abs,
        }
    }
}

/// Evaluates all six losses and their gradients.
pub fn compute_losses(
    pred: &LossInputs,
    target: &LossTargets,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let (sp_row, g_row_start) = loss_sp(&pred.row_start, &target.row_start)?;
    let (sp_col, g_col_start) = loss_sp(&pred.col_start, &target.col_start)?;
    let (d_row, g_row_off) = loss_delta(&pred.row_offsets, &target.row_offsets, cfg.offset_kind)?;
    let (d_col, g_col_off) = loss_delta(&pred.col_offsets, &target.col_offsets, cfg.offset_kind)?;
    let (ma, g_actions) = action_loss(
        &pred.actions,
        &target.actions,
        cfg.focal_gamma,
        cfg.focal_alpha,
    )?;
    let (sg, g_sg) = start_grid_loss(
        &pred.start_grid,
        &target.start_grid,
        cfg.focal_gamma,
        cfg.focal_alpha,
    )?;
    let mut report = total_loss(&[
        (LossTerm::SpRow, sp_row),
        (LossTerm::SpCol, sp_col),
        (LossTerm::DeltaRow, d_row),
        (LossTerm::DeltaCol, d_col),
        (LossTerm::Ma, ma),
        (LossTerm::Sg, sg),
    ])?;
    report.gradients = Some(LossGradients {
        row_start: g_row_start,
        col_start: g_col_start,
        row_offsets: g_row_off,
        col_offsets: g_col_off,
        start_grid: g_sg,
        actions: g_actions,
    });
    Ok(report)
}

/// Largest relative disagreement between the analytic gradient of `f` at `x`
/// and central finite differences with step `h`. The denominator of each
/// coordinate is `max(|analytic|, |numeric|, 1e-8)`.
pub fn fd_gradcheck<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!(
            "finite-difference step {h} must be positive"
        )));
    }
    let (_, analytic) = f(x);
    check_len(analytic.len(), x.len(), "gradient")?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (up, _) = f(&probe);
        probe[i] = x[i] - h;
        let (down, _) = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wired_neighborhood_is_plus_minus_four() {
        let y = dilate_start_gt(&[10], TableStyle::Wired, None, 32).unwrap();
        let ones: Vec<usize> = (0..32).filter(|&i| y[i] == 1.0).collect();
        assert_eq!(ones, (6..=14).collect::<Vec<_>>());
    }

    #[test]
    fn wireless_regions() {
        let y = dilate_start_gt(&[], TableStyle::Wireless, Some(&[(5, 9)]), 16).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&i| y[i] == 1.0).collect();
        assert_eq!(ones, vec![5, 6, 7, 8, 9]);
        assert!(dilate_start_gt(&[], TableStyle::Wireless, None, 16).is_err());
    }

    #[test]
    fn no_starts_no_targets() {
        assert_eq!(
            dilate_start_gt(&[], TableStyle::Wired, None, 8).unwrap(),
            vec![0.0; 8]
        );
    }

    #[test]
    fn bce_closed_forms() {
        let (l, _) = loss_sp(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = loss_sp(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn offset_loss_substitution() {
        let (l, g) = loss_delta(&[vec![1.0, 2.0]], &[vec![0.0, 0.0]], OffsetLossKind::Abs).unwrap();
        assert_eq!(l, 1.5);
        assert_eq!(g, vec![vec![0.5, 0.5]]);
        let (l, g) = loss_delta(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]], OffsetLossKind::Abs).unwrap();
        assert_eq!((l, g), (0.0, vec![vec![0.0, 0.0]]));
        assert!(loss_delta(&[vec![1.0]], &[vec![1.0, 2.0]], OffsetLossKind::Abs).is_err());
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let p = [0.2, 0.7, 0.95, 0.01];
        let y = [1.0, 0.0, 1.0, 0.0];
        let (a, ga) = focal_loss(&p, &y, 0.0, 1.0).unwrap();
        let (b, gb) = cross_entropy(&p, &y).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn confident_correct_focal_is_tiny() {
        let (l, _) = focal_loss(&[1.0 - PROB_EPS], &[1.0], 2.0, 0.25).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn total_loss_rules() {
        let zeros: Vec<_> = LossTerm::ALL.iter().map(|&t| (t, 0.0)).collect();
        assert_eq!(total_loss(&zeros).unwrap().total, 0.0);
        let ones: Vec<_> = LossTerm::ALL.iter().map(|&t| (t, 1.0)).collect();
        assert_eq!(total_loss(&ones).unwrap().total, 6.0);
        let mut neg = ones.clone();
        neg[2].1 = -0.1;
        assert!(matches!(total_loss(&neg), Err(Error::Invariant(_))));
        assert!(total_loss(&ones[..5]).is_err());
    }

    #[test]
    fn gradcheck_exact_on_quadratic() {
        let f = |x: &[f64]| {
            let v = x.iter().map(|v| 3.0 * v * v + v).sum::<f64>();
            (v, x.iter().map(|v| 6.0 * v + 1.0).collect())
        };
        let err = fd_gradcheck(f, &[0.3, -1.2, 2.0], 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
        assert!(fd_gradcheck(f, &[0.0], 0.0).is_err());
    }
}
