//! Evaluation protocols: cell adjacency F1, grid detection F1 and
//! structure-only tree edit distance similarity.
//!
//! Cell matching uses polygon IoU with greedy one-to-one assignment in
//! descending IoU order. Relations are defined on lattice adjacency of the
//! span rectangles, not on content boxes.

mod teds;

pub use teds::{structure_to_tree, teds_struct, tree_edit_distance, NodeLabel, StructTree};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quad_iou, GridLattice, QuadBox, TableStructure};

/// Default cell IoU threshold of the adjacency protocol.
pub const CELL_IOU: f64 = 0.6;
/// Default grid IoU threshold of grid detection.
pub const GRID_IOU: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Adjacency between two cells, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub a: usize,
    pub b: usize,
    pub direction: Direction,
}

impl Relation {
    pub fn new(x: usize, y: usize, direction: Direction) -> Self {
        Relation {
            a: x.min(y),
            b: x.max(y),
            direction,
        }
    }
}

pub type RelationSet = BTreeSet<Relation>;

/// Precision / recall / F1 with the raw counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Both sides were empty; scores are 1 by convention.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub both_empty: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        if n_pred == 0 && n_gt == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                tp,
                n_pred,
                n_gt,
                both_empty: true,
            };
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, n_pred);
        let recall = ratio(tp, n_gt);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            n_pred,
            n_gt,
            both_empty: false,
        }
    }

    /// Micro-average: counts are summed before scoring.
    pub fn micro<'a>(items: impl IntoIterator<Item = &'a Prf>) -> Prf {
        let (tp, np, ng) = items.into_iter().fold((0, 0, 0), |(t, p, g), x| {
            (t + x.tp, p + x.n_pred, g + x.n_gt)
        });
        Prf::from_counts(tp, np, ng)
    }
}

/// One relation per pair of cells sharing a boundary segment of positive
/// length on the lattice.
pub fn adjacency_relations(ts: &TableStructure) -> RelationSet {
    let owner = ts.owner_map();
    let n = ts.cols;
    let mut set = RelationSet::new();
    for r in 0..ts.rows {
        for c in 0..n {
            let here = owner[r * n + c];
            if c + 1 < n && owner[r * n + c + 1] != here {
                set.insert(Relation::new(
                    here,
                    owner[r * n + c + 1],
                    Direction::Horizontal,
                ));
            }
            if r + 1 < ts.rows && owner[(r + 1) * n + c] != here {
                set.insert(Relation::new(
                    here,
                    owner[(r + 1) * n + c],
                    Direction::Vertical,
                ));
            }
        }
    }
    set
}

fn bbox_overlap(a: &QuadBox, b: &QuadBox) -> bool {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
}

/// Greedy one-to-one matching by descending IoU, keeping pairs with
/// `IoU >= threshold`. Returns `(pred, gt, iou)` triples.
pub fn greedy_match(pred: &[QuadBox], gt: &[QuadBox], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if !bbox_overlap(p, g) {
                continue;
            }
            let iou = quad_iou(p, g);
            if iou >= threshold && iou > 0.0 {
                pairs.push((i, j, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    pairs
        .into_iter()
        .filter(|&(i, j, _)| {
            if used_p[i] || used_g[j] {
                return false;
            }
            used_p[i] = true;
            used_g[j] = true;
            true
        })
        .collect()
}

fn polygons(ts: &TableStructure, which: &str) -> Result<Vec<QuadBox>> {
    ts.cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            c.polygon
                .ok_or_else(|| Error::invalid(format!("{which} cell {k} has no polygon")))
        })
        .collect()
}

/// Cell adjacency precision / recall / F1 at cell IoU `threshold`.
pub fn cell_adjacency_f1(
    pred: &TableStructure,
    gt: &TableStructure,
    threshold: f64,
) -> Result<Prf> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold {threshold} outside (0, 1]"
        )));
    }
    let pred_rel = adjacency_relations(pred);
    let gt_rel = adjacency_relations(gt);
    let matches = greedy_match(
        &polygons(pred, "predicted")?,
        &polygons(gt, "ground-truth")?,
        threshold,
    );
    let mut to_gt = vec![None; pred.cells.len()];
    for (i, j, _) in matches {
        to_gt[i] = Some(j);
    }
    let tp = pred_rel
        .iter()
        .filter(|r| match (to_gt[r.a], to_gt[r.b]) {
            (Some(a), Some(b)) => gt_rel.contains(&Relation::new(a, b, r.direction)),
            _ => false,
        })
        .count();
    Ok(Prf::from_counts(tp, pred_rel.len(), gt_rel.len()))
}

/// Grid detection precision / recall / F1 at grid IoU `threshold`.
pub fn grid_f1(pred: &GridLattice, gt: &GridLattice, threshold: f64) -> Prf {
    let tp = greedy_match(&pred.boxes, &gt.boxes, threshold).len();
    Prf::from_counts(tp, pred.boxes.len(), gt.boxes.len())
}
