//! Merge actions over lattice grids.
//!
//! Every grid carries one of four actions: the top-left grid of a cell
//! *stays* (`S`), the rest of the cell's first row merges *left* (`L`), the
//! rest of its first column merges *up* (`U`), and the interior merges both
//! ways (`X`). One action map therefore describes the whole cell partition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellSpan;
use crate::geometry::{GridLattice, QuadBox, TableStructure};
use crate::heads::ActionProbs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MergeAction {
    S,
    L,
    U,
    X,
}

impl MergeAction {
    /// Index order used for probability vectors and tie-breaking.
    pub const ALL: [MergeAction; 4] = [
        MergeAction::S,
        MergeAction::L,
        MergeAction::U,
        MergeAction::X,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            MergeAction::S => 'S',
            MergeAction::L => 'L',
            MergeAction::U => 'U',
            MergeAction::X => 'X',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'S' => Some(MergeAction::S),
            'L' => Some(MergeAction::L),
            'U' => Some(MergeAction::U),
            'X' => Some(MergeAction::X),
            _ => None,
        }
    }
}

impl fmt::Display for MergeAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// An `M x N` action map with its companion starting-grid flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeActionMap {
    pub rows: usize,
    pub cols: usize,
    pub actions: Vec<MergeAction>,
    pub start_grid: Vec<bool>,
}

impl MergeActionMap {
    /// Map whose start flags mirror its `S` entries.
    pub fn from_actions(rows: usize, cols: usize, actions: Vec<MergeAction>) -> Result<Self> {
        if actions.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} actions for a {rows}x{cols} map",
                actions.len()
            )));
        }
        let start_grid = actions.iter().map(|&a| a == MergeAction::S).collect();
        Ok(MergeActionMap {
            rows,
            cols,
            actions,
            start_grid,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> MergeAction {
        self.actions[r * self.cols + c]
    }

    /// One `"SLUX"`-alphabet string per row.
    pub fn to_strings(&self) -> Vec<String> {
        if self.cols == 0 {
            return vec![String::new(); self.rows];
        }
        self.actions
            .chunks(self.cols)
            .map(|row| row.iter().map(|a| a.as_char()).collect())
            .collect()
    }

    /// Parses per-row strings; `start_grid`, when given, must match in shape.
    pub fn from_strings(rows: &[String], start_grid: Option<&[Vec<u8>]>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.chars().count());
        let mut actions = Vec::with_capacity(m * n);
        for (i, row) in rows.iter().enumerate() {
            let before = actions.len();
            for (j, ch) in row.chars().enumerate() {
                actions.push(MergeAction::from_char(ch).ok_or_else(|| {
                    Error::schema(
                        format!("actions[{i}][{j}]"),
                        format!("unknown merge action {ch:?}"),
                    )
                })?);
            }
            if actions.len() - before != n {
                return Err(Error::schema(
                    format!("actions[{i}]"),
                    format!("row has {} entries, expected {n}", actions.len() - before),
                ));
            }
        }
        let mut map = MergeActionMap::from_actions(m, n, actions)?;
        if let Some(sg) = start_grid {
            if sg.len() != m || sg.iter().any(|r| r.len() != n) {
                return Err(Error::schema(
                    "start_grid",
                    format!("shape must be {m}x{n}"),
                ));
            }
            map.start_grid = sg.iter().flatten().map(|&v| v != 0).collect();
        }
        Ok(map)
    }

    pub fn start_grid_rows(&self) -> Vec<Vec<u8>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.start_grid
            .chunks(self.cols)
            .map(|r| r.iter().map(|&b| b as u8).collect())
            .collect()
    }
}

/// Encodes a valid cell partition as a merge action map.
pub fn encode_actions(ts: &TableStructure) -> Result<MergeActionMap> {
    ts.validate()?;
    let mut actions = vec![MergeAction::S; ts.rows * ts.cols];
    for c in &ts.cells {
        for r in c.row_start..=c.row_end {
            for col in c.col_start..=c.col_end {
                actions[r * ts.cols + col] = match (r == c.row_start, col == c.col_start) {
                    (true, true) => MergeAction::S,
                    (true, false) => MergeAction::L,
                    (false, true) => MergeAction::U,
                    (false, false) => MergeAction::X,
                };
            }
        }
    }
    MergeActionMap::from_actions(ts.rows, ts.cols, actions)
}

/// What the decoder had to fix to produce a valid partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeReport {
    /// Starting grids whose rectangle was shrunk to stay consistent.
    pub truncated: Vec<(usize, usize)>,
    /// Grids claimed by no starting grid, emitted as singleton cells.
    pub repaired: Vec<(usize, usize)>,
    /// Grids where the start-grid flag disagrees with the `S` action.
    pub start_grid_mismatches: usize,
}

impl DecodeReport {
    /// True when the map described a partition without any repair. Start
    /// flag disagreements are advisory and do not count.
    pub fn is_clean(&self) -> bool {
        self.truncated.is_empty() && self.repaired.is_empty()
    }
}

fn expected_action(dr: usize, dc: usize) -> MergeAction {
    match (dr == 0, dc == 0) {
        (true, true) => MergeAction::S,
        (true, false) => MergeAction::L,
        (false, true) => MergeAction::U,
        (false, false) => MergeAction::X,
    }
}

/// Decodes any action map into a valid partition.
///
/// Starting grids are visited in row-major order. Each claims the rectangle
/// spanned by its run of `L` to the right and its run of `U` below. When that
/// rectangle holds a wrong action or an already claimed grid, the largest
/// consistent sub-rectangle anchored at the start is taken instead (larger
/// area first, wider first on ties). Grids left unclaimed become singletons.
pub fn decode_actions(m: &MergeActionMap) -> (TableStructure, DecodeReport) {
    let (rows, cols) = (m.rows, m.cols);
    let mut consumed = vec![false; rows * cols];
    let mut cells = Vec::new();
    let mut report = DecodeReport {
        start_grid_mismatches: m
            .actions
            .iter()
            .zip(&m.start_grid)
            .filter(|(a, s)| (**a == MergeAction::S) != **s)
            .count(),
        ..Default::default()
    };

    let consistent = |consumed: &[bool], r: usize, c: usize, h: usize, w: usize| {
        (0..=h).all(|dr| {
            (0..=w).all(|dc| {
                let idx = (r + dr) * cols + c + dc;
                !consumed[idx] && m.actions[idx] == expected_action(dr, dc)
            })
        })
    };

    for r in 0..rows {
        for c in 0..cols {
            if m.get(r, c) != MergeAction::S || consumed[r * cols + c] {
                continue;
            }
            let width = (c + 1..cols)
                .take_while(|&cc| m.get(r, cc) == MergeAction::L)
                .count();
            let height = (r + 1..rows)
                .take_while(|&rr| m.get(rr, c) == MergeAction::U)
                .count();
            let (h, w) = if consistent(&consumed, r, c, height, width) {
                (height, width)
            } else {
                report.truncated.push((r, c));
                let mut best = (0, 0);
                let mut best_key = (1, 0);
                for hh in 0..=height {
                    for ww in 0..=width {
                        let key = ((hh + 1) * (ww + 1), ww);
                        if key > best_key && consistent(&consumed, r, c, hh, ww) {
                            best = (hh, ww);
                            best_key = key;
                        }
                    }
                }
                best
            };
            for rr in r..=r + h {
                for cc in c..=c + w {
                    consumed[rr * cols + cc] = true;
                }
            }
            cells.push(CellSpan::new(r, r + h, c, c + w));
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            if !consumed[r * cols + c] {
                report.repaired.push((r, c));
                cells.push(CellSpan::single(r, c));
            }
        }
    }
    (TableStructure::new_unchecked(rows, cols, cells), report)
}

/// Argmax readout of action probabilities. Ties resolve in the order
/// `S > L > U > X`; the start flag needs a probability strictly above 0.5.
pub fn actions_from_probs(p: &ActionProbs) -> MergeActionMap {
    let actions = p
        .actions
        .iter()
        .map(|v| {
            let mut best = 0;
            for k in 1..4 {
                if v[k] > v[best] {
                    best = k;
                }
            }
            MergeAction::ALL[best]
        })
        .collect();
    MergeActionMap {
        rows: p.rows,
        cols: p.cols,
        actions,
        start_grid: p.start_grid.iter().map(|&s| s > 0.5).collect(),
    }
}

/// Attaches to every cell the quad through its outer lattice corners.
pub fn cell_polygons(ts: &TableStructure, lattice: &GridLattice) -> Result<TableStructure> {
    if ts.dims() != (lattice.rows, lattice.cols) {
        return Err(Error::shape(format!(
            "structure is {}x{} but lattice is {}x{}",
            ts.rows, ts.cols, lattice.rows, lattice.cols
        )));
    }
    let cells = ts
        .cells
        .iter()
        .map(|c| {
            let polygon = QuadBox::new(
                lattice.corner(c.row_start, c.col_start),
                lattice.corner(c.row_start, c.col_end + 1),
                lattice.corner(c.row_end + 1, c.col_end + 1),
                lattice.corner(c.row_end + 1, c.col_start),
            );
            CellSpan {
                polygon: Some(polygon),
                ..*c
            }
        })
        .collect();
    Ok(TableStructure {
        rows: ts.rows,
        cols: ts.cols,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use MergeAction::*;

    fn map(rows: &[&str]) -> MergeActionMap {
        let owned: Vec<String> = rows.iter().map(|s| s.to_string()).collect();
        MergeActionMap::from_strings(&owned, None).unwrap()
    }

    #[test]
    fn singletons_encode_to_all_stay() {
        let m = encode_actions(&TableStructure::singletons(2, 3)).unwrap();
        assert!(m.actions.iter().all(|&a| a == S));
    }

    #[test]
    fn horizontal_span_is_stay_left() {
        let ts = TableStructure::new(1, 2, vec![CellSpan::new(0, 0, 0, 1)]).unwrap();
        assert_eq!(encode_actions(&ts).unwrap().actions, vec![S, L]);
    }

    #[test]
    fn block_span_uses_all_four_actions() {
        let ts = TableStructure::new(2, 2, vec![CellSpan::new(0, 1, 0, 1)]).unwrap();
        let m = encode_actions(&ts).unwrap();
        assert_eq!(m.to_strings(), vec!["SL", "UX"]);
        assert_eq!(m.start_grid, vec![true, false, false, false]);
    }

    #[test]
    fn encode_rejects_invalid_partition() {
        let bad = TableStructure::new_unchecked(1, 2, vec![CellSpan::single(0, 0)]);
        assert!(encode_actions(&bad).is_err());
    }

    #[test]
    fn decode_inverts_block() {
        let (ts, rep) = decode_actions(&map(&["SL", "UX"]));
        assert!(rep.is_clean());
        assert_eq!(ts.cells.len(), 1);
        assert!(ts.cells[0].same_span(&CellSpan::new(0, 1, 0, 1)));
    }

    #[test]
    fn decode_all_stay() {
        let (ts, rep) = decode_actions(&map(&["SSS", "SSS"]));
        assert!(rep.is_clean());
        assert!(ts.same_spans(&TableStructure::singletons(2, 3)));
    }

    #[test]
    fn decode_repairs_interior_stay() {
        let (ts, rep) = decode_actions(&map(&["SL", "US"]));
        let expected = TableStructure::new(
            2,
            2,
            vec![
                CellSpan::new(0, 0, 0, 1),
                CellSpan::single(1, 0),
                CellSpan::single(1, 1),
            ],
        )
        .unwrap();
        assert!(ts.same_spans(&expected), "{ts:?}");
        assert_eq!(rep.repaired, vec![(1, 0)]);
        assert_eq!(rep.truncated, vec![(0, 0)]);
    }

    #[test]
    fn decode_orphans_without_stay() {
        let (ts, rep) = decode_actions(&map(&["XL", "UU"]));
        assert!(ts.validate().is_ok());
        assert_eq!(rep.repaired.len(), 4);
    }

    #[test]
    fn argmax_ties_and_start_threshold() {
        let p = ActionProbs {
            rows: 1,
            cols: 3,
            start_grid: vec![0.5, 0.51, 0.0],
            actions: vec![[0.25; 4], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.4, 0.4]],
        };
        let m = actions_from_probs(&p);
        assert_eq!(m.actions, vec![S, L, U]);
        assert_eq!(m.start_grid, vec![false, true, false]);
    }

    #[test]
    fn polygons_follow_lattice_corners() {
        use crate::geometry::{GridLattice, Point};
        let corners: Vec<Point> = (0..2)
            .flat_map(|i| (0..3).map(move |j| Point::new(10.0 * j as f64, 10.0 * i as f64)))
            .collect();
        let lat = GridLattice::from_corners(1, 2, corners, vec![], vec![]).unwrap();
        let ts = TableStructure::new(1, 2, vec![CellSpan::new(0, 0, 0, 1)]).unwrap();
        let with = cell_polygons(&ts, &lat).unwrap();
        assert_eq!(
            with.cells[0].polygon,
            Some(QuadBox::rect(0.0, 0.0, 20.0, 10.0))
        );
        let single = cell_polygons(&TableStructure::singletons(1, 2), &lat).unwrap();
        assert_eq!(single.cells[1].polygon.as_ref(), Some(lat.box_at(0, 1)));
        assert!(cell_polygons(&TableStructure::singletons(2, 2), &lat).is_err());
    }
}
