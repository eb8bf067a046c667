//! Bundle decoding: start detection, proposals, offsets, lattice, merge.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::geometry::{GridLattice, TableStructure};
use crate::kor::{
    apply_offsets, build_lattice, detect_start_points, make_proposals, Axis, LatticeWarning,
    OffsetVector, SeparationLine,
};
use crate::merge::{cell_polygons, decode_actions, DecodeReport, MergeAction, MergeActionMap};

/// Mismatches between the bundle and the detected lines, and what the
/// decoder did about them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub row_lines: usize,
    pub col_lines: usize,
    /// Detected lines without an offset vector; decoded with zero offsets.
    pub row_offsets_missing: usize,
    pub col_offsets_missing: usize,
    /// Offset vectors beyond the detected line count; ignored.
    pub row_offsets_extra: usize,
    pub col_offsets_extra: usize,
    /// Original action map size when it did not match the lattice; the map
    /// is cropped or padded with `S`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_map_resized: Option<(usize, usize)>,
    pub lattice_warnings: Vec<LatticeWarning>,
    pub merge: DecodeReport,
}

impl DecodeSummary {
    pub fn is_clean(&self) -> bool {
        self.row_offsets_missing == 0
            && self.col_offsets_missing == 0
            && self.row_offsets_extra == 0
            && self.col_offsets_extra == 0
            && self.action_map_resized.is_none()
            && self.lattice_warnings.is_empty()
            && self.merge.is_clean()
    }
}

/// Wall time of the two decode stages, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub split_us: u64,
    pub merge_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub lattice: GridLattice,
    /// Cells with polygons attached.
    pub structure: TableStructure,
    pub summary: DecodeSummary,
    pub timings: StageTimings,
}

/// Separation lines of one axis, with the number of missing and surplus
/// offset vectors.
pub fn decode_axis(
    b: &PredictionBundle,
    axis: Axis,
    threshold: f64,
) -> Result<(Vec<SeparationLine>, usize, usize)> {
    let starts = detect_start_points(&b.start_probs(axis), threshold)?;
    if starts.is_empty() {
        return Err(Error::NoSeparationLines(axis.name()));
    }
    let offsets = b.offsets(axis);
    let lines = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let props = make_proposals(axis.point(0.0, s), axis, b.image_size, b.stride)?;
            let deltas = offsets
                .get(k)
                .map(|d| OffsetVector::new(axis, d.clone()))
                .unwrap_or_else(|| OffsetVector::zeros(axis, props.points.len()));
            apply_offsets(&props, &deltas)
        })
        .collect::<Result<Vec<_>>>()?;
    let missing = starts.len().saturating_sub(offsets.len());
    let extra = offsets.len().saturating_sub(starts.len());
    Ok((lines, missing, extra))
}

/// Crops or pads (with `S`) an action map to `rows x cols`.
pub fn fit_action_map(m: &MergeActionMap, rows: usize, cols: usize) -> MergeActionMap {
    let mut actions = Vec::with_capacity(rows * cols);
    let mut start_grid = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            if r < m.rows && c < m.cols {
                actions.push(m.get(r, c));
                start_grid.push(m.start_grid[r * m.cols + c]);
            } else {
                actions.push(MergeAction::S);
                start_grid.push(true);
            }
        }
    }
    MergeActionMap {
        rows,
        cols,
        actions,
        start_grid,
    }
}

/// Full decode of a bundle into a lattice and a valid cell partition.
///
/// Only the line geometry can fail (no lines, crossing lines, missing
/// intersections); every action map decodes to some partition.
pub fn decode_bundle(b: &PredictionBundle, threshold: f64) -> Result<Decoded> {
    b.validate()?;
    let t0 = Instant::now();
    let (rows, row_missing, row_extra) = decode_axis(b, Axis::Row, threshold)?;
    let (cols, col_missing, col_extra) = decode_axis(b, Axis::Col, threshold)?;
    let (lattice, warnings) = build_lattice(&rows, &cols)?;
    let t1 = Instant::now();
    let map = b.action_map()?;
    let (m, n) = (lattice.rows, lattice.cols);
    let resized = ((map.rows, map.cols) != (m, n)).then_some((map.rows, map.cols));
    let map = if resized.is_some() {
        fit_action_map(&map, m, n)
    } else {
        map
    };
    let (structure, merge) = decode_actions(&map);
    let structure = cell_polygons(&structure, &lattice)?;
    let t2 = Instant::now();
    Ok(Decoded {
        summary: DecodeSummary {
            row_lines: rows.len(),
            col_lines: cols.len(),
            row_offsets_missing: row_missing,
            col_offsets_missing: col_missing,
            row_offsets_extra: row_extra,
            col_offsets_extra: col_extra,
            action_map_resized: resized,
            lattice_warnings: warnings,
            merge,
        },
        lattice,
        structure,
        timings: StageTimings {
            split_us: (t1 - t0).as_micros() as u64,
            merge_us: (t2 - t1).as_micros() as u64,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ImageSize, Point};

    fn spike(len: usize, at: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for &i in at {
            v[i] = 1.0;
        }
        v
    }

    fn straight(actions: &[&str]) -> PredictionBundle {
        let m = actions.len();
        let n = actions[0].len();
        PredictionBundle {
            image_size: ImageSize::new(128, 128),
            stride: 32,
            row_start_prob: spike(64, &(0..=m).map(|i| 5 + 10 * i).collect::<Vec<_>>()),
            col_start_prob: spike(64, &(0..=n).map(|i| 5 + 10 * i).collect::<Vec<_>>()),
            row_offsets: vec![vec![0.0; 4]; m + 1],
            col_offsets: vec![vec![0.0; 4]; n + 1],
            actions: actions.iter().map(|s| s.to_string()).collect(),
            start_grid: actions
                .iter()
                .map(|r| r.chars().map(|c| (c == 'S') as u8).collect())
                .collect(),
        }
    }

    #[test]
    fn straight_two_by_two() {
        let d = decode_bundle(&straight(&["SL", "SS"]), 0.5).unwrap();
        assert_eq!((d.lattice.rows, d.lattice.cols), (2, 2));
        assert_eq!(d.structure.cells.len(), 3);
        assert_eq!(d.lattice.corner(0, 0), Point::new(10.0, 10.0));
        assert_eq!(d.lattice.corner(2, 2), Point::new(50.0, 50.0));
        assert!(d.summary.is_clean());
    }

    #[test]
    fn empty_probabilities_have_no_lines() {
        let mut b = straight(&["S"]);
        b.row_start_prob.iter_mut().for_each(|v| *v = 0.0);
        let err = decode_bundle(&b, 0.5).unwrap_err();
        assert!(err.to_string().contains("no separation lines"), "{err}");
    }

    #[test]
    fn missing_offsets_decode_straight() {
        let mut b = straight(&["SS", "SS"]);
        b.row_offsets.truncate(1);
        b.col_offsets.push(vec![0.0; 4]);
        let d = decode_bundle(&b, 0.5).unwrap();
        assert_eq!(d.summary.row_offsets_missing, 2);
        assert_eq!(d.summary.col_offsets_extra, 1);
        assert_eq!(d.structure.cells.len(), 4);
    }

    #[test]
    fn action_map_is_fitted() {
        let mut b = straight(&["SS", "SS"]);
        b.actions = vec!["SLL".into()];
        b.start_grid = vec![vec![1, 0, 0]];
        let d = decode_bundle(&b, 0.5).unwrap();
        assert_eq!(d.summary.action_map_resized, Some((1, 3)));
        d.structure.validate().unwrap();
        assert_eq!(d.structure.cells.len(), 3);
    }
}
