//! Keypoint-offset decoding of separation lines and their intersection into a
//! grid lattice.
//!
//! A row separation line is a polyline whose keypoints sit at fixed
//! x-coordinates `j * stride`; only the y-coordinates are free. Columns are
//! the mirror image. Decoding turns a half-resolution start-probability
//! vector into start points, lays out straight keypoint proposals from each
//! start, shifts them by the regressed offsets, and intersects the resulting
//! row and column polylines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridLattice, ImageSize, Point};

/// Default binarization threshold for start-point detection.
pub const DEFAULT_START_THRESHOLD: f64 = 0.5;

/// Default keypoint sampling stride in pixels.
pub const DEFAULT_STRIDE: u32 = 32;

const SEG_EPS: f64 = 1e-12;
const SAME_POINT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Col,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Row => "row",
            Axis::Col => "col",
        }
    }

    /// Image extent along the line direction (width for row lines).
    pub fn along_extent(self, image: ImageSize) -> u32 {
        match self {
            Axis::Row => image.width,
            Axis::Col => image.height,
        }
    }

    /// Image extent across the line direction (height for row lines).
    pub fn across_extent(self, image: ImageSize) -> u32 {
        match self {
            Axis::Row => image.height,
            Axis::Col => image.width,
        }
    }

    /// Coordinate of `p` along the line direction.
    #[inline]
    pub fn along(self, p: Point) -> f64 {
        match self {
            Axis::Row => p.x,
            Axis::Col => p.y,
        }
    }

    /// Coordinate of `p` across the line direction.
    #[inline]
    pub fn across(self, p: Point) -> f64 {
        match self {
            Axis::Row => p.y,
            Axis::Col => p.x,
        }
    }

    /// Builds a point from (along, across) coordinates.
    #[inline]
    pub fn point(self, along: f64, across: f64) -> Point {
        match self {
            Axis::Row => Point::new(along, across),
            Axis::Col => Point::new(across, along),
        }
    }
}

/// Half-resolution probability that each image row (or column) holds a
/// starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartProbVector {
    pub axis: Axis,
    pub probs: Vec<f64>,
}

impl StartProbVector {
    pub fn new(axis: Axis, probs: Vec<f64>) -> Self {
        StartProbVector { axis, probs }
    }
}

/// Straight keypoint proposals laid out from one starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub axis: Axis,
    pub start: Point,
    pub stride: u32,
    pub image: ImageSize,
    pub points: Vec<Point>,
}

/// Regressed offsets across the line direction, one per keypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetVector {
    pub axis: Axis,
    pub deltas: Vec<f64>,
}

impl OffsetVector {
    pub fn new(axis: Axis, deltas: Vec<f64>) -> Self {
        OffsetVector { axis, deltas }
    }

    pub fn zeros(axis: Axis, n: usize) -> Self {
        OffsetVector {
            axis,
            deltas: vec![0.0; n],
        }
    }
}

/// A separation line as a polyline of keypoints.
///
/// Beyond its first and last keypoints the line continues at constant
/// across-coordinate up to the image border, so every row line meets every
/// column line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationLine {
    pub axis: Axis,
    pub start: Point,
    pub keypoints: Vec<Point>,
    /// Image extent along the line direction, in pixels.
    pub extent: f64,
}

impl SeparationLine {
    /// Across-coordinate of the start point.
    pub fn start_coord(&self) -> f64 {
        self.axis.across(self.start)
    }

    /// Across-coordinate of the polyline at along-coordinate `s`.
    pub fn value_at(&self, s: f64) -> f64 {
        let ax = self.axis;
        let kp = &self.keypoints;
        if kp.is_empty() {
            return self.start_coord();
        }
        let first = ax.along(kp[0]);
        if s <= first {
            return ax.across(kp[0]);
        }
        let last = kp.len() - 1;
        if s >= ax.along(kp[last]) {
            return ax.across(kp[last]);
        }
        let k = kp.partition_point(|p| ax.along(*p) <= s).max(1) - 1;
        let (a, b) = (kp[k], kp[k + 1]);
        let (sa, sb) = (ax.along(a), ax.along(b));
        let t = (s - sa) / (sb - sa);
        ax.across(a) + t * (ax.across(b) - ax.across(a))
    }

    /// Keypoints plus the constant extensions to both image borders, in
    /// ascending along-order.
    pub fn polyline(&self) -> Vec<Point> {
        let ax = self.axis;
        let mut pts = Vec::with_capacity(self.keypoints.len() + 2);
        let Some(&first) = self.keypoints.first() else {
            return pts;
        };
        if ax.along(first) > 0.0 {
            pts.push(ax.point(0.0, ax.across(first)));
        }
        pts.extend_from_slice(&self.keypoints);
        let last = *self.keypoints.last().unwrap();
        let border = (self.extent - 1.0).max(0.0);
        if ax.along(last) < border {
            pts.push(ax.point(border, ax.across(last)));
        }
        pts
    }
}

/// Number of keypoints sampled along a line of the given extent.
pub fn num_keypoints(extent: u32, stride: u32) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("keypoint stride must be positive"));
    }
    if extent == 0 {
        return Err(Error::invalid("image extent must be positive"));
    }
    Ok(extent.div_ceil(stride) as usize)
}

/// Half-resolution indices of detected starting points.
///
/// Entries strictly above `threshold` are grouped into maximal runs of
/// consecutive indices; each run contributes its argmax (lowest index on
/// ties).
pub fn detect_start_indices(p: &StartProbVector, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "start threshold {threshold} outside (0, 1)"
        )));
    }
    let mut starts = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in p.probs.iter().enumerate() {
        if v > threshold {
            match best {
                Some((_, bv)) if v <= bv => {}
                _ => best = Some((i, v)),
            }
        } else if let Some((bi, _)) = best.take() {
            starts.push(bi);
        }
    }
    if let Some((bi, _)) = best {
        starts.push(bi);
    }
    Ok(starts)
}

/// Image coordinates of detected starting points, ascending. Half-resolution
/// index `i` maps to image coordinate `2 * i`.
pub fn detect_start_points(p: &StartProbVector, threshold: f64) -> Result<Vec<f64>> {
    Ok(detect_start_indices(p, threshold)?
        .into_iter()
        .map(|i| (2 * i) as f64)
        .collect())
}

/// Lays out `ceil(extent / stride)` straight proposals from `start`.
pub fn make_proposals(
    start: Point,
    axis: Axis,
    image: ImageSize,
    stride: u32,
) -> Result<ProposalSet> {
    let n = num_keypoints(axis.along_extent(image), stride)?;
    let across = axis.across(start);
    let points = (0..n)
        .map(|j| axis.point((j as u64 * stride as u64) as f64, across))
        .collect();
    Ok(ProposalSet {
        axis,
        start,
        stride,
        image,
        points,
    })
}

/// Shifts each proposal across the line by its offset and clamps the result
/// into the image.
pub fn apply_offsets(props: &ProposalSet, offsets: &OffsetVector) -> Result<SeparationLine> {
    if offsets.deltas.len() != props.points.len() {
        return Err(Error::invalid(format!(
            "{} offsets given for {} {} proposals",
            offsets.deltas.len(),
            props.points.len(),
            props.axis.name()
        )));
    }
    let ax = props.axis;
    let hi = (ax.across_extent(props.image) as f64 - 1.0).max(0.0);
    let keypoints = props
        .points
        .iter()
        .zip(&offsets.deltas)
        .map(|(p, d)| ax.point(ax.along(*p), (ax.across(*p) + d).clamp(0.0, hi)))
        .collect();
    Ok(SeparationLine {
        axis: ax,
        start: props.start,
        keypoints,
        extent: ax.along_extent(props.image) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCrossing {
    /// Index of the earlier line; it crosses line `first + 1`.
    pub first: usize,
    /// First keypoint index at which the order flips.
    pub keypoint: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineReport {
    pub crossings: Vec<LineCrossing>,
    /// Lines whose start is not strictly beyond their predecessor's.
    pub order_violations: Vec<usize>,
    /// Lines whose keypoints are not strictly increasing along the line.
    pub malformed: Vec<usize>,
}

impl LineReport {
    pub fn is_clean(&self) -> bool {
        self.crossings.is_empty() && self.order_violations.is_empty() && self.malformed.is_empty()
    }
}

/// Checks that same-axis lines are well formed, sorted and mutually
/// non-crossing.
pub fn validate_lines(lines: &[SeparationLine]) -> LineReport {
    let mut report = LineReport::default();
    for (i, l) in lines.iter().enumerate() {
        let ax = l.axis;
        if l.keypoints.is_empty()
            || l.keypoints
                .windows(2)
                .any(|w| ax.along(w[1]) <= ax.along(w[0]))
        {
            report.malformed.push(i);
        }
    }
    for (i, pair) in lines.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if b.start_coord() <= a.start_coord() {
            report.order_violations.push(i + 1);
            continue;
        }
        let ax = a.axis;
        // Both lines share the along-coordinates of their keypoints, so
        // comparing keypoints (and the constant extensions) is exhaustive.
        let flip = a
            .keypoints
            .iter()
            .zip(&b.keypoints)
            .position(|(p, q)| ax.across(*q) <= ax.across(*p));
        if let Some(keypoint) = flip {
            report.crossings.push(LineCrossing { first: i, keypoint });
        }
    }
    report
}

/// A lattice corner where the row/column polylines met more than once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeWarning {
    pub row_line: usize,
    pub col_line: usize,
    pub intersections: usize,
}

fn segment_intersection(p0: Point, p1: Point, q0: Point, q1: Point) -> Option<Point> {
    let r = Point::new(p1.x - p0.x, p1.y - p0.y);
    let s = Point::new(q1.x - q0.x, q1.y - q0.y);
    let qp = Point::new(q0.x - p0.x, q0.y - p0.y);
    let denom = r.x * s.y - r.y * s.x;
    let rr = r.x * r.x + r.y * r.y;
    let ss = s.x * s.x + s.y * s.y;
    if denom.abs() <= SEG_EPS * (rr * ss).sqrt() {
        // Parallel: only collinear overlaps intersect.
        let off = qp.x * r.y - qp.y * r.x;
        if off.abs() > SEG_EPS * (rr * (qp.x * qp.x + qp.y * qp.y)).sqrt().max(SEG_EPS) || rr == 0.0
        {
            return None;
        }
        let t0 = (qp.x * r.x + qp.y * r.y) / rr;
        let t1 = t0 + (s.x * r.x + s.y * r.y) / rr;
        let lo = t0.min(t1).max(0.0);
        let hi = t0.max(t1).min(1.0);
        if lo > hi {
            return None;
        }
        return Some(Point::new(p0.x + lo * r.x, p0.y + lo * r.y));
    }
    let t = (qp.x * s.y - qp.y * s.x) / denom;
    let u = (qp.x * r.y - qp.y * r.x) / denom;
    let range = -SEG_EPS..=1.0 + SEG_EPS;
    if range.contains(&t) && range.contains(&u) {
        let t = t.clamp(0.0, 1.0);
        Some(Point::new(p0.x + t * r.x, p0.y + t * r.y))
    } else {
        None
    }
}

/// Intersections of a row polyline (x ascending) and a column polyline
/// (y ascending), sorted by ascending x and deduplicated.
fn polyline_intersections(row: &[Point], col: &[Point], out: &mut Vec<Point>) {
    out.clear();
    if row.len() < 2 || col.len() < 2 {
        return;
    }
    let (cx0, cx1) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    // Row segments whose x-range meets [cx0, cx1].
    let k_lo = row.partition_point(|p| p.x < cx0).saturating_sub(1);
    let k_hi = row.partition_point(|p| p.x <= cx1).min(row.len() - 1);
    for k in k_lo..k_hi {
        let (a, b) = (row[k], row[k + 1]);
        let (ry0, ry1) = (a.y.min(b.y), a.y.max(b.y));
        let m_lo = col.partition_point(|p| p.y < ry0).saturating_sub(1);
        let m_hi = col.partition_point(|p| p.y <= ry1).min(col.len() - 1);
        for m in m_lo..m_hi {
            if let Some(p) = segment_intersection(a, b, col[m], col[m + 1]) {
                out.push(p);
            }
        }
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    out.dedup_by(|a, b| (a.x - b.x).abs() <= SAME_POINT_EPS && (a.y - b.y).abs() <= SAME_POINT_EPS);
}

/// Intersects sorted row and column lines into an `M x N` lattice, with
/// `M = rows - 1` and `N = cols - 1`.
pub fn build_lattice(
    row_lines: &[SeparationLine],
    col_lines: &[SeparationLine],
) -> Result<(GridLattice, Vec<LatticeWarning>)> {
    if row_lines.len() < 2 || col_lines.len() < 2 {
        return Err(Error::Lattice(format!(
            "need at least two row and two column lines, got {} and {}",
            row_lines.len(),
            col_lines.len()
        )));
    }
    if let Some(l) = row_lines.iter().find(|l| l.axis != Axis::Row) {
        return Err(Error::invalid(format!(
            "column line at {} given as a row line",
            l.start_coord()
        )));
    }
    if let Some(l) = col_lines.iter().find(|l| l.axis != Axis::Col) {
        return Err(Error::invalid(format!(
            "row line at {} given as a column line",
            l.start_coord()
        )));
    }
    for (lines, axis) in [(row_lines, Axis::Row), (col_lines, Axis::Col)] {
        let report = validate_lines(lines);
        if !report.is_clean() {
            return Err(Error::Lattice(format!(
                "{} lines failed validation: {report:?}",
                axis.name()
            )));
        }
    }
    let row_polys: Vec<Vec<Point>> = row_lines.iter().map(SeparationLine::polyline).collect();
    let col_polys: Vec<Vec<Point>> = col_lines.iter().map(SeparationLine::polyline).collect();
    let mut corners = Vec::with_capacity(row_lines.len() * col_lines.len());
    let mut warnings = Vec::new();
    let mut hits = Vec::with_capacity(4);
    for (i, rp) in row_polys.iter().enumerate() {
        for (j, cp) in col_polys.iter().enumerate() {
            polyline_intersections(rp, cp, &mut hits);
            match hits.first() {
                None => {
                    return Err(Error::Lattice(format!(
                        "row line {i} and column line {j} do not intersect inside the image"
                    )))
                }
                Some(&p) => {
                    if hits.len() > 1 {
                        warnings.push(LatticeWarning {
                            row_line: i,
                            col_line: j,
                            intersections: hits.len(),
                        });
                    }
                    corners.push(p);
                }
            }
        }
    }
    let lattice = GridLattice::from_corners(
        row_lines.len() - 1,
        col_lines.len() - 1,
        corners,
        row_lines.to_vec(),
        col_lines.to_vec(),
    )?;
    Ok((lattice, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_area;

    fn straight(axis: Axis, at: f64, image: ImageSize, stride: u32) -> SeparationLine {
        let start = axis.point(0.0, at);
        let props = make_proposals(start, axis, image, stride).unwrap();
        apply_offsets(&props, &OffsetVector::zeros(axis, props.points.len())).unwrap()
    }

    #[test]
    fn keypoint_count_is_ceiling() {
        assert_eq!(num_keypoints(512, 32).unwrap(), 16);
        assert_eq!(num_keypoints(1, 32).unwrap(), 1);
        assert_eq!(num_keypoints(513, 32).unwrap(), 17);
        assert!(num_keypoints(512, 0).is_err());
    }

    #[test]
    fn detects_run_argmax() {
        let p = StartProbVector::new(
            Axis::Row,
            vec![0.0, 0.1, 0.8, 0.9, 0.7, 0.1, 0.0, 0.0, 0.6, 0.95, 0.2],
        );
        assert_eq!(detect_start_points(&p, 0.5).unwrap(), vec![6.0, 18.0]);
    }

    #[test]
    fn detects_nothing_in_silence() {
        let p = StartProbVector::new(Axis::Row, vec![0.0; 20]);
        assert!(detect_start_points(&p, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_spike() {
        let mut probs = vec![0.0; 12];
        probs[5] = 1.0;
        let p = StartProbVector::new(Axis::Col, probs);
        assert_eq!(detect_start_points(&p, 0.5).unwrap(), vec![10.0]);
    }

    #[test]
    fn ties_take_lowest_index_and_trailing_run_counts() {
        let p = StartProbVector::new(Axis::Row, vec![0.0, 0.9, 0.9, 0.0, 0.7, 0.7]);
        assert_eq!(detect_start_indices(&p, 0.5).unwrap(), vec![1, 4]);
    }

    #[test]
    fn threshold_must_be_open_unit() {
        let p = StartProbVector::new(Axis::Row, vec![0.0]);
        assert!(detect_start_points(&p, 0.0).is_err());
        assert!(detect_start_points(&p, 1.0).is_err());
    }

    #[test]
    fn proposals_for_rows_and_cols() {
        let img = ImageSize::new(96, 64);
        let r = make_proposals(Point::new(0.0, 100.0), Axis::Row, img, 32).unwrap();
        assert_eq!(
            r.points,
            vec![
                Point::new(0.0, 100.0),
                Point::new(32.0, 100.0),
                Point::new(64.0, 100.0)
            ]
        );
        let c = make_proposals(Point::new(40.0, 0.0), Axis::Col, img, 32).unwrap();
        assert_eq!(
            c.points,
            vec![Point::new(40.0, 0.0), Point::new(40.0, 32.0)]
        );
        let one =
            make_proposals(Point::new(0.0, 4.0), Axis::Row, ImageSize::new(32, 32), 32).unwrap();
        assert_eq!(one.points.len(), 1);
    }

    #[test]
    fn offsets_shift_and_clamp() {
        let img = ImageSize::new(96, 200);
        let props = make_proposals(Point::new(0.0, 100.0), Axis::Row, img, 32).unwrap();
        let line = apply_offsets(
            &props,
            &OffsetVector::new(Axis::Row, vec![0.0, -500.0, 6.0]),
        )
        .unwrap();
        assert_eq!(line.keypoints[2], Point::new(64.0, 106.0));
        assert_eq!(line.keypoints[1], Point::new(32.0, 0.0));
        let zero = apply_offsets(&props, &OffsetVector::zeros(Axis::Row, 3)).unwrap();
        assert_eq!(zero.keypoints, props.points);
        assert!(apply_offsets(&props, &OffsetVector::zeros(Axis::Row, 2)).is_err());
    }

    #[test]
    fn validation_reports() {
        let img = ImageSize::new(128, 128);
        let a = straight(Axis::Row, 10.0, img, 32);
        let b = straight(Axis::Row, 30.0, img, 32);
        assert!(validate_lines(&[a.clone(), b.clone()]).is_clean());

        let mut crossing = b.clone();
        crossing.keypoints[2].y = 5.0;
        let r = validate_lines(&[a.clone(), crossing]);
        assert_eq!(
            r.crossings,
            vec![LineCrossing {
                first: 0,
                keypoint: 2
            }]
        );

        let r = validate_lines(&[b, a]);
        assert_eq!(r.order_violations, vec![1]);
    }

    #[test]
    fn single_box_lattice() {
        let img = ImageSize::new(11, 11);
        let rows = [
            straight(Axis::Row, 0.0, img, 32),
            straight(Axis::Row, 10.0, img, 32),
        ];
        let cols = [
            straight(Axis::Col, 0.0, img, 32),
            straight(Axis::Col, 10.0, img, 32),
        ];
        let (lat, warn) = build_lattice(&rows, &cols).unwrap();
        assert!(warn.is_empty());
        assert_eq!((lat.rows, lat.cols), (1, 1));
        let b = lat.box_at(0, 0);
        for (p, q) in b
            .corners
            .iter()
            .zip(crate::geometry::QuadBox::rect(0.0, 0.0, 10.0, 10.0).corners)
        {
            assert!(
                (p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9,
                "{p:?} vs {q:?}"
            );
        }
    }

    #[test]
    fn three_by_three_lines_tile_the_rectangle() {
        let img = ImageSize::new(200, 200);
        let rows: Vec<_> = [10.0, 50.0, 120.0]
            .iter()
            .map(|&y| straight(Axis::Row, y, img, 32))
            .collect();
        let cols: Vec<_> = [20.0, 90.0, 180.0]
            .iter()
            .map(|&x| straight(Axis::Col, x, img, 32))
            .collect();
        let (lat, _) = build_lattice(&rows, &cols).unwrap();
        let total: f64 = lat.boxes.iter().map(polygon_area).sum();
        assert!((total - 110.0 * 160.0).abs() < 1e-6);
    }

    #[test]
    fn lattice_needs_two_lines_each() {
        let img = ImageSize::new(64, 64);
        let rows = [straight(Axis::Row, 10.0, img, 32)];
        let cols = [
            straight(Axis::Col, 10.0, img, 32),
            straight(Axis::Col, 40.0, img, 32),
        ];
        assert!(matches!(
            build_lattice(&rows, &cols),
            Err(Error::Lattice(_))
        ));
    }

    #[test]
    fn crossing_lines_are_rejected_by_lattice() {
        let img = ImageSize::new(128, 128);
        let a = straight(Axis::Row, 10.0, img, 32);
        let mut b = straight(Axis::Row, 30.0, img, 32);
        b.keypoints[1].y = 2.0;
        let cols = [
            straight(Axis::Col, 0.0, img, 32),
            straight(Axis::Col, 100.0, img, 32),
        ];
        assert!(matches!(
            build_lattice(&[a, b], &cols),
            Err(Error::Lattice(_))
        ));
    }

    #[test]
    fn value_at_interpolates_and_extends() {
        let line = SeparationLine {
            axis: Axis::Row,
            start: Point::new(0.0, 10.0),
            keypoints: vec![Point::new(0.0, 10.0), Point::new(32.0, 20.0)],
            extent: 100.0,
        };
        assert_eq!(line.value_at(16.0), 15.0);
        assert_eq!(line.value_at(90.0), 20.0);
        assert_eq!(
            line.polyline().last().copied(),
            Some(Point::new(99.0, 20.0))
        );
    }
}
