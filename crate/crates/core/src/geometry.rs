//! Geometric and tabular domain types shared by the lattice builder, the
//! merge codec and the metrics.
//!
//! All coordinates are image pixels in double precision, with the origin at
//! the top-left corner of the table image and `y` growing downwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kor::SeparationLine;

/// Absolute tolerance used for area and IoU comparisons.
pub const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Image extent in pixels, serialized as `[W, H]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        ImageSize { width, height }
    }

    /// Length of a half-resolution start-probability vector along `height`.
    pub fn half_height(&self) -> usize {
        (self.height as usize).div_ceil(2)
    }

    pub fn half_width(&self) -> usize {
        (self.width as usize).div_ceil(2)
    }
}

impl From<[u32; 2]> for ImageSize {
    fn from([width, height]: [u32; 2]) -> Self {
        ImageSize { width, height }
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.width, s.height]
    }
}

/// A quadrilateral with corners in the fixed order top-left, top-right,
/// bottom-right, bottom-left. Serialized as eight numbers in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 8]", into = "[f64; 8]")]
pub struct QuadBox {
    pub corners: [Point; 4],
}

impl From<[f64; 8]> for QuadBox {
    fn from(v: [f64; 8]) -> Self {
        QuadBox {
            corners: [
                Point::new(v[0], v[1]),
                Point::new(v[2], v[3]),
                Point::new(v[4], v[5]),
                Point::new(v[6], v[7]),
            ],
        }
    }
}

impl From<QuadBox> for [f64; 8] {
    fn from(q: QuadBox) -> Self {
        let [a, b, c, d] = q.corners;
        [a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y]
    }
}

impl QuadBox {
    pub const fn new(tl: Point, tr: Point, br: Point, bl: Point) -> Self {
        QuadBox {
            corners: [tl, tr, br, bl],
        }
    }

    /// Axis-aligned rectangle from `(x0, y0)` to `(x1, y1)`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        QuadBox::new(
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        )
    }

    pub fn top_left(&self) -> Point {
        self.corners[0]
    }

    pub fn bottom_right(&self) -> Point {
        self.corners[2]
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &self.corners {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        let mut q = *self;
        for p in &mut q.corners {
            p.x += dx;
            p.y += dy;
        }
        q
    }

    pub fn is_finite(&self) -> bool {
        self.corners.iter().all(Point::is_finite)
    }

    pub fn is_degenerate(&self) -> bool {
        polygon_area(self) <= AREA_EPS
    }

    /// True when every turn along the boundary has the same orientation
    /// (collinear turns allowed).
    pub fn is_convex(&self) -> bool {
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let c = self.corners[(i + 2) % 4];
            let z = cross(b.sub(a), c.sub(b));
            if z.abs() <= AREA_EPS {
                continue;
            }
            if sign == 0.0 {
                sign = z.signum();
            } else if z.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Signed shoelace area of a closed polygon.
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Absolute area of a quad. Degenerate quads yield 0.
pub fn polygon_area(q: &QuadBox) -> f64 {
    signed_area(&q.corners).abs()
}

/// Clips `subject` against the convex polygon `clip` (Sutherland–Hodgman).
///
/// `clip` may have either orientation. The result is empty when the
/// polygons do not overlap.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let orient = signed_area(clip).signum();
    if orient == 0.0 {
        return Vec::new();
    }
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b.sub(a);
        let side = |p: Point| orient * cross(edge, p.sub(a));
        let input = std::mem::take(&mut output);
        let m = input.len();
        for k in 0..m {
            let cur = input[k];
            let prev = input[(k + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(segment_cut(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(segment_cut(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn segment_cut(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// IoU together with a flag telling whether the convex path was bypassed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouResult {
    pub iou: f64,
    /// Set when a non-convex input forced the bounding-box fallback.
    pub bbox_fallback: bool,
}

fn bbox_iou(a: &QuadBox, b: &QuadBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= AREA_EPS {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn quad_iou_detailed(a: &QuadBox, b: &QuadBox) -> IouResult {
    if !a.is_convex() || !b.is_convex() {
        return IouResult {
            iou: bbox_iou(a, b),
            bbox_fallback: true,
        };
    }
    let area_a = polygon_area(a);
    let area_b = polygon_area(b);
    if area_a <= AREA_EPS && area_b <= AREA_EPS {
        return IouResult {
            iou: 0.0,
            bbox_fallback: false,
        };
    }
    // Cheap reject before clipping.
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    if ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0 {
        return IouResult {
            iou: 0.0,
            bbox_fallback: false,
        };
    }
    let inter = if area_a <= AREA_EPS || area_b <= AREA_EPS {
        0.0
    } else {
        signed_area(&clip_convex(&a.corners, &b.corners)).abs()
    };
    let union = area_a + area_b - inter;
    let iou = if union <= AREA_EPS {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    };
    IouResult {
        iou,
        bbox_fallback: false,
    }
}

/// Intersection over union of two quads via convex clipping.
pub fn quad_iou(a: &QuadBox, b: &QuadBox) -> f64 {
    quad_iou_detailed(a, b).iou
}

/// A rectangular block of lattice grids forming one table cell. Indices are
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpan {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<QuadBox>,
}

impl CellSpan {
    pub const fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Self {
        CellSpan {
            row_start,
            row_end,
            col_start,
            col_end,
            polygon: None,
        }
    }

    pub const fn single(row: usize, col: usize) -> Self {
        CellSpan::new(row, row, col, col)
    }

    pub fn row_span(&self) -> usize {
        self.row_end - self.row_start + 1
    }

    pub fn col_span(&self) -> usize {
        self.col_end - self.col_start + 1
    }

    pub fn size(&self) -> usize {
        self.row_span() * self.col_span()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..=self.row_end).contains(&row)
            && (self.col_start..=self.col_end).contains(&col)
    }

    /// Span equality ignoring the polygon.
    pub fn same_span(&self, other: &CellSpan) -> bool {
        self.row_start == other.row_start
            && self.row_end == other.row_end
            && self.col_start == other.col_start
            && self.col_end == other.col_end
    }

    fn key(&self) -> (usize, usize) {
        (self.row_start, self.col_start)
    }
}

/// A partition of an `rows x cols` grid index space into rectangular cells.
///
/// Cells are kept sorted by their top-left grid in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStructure {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<CellSpan>,
}

impl TableStructure {
    /// Builds and canonicalizes a structure, checking the partition invariant.
    pub fn new(rows: usize, cols: usize, cells: Vec<CellSpan>) -> Result<Self> {
        let ts = Self::new_unchecked(rows, cols, cells);
        ts.validate()?;
        Ok(ts)
    }

    /// Canonicalizes cell order without validating.
    pub fn new_unchecked(rows: usize, cols: usize, mut cells: Vec<CellSpan>) -> Self {
        cells.sort_by_key(CellSpan::key);
        TableStructure { rows, cols, cells }
    }

    /// Every grid in its own cell.
    pub fn singletons(rows: usize, cols: usize) -> Self {
        let cells = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| CellSpan::single(r, c)))
            .collect();
        TableStructure { rows, cols, cells }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Checks that cells lie in range and cover every grid exactly once.
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid(format!(
                "table dimensions must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        let mut owner = vec![usize::MAX; self.rows * self.cols];
        for (k, c) in self.cells.iter().enumerate() {
            if c.row_start > c.row_end
                || c.col_start > c.col_end
                || c.row_end >= self.rows
                || c.col_end >= self.cols
            {
                return Err(Error::invalid(format!(
                    "cell {k} spans rows {}..={} cols {}..={} outside a {}x{} lattice",
                    c.row_start, c.row_end, c.col_start, c.col_end, self.rows, self.cols
                )));
            }
            for r in c.row_start..=c.row_end {
                for col in c.col_start..=c.col_end {
                    let slot = &mut owner[r * self.cols + col];
                    if *slot != usize::MAX {
                        return Err(Error::invalid(format!(
                            "grid ({r},{col}) covered by cells {} and {k}",
                            *slot
                        )));
                    }
                    *slot = k;
                }
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::invalid(format!(
                "grid ({},{}) not covered by any cell",
                i / self.cols,
                i % self.cols
            )));
        }
        Ok(())
    }

    /// `owner[r * cols + c]` is the index of the cell covering grid `(r, c)`.
    pub fn owner_map(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.rows * self.cols];
        for (k, c) in self.cells.iter().enumerate() {
            for r in c.row_start..=c.row_end {
                for col in c.col_start..=c.col_end {
                    owner[r * self.cols + col] = k;
                }
            }
        }
        owner
    }

    /// Structural equality on spans only.
    pub fn same_spans(&self, other: &TableStructure) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.cells.len() == other.cells.len()
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.same_span(b))
    }
}

/// The `M x N` grid of quadrilaterals obtained by intersecting `M + 1` row
/// separation lines with `N + 1` column separation lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLattice {
    pub rows: usize,
    pub cols: usize,
    /// Line intersections, `(rows + 1) x (cols + 1)` in row-major order.
    pub corners: Vec<Point>,
    /// Grid quads, `rows x cols` in row-major order.
    pub boxes: Vec<QuadBox>,
    pub row_lines: Vec<SeparationLine>,
    pub col_lines: Vec<SeparationLine>,
}

impl GridLattice {
    /// Assembles a lattice from its intersection points.
    pub fn from_corners(
        rows: usize,
        cols: usize,
        corners: Vec<Point>,
        row_lines: Vec<SeparationLine>,
        col_lines: Vec<SeparationLine>,
    ) -> Result<Self> {
        if corners.len() != (rows + 1) * (cols + 1) {
            return Err(Error::shape(format!(
                "expected {} lattice corners, got {}",
                (rows + 1) * (cols + 1),
                corners.len()
            )));
        }
        let stride = cols + 1;
        let at = |i: usize, j: usize| corners[i * stride + j];
        let boxes = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| QuadBox::new(at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j)))
            .collect();
        Ok(GridLattice {
            rows,
            cols,
            corners,
            boxes,
            row_lines,
            col_lines,
        })
    }

    pub fn corner(&self, i: usize, j: usize) -> Point {
        self.corners[i * (self.cols + 1) + j]
    }

    pub fn box_at(&self, i: usize, j: usize) -> &QuadBox {
        &self.boxes[i * self.cols + j]
    }

    /// The polygon traced by the lattice's outer boundary corners, clockwise
    /// in image coordinates starting at the top-left corner.
    pub fn outer_ring(&self) -> Vec<Point> {
        let (m, n) = (self.rows, self.cols);
        let mut ring = Vec::with_capacity(2 * (m + n));
        ring.extend((0..n).map(|j| self.corner(0, j)));
        ring.extend((0..m).map(|i| self.corner(i, n)));
        ring.extend((1..=n).rev().map(|j| self.corner(m, j)));
        ring.extend((1..=m).rev().map(|i| self.corner(i, 0)));
        ring
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> QuadBox {
        QuadBox::rect(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn area_of_unit_square() {
        assert_eq!(polygon_area(&unit()), 1.0);
    }

    #[test]
    fn area_of_collinear_corners_is_zero() {
        let q = QuadBox::new(
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(3.0, 3.0),
        );
        assert_eq!(polygon_area(&q), 0.0);
        assert!(q.is_degenerate());
    }

    #[test]
    fn area_scales_quadratically() {
        assert!((polygon_area(&QuadBox::rect(0.0, 0.0, 3.0, 3.0)) - 9.0).abs() < AREA_EPS);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        assert_eq!(quad_iou(&unit(), &unit()), 1.0);
        assert_eq!(quad_iou(&unit(), &unit().translate(5.0, 0.0)), 0.0);
    }

    #[test]
    fn iou_half_shift_is_one_third() {
        let iou = quad_iou(&unit(), &unit().translate(0.5, 0.0));
        assert!((iou - 1.0 / 3.0).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn iou_both_degenerate_is_zero() {
        let d = QuadBox::rect(0.0, 0.0, 0.0, 1.0);
        assert_eq!(quad_iou(&d, &d), 0.0);
    }

    #[test]
    fn iou_independent_of_orientation() {
        let ccw = unit();
        let [a, b, c, d] = ccw.corners;
        let cw = QuadBox::new(a, d, c, b);
        let shifted = unit().translate(0.25, 0.25);
        assert!((quad_iou(&cw, &shifted) - quad_iou(&ccw, &shifted)).abs() < 1e-12);
    }

    #[test]
    fn non_convex_falls_back_to_bbox() {
        // Dart: the third corner is pushed inside.
        let dart = QuadBox::new(
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.5),
            Point::new(0.0, 2.0),
        );
        let r = quad_iou_detailed(&dart, &QuadBox::rect(0.0, 0.0, 2.0, 2.0));
        assert!(r.bbox_fallback);
        assert!((r.iou - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_validation() {
        let ok = TableStructure::new(
            2,
            2,
            vec![CellSpan::new(0, 1, 0, 0), CellSpan::new(0, 1, 1, 1)],
        );
        assert!(ok.is_ok());
        let overlap = TableStructure::new(
            1,
            2,
            vec![CellSpan::new(0, 0, 0, 1), CellSpan::single(0, 1)],
        );
        assert!(overlap.is_err());
        let hole = TableStructure::new(1, 2, vec![CellSpan::single(0, 0)]);
        assert!(hole.is_err());
        let out = TableStructure::new(1, 1, vec![CellSpan::new(0, 0, 0, 1)]);
        assert!(out.is_err());
    }

    #[test]
    fn quad_serializes_as_eight_numbers() {
        let s = serde_json::to_string(&QuadBox::rect(0.0, 1.0, 2.0, 3.0)).unwrap();
        assert_eq!(s, "[0.0,1.0,2.0,1.0,2.0,3.0,0.0,3.0]");
    }
}
