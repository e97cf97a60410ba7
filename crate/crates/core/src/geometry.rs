//! Axis-aligned boxes and points in continuous pixel coordinates.
//!
//! The origin is the top-left corner of the image, `x` grows to the right and
//! `y` grows downwards. Boxes are stored as top-left corner plus extent;
//! corner-pair formats are converted at the edges of the system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box extent must be positive, got {w}x{h}")]
    Degenerate { w: f64, h: f64 },
    #[error("box coordinates must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point at parameter `t` on the segment `self -> other`.
    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }
}

/// Axis-aligned bounding box: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner pairs `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1.min(x2), y1.min(y2), (x2 - x1).abs(), (y2 - y1).abs())
    }

    /// Box of the given extent whose center is `center`.
    pub fn centered(center: Point, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(center.x - w / 2.0, center.y - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w > 0.0 && self.h > 0.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    /// Grows the box by `dx` on the left and right and `dy` on top and bottom.
    pub fn expand(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x - dx,
            y: self.y - dy,
            w: self.w + 2.0 * dx,
            h: self.h + 2.0 * dy,
        }
    }

    /// Overlap rectangle of two boxes. Boxes that only share an edge or a
    /// corner have no interior in common and yield `None`.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let left = self.x.max(other.x);
        let top = self.y.max(other.y);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        if right > left && bottom > top {
            Some(BBox { x: left, y: top, w: right - left, h: bottom - top })
        } else {
            None
        }
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersect(other).is_some()
    }

    /// Whether `other` lies entirely inside `self` (edges may coincide).
    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Strict interior membership.
    pub fn contains_point_strict(&self, p: Point) -> bool {
        p.x > self.x && p.x < self.right() && p.y > self.y && p.y < self.bottom()
    }

    /// Lexicographic key used for deterministic ordering.
    pub(crate) fn order_key(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    /// Counts unit pixels covered by both boxes on an integer grid.
    fn raster_overlap(a: &BBox, c: &BBox, grid: i32) -> usize {
        let inside = |bx: &BBox, px: i32, py: i32| {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            cx > bx.x && cx < bx.right() && cy > bx.y && cy < bx.bottom()
        };
        let mut n = 0;
        for py in 0..grid {
            for px in 0..grid {
                if inside(a, px, py) && inside(c, px, py) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn intersect_examples() {
        assert_eq!(b(0., 0., 2., 2.).intersect(&b(0., 0., 2., 2.)), Some(b(0., 0., 2., 2.)));
        assert_eq!(b(0., 0., 1., 1.).intersect(&b(5., 5., 1., 1.)), None);
        let got = b(0., 0., 2., 2.).intersect(&b(1., 1., 2., 2.)).unwrap();
        assert_eq!(got, b(1., 1., 1., 1.));
        assert_eq!(raster_overlap(&b(0., 0., 2., 2.), &b(1., 1., 2., 2.), 8), 1);
    }

    #[test]
    fn overlaps_examples() {
        assert!(!b(0., 0., 1., 1.).overlaps(&b(1., 0., 1., 1.)));
        assert!(b(0., 0., 10., 10.).overlaps(&b(2., 2., 3., 3.)));
        assert!(b(0., 0., 2., 2.).overlaps(&b(1., 1., 2., 2.)));
    }

    #[test]
    fn center_examples() {
        assert_eq!(b(0., 0., 2., 2.).center(), Point::new(1., 1.));
        assert_eq!(b(10., 20., 4., 6.).center(), Point::new(12., 23.));
        let moved = b(10., 20., 4., 6.).translate(3.5, -2.0);
        assert_eq!(moved.center(), Point::new(15.5, 21.));
    }

    #[test]
    fn corner_conversion() {
        assert_eq!(BBox::from_corners(4., 6., 1., 2.).unwrap(), b(1., 2., 3., 4.));
    }

    /// Exhaustive check on a small grid; the 64x64 variant with all positions
    /// runs in the property test below on random samples.
    #[test]
    fn intersection_area_matches_rasterization_exhaustively() {
        let grid = 12;
        let mut boxes = Vec::new();
        for x in 0..grid {
            for y in 0..grid {
                for w in 1..=4 {
                    for h in 1..=4 {
                        if x + w <= grid && y + h <= grid {
                            boxes.push(b(x as f64, y as f64, w as f64, h as f64));
                        }
                    }
                }
            }
        }
        for a in boxes.iter().step_by(7) {
            for c in &boxes {
                let area = a.intersect(c).map_or(0.0, |r| r.area());
                assert_eq!(area as usize, raster_overlap(a, c, grid), "{a:?} {c:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn intersect_is_symmetric(ax in 0.0..50.0f64, ay in 0.0..50.0f64, aw in 0.1..30.0f64, ah in 0.1..30.0f64,
                                  bx in 0.0..50.0f64, by in 0.0..50.0f64, bw in 0.1..30.0f64, bh in 0.1..30.0f64) {
            let a = b(ax, ay, aw, ah);
            let c = b(bx, by, bw, bh);
            prop_assert_eq!(a.intersect(&c), c.intersect(&a));
            prop_assert_eq!(a.overlaps(&c), a.intersect(&c).is_some());
        }

        #[test]
        fn intersection_matches_raster_on_64_grid(ax in 0i32..64, ay in 0i32..64, aw in 1i32..64, ah in 1i32..64,
                                                  bx in 0i32..64, by in 0i32..64, bw in 1i32..64, bh in 1i32..64) {
            let a = b(ax as f64, ay as f64, aw.min(64 - ax) as f64, ah.min(64 - ay) as f64);
            let c = b(bx as f64, by as f64, bw.min(64 - bx) as f64, bh.min(64 - by) as f64);
            let area = a.intersect(&c).map_or(0.0, |r| r.area());
            prop_assert_eq!(area as usize, raster_overlap(&a, &c, 64));
        }

        #[test]
        fn center_is_translation_equivariant(x in -100.0..100.0f64, y in -100.0..100.0f64, w in 0.5..50.0f64,
                                             h in 0.5..50.0f64, dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let a = b(x, y, w, h);
            let c0 = a.center();
            let c1 = a.translate(dx, dy).center();
            prop_assert!((c1.x - (c0.x + dx)).abs() < 1e-9);
            prop_assert!((c1.y - (c0.y + dy)).abs() < 1e-9);
        }
    }
}
