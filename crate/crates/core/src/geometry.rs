//! Pixel-space points, boxes, IoU, nearest-neighbor distances, and the
//! anchor-to-box regression transform.
//!
//! Boxes are continuous (sub-pixel); nothing in here snaps to integer grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Log-space extent offsets are clamped to this range before exponentiation,
/// so an untrained regressor cannot blow a box up past ~55x the anchor size.
pub const DELTA_CLAMP: f64 = 4.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("need at least 2 points to compute nearest-neighbor distances, got {0}")]
    FewerThanTwoPoints(usize),
}

/// A head-center annotation in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An axis-aligned box in center/extent form. `w > 0`, `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        debug_assert!(w > 0.0 && h > 0.0, "degenerate box {w}x{h}");
        Self { cx, cy, w, h }
    }

    /// Square of side `s` centered on `p`.
    pub fn square(p: Point, s: f64) -> Self {
        Self::new(p.x, p.y, s, s)
    }

    /// Corner form (x1, y1, x2, y2).
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Intersect with the image rectangle [0,w]x[0,h]. Returns `None` when the
    /// box lies entirely outside.
    pub fn clip_to(&self, img_w: f64, img_h: f64) -> Option<BBox> {
        let (x1, y1, x2, y2) = self.corners();
        let (x1, y1) = (x1.max(0.0), y1.max(0.0));
        let (x2, y2) = (x2.min(img_w), y2.min(img_h));
        if x2 > x1 && y2 > y1 {
            Some(BBox::from_corners(x1, y1, x2, y2))
        } else {
            None
        }
    }
}

/// Regression offsets between an anchor and a target box: scale-invariant
/// center shifts plus log-space extent ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl RegDeltas {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub const ZERO: RegDeltas = RegDeltas {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };
}

/// Intersection-over-union of two boxes. 0 when disjoint or merely touching.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Apply regression deltas to an anchor:
/// gx = aw*dx + ax, gy = ah*dy + ay, gw = aw*exp(dw), gh = ah*exp(dh).
/// dw/dh are clamped to [-DELTA_CLAMP, DELTA_CLAMP] before exp.
pub fn decode(a: &BBox, d: &RegDeltas) -> BBox {
    let dw = d.dw.clamp(-DELTA_CLAMP, DELTA_CLAMP);
    let dh = d.dh.clamp(-DELTA_CLAMP, DELTA_CLAMP);
    BBox::new(
        a.w * d.dx + a.cx,
        a.h * d.dy + a.cy,
        a.w * dw.exp(),
        a.h * dh.exp(),
    )
}

/// Inverse of [`decode`]: the deltas that map anchor `a` onto target `g`.
pub fn encode(a: &BBox, g: &BBox) -> RegDeltas {
    RegDeltas::new(
        (g.cx - a.cx) / a.w,
        (g.cy - a.cy) / a.h,
        (g.w / a.w).ln(),
        (g.h / a.h).ln(),
    )
}

/// For each point, the Euclidean distance to its nearest other point.
/// Output order matches input order. All-pairs scan; fine at crowd-scene sizes.
pub fn nn_distances(points: &[Point]) -> Result<Vec<f64>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::FewerThanTwoPoints(points.len()));
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = f64::INFINITY;
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    let d = p.dist(q);
                    if d < best {
                        best = d;
                    }
                }
            }
            best
        })
        .collect())
}
