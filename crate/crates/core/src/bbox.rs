//! Axis-aligned boxes in continuous pixel coordinates (pixel `k` spans `[k, k+1)`).

use serde::{Deserialize, Serialize};

/// Corner-encoded box, `x0 ≤ x1`, `y0 ≤ y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Distances from an anchor point to the left, top, right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegVector {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl RegVector {
    pub fn to_array(self) -> [f64; 4] {
        [self.l, self.t, self.r, self.b]
    }

    pub fn from_array([l, t, r, b]: [f64; 4]) -> Self {
        Self { l, t, r, b }
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            x1: cx + w / 2.0,
            y1: cy + h / 2.0,
        }
    }

    /// OTB annotation `x,y,w,h` with a 1-based top-left corner.
    pub fn from_xywh_one_based(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x - 1.0, y - 1.0, x - 1.0 + w, y - 1.0 + h)
    }

    pub fn to_xywh_one_based(&self) -> [f64; 4] {
        [self.x0 + 1.0, self.y0 + 1.0, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Distances from `(x, y)` to the four edges.
    pub fn distances_from(&self, x: f64, y: f64) -> RegVector {
        RegVector {
            l: x - self.x0,
            t: y - self.y0,
            r: self.x1 - x,
            b: self.y1 - y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings_round_trip() {
        let b = BBox::new(10.0, 20.0, 50.0, 80.0);
        let (cx, cy) = b.center();
        assert_eq!(BBox::from_center_size(cx, cy, b.width(), b.height()), b);
        let [x, y, w, h] = b.to_xywh_one_based();
        assert_eq!(BBox::from_xywh_one_based(x, y, w, h), b);
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(0.0, 0.0, 10.0, 5.0)), 0.5);
        assert_eq!(a.iou(&BBox::new(20.0, 0.0, 30.0, 10.0)), 0.0);
        let b = BBox::new(5.0, 5.0, 15.0, 15.0);
        assert_eq!(a.iou(&b), b.iou(&a));
    }
}
