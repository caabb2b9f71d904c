//! Pixel-space rectangles, detection boxes, and geometric relation predicates.

use serde::{Deserialize, Serialize};

use crate::scene::Relation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Size {
    pub width: u32,
    pub height: u32,
}

impl Size {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }
}

/// Axis-aligned rectangle, top-left origin, half-open on the right and bottom.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_in(&self, size: Size) -> bool {
        !self.is_empty() && self.right() <= size.width && self.bottom() <= size.height
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersect(other).map_or(0, |r| r.area());
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Expands each side by `frac` of the box dimension, clamped to the canvas.
    pub fn padded(&self, frac: f64, canvas: Size) -> Rect {
        let px = (self.w as f64 * frac).round() as u32;
        let py = (self.h as f64 * frac).round() as u32;
        self.expanded_xy(px, py, canvas)
    }

    /// Expands each side by `d` pixels, clamped to the canvas.
    pub fn expanded(&self, d: u32, canvas: Size) -> Rect {
        self.expanded_xy(d, d, canvas)
    }

    fn expanded_xy(&self, dx: u32, dy: u32, canvas: Size) -> Rect {
        let x0 = self.x.saturating_sub(dx);
        let y0 = self.y.saturating_sub(dy);
        let x1 = (self.right() + dx).min(canvas.width);
        let y1 = (self.bottom() + dy).min(canvas.height);
        Rect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    /// Chebyshev gap between boxes; zero when they touch or overlap.
    pub fn gap(&self, other: &Rect) -> f64 {
        let dx = (other.x as i64 - self.right() as i64)
            .max(self.x as i64 - other.right() as i64)
            .max(0);
        let dy = (other.y as i64 - self.bottom() as i64)
            .max(self.y as i64 - other.bottom() as i64)
            .max(0);
        dx.max(dy) as f64
    }

    /// `[x0, y0, x1, y1]` in `[0, 1]` canvas coordinates.
    pub fn normalized(&self, canvas: Size) -> [f64; 4] {
        let w = canvas.width as f64;
        let h = canvas.height as f64;
        [
            self.x as f64 / w,
            self.y as f64 / h,
            self.right() as f64 / w,
            self.bottom() as f64 / h,
        ]
    }

    /// Inverse of [`Rect::normalized`], rounding to whole pixels.
    /// Returns `None` for boxes outside the canvas or with no area.
    pub fn from_normalized(b: [f64; 4], canvas: Size) -> Option<Rect> {
        if b.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let w = canvas.width as f64;
        let h = canvas.height as f64;
        let x0 = (b[0] * w).round();
        let y0 = (b[1] * h).round();
        let x1 = (b[2] * w).round();
        let y1 = (b[3] * h).round();
        if x0 < 0.0 || y0 < 0.0 || x1 > w || y1 > h || x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Rect::new(
            x0 as u32,
            y0 as u32,
            (x1 - x0) as u32,
            (y1 - y0) as u32,
        ))
    }

    /// Largest rectangle with `aspect` (w/h) fitting inside `self`, centered.
    pub fn fit_aspect(&self, aspect: f64) -> Rect {
        let (w, h) = if self.w as f64 / self.h as f64 > aspect {
            ((self.h as f64 * aspect).round().max(1.0) as u32, self.h)
        } else {
            (self.w, (self.w as f64 / aspect).round().max(1.0) as u32)
        };
        let w = w.min(self.w);
        let h = h.min(self.h);
        Rect::new(self.x + (self.w - w) / 2, self.y + (self.h - h) / 2, w, h)
    }
}

/// A detector hit in pixel space with a confidence score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub score: f32,
}

impl DetectionBox {
    pub fn new(rect: Rect, score: f32) -> Self {
        Self {
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
            score,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    pub fn is_valid_in(&self, canvas: Size) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.rect().fits_in(canvas)
            && (0.0..=1.0).contains(&self.score)
    }
}

/// Orders detections by score descending, then area descending, then x ascending.
pub fn sort_detections(boxes: &mut [DetectionBox]) {
    boxes.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.rect().area().cmp(&a.rect().area()))
            .then(a.x.cmp(&b.x))
            .then(a.y.cmp(&b.y))
    });
}

/// Thresholds for the geometric relation predicates, as fractions of the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationTolerance {
    /// Minimum center offset for directional relations.
    pub offset: f64,
    /// Maximum box gap for contact relations.
    pub gap: f64,
}

impl Default for RelationTolerance {
    fn default() -> Self {
        Self {
            offset: 0.05,
            gap: 0.05,
        }
    }
}

/// Whether `rel` holds between boxes `a` (subject) and `b` (object).
/// `None` for relations outside the geometric vocabulary.
pub fn relation_holds(
    rel: &Relation,
    a: &Rect,
    b: &Rect,
    canvas: Size,
    tol: RelationTolerance,
) -> Option<bool> {
    let dx = tol.offset * canvas.width as f64;
    let dy = tol.offset * canvas.height as f64;
    let gap_limit = tol.gap * canvas.width as f64;
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let h_overlap = a.x < b.right() && b.x < a.right();
    Some(match rel {
        Relation::LeftOf => ax + dx < bx,
        Relation::RightOf => ax > bx + dx,
        Relation::Above => ay + dy < by,
        Relation::Below => ay > by + dy,
        Relation::NextTo => a.gap(b) <= gap_limit,
        Relation::On => {
            h_overlap && ay < by && (b.y as f64 - a.bottom() as f64).abs() <= gap_limit
        }
        Relation::Under => {
            h_overlap && ay > by && (a.y as f64 - b.bottom() as f64).abs() <= gap_limit
        }
        Relation::Other(_) => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(10, 0, 10, 10)), 0.0);
        let b = Rect::new(5, 0, 10, 10);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn padding_clamps() {
        let canvas = Size::new(100, 100);
        let r = Rect::new(0, 90, 20, 10).padded(0.1, canvas);
        assert_eq!(r, Rect::new(0, 89, 22, 11));
    }

    #[test]
    fn detection_order() {
        let mut v = vec![
            DetectionBox::new(Rect::new(5, 0, 2, 2), 0.9),
            DetectionBox::new(Rect::new(1, 0, 3, 3), 0.9),
            DetectionBox::new(Rect::new(0, 0, 2, 2), 0.9),
            DetectionBox::new(Rect::new(0, 0, 1, 1), 1.0),
        ];
        sort_detections(&mut v);
        let xs: Vec<_> = v.iter().map(|b| (b.x, b.w)).collect();
        assert_eq!(xs, vec![(0, 1), (1, 3), (0, 2), (5, 2)]);
    }

    #[test]
    fn normalized_round_trip() {
        let canvas = Size::new(160, 120);
        let r = Rect::new(13, 7, 40, 21);
        assert_eq!(Rect::from_normalized(r.normalized(canvas), canvas), Some(r));
        assert_eq!(Rect::from_normalized([0.5, 0.5, 1.2, 0.9], canvas), None);
    }

    #[test]
    fn fit_aspect_centered() {
        let r = Rect::new(0, 0, 40, 20).fit_aspect(1.0);
        assert_eq!(r, Rect::new(10, 0, 20, 20));
        let r = Rect::new(0, 0, 20, 40).fit_aspect(2.0);
        assert_eq!(r, Rect::new(0, 15, 20, 10));
    }
}
