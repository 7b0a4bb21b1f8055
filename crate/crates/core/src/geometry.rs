//! Integer pixel rectangles and intersection-over-union.
//!
//! Boxes are top-left + width/height with half-open pixel semantics: a box
//! with `u = 3, w = 2` covers columns 3 and 4. Areas are therefore exact
//! integers and IoU is a ratio of two integers, divided once at the end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned rectangle that may extend past the image on any side.
///
/// Anchors and raw detector output live here; [`BoundingBox`] is the
/// validated in-image form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidBox(format!("empty rectangle {w}x{h}")));
        }
        Ok(Rect { x, y, w, h })
    }

    #[inline]
    pub fn right(&self) -> i64 {
        self.x + i64::from(self.w)
    }

    #[inline]
    pub fn bottom(&self) -> i64 {
        self.y + i64::from(self.h)
    }

    #[inline]
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0 || h <= 0 {
            0
        } else {
            (w as u64) * (h as u64)
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// True when some part of the rectangle lies outside `[0,width)x[0,height)`.
    pub fn crosses_boundary(&self, width: u32, height: u32) -> bool {
        self.x < 0
            || self.y < 0
            || self.right() > i64::from(width)
            || self.bottom() > i64::from(height)
    }

    /// Clip to `[0,width)x[0,height)`; `None` if nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(i64::from(width));
        let y1 = self.bottom().min(i64::from(height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BoundingBox {
            u: x0 as u32,
            v: y0 as u32,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        let union = u128::from(self.area()) + u128::from(other.area()) - u128::from(inter);
        inter as f64 / union as f64
    }
}

/// An object position `{u, v, w, h}` inside an image, in integer pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    pub u: u32,
    pub v: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Deserialize)]
struct RawBox {
    u: u32,
    v: u32,
    w: u32,
    h: u32,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoundingBox::new(raw.u, raw.v, raw.w, raw.h)
    }
}

impl BoundingBox {
    pub fn new(u: u32, v: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidBox(format!(
                "({u},{v},{w},{h}): width and height must be positive"
            )));
        }
        Ok(BoundingBox { u, v, w, h })
    }

    #[inline]
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    #[inline]
    pub fn rect(&self) -> Rect {
        Rect {
            x: i64::from(self.u),
            y: i64::from(self.v),
            w: self.w,
            h: self.h,
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        self.rect().intersection_area(&other.rect())
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        u64::from(self.u) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.v) + u64::from(self.h) <= u64::from(height)
    }
}

impl From<BoundingBox> for Rect {
    fn from(b: BoundingBox) -> Rect {
        b.rect()
    }
}

/// Intersection-over-union of two boxes, exact up to the final division.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.rect().iou(&b.rect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(u: u32, v: u32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(u, v, w, h).unwrap()
    }

    /// Pixel-grid enumeration oracle.
    fn iou_by_pixels(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let inside = |r: &BoundingBox, x: u32, y: u32| {
            x >= r.u && x < r.u + r.w && y >= r.v && y < r.v + r.h
        };
        let x_max = (a.u + a.w).max(b.u + b.w);
        let y_max = (a.v + a.h).max(b.v + b.h);
        let (mut inter, mut union) = (0u64, 0u64);
        for y in 0..y_max {
            for x in 0..x_max {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn identical_boxes() {
        assert_eq!(iou(&bb(0, 0, 10, 10), &bb(0, 0, 10, 10)), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(iou(&bb(0, 0, 10, 10), &bb(100, 100, 5, 5)), 0.0);
        // touching edges share no pixel
        assert_eq!(iou(&bb(0, 0, 10, 10), &bb(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn half_shifted_boxes() {
        let (a, b) = (bb(0, 0, 10, 10), bb(5, 0, 10, 10));
        let oracle = iou_by_pixels(&a, &b);
        assert_eq!(oracle, 50.0 / 150.0);
        assert_eq!(iou(&a, &b), oracle);
    }

    #[test]
    fn zero_sized_box_rejected() {
        assert!(BoundingBox::new(0, 0, 0, 5).is_err());
        assert!(serde_json::from_str::<BoundingBox>(r#"{"u":0,"v":0,"w":3,"h":0}"#).is_err());
    }

    #[test]
    fn clamp_partially_outside() {
        let r = Rect::new(-5, 2, 10, 10).unwrap();
        assert_eq!(r.clamp_to(8, 8), Some(bb(0, 2, 5, 6)));
        assert!(Rect::new(20, 20, 5, 5).unwrap().clamp_to(8, 8).is_none());
        assert!(r.crosses_boundary(8, 8));
        assert!(!bb(0, 0, 8, 8).rect().crosses_boundary(8, 8));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..40, 0u32..40, 1u32..25, 1u32..25).prop_map(|(u, v, w, h)| bb(u, v, w, h))
    }

    proptest! {
        #[test]
        fn matches_pixel_oracle(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou(&a, &b), iou_by_pixels(&a, &b));
        }

        #[test]
        fn symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn translation_invariant(a in arb_box(), b in arb_box(), dx in 0u32..50, dy in 0u32..50) {
            let shift = |r: &BoundingBox| bb(r.u + dx, r.v + dy, r.w, r.h);
            prop_assert_eq!(iou(&a, &b), iou(&shift(&a), &shift(&b)));
        }
    }
}
