//! Axis-aligned boxes, intersection-over-union, the overlap-pattern taxonomy
//! and RoI-relative corner encoding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates, `(x1, y1)` top-left and
/// `(x2, y2)` bottom-right. Always has strictly positive width and height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box of the given size with its top-left corner at `(x, y)`.
    pub fn from_origin(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        BBox::new(x, y, x + width, y + height)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Longer of the two sides.
    pub fn side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Non-strict containment: shared edges count.
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Intersection with `bounds`, or `None` when nothing of positive area remains.
    pub fn clip_to(&self, bounds: &BBox) -> Option<BBox> {
        BBox::new(
            self.x1.max(bounds.x1),
            self.y1.max(bounds.y1),
            self.x2.min(bounds.x2),
            self.y2.min(bounds.y2),
        )
        .ok()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x1: f64,
            y1: f64,
            x2: f64,
            y2: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BBox::new(raw.x1, raw.y1, raw.x2, raw.y2).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union, 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Region-inclusion cue of an overlap pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Inclusion {
    RoiContainsObject = 0,
    RoiInsideObject = 1,
    Overlapping = 2,
}

/// Position of the object center relative to the RoI center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quadrant {
    UpperLeft = 0,
    UpperRight = 1,
    BottomLeft = 2,
    BottomRight = 3,
}

/// One of the 13 overlap patterns: `4 * inclusion + quadrant` for the twelve
/// partial-overlap categories, 12 for the ideal-overlap category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternIndex(u8);

impl PatternIndex {
    pub const COUNT: usize = 13;
    pub const IDEAL: PatternIndex = PatternIndex(12);

    pub fn new(value: usize) -> Option<Self> {
        (value < Self::COUNT).then_some(PatternIndex(value as u8))
    }

    pub fn from_parts(inclusion: Inclusion, quadrant: Quadrant) -> Self {
        PatternIndex(4 * inclusion as u8 + quadrant as u8)
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    pub fn is_ideal(self) -> bool {
        self == Self::IDEAL
    }

    pub fn inclusion(self) -> Option<Inclusion> {
        match self.0 / 4 {
            _ if self.is_ideal() => None,
            0 => Some(Inclusion::RoiContainsObject),
            1 => Some(Inclusion::RoiInsideObject),
            _ => Some(Inclusion::Overlapping),
        }
    }

    pub fn quadrant(self) -> Option<Quadrant> {
        match self.0 % 4 {
            _ if self.is_ideal() => None,
            0 => Some(Quadrant::UpperLeft),
            1 => Some(Quadrant::UpperRight),
            2 => Some(Quadrant::BottomLeft),
            _ => Some(Quadrant::BottomRight),
        }
    }

    pub fn all() -> impl Iterator<Item = PatternIndex> {
        (0..Self::COUNT as u8).map(PatternIndex)
    }
}

/// IoU thresholds bounding the partial-overlap band: below `low` no pattern is
/// assigned, above `high` the ideal category applies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for OverlapThresholds {
    fn default() -> Self {
        OverlapThresholds {
            low: 0.1,
            high: 0.7,
        }
    }
}

pub fn classify_overlap_pattern(
    roi: &BBox,
    gt: &BBox,
    thresholds: OverlapThresholds,
) -> Option<PatternIndex> {
    let overlap = iou(roi, gt);
    if overlap < thresholds.low {
        return None;
    }
    if overlap > thresholds.high {
        return Some(PatternIndex::IDEAL);
    }
    let inclusion = if roi.contains(gt) {
        Inclusion::RoiContainsObject
    } else if gt.contains(roi) {
        Inclusion::RoiInsideObject
    } else {
        Inclusion::Overlapping
    };
    let (gx, gy) = gt.center();
    let (rx, ry) = roi.center();
    // ties resolve to upper / left
    let quadrant = match (gx <= rx, gy <= ry) {
        (true, true) => Quadrant::UpperLeft,
        (false, true) => Quadrant::UpperRight,
        (true, false) => Quadrant::BottomLeft,
        (false, false) => Quadrant::BottomRight,
    };
    Some(PatternIndex::from_parts(inclusion, quadrant))
}

/// Corner offsets of a box in the normalized frame of a RoI.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CornerDeltas {
    pub dx1: f64,
    pub dy1: f64,
    pub dx2: f64,
    pub dy2: f64,
}

impl CornerDeltas {
    pub fn new(dx1: f64, dy1: f64, dx2: f64, dy2: f64) -> Self {
        CornerDeltas { dx1, dy1, dx2, dy2 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx1, self.dy1, self.dx2, self.dy2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        CornerDeltas::new(v[0], v[1], v[2], v[3])
    }
}

pub fn roi_relative_corners(roi: &BBox, target: &BBox) -> CornerDeltas {
    let w = roi.width();
    let h = roi.height();
    CornerDeltas {
        dx1: (target.x1 - roi.x1) / w,
        dy1: (target.y1 - roi.y1) / h,
        dx2: (target.x2 - roi.x2) / w,
        dy2: (target.y2 - roi.y2) / h,
    }
}

/// Inverse of [`roi_relative_corners`]. Callers clip to the image.
pub fn apply_deltas(roi: &BBox, d: &CornerDeltas) -> Result<BBox> {
    let w = roi.width();
    let h = roi.height();
    BBox::new(
        roi.x1 + d.dx1 * w,
        roi.y1 + d.dy1 * h,
        roi.x2 + d.dx2 * w,
        roi.y2 + d.dy2 * h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..200.0f64, 0.0..200.0f64, 0.5..150.0f64, 0.5..150.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    fn arb_int_box() -> impl Strategy<Value = BBox> {
        (0i32..30, 0i32..30, 1i32..20, 1i32..20)
            .prop_map(|(x, y, w, h)| b(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    /// Counts unit pixels covered by the intersection and the union.
    fn raster_iou(a: &BBox, c: &BBox) -> f64 {
        let inside = |r: &BBox, px: i32, py: i32| {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            x > r.x1() && x < r.x2() && y > r.y1() && y < r.y2()
        };
        let (mut inter, mut union) = (0u32, 0u32);
        for py in 0..64 {
            for px in 0..64 {
                let (ia, ic) = (inside(a, px, py), inside(c, px, py));
                inter += (ia && ic) as u32;
                union += (ia || ic) as u32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 5.0, 3.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &b(5.0, 5.0, 15.0, 15.0)) - 25.0 / 175.0).abs() < 1e-12);
        // touching edges share no area
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn pattern_examples() {
        let th = OverlapThresholds::default();
        let roi = b(0.0, 0.0, 100.0, 100.0);
        assert_eq!(classify_overlap_pattern(&roi, &b(10.0, 10.0, 20.0, 20.0), th), None);
        assert_eq!(
            classify_overlap_pattern(&roi, &roi, th),
            Some(PatternIndex::IDEAL)
        );
        assert_eq!(
            classify_overlap_pattern(&roi, &b(60.0, 60.0, 160.0, 160.0), th),
            None
        );
        let p = classify_overlap_pattern(&roi, &b(40.0, 40.0, 140.0, 140.0), th).unwrap();
        assert_eq!(p.value(), 11);
        assert_eq!(p.inclusion(), Some(Inclusion::Overlapping));
        assert_eq!(p.quadrant(), Some(Quadrant::BottomRight));
    }

    #[test]
    fn pattern_inclusion_cases() {
        let th = OverlapThresholds::default();
        let roi = b(0.0, 0.0, 100.0, 100.0);
        // contained object, iou 0.16, center (30, 70): left and below
        let p = classify_overlap_pattern(&roi, &b(10.0, 50.0, 50.0, 90.0), th).unwrap();
        assert_eq!(p.value(), 2);
        // roi inside a big object whose center is up-right of the roi center
        let p = classify_overlap_pattern(&roi, &b(-10.0, -100.0, 150.0, 110.0), th).unwrap();
        assert_eq!(p.inclusion(), Some(Inclusion::RoiInsideObject));
        assert_eq!(p.value(), 4 + 1);
        // shared edge still counts as containment; center tie goes upper-left
        let p = classify_overlap_pattern(&roi, &b(0.0, 25.0, 100.0, 75.0), th).unwrap();
        assert_eq!(p.value(), 0);
    }

    #[test]
    fn iou_exactly_low_is_kept() {
        // intersection 10x100 = 1000, union 10000: iou = 0.1
        let roi = b(0.0, 0.0, 100.0, 100.0);
        let gt = b(0.0, 0.0, 10.0, 100.0);
        assert_eq!(iou(&roi, &gt), 0.1);
        assert!(classify_overlap_pattern(&roi, &gt, OverlapThresholds::default()).is_some());
    }

    #[test]
    fn pattern_index_parts_roundtrip() {
        assert_eq!(PatternIndex::all().count(), 13);
        for p in PatternIndex::all().filter(|p| !p.is_ideal()) {
            let q = PatternIndex::from_parts(p.inclusion().unwrap(), p.quadrant().unwrap());
            assert_eq!(p, q);
        }
        assert!(PatternIndex::new(13).is_none());
        assert_eq!(PatternIndex::IDEAL.inclusion(), None);
    }

    #[test]
    fn corner_examples() {
        let roi = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(roi_relative_corners(&roi, &roi), CornerDeltas::default());
        assert_eq!(
            roi_relative_corners(&roi, &b(5.0, 5.0, 15.0, 15.0)),
            CornerDeltas::new(0.5, 0.5, 0.5, 0.5)
        );
        assert_eq!(
            roi_relative_corners(&b(100.0, 100.0, 300.0, 200.0), &b(150.0, 120.0, 350.0, 220.0)),
            CornerDeltas::new(0.25, 0.2, 0.25, 0.2)
        );
        assert_eq!(apply_deltas(&roi, &CornerDeltas::default()).unwrap(), roi);
        assert_eq!(
            apply_deltas(&roi, &CornerDeltas::new(0.5, 0.5, 0.5, 0.5)).unwrap(),
            b(5.0, 5.0, 15.0, 15.0)
        );
        assert!(apply_deltas(&roi, &CornerDeltas::new(0.6, 0.0, -0.5, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_matches_rasterization(a in arb_int_box(), c in arb_int_box()) {
            prop_assert_eq!(iou(&a, &c), raster_iou(&a, &c));
        }

        #[test]
        fn pattern_partition(roi in arb_box(), gt in arb_box()) {
            let th = OverlapThresholds::default();
            let o = iou(&roi, &gt);
            match classify_overlap_pattern(&roi, &gt, th) {
                None => prop_assert!(o < 0.1),
                Some(p) if p.is_ideal() => prop_assert!(o > 0.7),
                Some(p) => {
                    prop_assert!((0.1..=0.7).contains(&o));
                    prop_assert!(p.value() < 12);
                }
            }
        }

        #[test]
        fn deltas_roundtrip(roi in arb_box(), target in arb_box()) {
            let back = apply_deltas(&roi, &roi_relative_corners(&roi, &target)).unwrap();
            for (u, v) in back.corners().iter().zip(target.corners()) {
                prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }
}
