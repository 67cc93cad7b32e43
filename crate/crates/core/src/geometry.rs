//! Axis-aligned boxes, intersection-over-union and greedy NMS.
//!
//! Boxes are closed real rectangles; there is no `+1` pixel convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Config(format!(
                "invalid box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union, in `[0, 1]`; zero for disjoint or touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending score (ties: lower index first); a box is
/// dropped when its IoU with any already kept box is `>= threshold`. The
/// returned indices are in visiting order.
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "nms: {} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) < threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = b(0.1, 0.2, 0.4, 0.9);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(0.5, 0.5, 0.6, 0.6)), 0.0);
        // touching edges
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_overlapping_squares() {
        // intersection 1, union 4 + 4 - 1 = 7
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BBox::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<BBox>("[1.0, 0.0, 0.0, 1.0]").is_err());
    }

    #[test]
    fn nms_examples() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(nms(&[a], &[0.3], 0.4).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.8, 0.9], 0.4).unwrap(), vec![1]);

        let disjoint: Vec<BBox> = (0..5).map(|i| b(i as f64, 0.0, i as f64 + 0.5, 1.0)).collect();
        let scores = [0.1, 0.5, 0.3, 0.9, 0.2];
        assert_eq!(nms(&disjoint, &scores, 0.4).unwrap(), vec![3, 1, 2, 4, 0]);
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(nms(&[a, a, a], &[0.5, 0.5, 0.5], 0.4).unwrap(), vec![0]);
    }

    #[test]
    fn nms_length_mismatch() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(nms(&[a], &[], 0.5), Err(Error::Dimension(_))));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..0.5f64, 0.01..0.5f64).prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), c in arb_box()) {
            let u = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert_eq!(u, iou(&c, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_kept_pairs_below_threshold(
            boxes in proptest::collection::vec(arb_box(), 1..30),
            seed in any::<u64>(),
            threshold in 0.1..0.9f64,
        ) {
            let scores: Vec<f64> = (0..boxes.len())
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 11) as f64) / (1u64 << 53) as f64)
                .collect();
            let kept = nms(&boxes, &scores, threshold).unwrap();
            for (x, &i) in kept.iter().enumerate() {
                for &j in &kept[x + 1..] {
                    prop_assert!(iou(&boxes[i], &boxes[j]) < threshold);
                }
            }
            // strictly monotone transform of scores leaves the result unchanged
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(kept, nms(&boxes, &warped, threshold).unwrap());
        }
    }
}
