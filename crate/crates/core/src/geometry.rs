//! Box overlap measures and pairwise geometric edge features.

use crate::types::{BBox, Frame};
use crate::{Error, Result};

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    iw * ih
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: IoU minus the share of the enclosing box not covered
/// by the union. Lies in (-1, 1].
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let cw = a.right().max(b.right()) - a.x.min(b.x);
    let ch = a.bottom().max(b.bottom()) - a.y.min(b.y);
    let enclosing = cw * ch;
    inter / union - (enclosing - union) / enclosing
}

/// Relative displacement and log scale change from box `i` to box `j`,
/// using box centers and normalizing displacement by the mean height.
pub fn relative_geometry(i: &BBox, j: &BBox) -> [f64; 4] {
    let (xi, yi) = i.center();
    let (xj, yj) = j.center();
    let hs = j.h + i.h;
    [
        2.0 * (xj - xi) / hs,
        2.0 * (yj - yi) / hs,
        (j.h / i.h).ln(),
        (j.w / i.w).ln(),
    ]
}

/// Seconds between the last frame of one tracklet and the first of the next.
pub fn time_difference(last_a: Frame, first_b: Frame, fps: f64) -> Result<f64> {
    if first_b <= last_a {
        return Err(Error::TemporalOverlap {
            end: last_a,
            start: first_b,
        });
    }
    if !(fps > 0.0) {
        return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
    }
    Ok(f64::from(first_b - last_a) / fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(3.0, 4.0, 5.0, 6.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        // intersection 1, union 4 + 4 - 1
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 2.0, 2.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn giou_examples() {
        let a = b(1.0, 2.0, 3.0, 4.0);
        assert_eq!(giou(&a, &a), 1.0);
        // enclosing area 3, union 2
        let v = giou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 0.0, 1.0, 1.0));
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
        let outer = b(0.0, 0.0, 10.0, 10.0);
        let inner = b(2.0, 3.0, 4.0, 5.0);
        assert!((giou(&outer, &inner) - iou(&outer, &inner)).abs() < 1e-15);
    }

    #[test]
    fn relative_geometry_examples() {
        let i = BBox::from_center(10.0, 20.0, 2.0, 4.0);
        assert_eq!(relative_geometry(&i, &i), [0.0; 4]);
        let j = BBox::from_center(14.0, 22.0, 2.0, 4.0);
        let g = relative_geometry(&i, &j);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert_eq!(&g[2..], &[0.0, 0.0]);
        let tall = BBox::from_center(10.0, 20.0, 2.0, 4.0 * std::f64::consts::E);
        assert!((relative_geometry(&i, &tall)[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn time_difference_examples() {
        assert_eq!(time_difference(100, 150, 25.0).unwrap(), 2.0);
        assert_eq!(time_difference(10, 11, 1.0).unwrap(), 1.0);
        assert!(time_difference(5, 5, 25.0).is_err());
        assert!(time_difference(6, 5, 25.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| BBox { x, y, w, h })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn overlap_measures_bounded_and_symmetric(a in arb_box(), c in arb_box()) {
            let i = iou(&a, &c);
            let g = giou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!(i >= g - 1e-12);
            prop_assert!((i - iou(&c, &a)).abs() < 1e-12);
            prop_assert!((g - giou(&c, &a)).abs() < 1e-12);
        }

        #[test]
        fn relative_geometry_antisymmetric(a in arb_box(), c in arb_box()) {
            let f = relative_geometry(&a, &c);
            let r = relative_geometry(&c, &a);
            for k in 0..4 {
                prop_assert!((f[k] + r[k]).abs() < 1e-12);
            }
        }
    }
}
