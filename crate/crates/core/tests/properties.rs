use proptest::prelude::*;

use rlvrseg::geometry::{bbox_iou, mask_iou, mask_union, BBox, ImageDims, Mask, RleMask};
use rlvrseg::grpo::{advantages, rest_select, GrpoConfig, RolloutGroup};
use rlvrseg::response::{parse_response, serialize_response, LabelOrder, ParseOptions, Prediction};
use rlvrseg::reward::{score_rollout, GtInstance, RewardConfig};
use rlvrseg::response::FormatRewards;

fn dims() -> impl Strategy<Value = ImageDims> {
    (1u32..24, 1u32..24).prop_map(|(w, h)| ImageDims::new(w, h).unwrap())
}

fn mask_in(d: ImageDims) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), d.pixel_count()).prop_map(move |bits| Mask::from_bools(d, &bits).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    dims().prop_flat_map(|d| (mask_in(d), mask_in(d)))
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0i64..50, 0i64..50, 0i64..30, 0i64..30).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn mask_iou_matches_pixels((a, b) in mask_pair()) {
        let (ba, bb) = (a.to_bools(), b.to_bools());
        let i = ba.iter().zip(&bb).filter(|(x, y)| **x && **y).count() as u64;
        let u = ba.iter().zip(&bb).filter(|(x, y)| **x || **y).count() as u64;
        prop_assert_eq!(a.intersection_union(&b).unwrap(), (i, u));
        let iou = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(iou, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn union_contains_parts((a, b) in mask_pair()) {
        let u = mask_union(&[a.clone(), b.clone()]).unwrap();
        prop_assert_eq!(u.intersection_union(&a).unwrap().0, a.area());
        prop_assert_eq!(u.area(), a.intersection_union(&b).unwrap().1);
    }

    #[test]
    fn rle_round_trip(m in dims().prop_flat_map(mask_in)) {
        let rle = RleMask::encode(&m);
        prop_assert_eq!(rle.counts.iter().sum::<u64>(), m.dims().pixel_count() as u64);
        prop_assert_eq!(rle.decode().unwrap(), m);
    }

    #[test]
    fn bounding_box_is_tight(m in dims().prop_flat_map(mask_in)) {
        match m.bounding_box() {
            None => prop_assert!(m.is_empty()),
            Some(b) => {
                prop_assert_eq!(b.rasterize(m.dims()).intersection_union(&m).unwrap().0, m.area());
                let p = m.interior_point().unwrap();
                prop_assert!(m.get(p.x as u32, p.y as u32));
            }
        }
    }

    #[test]
    fn bbox_iou_laws(a in bbox(), b in bbox()) {
        let v = bbox_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, bbox_iou(&b, &a));
        prop_assert_eq!(bbox_iou(&a, &a), 1.0);
        let d = ImageDims::new(80, 80).unwrap();
        if a.area() > 0 && b.area() > 0 {
            let m = mask_iou(&a.rasterize(d), &b.rasterize(d)).unwrap();
            prop_assert!((m - v).abs() < 1e-12);
        }
    }

    #[test]
    fn advantages_sum_to_zero(rewards in proptest::collection::vec(0.0f64..7.0, 2..40)) {
        let adv = advantages(&RolloutGroup::from_rewards(rewards), &GrpoConfig::default()).unwrap();
        prop_assert!(adv.values.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn rest_is_sorted_and_unique(adv in proptest::collection::vec(-5.0f64..5.0, 2..100), half in 1usize..20) {
        prop_assume!(2 * half <= adv.len());
        let s = rest_select(&adv, 2 * half).unwrap();
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(s.len(), 2 * half);
    }

    #[test]
    fn response_round_trip(boxes in proptest::collection::vec(bbox(), 0..5), label_last in any::<bool>(), label in "[a-z \"\\\\é]{0,12}") {
        let d = ImageDims::new(100, 100).unwrap();
        let order = if label_last { LabelOrder::LabelLast } else { LabelOrder::LabelFirst };
        let preds: Vec<Prediction> = boxes
            .iter()
            .map(|b| Prediction { label: label.clone(), bbox: *b, point: rlvrseg::geometry::Point::new(b.x1(), b.y1()) })
            .collect();
        let text = serialize_response("because", &preds, order);
        let parsed = parse_response(&text, d, &ParseOptions::default());
        prop_assert!(parsed.parse_ok);
        prop_assert_eq!(parsed.predictions, preds);
    }

    #[test]
    fn accuracy_is_order_invariant(
        gt_boxes in proptest::collection::vec((0i64..8, 0i64..8), 1..4),
        shift in proptest::collection::vec((-3i64..3, -3i64..3), 0..5),
    ) {
        let d = ImageDims::new(96, 96).unwrap();
        let gts: Vec<GtInstance> = gt_boxes
            .iter()
            .map(|&(i, j)| GtInstance::from_mask(BBox::new(i * 12, j * 12, i * 12 + 10, j * 12 + 10).unwrap().rasterize(d)).unwrap())
            .collect::<Vec<_>>();
        let mut uniq = gts.clone();
        uniq.dedup_by(|a, b| a.bbox() == b.bbox());
        prop_assume!(uniq.len() == gts.len());
        let preds: Vec<Prediction> = shift
            .iter()
            .enumerate()
            .map(|(k, &(dx, dy))| {
                let g = &gts[k % gts.len()];
                let b = g.bbox();
                Prediction {
                    label: "t".into(),
                    bbox: BBox::new(b.x1() + 3 + dx, b.y1() + 3 + dy, b.x2() + 3 + dx, b.y2() + 3 + dy).unwrap(),
                    point: *g.point(),
                }
            })
            .collect();
        let score = |ps: &[Prediction]| {
            let text = serialize_response("t", ps, LabelOrder::LabelFirst);
            let parsed = parse_response(&text, d, &ParseOptions::default());
            let masks: Vec<Mask> = ps.iter().map(|p| p.bbox.clamp_to(d).rasterize(d)).collect();
            score_rollout(&parsed, FormatRewards::default(), &gts, &masks, &RewardConfig::default()).unwrap().accuracy_total
        };
        let a = score(&preds);
        let mut rev = preds.clone();
        rev.reverse();
        prop_assert!((a - score(&rev)).abs() < 1e-9);
        prop_assert!((0.0..=4.0).contains(&a));
    }
}
