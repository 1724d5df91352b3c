//! Reward a rollout against multi-object ground truth with Hungarian matching.

use rlvrseg::geometry::{BBox, ImageDims, Point};
use rlvrseg::response::{serialize_response, LabelOrder, ParseOptions, Prediction};
use rlvrseg::reward::{mask_tier_reward, score_response, GtInstance, RewardConfig};

fn main() -> rlvrseg::Result<()> {
    let dims = ImageDims::new(128, 96)?;
    let cfg = RewardConfig::default();
    let gts = vec![
        GtInstance::from_mask(BBox::new(10, 10, 40, 40)?.rasterize(dims))?,
        GtInstance::from_mask(BBox::new(70, 20, 110, 60)?.rasterize(dims))?,
    ];

    for iou in [0.3, 0.31, 0.55, 0.75, 0.85, 0.95] {
        println!("tier reward at iou {iou:.2}: {:.1}", mask_tier_reward(iou, &cfg));
    }

    // listed in the opposite order to the ground truth; matching takes care of it
    let preds = vec![
        Prediction {
            label: "mug".into(),
            bbox: BBox::new(72, 21, 110, 61)?,
            point: Point::new(90, 40),
        },
        Prediction {
            label: "plate".into(),
            bbox: BBox::new(10, 10, 40, 40)?,
            point: Point::new(25, 25),
        },
    ];
    let text = serialize_response("two objects on the table", &preds, LabelOrder::LabelFirst);
    let masks: Vec<_> = preds.iter().map(|p| p.bbox.rasterize(dims)).collect();
    let (_, b) = score_response(&text, dims, &gts, &masks, &ParseOptions::default(), &cfg)?;
    println!("assignment {:?}", b.assignment);
    for p in &b.per_pair {
        println!("  pred {} -> gt {}: mask iou {:.3}, pair reward {:.2}", p.pred, p.gt, p.mask_iou, p.total());
    }
    println!("accuracy {:.3}  total {:.3}", b.accuracy_total, b.total);

    let (_, missing) = score_response(&serialize_response("one", &preds[1..], LabelOrder::LabelFirst), dims, &gts, &masks[1..], &ParseOptions::default(), &cfg)?;
    println!("one of two found: accuracy {:.3}", missing.accuracy_total);
    Ok(())
}
