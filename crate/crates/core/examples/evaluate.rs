//! gIoU / cIoU over a small labelled set, overall and per reasoning type.

use rlvrseg::geometry::{BBox, ImageDims, Mask};
use rlvrseg::metrics::{report, EvalSample, ReasoningType};

fn main() -> rlvrseg::Result<()> {
    let dims = ImageDims::new(32, 32)?;
    let rect = |c: [i64; 4]| BBox::new(c[0], c[1], c[2], c[3]).unwrap().rasterize(dims);
    let sample = |id: &str, t, gt: Mask, pred: Option<Mask>| EvalSample {
        sample_id: id.into(),
        reasoning_type: t,
        gt_mask: gt,
        pred_is_no_target: pred.is_none(),
        pred_mask: pred.unwrap_or_else(|| Mask::empty(dims)),
    };
    let samples = vec![
        sample("a", ReasoningType::PurposeFunctional, rect([0, 0, 10, 10]), Some(rect([0, 0, 10, 8]))),
        sample("b", ReasoningType::PurposeFunctional, rect([5, 5, 25, 25]), Some(rect([5, 5, 25, 25]))),
        sample("c", ReasoningType::ComparativeRelational, rect([0, 0, 4, 4]), Some(rect([10, 10, 30, 30]))),
        sample("d", ReasoningType::Untyped, Mask::empty(dims), None),
    ];
    let r = report(&samples)?;
    print!("{}", r.to_table());
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}
