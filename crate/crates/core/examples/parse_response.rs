//! Parse a model response, inspect failures, and re-serialize canonically.

use rlvrseg::geometry::ImageDims;
use rlvrseg::response::{format_rewards, parse_response, serialize_response, LabelOrder, ParseOptions};

fn main() -> rlvrseg::Result<()> {
    let dims = ImageDims::new(640, 480)?;
    let opts = ParseOptions::default();
    let text = r#"<think>The chair near the window can be sat on.</think>
<answer>[{"bbox_2d": [10, 100, 200, 210], "point_2d": [30, 110], "label": "chair"}]</answer>"#;

    let parsed = parse_response(text, dims, &opts);
    println!("parse_ok={} predictions={:?}", parsed.parse_ok, parsed.predictions);
    println!("format rewards {:?}", format_rewards(text, &parsed));
    println!("{}", serialize_response(&parsed.think_text, &parsed.predictions, LabelOrder::LabelFirst));
    println!("{}", serialize_response(&parsed.think_text, &parsed.predictions, LabelOrder::LabelLast));

    for bad in [
        "<answer>[]</answer>",
        "<think>x</think><answer>[{\"label\": \"a\", \"bbox_2d\": [1,2,3], \"point_2d\": [1,1]}]</answer>",
        "<think>x</think><answer>[{\"label\": \"a\", \"bbox_2d\": [9,9,1,1], \"point_2d\": [1,1]}]</answer>",
        "<think>x</think><answer>[]",
    ] {
        let p = parse_response(bad, dims, &opts);
        println!("{:<12} {}", p.parse_ok, p.parse_error.map(|e| e.to_string()).unwrap_or_default());
    }

    let empty = parse_response("<think>nothing matches</think>\n<answer>[]</answer>", dims, &opts);
    println!("explicit no-target: parse_ok={} empty={}", empty.parse_ok, empty.is_empty_answer);
    Ok(())
}
