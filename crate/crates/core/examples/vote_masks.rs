//! Majority voting over masks pooled from several sampled responses.

use rlvrseg::geometry::{BBox, ImageDims};
use rlvrseg::response::{parse_response, ParseOptions};
use rlvrseg::voting::{aggregate, CandidateMask, VotingConfig};

fn main() -> rlvrseg::Result<()> {
    let dims = ImageDims::new(64, 64)?;
    let answer = |n: usize| {
        let one = r#"{"label": "dog", "bbox_2d": [10,10,30,30], "point_2d": [20,20]}"#;
        format!("<think>look</think>\n<answer>[{}]</answer>", vec![one; n].join(", "))
    };
    let texts = [answer(1), answer(1), answer(1), answer(2), answer(0)];
    let parsed: Vec<_> = texts.iter().map(|t| parse_response(t, dims, &ParseOptions::default())).collect();

    let boxes = [
        (0, [10, 10, 30, 30], 0.95),
        (1, [10, 10, 30, 31], 0.90),
        (2, [11, 10, 30, 30], 0.92),
        (3, [10, 10, 30, 30], 0.80),
        (3, [40, 40, 60, 60], 0.85),
    ];
    let mut pred_counts = [0usize; 5];
    let pool: Vec<CandidateMask> = boxes
        .iter()
        .map(|&(r, [x1, y1, x2, y2], q)| {
            let c = CandidateMask {
                response_id: r,
                source_pred_index: pred_counts[r],
                quality: q,
                mask: BBox::new(x1, y1, x2, y2).unwrap().rasterize(dims),
            };
            pred_counts[r] += 1;
            c
        })
        .collect();

    let res = aggregate(&parsed, &pool, &VotingConfig::default())?;
    println!("n_valid {} target {:?} reverted {}", res.n_valid, res.target, res.reverted_to_unfiltered);
    for (k, c) in res.clusters.iter().enumerate() {
        println!("cluster {k}: votes {} ratio {:.2} members {}", c.votes, c.vote_ratio, c.members.len());
    }
    for s in &res.selected {
        println!("selected cluster {} from response {} pred {}", s.cluster, s.response_id, s.pred_index);
    }
    println!("output area {:?}", res.mask.map(|m| m.area()));
    Ok(())
}
