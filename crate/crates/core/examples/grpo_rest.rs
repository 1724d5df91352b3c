//! Group-relative advantages, clipped surrogate terms and REST selection.

use rlvrseg::grpo::{advantages, grpo_objective, rest_select, GrpoConfig, RolloutGroup};

fn main() -> rlvrseg::Result<()> {
    let cfg = GrpoConfig::default();

    let group = RolloutGroup {
        rewards: vec![7.0, 3.0, 3.0, 0.0, 5.5, 3.0, 6.2, 1.0],
        ratios: Some(vec![1.0, 1.3, 0.7, 1.0, 0.9, 1.1, 1.25, 0.8]),
        kl_terms: None,
    };
    let adv = advantages(&group, &cfg)?;
    println!("advantages {:?}", adv.values.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>());
    let obj = grpo_objective(&group, &adv.values, &cfg)?;
    println!("objective mean {:.4}", obj.mean);
    println!("REST m=4 keeps {:?}", rest_select(&adv.values, 4)?);

    let flat = advantages(&RolloutGroup::from_rewards(vec![7.0; 8]), &cfg)?;
    println!("constant group: degenerate={} values={:?}", flat.degenerate, flat.values);
    Ok(())
}
