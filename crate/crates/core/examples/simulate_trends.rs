//! Simulated rollouts: zero-variance groups vs group size, voting vs sample
//! count, and REST vs a vanilla group.
//!
//! `cargo run --release --example simulate_trends -- 200`

use rlvrseg::grpo::RestConfig;
use rlvrseg::sim::{ExperimentConfig, PredictorConfig, SceneSuiteConfig};

fn main() -> rlvrseg::Result<()> {
    let scenes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let cfg = ExperimentConfig {
        seed: 7,
        scenes: SceneSuiteConfig {
            count: scenes,
            ..Default::default()
        },
        predictor: PredictorConfig {
            hit_prob: 0.6,
            ..Default::default()
        },
        zero_variance_n: vec![8, 16, 64],
        voting_n: vec![1, 8, 32],
        rest_variants: vec![RestConfig { pool_size: 64, select_size: 8 }],
        ..Default::default()
    };
    let report = cfg.run()?;
    print!("{}", report.zero_variance_csv());
    print!("{}", report.voting_csv());
    print!("{}", report.rest_csv());
    Ok(())
}
