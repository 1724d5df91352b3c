use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_scenes, sample_rollout, MaskStubConfig, PredictorConfig, SampledRollout, Scene, SceneSuiteConfig};
use crate::error::{Error, Result};
use crate::geometry::{mask_union, Mask};
use crate::grpo::{advantages, rest_select, GrpoConfig, RestConfig, RolloutGroup};
use crate::metrics::{ciou, giou, EvalSample, ReasoningType};
use crate::response::{format_rewards_with, ParsedResponse};
use crate::reward::{score_rollout, RewardConfig};
use crate::voting::{aggregate, CandidateMask, VotingConfig};

/// A rollout is correct when its predicted union mask has IoU > 0.5 with
/// the scene's target mask.
pub const CORRECT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub reward: f64,
    pub iou: f64,
    pub correct: bool,
}

fn eval_sample(scene: &Scene, pred: Option<Mask>) -> EvalSample {
    let gt = scene.target_mask();
    EvalSample {
        sample_id: scene.id.to_string(),
        reasoning_type: ReasoningType::Untyped,
        pred_is_no_target: pred.is_none(),
        pred_mask: pred.unwrap_or_else(|| Mask::empty(scene.dims)),
        gt_mask: gt,
    }
}

fn predicted_union(candidates: &[CandidateMask]) -> Option<Mask> {
    let masks: Vec<Mask> = candidates.iter().map(|c| c.mask.clone()).collect();
    mask_union(&masks).ok()
}

pub fn evaluate_rollout(scene: &Scene, rollout: &SampledRollout, rcfg: &RewardConfig) -> Result<(ParsedResponse, RolloutOutcome)> {
    let parsed = rollout.parse(scene.dims);
    let format = format_rewards_with(&rollout.text, &parsed, &rcfg.format);
    let masks = if parsed.parse_ok { rollout.masks() } else { Vec::new() };
    let breakdown = score_rollout(&parsed, format, &scene.gts, &masks, rcfg)?;
    let iou = eval_sample(scene, predicted_union(&rollout.candidates)).iou()?;
    Ok((
        parsed,
        RolloutOutcome {
            reward: breakdown.total,
            iou,
            correct: iou > CORRECT_IOU,
        },
    ))
}

fn check_ascending(values: &[usize], min: usize) -> Result<usize> {
    if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) || values[0] < min {
        return Err(Error::InvalidConfig(format!(
            "group sizes must be strictly ascending and >= {min}, got {values:?}"
        )));
    }
    Ok(*values.last().unwrap())
}

fn outcomes(scene: &Scene, pcfg: &PredictorConfig, mcfg: &MaskStubConfig, rcfg: &RewardConfig, n: usize) -> Result<Vec<RolloutOutcome>> {
    (0..n as u64)
        .map(|k| evaluate_rollout(scene, &sample_rollout(scene, pcfg, mcfg, k), rcfg).map(|(_, o)| o))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroVarianceRow {
    pub n: usize,
    pub groups: usize,
    /// Groups whose advantages all vanish (reward std below the floor).
    pub zero_variance_fraction: f64,
    /// Groups containing at least one correct rollout.
    pub at_least_one_correct_fraction: f64,
}

/// For each group size `n`, one group of `n` rollouts per scene.
pub fn zero_variance_experiment(scenes: &[Scene], pcfg: &PredictorConfig, mcfg: &MaskStubConfig, n_values: &[usize], rcfg: &RewardConfig, gcfg: &GrpoConfig) -> Result<Vec<ZeroVarianceRow>> {
    let n_max = check_ascending(n_values, 2)?;
    let per_scene: Vec<Vec<(bool, bool)>> = scenes
        .par_iter()
        .map(|scene| {
            let outs = outcomes(scene, pcfg, mcfg, rcfg, n_max)?;
            n_values
                .iter()
                .map(|&n| {
                    let group = RolloutGroup::from_rewards(outs[..n].iter().map(|o| o.reward).collect());
                    let adv = advantages(&group, gcfg)?;
                    Ok((adv.degenerate, outs[..n].iter().any(|o| o.correct)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let total = scenes.len().max(1) as f64;
    Ok(n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| ZeroVarianceRow {
            n,
            groups: scenes.len(),
            zero_variance_fraction: per_scene.iter().filter(|s| s[i].0).count() as f64 / total,
            at_least_one_correct_fraction: per_scene.iter().filter(|s| s[i].1).count() as f64 / total,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingRow {
    pub n: usize,
    pub voted_giou: f64,
    pub voted_ciou: f64,
    /// Mean per-response gIoU over the same `n` responses.
    pub single_giou: f64,
}

/// Vote over the first `n` responses of each scene and compare with the
/// responses taken one at a time.
pub fn voting_experiment(scenes: &[Scene], pcfg: &PredictorConfig, mcfg: &MaskStubConfig, n_values: &[usize], vcfg: &VotingConfig) -> Result<Vec<VotingRow>> {
    let n_max = check_ascending(n_values, 1)?;
    vcfg.validate()?;
    // per scene, per n: (voted sample, mean single IoU)
    let per_scene: Vec<Vec<(EvalSample, f64)>> = scenes
        .par_iter()
        .map(|scene| {
            let rollouts: Vec<SampledRollout> = (0..n_max as u64).map(|k| sample_rollout(scene, pcfg, mcfg, k)).collect();
            let parsed: Vec<ParsedResponse> = rollouts.iter().map(|r| r.parse(scene.dims)).collect();
            let single: Vec<f64> = rollouts
                .iter()
                .map(|r| eval_sample(scene, predicted_union(&r.candidates)).iou())
                .collect::<Result<_>>()?;
            n_values
                .iter()
                .map(|&n| {
                    let pool: Vec<CandidateMask> = rollouts[..n].iter().flat_map(|r| r.candidates.iter().cloned()).collect();
                    let voted = match aggregate(&parsed[..n], &pool, vcfg) {
                        Ok(r) => r.mask,
                        Err(Error::NoValidResponses) => None,
                        Err(e) => return Err(e),
                    };
                    let mean_single = single[..n].iter().sum::<f64>() / n as f64;
                    Ok((eval_sample(scene, voted), mean_single))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let samples: Vec<EvalSample> = per_scene.iter().map(|s| s[i].0.clone()).collect();
            let single = per_scene.iter().map(|s| s[i].1).sum::<f64>() / scenes.len().max(1) as f64;
            Ok(VotingRow {
                n,
                voted_giou: giou(&samples)?,
                voted_ciou: ciou(&samples)?,
                single_giou: single,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestRow {
    pub pool_size: usize,
    pub select_size: usize,
    pub scenes: usize,
    /// Scenes whose REST-selected subset holds at least one correct rollout.
    pub rest_fraction: f64,
    /// Same statistic for a vanilla group of `select_size` rollouts.
    pub vanilla_fraction: f64,
}

pub fn rest_experiment(scenes: &[Scene], pcfg: &PredictorConfig, mcfg: &MaskStubConfig, variants: &[RestConfig], rcfg: &RewardConfig, gcfg: &GrpoConfig) -> Result<Vec<RestRow>> {
    for v in variants {
        v.validate()?;
    }
    let n_max = variants.iter().map(|v| v.pool_size).max().unwrap_or(0);
    let per_scene: Vec<Vec<(bool, bool)>> = scenes
        .par_iter()
        .map(|scene| {
            let outs = outcomes(scene, pcfg, mcfg, rcfg, n_max)?;
            variants
                .iter()
                .map(|v| {
                    let pool = &outs[..v.pool_size];
                    let group = RolloutGroup::from_rewards(pool.iter().map(|o| o.reward).collect());
                    let adv = advantages(&group, gcfg)?;
                    let picked = rest_select(&adv.values, v.select_size)?;
                    let rest_hit = picked.iter().any(|&i| pool[i].correct);
                    let vanilla_hit = pool[..v.select_size].iter().any(|o| o.correct);
                    Ok((rest_hit, vanilla_hit))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let total = scenes.len().max(1) as f64;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(i, v)| RestRow {
            pool_size: v.pool_size,
            select_size: v.select_size,
            scenes: scenes.len(),
            rest_fraction: per_scene.iter().filter(|s| s[i].0).count() as f64 / total,
            vanilla_fraction: per_scene.iter().filter(|s| s[i].1).count() as f64 / total,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives both scene generation and the predictor.
    pub seed: u64,
    pub scenes: SceneSuiteConfig,
    pub predictor: PredictorConfig,
    pub mask_stub: MaskStubConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub voting: VotingConfig,
    /// Empty lists skip the corresponding experiment.
    pub zero_variance_n: Vec<usize>,
    pub voting_n: Vec<usize>,
    pub rest_variants: Vec<RestConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: SceneSuiteConfig::default(),
            predictor: PredictorConfig::default(),
            mask_stub: MaskStubConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            voting: VotingConfig::default(),
            zero_variance_n: vec![8, 16, 64, 256],
            voting_n: vec![1, 8, 32],
            rest_variants: vec![RestConfig::default()],
        }
    }
}

/// Lowercase hex SHA-256 of the config's canonical JSON.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub scenes: usize,
    pub zero_variance: Vec<ZeroVarianceRow>,
    pub voting: Vec<VotingRow>,
    pub rest: Vec<RestRow>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenes.validate()?;
        self.predictor.validate()?;
        self.mask_stub.validate()?;
        self.reward.validate()?;
        self.grpo.validate()?;
        self.voting.validate()
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        self.validate()?;
        let scenes = generate_scenes(&self.scenes, self.seed)?;
        let pcfg = PredictorConfig {
            seed: self.seed,
            ..self.predictor.clone()
        };
        let zero_variance = if self.zero_variance_n.is_empty() {
            Vec::new()
        } else {
            zero_variance_experiment(&scenes, &pcfg, &self.mask_stub, &self.zero_variance_n, &self.reward, &self.grpo)?
        };
        let voting = if self.voting_n.is_empty() {
            Vec::new()
        } else {
            voting_experiment(&scenes, &pcfg, &self.mask_stub, &self.voting_n, &self.voting)?
        };
        let rest = rest_experiment(&scenes, &pcfg, &self.mask_stub, &self.rest_variants, &self.reward, &self.grpo)?;
        Ok(ExperimentReport {
            config_hash: config_hash(self),
            seed: self.seed,
            scenes: scenes.len(),
            zero_variance,
            voting,
            rest,
        })
    }
}

impl ExperimentReport {
    pub fn zero_variance_csv(&self) -> String {
        let mut out = format!("# config_hash={}\nn,groups,zero_variance_fraction,at_least_one_correct_fraction\n", self.config_hash);
        for r in &self.zero_variance {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.n, r.groups, r.zero_variance_fraction, r.at_least_one_correct_fraction));
        }
        out
    }

    pub fn voting_csv(&self) -> String {
        let mut out = format!("# config_hash={}\nn,voted_giou,voted_ciou,single_giou\n", self.config_hash);
        for r in &self.voting {
            out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.n, r.voted_giou, r.voted_ciou, r.single_giou));
        }
        out
    }

    pub fn rest_csv(&self) -> String {
        let mut out = format!("# config_hash={}\npool_size,select_size,scenes,rest_fraction,vanilla_fraction\n", self.config_hash);
        for r in &self.rest {
            out.push_str(&format!("{},{},{},{:.6},{:.6}\n", r.pool_size, r.select_size, r.scenes, r.rest_fraction, r.vanilla_fraction));
        }
        out
    }

    /// Whitespace-separated tables for gnuplot, keyed by file stem.
    pub fn gnuplot_tables(&self) -> Vec<(&'static str, String)> {
        let mut zv = String::from("# n zero_variance_fraction at_least_one_correct_fraction\n");
        for r in &self.zero_variance {
            zv.push_str(&format!("{} {:.6} {:.6}\n", r.n, r.zero_variance_fraction, r.at_least_one_correct_fraction));
        }
        let mut vt = String::from("# n voted_giou single_giou\n");
        for r in &self.voting {
            vt.push_str(&format!("{} {:.6} {:.6}\n", r.n, r.voted_giou, r.single_giou));
        }
        vec![("zero_variance", zv), ("voting", vt)]
    }
}
