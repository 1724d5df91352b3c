//! Verifiable segmentation rewards.
//!
//! Each rollout is scored by matching its predictions to the ground-truth
//! instances, summing per-pair accuracy rewards (tiered mask IoU, bbox IoU,
//! bbox L1, point L1), dividing by `max(n_pred, n_gt)` and adding the
//! weighted format rewards.

mod hungarian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_iou, bbox_l1_with, mask_iou, point_l1, BBox, ImageDims, L1Reduction, Mask, Point};
use crate::response::{format_rewards_with, parse_response, FormatConfig, FormatRewards, ParseOptions, ParsedResponse};

pub use hungarian::{hungarian_match, solve as solve_assignment, AssignCost, AssignmentMatrix};

/// Ground-truth instance: a mask, its tight box and a point on the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    mask: Mask,
    bbox: BBox,
    point: Point,
}

impl GtInstance {
    pub fn new(mask: Mask, bbox: BBox, point: Point) -> Result<Self> {
        match mask.bounding_box() {
            Some(tight) if tight == bbox => {}
            Some(tight) => {
                return Err(Error::InvalidInstance(format!(
                    "bbox {:?} is not the tight box {:?}",
                    bbox.coords(),
                    tight.coords()
                )))
            }
            None => return Err(Error::InvalidInstance("empty mask".into())),
        }
        let inside = mask.dims().contains_point(&point) && mask.get(point.x as u32, point.y as u32);
        if !inside {
            return Err(Error::InvalidInstance(format!(
                "point ({}, {}) is not on the mask",
                point.x, point.y
            )));
        }
        Ok(Self { mask, bbox, point })
    }

    /// Derive the tight box and the interior point from the mask.
    pub fn from_mask(mask: Mask) -> Result<Self> {
        let bbox = mask
            .bounding_box()
            .ok_or_else(|| Error::InvalidInstance("empty mask".into()))?;
        let point = mask.interior_point().expect("non-empty mask");
        Ok(Self { mask, bbox, point })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }
    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }
    pub fn point(&self) -> &Point {
        &self.point
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTier {
    /// Exclusive lower IoU bound.
    pub above: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingCost {
    #[default]
    BboxIou,
    MaskIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatWeights {
    pub thinking: f64,
    pub answer: f64,
    pub non_repeat: f64,
}

impl Default for FormatWeights {
    fn default() -> Self {
        Self {
            thinking: 1.0,
            answer: 1.0,
            non_repeat: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub bbox_iou_threshold: f64,
    pub bbox_l1_threshold: f64,
    pub point_l1_threshold: f64,
    pub bbox_l1_reduction: L1Reduction,
    /// Ascending by `above`.
    pub mask_tiers: Vec<MaskTier>,
    pub mask_scale: f64,
    pub format_weights: FormatWeights,
    pub format: FormatConfig,
    pub matching_cost: MatchingCost,
    /// Accuracy for a correct empty answer when there is no target; `None`
    /// means the best achievable per-pair reward.
    pub no_target_reward: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let tiers = [(0.30, 1.0), (0.50, 2.0), (0.70, 3.0), (0.80, 4.0), (0.90, 5.0)];
        Self {
            bbox_iou_threshold: 0.5,
            bbox_l1_threshold: 10.0,
            point_l1_threshold: 30.0,
            bbox_l1_reduction: L1Reduction::Mean,
            mask_tiers: tiers
                .iter()
                .map(|&(above, reward)| MaskTier { above, reward })
                .collect(),
            mask_scale: 0.2,
            format_weights: FormatWeights::default(),
            format: FormatConfig::default(),
            matching_cost: MatchingCost::BboxIou,
            no_target_reward: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        for w in self.mask_tiers.windows(2) {
            if w[1].above <= w[0].above {
                return bad("mask tier bounds must be strictly increasing");
            }
            if w[1].reward < w[0].reward {
                return bad("mask tier rewards must be non-decreasing");
            }
        }
        let finite = [
            self.bbox_iou_threshold,
            self.bbox_l1_threshold,
            self.point_l1_threshold,
            self.mask_scale,
            self.format_weights.thinking,
            self.format_weights.answer,
            self.format_weights.non_repeat,
        ];
        if finite.iter().any(|v| !v.is_finite())
            || self.mask_tiers.iter().any(|t| !t.above.is_finite() || !t.reward.is_finite())
        {
            return bad("reward constants must be finite");
        }
        if self.mask_scale < 0.0 {
            return bad("mask_scale must be non-negative");
        }
        if self.format.repeat_threshold < 2 {
            return bad("repeat_threshold must be at least 2");
        }
        Ok(())
    }

    /// Highest reward a single matched pair can earn.
    pub fn max_pair_reward(&self) -> f64 {
        let top = self.mask_tiers.last().map_or(0.0, |t| t.reward.max(0.0));
        top * self.mask_scale + 3.0
    }

    pub fn format_total(&self, f: &FormatRewards) -> f64 {
        let w = &self.format_weights;
        w.thinking * f.thinking as f64 + w.answer * f.answer as f64 + w.non_repeat * f.non_repeat as f64
    }
}

/// Unscaled tier value: reward of the highest tier whose bound `iou` strictly
/// exceeds, 0 when none.
pub fn mask_tier(iou: f64, tiers: &[MaskTier]) -> f64 {
    tiers
        .iter()
        .rev()
        .find(|t| iou > t.above)
        .map_or(0.0, |t| t.reward)
}

/// Tier value multiplied by `cfg.mask_scale`.
pub fn mask_tier_reward(iou: f64, cfg: &RewardConfig) -> f64 {
    mask_tier(iou, &cfg.mask_tiers) * cfg.mask_scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairReward {
    pub pred: usize,
    pub gt: usize,
    pub mask_iou: f64,
    pub mask_tier_reward: f64,
    pub bbox_iou_reward: f64,
    pub bbox_l1_reward: f64,
    pub point_l1_reward: f64,
}

impl PairReward {
    pub fn total(&self) -> f64 {
        self.mask_tier_reward + self.bbox_iou_reward + self.bbox_l1_reward + self.point_l1_reward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: FormatRewards,
    pub assignment: Vec<(usize, usize)>,
    pub per_pair: Vec<PairReward>,
    pub accuracy_total: f64,
    pub total: f64,
    pub n_pred: usize,
    pub n_gt: usize,
}

fn pair_reward(pred: usize, gt: usize, pred_box: &BBox, pred_point: &Point, mask: &Mask, inst: &GtInstance, cfg: &RewardConfig) -> Result<PairReward> {
    let miou = mask_iou(mask, &inst.mask)?;
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(PairReward {
        pred,
        gt,
        mask_iou: miou,
        mask_tier_reward: mask_tier_reward(miou, cfg),
        bbox_iou_reward: indicator(bbox_iou(pred_box, &inst.bbox) > cfg.bbox_iou_threshold),
        bbox_l1_reward: indicator(bbox_l1_with(pred_box, &inst.bbox, cfg.bbox_l1_reduction) < cfg.bbox_l1_threshold),
        point_l1_reward: indicator(point_l1(pred_point, &inst.point) < cfg.point_l1_threshold),
    })
}

const SCORE_BITS: i32 = 40;
const REWARD_BITS: i32 = 20;

/// Exact integer cost: the matching score dominates, the pair reward breaks
/// ties, so the maximized totals do not depend on prediction order.
fn lexicographic_cost(score: f64, reward: f64) -> i128 {
    let s = (score * f64::powi(2.0, SCORE_BITS)).round() as i128;
    let r = (reward * f64::powi(2.0, REWARD_BITS)).round() as i128;
    -((s << 48) + r)
}

/// Score one parsed rollout against the ground truth.
///
/// `masks[i]` is the mask generated for prediction `i`; it is ignored when
/// the response failed to parse.
pub fn score_rollout(parsed: &ParsedResponse, format: FormatRewards, gts: &[GtInstance], masks: &[Mask], cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let n_gt = gts.len();
    let format_total = cfg.format_total(&format);
    let finish = |assignment, per_pair, accuracy_total: f64, n_pred| RewardBreakdown {
        format,
        assignment,
        per_pair,
        accuracy_total,
        total: accuracy_total + format_total,
        n_pred,
        n_gt,
    };
    if !parsed.parse_ok {
        return Ok(finish(Vec::new(), Vec::new(), 0.0, 0));
    }

    let preds = &parsed.predictions;
    let n_pred = preds.len();
    if masks.len() != n_pred {
        return Err(Error::MaskCountMismatch {
            preds: n_pred,
            masks: masks.len(),
        });
    }
    let reference: Option<ImageDims> = gts.first().map(|g| g.mask.dims()).or(masks.first().map(Mask::dims));
    if let Some(d) = reference {
        for m in gts.iter().map(|g| &g.mask).chain(masks) {
            if m.dims() != d {
                return Err(Error::DimsMismatch(d, m.dims()));
            }
        }
    }

    if n_gt == 0 {
        let acc = if parsed.is_empty_answer {
            cfg.no_target_reward.unwrap_or_else(|| cfg.max_pair_reward())
        } else {
            0.0
        };
        return Ok(finish(Vec::new(), Vec::new(), acc, n_pred));
    }
    if n_pred == 0 {
        return Ok(finish(Vec::new(), Vec::new(), 0.0, 0));
    }

    let mut rewards = Vec::with_capacity(n_pred * n_gt);
    let mut scores = Vec::with_capacity(n_pred * n_gt);
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let pr = pair_reward(i, j, &p.bbox, &p.point, &masks[i], g, cfg)?;
            scores.push(match cfg.matching_cost {
                MatchingCost::BboxIou => bbox_iou(&p.bbox, &g.bbox),
                MatchingCost::MaskIou => pr.mask_iou,
            });
            rewards.push(pr);
        }
    }
    let assignment = solve_assignment(n_pred, n_gt, |i, j| {
        let k = i * n_gt + j;
        lexicographic_cost(scores[k], rewards[k].total())
    });
    let per_pair: Vec<PairReward> = assignment.iter().map(|&(i, j)| rewards[i * n_gt + j]).collect();
    let sum: f64 = per_pair.iter().map(PairReward::total).sum();
    let accuracy = sum / n_pred.max(n_gt) as f64;
    Ok(finish(assignment, per_pair, accuracy, n_pred))
}

/// Parse, compute format rewards and score in one step.
pub fn score_response(text: &str, dims: ImageDims, gts: &[GtInstance], masks: &[Mask], opts: &ParseOptions, cfg: &RewardConfig) -> Result<(ParsedResponse, RewardBreakdown)> {
    let parsed = parse_response(text, dims, opts);
    let format = format_rewards_with(text, &parsed, &cfg.format);
    let breakdown = score_rollout(&parsed, format, gts, masks, cfg)?;
    Ok((parsed, breakdown))
}
