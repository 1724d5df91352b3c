//! Mask-level majority voting over `N` sampled responses.
//!
//! The voting unit is an instance mask. Candidates from every parseable
//! response are pooled, greedily clustered by IoU against fixed cluster
//! representatives, filtered by vote ratio (distinct supporting responses
//! over valid responses), and the top-`K̂` clusters by votes contribute their
//! best-quality mask to the final union. `K̂` is the mode of the
//! per-response predicted counts; a majority of empty answers means no
//! target.
//!
//! Ordering conventions (all pinned so results are reproducible):
//! - candidates are clustered in descending quality, ties by ascending
//!   `(response_id, source_pred_index)`;
//! - count-mode ties go to the smaller count;
//! - clusters with equal votes keep founding order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_iou, mask_union, Mask};
use crate::response::ParsedResponse;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub response_id: usize,
    pub source_pred_index: usize,
    pub quality: f64,
    pub mask: Mask,
}

impl CandidateMask {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .quality
            .total_cmp(&self.quality)
            .then(self.response_id.cmp(&other.response_id))
            .then(self.source_pred_index.cmp(&other.source_pred_index))
    }

    fn key(&self) -> (usize, usize) {
        (self.response_id, self.source_pred_index)
    }
}

/// Keep the best-scoring mask hypothesis for each prediction of one response.
/// `hypotheses[i]` holds `(mask, quality)` pairs for prediction `i`; ties go to
/// the earliest hypothesis.
pub fn build_pool(response_id: usize, hypotheses: Vec<Vec<(Mask, f64)>>) -> Vec<CandidateMask> {
    hypotheses
        .into_iter()
        .enumerate()
        .filter_map(|(i, hs)| {
            hs.into_iter()
                .reduce(|best, h| if h.1 > best.1 { h } else { best })
                .map(|(mask, quality)| CandidateMask {
                    response_id,
                    source_pred_index: i,
                    quality,
                    mask,
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub response_id: usize,
    pub parse_ok: bool,
    pub predicted_count: usize,
    pub is_empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub tau_iou: f64,
    pub tau_vote: f64,
    pub no_target_threshold: f64,
    /// Responses to sample upstream; informational, voting uses whatever it is given.
    pub sample_count: usize,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            tau_iou: 0.85,
            tau_vote: 0.2,
            no_target_threshold: 0.5,
            sample_count: 32,
        }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.tau_iou) || !unit(self.tau_vote) || !unit(self.no_target_threshold) || self.sample_count == 0 {
            return Err(Error::InvalidConfig(
                "voting thresholds must lie in (0, 1] and sample_count >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Founding candidate; never replaced.
    pub representative: CandidateMask,
    /// All members including the representative, in joining order.
    pub members: Vec<CandidateMask>,
    pub votes: usize,
    pub vote_ratio: f64,
}

impl Cluster {
    pub fn supporting_responses(&self) -> BTreeSet<usize> {
        self.members.iter().map(|m| m.response_id).collect()
    }

    /// Highest-quality member, ties by ascending `(response_id, source_pred_index)`.
    pub fn best_member(&self) -> &CandidateMask {
        self.members
            .iter()
            .min_by(|a, b| a.canonical_cmp(b))
            .expect("clusters are never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "count")]
pub enum TargetDecision {
    NoTarget,
    Count(usize),
}

pub fn summarize_responses(parsed: &[ParsedResponse]) -> (Vec<ResponseSummary>, usize) {
    let summaries: Vec<ResponseSummary> = parsed
        .iter()
        .enumerate()
        .map(|(i, p)| ResponseSummary {
            response_id: i,
            parse_ok: p.parse_ok,
            predicted_count: p.predictions.len(),
            is_empty: p.parse_ok && p.is_empty_answer,
        })
        .collect();
    let n_valid = summaries.iter().filter(|s| s.parse_ok).count();
    (summaries, n_valid)
}

/// Greedy single-pass clustering in canonical candidate order. `n_valid`
/// is the vote-ratio denominator.
pub fn cluster_masks(pool: &[CandidateMask], n_valid: usize, cfg: &VotingConfig) -> Result<Vec<Cluster>> {
    if let Some(first) = pool.first() {
        let d = first.mask.dims();
        if let Some(bad) = pool.iter().find(|c| c.mask.dims() != d) {
            return Err(Error::DimsMismatch(d, bad.mask.dims()));
        }
    }
    let mut seen = HashSet::new();
    for c in pool {
        if !c.quality.is_finite() {
            return Err(Error::NonFinite("mask quality"));
        }
        if !seen.insert(c.key()) {
            return Err(Error::DuplicateCandidate(c.response_id, c.source_pred_index));
        }
    }

    let mut ordered: Vec<&CandidateMask> = pool.iter().collect();
    ordered.sort_by(|a, b| a.canonical_cmp(b));

    let mut clusters: Vec<Cluster> = Vec::new();
    for cand in ordered {
        let mut home = None;
        for (k, cl) in clusters.iter().enumerate() {
            if mask_iou(&cand.mask, &cl.representative.mask)? >= cfg.tau_iou {
                home = Some(k);
                break;
            }
        }
        match home {
            Some(k) => clusters[k].members.push(cand.clone()),
            None => clusters.push(Cluster {
                representative: cand.clone(),
                members: vec![cand.clone()],
                votes: 0,
                vote_ratio: 0.0,
            }),
        }
    }
    for cl in &mut clusters {
        cl.votes = cl.supporting_responses().len();
        cl.vote_ratio = if n_valid == 0 {
            0.0
        } else {
            cl.votes as f64 / n_valid as f64
        };
    }
    Ok(clusters)
}

pub fn decide_target_count(summaries: &[ResponseSummary], cfg: &VotingConfig) -> Result<TargetDecision> {
    let valid: Vec<&ResponseSummary> = summaries.iter().filter(|s| s.parse_ok).collect();
    if valid.is_empty() {
        return Err(Error::NoValidResponses);
    }
    let empties = valid.iter().filter(|s| s.is_empty).count();
    if empties as f64 / valid.len() as f64 >= cfg.no_target_threshold {
        return Ok(TargetDecision::NoTarget);
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for s in valid.iter().filter(|s| !s.is_empty) {
        *freq.entry(s.predicted_count).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the smallest count.
    let mode = freq
        .iter()
        .fold(None, |best: Option<(usize, usize)>, (&k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        });
    Ok(mode.map_or(TargetDecision::NoTarget, |(k, _)| TargetDecision::Count(k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCluster {
    /// Index into [`VoteResult::clusters`] (founding order).
    pub cluster: usize,
    pub votes: usize,
    pub vote_ratio: f64,
    pub member_count: usize,
    pub response_id: usize,
    pub pred_index: usize,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub n_valid: usize,
    pub target: TargetDecision,
    pub clusters: Vec<Cluster>,
    /// Every cluster fell below `tau_vote`, so the unfiltered set was used.
    pub reverted_to_unfiltered: bool,
    pub selected: Vec<SelectedCluster>,
    /// `None` means no target.
    pub mask: Option<Mask>,
}

impl VoteResult {
    pub fn is_no_target(&self) -> bool {
        self.mask.is_none()
    }
}

/// Full voting procedure over parsed responses and their pooled masks.
///
/// With a single valid response the output is the union of that response's
/// masks, so voting over one sample is the identity.
pub fn aggregate(parsed: &[ParsedResponse], pool: &[CandidateMask], cfg: &VotingConfig) -> Result<VoteResult> {
    let (summaries, n_valid) = summarize_responses(parsed);
    aggregate_summaries(&summaries, pool, cfg)
        .map(|r| VoteResult { n_valid, ..r })
}

pub fn aggregate_summaries(summaries: &[ResponseSummary], pool: &[CandidateMask], cfg: &VotingConfig) -> Result<VoteResult> {
    let valid_ids: BTreeSet<usize> = summaries.iter().filter(|s| s.parse_ok).map(|s| s.response_id).collect();
    let n_valid = valid_ids.len();
    if let Some(c) = pool.iter().find(|c| !valid_ids.contains(&c.response_id)) {
        return Err(Error::UnknownResponse(c.response_id));
    }
    let target = decide_target_count(summaries, cfg)?;
    let clusters = cluster_masks(pool, n_valid, cfg)?;

    let k_hat = match target {
        TargetDecision::NoTarget => {
            return Ok(VoteResult {
                n_valid,
                target,
                clusters,
                reverted_to_unfiltered: false,
                selected: Vec::new(),
                mask: None,
            })
        }
        TargetDecision::Count(k) => k,
    };
    if clusters.is_empty() {
        return Err(Error::EmptyPool);
    }

    let mut kept: Vec<usize> = (0..clusters.len())
        .filter(|&k| clusters[k].vote_ratio >= cfg.tau_vote)
        .collect();
    let reverted = kept.is_empty();
    if reverted {
        kept = (0..clusters.len()).collect();
    }
    // stable: equal votes keep founding order
    kept.sort_by(|&a, &b| clusters[b].votes.cmp(&clusters[a].votes));
    kept.truncate(k_hat.min(kept.len()));

    let selected: Vec<SelectedCluster> = kept
        .iter()
        .map(|&k| {
            let cl = &clusters[k];
            let best = cl.best_member();
            SelectedCluster {
                cluster: k,
                votes: cl.votes,
                vote_ratio: cl.vote_ratio,
                member_count: cl.members.len(),
                response_id: best.response_id,
                pred_index: best.source_pred_index,
                quality: best.quality,
            }
        })
        .collect();

    let mask = if n_valid == 1 {
        let all: Vec<Mask> = pool.iter().map(|c| c.mask.clone()).collect();
        mask_union(&all)?
    } else {
        let chosen: Vec<Mask> = kept.iter().map(|&k| clusters[k].best_member().mask.clone()).collect();
        mask_union(&chosen)?
    };
    Ok(VoteResult {
        n_valid,
        target,
        clusters,
        reverted_to_unfiltered: reverted,
        selected,
        mask: Some(mask),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, ImageDims};
    use crate::response::Prediction;
    use crate::geometry::Point;

    fn dims() -> ImageDims {
        ImageDims::new(32, 32).unwrap()
    }

    fn rect(x1: i64, y1: i64, x2: i64, y2: i64) -> Mask {
        BBox::new(x1, y1, x2, y2).unwrap().rasterize(dims())
    }

    fn cand(response_id: usize, idx: usize, quality: f64, mask: Mask) -> CandidateMask {
        CandidateMask {
            response_id,
            source_pred_index: idx,
            quality,
            mask,
        }
    }

    fn response(count: usize) -> ParsedResponse {
        let p = Prediction {
            label: "x".into(),
            bbox: BBox::new(0, 0, 1, 1).unwrap(),
            point: Point::new(0, 0),
        };
        ParsedResponse {
            think_text: "t".into(),
            predictions: vec![p; count],
            is_empty_answer: count == 0,
            parse_ok: true,
            parse_error: None,
            clamped: false,
        }
    }

    fn failed() -> ParsedResponse {
        ParsedResponse {
            parse_ok: false,
            is_empty_answer: false,
            ..response(0)
        }
    }

    fn summary(id: usize, count: usize) -> ResponseSummary {
        ResponseSummary {
            response_id: id,
            parse_ok: true,
            predicted_count: count,
            is_empty: count == 0,
        }
    }

    #[test]
    fn summaries_count_valid() {
        let mut parsed = vec![response(1); 30];
        parsed.extend([failed(), failed()]);
        let (s, n) = summarize_responses(&parsed);
        assert_eq!(n, 30);
        assert_eq!(s.len(), 32);
        assert!(!s[31].parse_ok);
        let (_, n) = summarize_responses(&[failed(), failed()]);
        assert_eq!(n, 0);
        let (s, _) = summarize_responses(&[response(0), response(3)]);
        assert!(s[0].is_empty && s[0].predicted_count == 0);
        assert_eq!(s[1].predicted_count, 3);
    }

    #[test]
    fn identical_masks_one_cluster() {
        let m = rect(2, 2, 10, 10);
        let cl = cluster_masks(&[cand(0, 0, 0.9, m.clone()), cand(1, 0, 0.8, m)], 2, &VotingConfig::default()).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].votes, 2);
        assert_eq!(cl[0].vote_ratio, 1.0);
    }

    #[test]
    fn disjoint_masks_two_clusters() {
        let cl = cluster_masks(
            &[cand(0, 0, 0.9, rect(0, 0, 4, 4)), cand(1, 0, 0.8, rect(10, 10, 14, 14))],
            2,
            &VotingConfig::default(),
        )
        .unwrap();
        assert_eq!(cl.len(), 2);
        assert!(cl.iter().all(|c| c.votes == 1));
    }

    #[test]
    fn three_mask_fixture() {
        // A: 10x10, B: A minus one column (IoU 0.9), C overlaps A slightly.
        let a = rect(0, 0, 10, 10);
        let b = rect(0, 0, 9, 10);
        let c = rect(8, 8, 18, 18);
        assert!((mask_iou(&a, &b).unwrap() - 0.9).abs() < 1e-12);
        let pool = [cand(2, 0, 0.5, c), cand(1, 0, 0.8, b), cand(0, 0, 0.9, a.clone())];
        let cl = cluster_masks(&pool, 3, &VotingConfig::default()).unwrap();
        assert_eq!(cl.len(), 2);
        assert_eq!(cl[0].representative.mask, a);
        let ids: Vec<usize> = cl[0].members.iter().map(|m| m.response_id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(cl[1].members[0].response_id, 2);
        for c in &cl {
            for m in &c.members {
                assert!(mask_iou(&m.mask, &c.representative.mask).unwrap() >= 0.85);
            }
        }
    }

    #[test]
    fn votes_count_distinct_responses() {
        let m = rect(0, 0, 8, 8);
        let pool = [cand(0, 0, 0.9, m.clone()), cand(0, 1, 0.8, m.clone()), cand(1, 0, 0.7, m)];
        let cl = cluster_masks(&pool, 2, &VotingConfig::default()).unwrap();
        assert_eq!(cl[0].members.len(), 3);
        assert_eq!(cl[0].votes, 2);
    }

    #[test]
    fn cluster_input_errors() {
        let cfg = VotingConfig::default();
        let m = rect(0, 0, 4, 4);
        let other = Mask::empty(ImageDims::new(4, 4).unwrap());
        assert!(matches!(
            cluster_masks(&[cand(0, 0, 1.0, m.clone()), cand(1, 0, 1.0, other)], 2, &cfg),
            Err(Error::DimsMismatch(..))
        ));
        assert!(matches!(
            cluster_masks(&[cand(0, 0, 1.0, m.clone()), cand(0, 0, 0.5, m.clone())], 1, &cfg),
            Err(Error::DuplicateCandidate(0, 0))
        ));
        assert!(cluster_masks(&[cand(0, 0, f64::NAN, m)], 1, &cfg).is_err());
    }

    #[test]
    fn target_count_rules() {
        let cfg = VotingConfig::default();
        let mut s: Vec<_> = (0..17).map(|i| summary(i, 0)).collect();
        s.extend((17..32).map(|i| summary(i, 1)));
        assert_eq!(decide_target_count(&s, &cfg).unwrap(), TargetDecision::NoTarget);

        let s = [summary(0, 1), summary(1, 1), summary(2, 2)];
        assert_eq!(decide_target_count(&s, &cfg).unwrap(), TargetDecision::Count(1));
        let s = [summary(0, 2), summary(1, 1), summary(2, 2), summary(3, 1)];
        assert_eq!(decide_target_count(&s, &cfg).unwrap(), TargetDecision::Count(1));

        let s = [ResponseSummary {
            parse_ok: false,
            ..summary(0, 0)
        }];
        assert_eq!(decide_target_count(&s, &cfg), Err(Error::NoValidResponses));
    }

    #[test]
    fn single_response_is_identity() {
        let m = rect(3, 3, 9, 9);
        let r = aggregate(&[response(1)], &[cand(0, 0, 0.7, m.clone())], &VotingConfig::default()).unwrap();
        assert_eq!(r.mask, Some(m));
        assert_eq!(r.selected.len(), 1);

        // two near-identical masks from one response still union exactly
        let a = rect(0, 0, 10, 10);
        let b = rect(0, 0, 10, 11);
        let r = aggregate(&[response(2)], &[cand(0, 0, 0.9, a.clone()), cand(0, 1, 0.8, b.clone())], &VotingConfig::default()).unwrap();
        assert_eq!(r.mask, Some(mask_union(&[a, b]).unwrap()));
    }

    #[test]
    fn majority_cluster_wins_over_outlier() {
        let gt = rect(4, 4, 20, 20);
        let pool = vec![
            cand(0, 0, 0.80, rect(4, 4, 20, 20)),
            cand(1, 0, 0.95, rect(4, 4, 20, 19)),
            cand(2, 0, 0.70, rect(4, 5, 20, 20)),
            cand(3, 0, 0.85, rect(5, 4, 20, 20)),
            cand(4, 0, 0.99, rect(24, 24, 30, 30)),
        ];
        let parsed = vec![response(1); 5];
        let r = aggregate(&parsed, &pool, &VotingConfig::default()).unwrap();
        assert_eq!(r.clusters.len(), 2);
        assert_eq!(r.selected.len(), 1);
        assert_eq!(r.selected[0].votes, 4);
        assert_eq!(r.selected[0].response_id, 1);
        assert!(!r.reverted_to_unfiltered);
        assert_eq!(r.mask, Some(rect(4, 4, 20, 19)));
        assert!(mask_iou(r.mask.as_ref().unwrap(), &gt).unwrap() > 0.9);
        let outlier = r.clusters.iter().find(|c| c.votes == 1).unwrap();
        assert!((outlier.vote_ratio - 0.2).abs() < 1e-12);
    }

    #[test]
    fn revert_when_all_filtered() {
        // 6 valid responses, each predicting a different disjoint object: every
        // cluster has rho = 1/6 < 0.2.
        let pool: Vec<_> = (0..6)
            .map(|i| cand(i, 0, 0.5 + i as f64 * 0.01, rect(i as i64 * 5, 0, i as i64 * 5 + 4, 4)))
            .collect();
        let r = aggregate(&vec![response(1); 6], &pool, &VotingConfig::default()).unwrap();
        assert!(r.reverted_to_unfiltered);
        assert_eq!(r.selected.len(), 1);
        // equal votes: founding order, i.e. highest quality first
        assert_eq!(r.selected[0].response_id, 5);
    }

    #[test]
    fn no_target_majority() {
        let parsed = vec![response(0), response(0), response(1)];
        let r = aggregate(&parsed, &[cand(2, 0, 0.9, rect(0, 0, 4, 4))], &VotingConfig::default()).unwrap();
        assert!(r.is_no_target());
        assert_eq!(r.target, TargetDecision::NoTarget);
    }

    #[test]
    fn aggregate_errors() {
        let cfg = VotingConfig::default();
        assert_eq!(aggregate(&[failed()], &[], &cfg), Err(Error::NoValidResponses));
        let m = rect(0, 0, 4, 4);
        assert_eq!(
            aggregate(&[failed(), response(1)], &[cand(0, 0, 0.5, m.clone())], &cfg),
            Err(Error::UnknownResponse(0))
        );
        assert_eq!(aggregate(&[response(1)], &[], &cfg), Err(Error::EmptyPool));
    }

    #[test]
    fn pool_builder_keeps_best_hypothesis() {
        let (a, b) = (rect(0, 0, 4, 4), rect(0, 0, 5, 5));
        let pool = build_pool(3, vec![vec![(a.clone(), 0.2), (b.clone(), 0.9), (a.clone(), 0.9)], vec![], vec![(a.clone(), 0.1)]]);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[0].mask, b);
        assert_eq!((pool[1].response_id, pool[1].source_pred_index), (3, 2));
    }
}
