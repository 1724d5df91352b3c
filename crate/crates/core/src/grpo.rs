//! Group-relative advantages, clipped surrogate terms and REST selection.
//!
//! REST (rollout-expanded selective tuning) samples a large pool of `N`
//! rollouts and keeps only the `m/2` highest- and `m/2` lowest-advantage
//! ones for the update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    /// `π_θ(o_i | q) / π_θ_old(o_i | q)` per rollout, supplied by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    /// Per-rollout KL estimates; only read when `kl_beta > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_terms: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn from_rewards(rewards: Vec<f64>) -> Self {
        Self {
            rewards,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    pub std_mode: StdMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            kl_beta: 0.0,
            std_floor: 1e-6,
            std_mode: StdMode::Population,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) || !(self.kl_beta >= 0.0) || !(self.std_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "need clip_epsilon > 0, kl_beta >= 0, std_floor > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestConfig {
    pub pool_size: usize,
    pub select_size: usize,
}

impl Default for RestConfig {
    fn default() -> Self {
        Self {
            pool_size: 256,
            select_size: 16,
        }
    }
}

impl RestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.select_size < 2 || !self.select_size.is_multiple_of(2) || self.select_size > self.pool_size {
            return Err(Error::InvalidConfig(format!(
                "REST needs an even select size with 2 <= m <= N, got m={} N={}",
                self.select_size, self.pool_size
            )));
        }
        Ok(())
    }
}

/// Advantages plus whether the group was degenerate (std below the floor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantages {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

pub fn group_std(values: &[f64], mode: StdMode) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample => n - 1.0,
    };
    (ss / denom).sqrt()
}

/// `A_i = (r_i - mean) / std`; all zeros when the std is below the floor.
pub fn advantages(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<Advantages> {
    let r = &group.rewards;
    if r.len() < 2 {
        return Err(Error::GroupTooSmall(r.len()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let std = group_std(r, cfg.std_mode);
    if std < cfg.std_floor {
        return Ok(Advantages {
            values: vec![0.0; r.len()],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: r.iter().map(|x| (x - mean) / std).collect(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub terms: Vec<f64>,
    pub mean: f64,
}

/// Per-rollout clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A) - β·KL` and
/// their mean.
pub fn grpo_objective(group: &RolloutGroup, adv: &[f64], cfg: &GrpoConfig) -> Result<ObjectiveTerms> {
    let ratios = group.ratios.as_ref().ok_or(Error::RatiosRequired)?;
    let n = adv.len();
    if ratios.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: ratios.len(),
        });
    }
    if let Some(kl) = &group.kl_terms {
        if kl.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: kl.len(),
            });
        }
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidConfig("likelihood ratios must be positive and finite".into()));
    }
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let (ratio, a) = (ratios[i], adv[i]);
            let surrogate = (ratio * a).min(ratio.clamp(lo, hi) * a);
            let kl = group.kl_terms.as_ref().map_or(0.0, |k| k[i]);
            if cfg.kl_beta == 0.0 {
                surrogate
            } else {
                surrogate - cfg.kl_beta * kl
            }
        })
        .collect();
    let mean = if n == 0 { 0.0 } else { terms.iter().sum::<f64>() / n as f64 };
    Ok(ObjectiveTerms { terms, mean })
}

/// Indices of the `m/2` smallest and `m/2` largest advantages, ascending.
///
/// Ordering is a stable sort by `(advantage, index)`: among equal
/// advantages the lower indices count as "smaller".
pub fn rest_select(adv: &[f64], select_size: usize) -> Result<Vec<usize>> {
    if !select_size.is_multiple_of(2) || select_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "select size must be even and >= 2, got {select_size}"
        )));
    }
    if adv.len() < select_size {
        return Err(Error::PoolTooSmall {
            pool: adv.len(),
            select: select_size,
        });
    }
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("advantages"));
    }
    let mut order: Vec<usize> = (0..adv.len()).collect();
    order.sort_by(|&a, &b| adv[a].total_cmp(&adv[b]).then(a.cmp(&b)));
    let half = select_size / 2;
    let mut picked: Vec<usize> = order[..half]
        .iter()
        .chain(&order[order.len() - half..])
        .copied()
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adv(r: &[f64]) -> Advantages {
        advantages(&RolloutGroup::from_rewards(r.to_vec()), &GrpoConfig::default()).unwrap()
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(adv(&[0.0, 2.0]).values, vec![-1.0, 1.0]);
        let c = adv(&[3.5; 4]);
        assert_eq!(c.values, vec![0.0; 4]);
        assert!(c.degenerate);
        let a = adv(&[1.0, 2.0, 3.0]).values;
        let s = 1.5f64.sqrt();
        for (x, e) in a.iter().zip([-s, 0.0, s]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_std_mode() {
        let cfg = GrpoConfig {
            std_mode: StdMode::Sample,
            ..Default::default()
        };
        let a = advantages(&RolloutGroup::from_rewards(vec![0.0, 2.0]), &cfg).unwrap();
        let s = 2f64.sqrt();
        assert!((a.values[1] - 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn group_too_small() {
        let g = RolloutGroup::from_rewards(vec![1.0]);
        assert_eq!(advantages(&g, &GrpoConfig::default()), Err(Error::GroupTooSmall(1)));
    }

    fn term(ratio: f64, a: f64) -> f64 {
        let g = RolloutGroup {
            rewards: vec![0.0],
            ratios: Some(vec![ratio]),
            kl_terms: None,
        };
        grpo_objective(&g, &[a], &GrpoConfig::default()).unwrap().terms[0]
    }

    #[test]
    fn objective_examples() {
        assert_eq!(term(1.0, 2.0), 2.0);
        assert!((term(2.0, 1.0) - 1.2).abs() < 1e-15);
        assert!((term(0.5, -1.0) + 0.8).abs() < 1e-15);
        // positive advantage, ratio below the band: unclipped value is smaller
        assert_eq!(term(0.5, 1.0), 0.5);
    }

    #[test]
    fn objective_kl_and_errors() {
        let g = RolloutGroup {
            rewards: vec![0.0, 0.0],
            ratios: Some(vec![1.0, 1.0]),
            kl_terms: Some(vec![0.5, 1.0]),
        };
        let cfg = GrpoConfig {
            kl_beta: 0.1,
            ..Default::default()
        };
        let t = grpo_objective(&g, &[1.0, -1.0], &cfg).unwrap();
        assert!((t.terms[0] - 0.95).abs() < 1e-15);
        assert!((t.terms[1] + 1.1).abs() < 1e-15);
        assert!((t.mean + 0.075).abs() < 1e-15);

        let bare = RolloutGroup::from_rewards(vec![0.0, 1.0]);
        assert_eq!(grpo_objective(&bare, &[0.0, 0.0], &cfg), Err(Error::RatiosRequired));
    }

    #[test]
    fn rest_examples() {
        assert_eq!(rest_select(&[0.9, -0.5, 0.1, 0.2], 2).unwrap(), vec![0, 1]);
        assert_eq!(rest_select(&[0.0; 8], 4).unwrap(), vec![0, 1, 6, 7]);
        assert_eq!(rest_select(&[3.0, 1.0, 2.0, 0.0], 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(rest_select(&[0.0; 3], 4), Err(Error::PoolTooSmall { .. })));
        assert!(rest_select(&[0.0; 4], 3).is_err());
    }

    #[test]
    fn rest_config_validation() {
        assert!(RestConfig::default().validate().is_ok());
        assert!(RestConfig { pool_size: 8, select_size: 3 }.validate().is_err());
        assert!(RestConfig { pool_size: 8, select_size: 10 }.validate().is_err());
    }
}
