//! Synthetic rollout simulator.
//!
//! Stands in for the reasoning model and the mask generator so the reward,
//! advantage and voting machinery can be exercised end to end. Scenes are
//! procedurally generated rectangles and ellipses. A seeded noisy predictor
//! writes structured responses, and a mask stub turns each predicted
//! box/point into a few noisy mask hypotheses with quality scores.
//!
//! Random streams are keyed by `(seed, scene id, rollout index)`, so a group
//! of `n` rollouts is always a prefix of the group of `n' > n` rollouts.

mod experiments;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_iou, mask_union, BBox, ImageDims, Mask, Point};
use crate::response::{parse_response, serialize_response, LabelOrder, ParseOptions, ParsedResponse, Prediction};
use crate::reward::GtInstance;
use crate::voting::{build_pool, CandidateMask};

pub use experiments::{
    config_hash, evaluate_rollout, rest_experiment, voting_experiment, zero_variance_experiment, ExperimentConfig,
    ExperimentReport, RestRow, RolloutOutcome, VotingRow, ZeroVarianceRow,
};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, key: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(key)));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub dims: ImageDims,
    pub gts: Vec<GtInstance>,
    pub difficulty: f64,
}

impl Scene {
    /// Union of all GT masks; empty for a no-target scene.
    pub fn target_mask(&self) -> Mask {
        let masks: Vec<Mask> = self.gts.iter().map(|g| g.mask().clone()).collect();
        mask_union(&masks).unwrap_or_else(|_| Mask::empty(self.dims))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSuiteConfig {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub difficulty_min: f64,
    pub difficulty_max: f64,
}

impl Default for SceneSuiteConfig {
    fn default() -> Self {
        Self {
            count: 100,
            width: 64,
            height: 64,
            min_objects: 1,
            max_objects: 3,
            min_size: 12,
            max_size: 24,
            difficulty_min: 0.0,
            difficulty_max: 1.0,
        }
    }
}

impl SceneSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width >= 1
            && self.height >= 1
            && self.min_objects <= self.max_objects
            && 2 <= self.min_size
            && self.min_size <= self.max_size
            && self.max_size <= self.width.min(self.height)
            && (0.0..=1.0).contains(&self.difficulty_min)
            && (0.0..=1.0).contains(&self.difficulty_max)
            && self.difficulty_min <= self.difficulty_max;
        if !ok {
            return Err(Error::InvalidConfig("inconsistent scene suite configuration".into()));
        }
        Ok(())
    }
}

fn ellipse(dims: ImageDims, x0: u32, y0: u32, w: u32, h: u32) -> Mask {
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    let (cx, cy) = (x0 as f64 + rx, y0 as f64 + ry);
    Mask::from_fn(dims, |x, y| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

/// Deterministic scene suite; scene `i` depends only on `(seed, i)`.
pub fn generate_scenes(cfg: &SceneSuiteConfig, seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let dims = ImageDims::new(cfg.width, cfg.height)?;
    (0..cfg.count as u64)
        .map(|id| {
            let mut rng = stream_rng(seed, 0x5CE7E, id);
            let difficulty = if cfg.difficulty_max > cfg.difficulty_min {
                rng.random_range(cfg.difficulty_min..=cfg.difficulty_max)
            } else {
                cfg.difficulty_min
            };
            let wanted = rng.random_range(cfg.min_objects..=cfg.max_objects);
            let mut occupied = Mask::empty(dims);
            let mut gts = Vec::with_capacity(wanted);
            for _ in 0..wanted {
                for _attempt in 0..100 {
                    let w = rng.random_range(cfg.min_size..=cfg.max_size);
                    let h = rng.random_range(cfg.min_size..=cfg.max_size);
                    let x0 = rng.random_range(0..=cfg.width - w);
                    let y0 = rng.random_range(0..=cfg.height - h);
                    let rect = BBox::new(x0 as i64, y0 as i64, (x0 + w) as i64, (y0 + h) as i64)?;
                    // keep a one-pixel gap between objects
                    let halo = BBox::new(rect.x1() - 1, rect.y1() - 1, rect.x2() + 1, rect.y2() + 1)?.rasterize(dims);
                    if occupied.intersection_union(&halo)?.0 > 0 {
                        continue;
                    }
                    let mask = if rng.random_bool(0.5) {
                        rect.rasterize(dims)
                    } else {
                        ellipse(dims, x0, y0, w, h)
                    };
                    occupied.union_with(&rect.rasterize(dims))?;
                    gts.push(GtInstance::from_mask(mask)?);
                    break;
                }
            }
            Ok(Scene {
                id,
                dims,
                gts,
                difficulty,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Per-instance detection probability at difficulty 0; scaled by
    /// `1 - difficulty`.
    pub hit_prob: f64,
    /// Gaussian jitter on box corners and points, scaled by `1 + difficulty`.
    pub coord_noise_sigma: f64,
    /// Poisson mean of extra predictions at random locations.
    pub spurious_rate: f64,
    pub parse_fail_prob: f64,
    /// Calibrated mode: each rollout independently reproduces the ground
    /// truth exactly with this probability and otherwise answers `[]`.
    pub success_prob: Option<f64>,
    pub label_order: LabelOrder,
    /// Taken from [`ExperimentConfig::seed`] when run as an experiment.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hit_prob: 0.85,
            coord_noise_sigma: 2.0,
            spurious_rate: 0.3,
            parse_fail_prob: 0.05,
            success_prob: None,
            label_order: LabelOrder::LabelFirst,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn noiseless() -> Self {
        Self {
            hit_prob: 1.0,
            coord_noise_sigma: 0.0,
            spurious_rate: 0.0,
            parse_fail_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = prob(self.hit_prob)
            && prob(self.parse_fail_prob)
            && self.success_prob.is_none_or(prob)
            && self.coord_noise_sigma >= 0.0
            && self.spurious_rate >= 0.0
            && self.coord_noise_sigma.is_finite()
            && self.spurious_rate.is_finite();
        if !ok {
            return Err(Error::InvalidConfig("predictor probabilities must lie in [0, 1] and noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskStubConfig {
    /// Width in pixels of the band around the object boundary whose pixels
    /// may flip.
    pub boundary_erosion_noise: u32,
    /// Upper bound of the per-hypothesis flip probability inside the band.
    pub max_flip_prob: f64,
    pub quality_noise_sigma: f64,
    /// Mask hypotheses per prompt; the best-scoring one is kept.
    pub hypotheses: usize,
}

impl Default for MaskStubConfig {
    fn default() -> Self {
        Self {
            boundary_erosion_noise: 1,
            max_flip_prob: 0.3,
            quality_noise_sigma: 0.02,
            hypotheses: 3,
        }
    }
}

impl MaskStubConfig {
    pub fn noiseless() -> Self {
        Self {
            boundary_erosion_noise: 0,
            max_flip_prob: 0.0,
            quality_noise_sigma: 0.0,
            hypotheses: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_flip_prob) || !(self.quality_noise_sigma >= 0.0) || self.hypotheses == 0 {
            return Err(Error::InvalidConfig("mask stub noise must be non-negative with at least one hypothesis".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox, sigma: f64, dims: ImageDims) -> BBox {
    let mut c = b.coords().map(|v| v + gaussian(rng, sigma).round() as i64);
    if c[0] > c[2] {
        c.swap(0, 2);
    }
    if c[1] > c[3] {
        c.swap(1, 3);
    }
    BBox::new(c[0], c[1], c[2], c[3]).expect("ordered").clamp_to(dims)
}

fn random_box(rng: &mut ChaCha8Rng, dims: ImageDims) -> BBox {
    let max_w = (dims.width / 3).max(1);
    let max_h = (dims.height / 3).max(1);
    let w = rng.random_range(1..=max_w);
    let h = rng.random_range(1..=max_h);
    let x = rng.random_range(0..=dims.width - w);
    let y = rng.random_range(0..=dims.height - h);
    BBox::new(x as i64, y as i64, (x + w) as i64, (y + h) as i64).expect("ordered")
}

fn think_text(preds: &[Prediction]) -> String {
    let mut t = format!("The query matches {} object(s) in the image.", preds.len());
    for (i, p) in preds.iter().enumerate() {
        let [x1, y1, x2, y2] = p.bbox.coords();
        t.push_str(&format!(" Candidate {} spans ({x1}, {y1}) to ({x2}, {y2}).", i + 1));
    }
    t
}

fn predict(scene: &Scene, cfg: &PredictorConfig, rng: &mut ChaCha8Rng) -> Vec<Prediction> {
    let dims = scene.dims;
    let exact = |g: &GtInstance| Prediction {
        label: "target".into(),
        bbox: *g.bbox(),
        point: *g.point(),
    };
    if let Some(p) = cfg.success_prob {
        return if rng.random_bool(p) {
            scene.gts.iter().map(exact).collect()
        } else {
            Vec::new()
        };
    }
    let hit = (cfg.hit_prob * (1.0 - scene.difficulty)).clamp(0.0, 1.0);
    let sigma = cfg.coord_noise_sigma * (1.0 + scene.difficulty);
    let mut preds = Vec::new();
    for g in &scene.gts {
        if !rng.random_bool(hit) {
            continue;
        }
        let bbox = jitter_box(rng, g.bbox(), sigma, dims);
        let p = g.point();
        let point = Point::new(
            p.x + gaussian(rng, sigma).round() as i64,
            p.y + gaussian(rng, sigma).round() as i64,
        )
        .clamp_to(dims);
        preds.push(Prediction {
            label: "target".into(),
            bbox,
            point,
        });
    }
    let extra = if cfg.spurious_rate > 0.0 {
        Poisson::new(cfg.spurious_rate).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..extra {
        let bbox = random_box(rng, dims);
        let point = Point::new((bbox.x1() + bbox.x2()) / 2, (bbox.y1() + bbox.y2()) / 2).clamp_to(dims);
        preds.push(Prediction {
            label: "distractor".into(),
            bbox,
            point,
        });
    }
    // Fisher-Yates so matching sees predictions in arbitrary order
    for i in (1..preds.len()).rev() {
        let j = rng.random_range(0..=i);
        preds.swap(i, j);
    }
    preds
}

fn erode(m: &Mask) -> Mask {
    let d = m.dims();
    Mask::from_fn(d, |x, y| {
        m.get(x, y)
            && x > 0
            && y > 0
            && x + 1 < d.width
            && y + 1 < d.height
            && m.get(x - 1, y)
            && m.get(x + 1, y)
            && m.get(x, y - 1)
            && m.get(x, y + 1)
    })
}

fn dilate(m: &Mask) -> Mask {
    let d = m.dims();
    Mask::from_fn(d, |x, y| {
        m.get(x, y)
            || (x > 0 && m.get(x - 1, y))
            || (x + 1 < d.width && m.get(x + 1, y))
            || (y > 0 && m.get(x, y - 1))
            || (y + 1 < d.height && m.get(x, y + 1))
    })
}

/// Mask-generator stand-in. The clean mask is the GT object under the
/// prompt point clipped to the prompt box, or the rasterized box when the
/// point hits background. Each hypothesis flips pixels in a band around the
/// clean boundary; its quality is its IoU with the clean mask plus jitter.
pub fn mask_hypotheses(scene: &Scene, pred: &Prediction, cfg: &MaskStubConfig, rng: &mut ChaCha8Rng) -> Vec<(Mask, f64)> {
    let dims = scene.dims;
    let boxed = pred.bbox.rasterize(dims);
    let hit = scene
        .gts
        .iter()
        .find(|g| g.mask().get(pred.point.x as u32, pred.point.y as u32));
    let clean = match hit {
        Some(g) => {
            let mut m = g.mask().clone();
            m.intersect_with(&boxed).expect("same dims");
            m
        }
        None => boxed,
    };
    let band = if cfg.boundary_erosion_noise == 0 || cfg.max_flip_prob == 0.0 {
        None
    } else {
        let (mut inner, mut outer) = (clean.clone(), clean.clone());
        for _ in 0..cfg.boundary_erosion_noise {
            inner = erode(&inner);
            outer = dilate(&outer);
        }
        let band: Vec<(u32, u32)> = outer.iter_set().filter(|&(x, y)| !inner.get(x, y)).collect();
        Some(band)
    };
    (0..cfg.hypotheses)
        .map(|_| {
            let mut m = clean.clone();
            if let Some(band) = &band {
                let flip = rng.random_range(0.0..=cfg.max_flip_prob);
                for &(x, y) in band {
                    if rng.random_bool(flip) {
                        m.set(x, y, !clean.get(x, y));
                    }
                }
            }
            let q = mask_iou(&m, &clean).expect("same dims") + gaussian(rng, cfg.quality_noise_sigma);
            (m, q)
        })
        .collect()
}

/// One simulated response and its pooled candidate masks (one per
/// prediction, best hypothesis kept).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledRollout {
    pub text: String,
    pub candidates: Vec<CandidateMask>,
}

impl SampledRollout {
    /// Masks aligned with the parsed predictions.
    pub fn masks(&self) -> Vec<Mask> {
        self.candidates.iter().map(|c| c.mask.clone()).collect()
    }

    pub fn parse(&self, dims: ImageDims) -> ParsedResponse {
        parse_response(&self.text, dims, &ParseOptions::default())
    }
}

pub fn sample_rollout(scene: &Scene, pcfg: &PredictorConfig, mcfg: &MaskStubConfig, rollout_index: u64) -> SampledRollout {
    let mut rng = stream_rng(pcfg.seed, scene.id, rollout_index);
    let fail = rng.random_bool(pcfg.parse_fail_prob);
    let preds = predict(scene, pcfg, &mut rng);
    let text = serialize_response(&think_text(&preds), &preds, pcfg.label_order);
    if fail {
        let broken = text.strip_suffix("</answer>").unwrap_or(&text).to_string();
        return SampledRollout {
            text: broken,
            candidates: Vec::new(),
        };
    }
    let hypotheses = preds.iter().map(|p| mask_hypotheses(scene, p, mcfg, &mut rng)).collect();
    SampledRollout {
        text,
        candidates: build_pool(rollout_index as usize, hypotheses),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{score_rollout, RewardConfig};
    use crate::response::format_rewards;

    fn suite(count: usize) -> Vec<Scene> {
        let cfg = SceneSuiteConfig {
            count,
            difficulty_min: 0.0,
            difficulty_max: 0.0,
            ..Default::default()
        };
        generate_scenes(&cfg, 3).unwrap()
    }

    #[test]
    fn scenes_are_deterministic_and_valid() {
        let a = suite(20);
        let b = suite(20);
        assert_eq!(a, b);
        for s in &a {
            assert!(!s.gts.is_empty() && s.gts.len() <= 3);
            for (i, g) in s.gts.iter().enumerate() {
                for h in &s.gts[i + 1..] {
                    assert_eq!(g.mask().intersection_union(h.mask()).unwrap().0, 0);
                }
            }
        }
        // prefix stability
        assert_eq!(suite(5)[..], a[..5]);
    }

    #[test]
    fn noiseless_rollout_reproduces_gt() {
        for scene in suite(10) {
            let r = sample_rollout(&scene, &PredictorConfig::noiseless(), &MaskStubConfig::noiseless(), 0);
            let parsed = r.parse(scene.dims);
            assert!(parsed.parse_ok);
            let b = score_rollout(&parsed, format_rewards(&r.text, &parsed), &scene.gts, &r.masks(), &RewardConfig::default()).unwrap();
            assert!((b.accuracy_total - 4.0).abs() < 1e-12, "{b:?}");
            assert_eq!(b.total, 7.0);
        }
    }

    #[test]
    fn forced_parse_failure() {
        let pcfg = PredictorConfig {
            parse_fail_prob: 1.0,
            ..Default::default()
        };
        for scene in suite(5) {
            for k in 0..4 {
                let r = sample_rollout(&scene, &pcfg, &MaskStubConfig::default(), k);
                let parsed = r.parse(scene.dims);
                assert!(!parsed.parse_ok);
                assert_eq!(format_rewards(&r.text, &parsed).answer, 0);
                assert!(r.candidates.is_empty());
            }
        }
    }

    #[test]
    fn seeded_rollouts_are_identical() {
        let scene = &suite(1)[0];
        let pcfg = PredictorConfig {
            seed: 11,
            ..Default::default()
        };
        let a = sample_rollout(scene, &pcfg, &MaskStubConfig::default(), 4);
        let b = sample_rollout(scene, &pcfg, &MaskStubConfig::default(), 4);
        assert_eq!(a, b);
        let c = sample_rollout(scene, &pcfg, &MaskStubConfig::default(), 5);
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn stub_quality_tracks_noise() {
        let scene = &suite(1)[0];
        let g = &scene.gts[0];
        let pred = Prediction {
            label: "t".into(),
            bbox: *g.bbox(),
            point: *g.point(),
        };
        let mut rng = stream_rng(1, 2, 3);
        let hs = mask_hypotheses(scene, &pred, &MaskStubConfig::default(), &mut rng);
        assert_eq!(hs.len(), 3);
        for (m, q) in &hs {
            let iou = mask_iou(m, g.mask()).unwrap();
            assert!((q - iou).abs() < 0.15);
            assert!(iou > 0.6);
        }
        let clean = mask_hypotheses(scene, &pred, &MaskStubConfig::noiseless(), &mut rng);
        assert_eq!(&clean[0].0, g.mask());
    }

    #[test]
    fn background_prompt_rasterizes_box() {
        let scene = &suite(1)[0];
        let occupied = scene.target_mask();
        let (x, y) = (0..scene.dims.height)
            .flat_map(|y| (0..scene.dims.width).map(move |x| (x, y)))
            .find(|&(x, y)| !occupied.get(x, y))
            .unwrap();
        let bbox = BBox::new(x as i64, y as i64, x as i64 + 1, y as i64 + 1).unwrap();
        let pred = Prediction {
            label: "d".into(),
            bbox,
            point: Point::new(x as i64, y as i64),
        };
        let mut rng = stream_rng(0, 0, 0);
        let hs = mask_hypotheses(scene, &pred, &MaskStubConfig::noiseless(), &mut rng);
        assert_eq!(hs[0].0, bbox.rasterize(scene.dims));
    }

    #[test]
    fn config_validation() {
        assert!(PredictorConfig {
            hit_prob: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MaskStubConfig {
            hypotheses: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SceneSuiteConfig {
            max_size: 100,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn morphology() {
        let d = ImageDims::new(6, 6).unwrap();
        let sq = BBox::new(1, 1, 5, 5).unwrap().rasterize(d);
        assert_eq!(erode(&sq), BBox::new(2, 2, 4, 4).unwrap().rasterize(d));
        assert_eq!(dilate(&sq).area(), 16 + 16);
    }
}
