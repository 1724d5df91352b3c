//! gIoU (mean per-sample IoU) and cIoU (cumulative intersection over
//! cumulative union), overall and per reasoning type.
//!
//! No-target convention: a sample whose ground truth is empty scores IoU 1
//! when the prediction is an explicit no-target (or an empty mask) and 0
//! otherwise. A no-target prediction on a sample with a target scores 0.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mask;

pub const NO_TARGET_CONVENTION: &str =
    "empty ground truth scores IoU 1 for a no-target (empty) prediction, 0 otherwise";

/// Reasoning categories, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReasoningType {
    #[serde(rename = "PF")]
    PurposeFunctional,
    #[serde(rename = "CKI")]
    ContextualKnowledge,
    #[serde(rename = "CR")]
    ComparativeRelational,
    #[serde(rename = "CMH")]
    CompositionalMultiHop,
    #[serde(rename = "none")]
    Untyped,
}

impl ReasoningType {
    pub const ALL: [ReasoningType; 5] = [
        Self::PurposeFunctional,
        Self::ContextualKnowledge,
        Self::ComparativeRelational,
        Self::CompositionalMultiHop,
        Self::Untyped,
    ];

    /// Column header used in the text table.
    pub fn header(&self) -> &'static str {
        match self {
            Self::PurposeFunctional => "P/F",
            Self::ContextualKnowledge => "C/KI",
            Self::ComparativeRelational => "C/R",
            Self::CompositionalMultiHop => "C/MH",
            Self::Untyped => "none",
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub sample_id: String,
    pub reasoning_type: ReasoningType,
    pub gt_mask: Mask,
    pub pred_mask: Mask,
    pub pred_is_no_target: bool,
}

impl EvalSample {
    /// `(|pred ∩ gt|, |pred ∪ gt|)`; a no-target prediction counts as empty.
    pub fn intersection_union(&self) -> Result<(u64, u64)> {
        if self.pred_is_no_target {
            if self.pred_mask.dims() != self.gt_mask.dims() {
                return Err(Error::DimsMismatch(self.gt_mask.dims(), self.pred_mask.dims()));
            }
            return Ok((0, self.gt_mask.area()));
        }
        self.gt_mask.intersection_union(&self.pred_mask)
    }

    pub fn iou(&self) -> Result<f64> {
        let (i, u) = self.intersection_union()?;
        Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
    }
}

pub fn giou(samples: &[EvalSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for s in samples {
        sum += s.iou()?;
    }
    Ok(sum / samples.len() as f64)
}

pub fn ciou(samples: &[EvalSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for s in samples {
        let (i, u) = s.intersection_union()?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub giou: f64,
    pub ciou: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub no_target_convention: String,
    pub overall: Option<MetricPair>,
    /// Only types present in the input.
    pub per_type: BTreeMap<ReasoningType, MetricPair>,
}

fn pair(samples: &[EvalSample]) -> Result<MetricPair> {
    Ok(MetricPair {
        giou: giou(samples)?,
        ciou: ciou(samples)?,
        count: samples.len(),
    })
}

pub fn report(samples: &[EvalSample]) -> Result<EvalReport> {
    let overall = if samples.is_empty() { None } else { Some(pair(samples)?) };
    let mut buckets: BTreeMap<ReasoningType, Vec<EvalSample>> = BTreeMap::new();
    for s in samples {
        buckets.entry(s.reasoning_type).or_default().push(s.clone());
    }
    let per_type = buckets
        .into_iter()
        .map(|(t, v)| pair(&v).map(|p| (t, p)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        no_target_convention: NO_TARGET_CONVENTION.to_string(),
        overall,
        per_type,
    })
}

impl EvalReport {
    /// Aligned text table: one row per metric, columns `overall` then the
    /// present reasoning types; values in percent.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, MetricPair)> = Vec::new();
        if let Some(o) = self.overall {
            cols.push(("overall".into(), o));
        }
        cols.extend(self.per_type.iter().map(|(t, p)| (t.header().to_string(), *p)));
        let mut out = format!("# no-target convention: {}\n", self.no_target_convention);
        out.push_str(&format!("{:<6}", "metric"));
        for (h, _) in &cols {
            out.push_str(&format!(" {h:>8}"));
        }
        out.push('\n');
        let rows: [(&str, fn(&MetricPair) -> String); 3] = [
            ("gIoU", |p| format!("{:.2}", p.giou * 100.0)),
            ("cIoU", |p| format!("{:.2}", p.ciou * 100.0)),
            ("n", |p| p.count.to_string()),
        ];
        for (name, f) in rows {
            out.push_str(&format!("{name:<6}"));
            for (_, p) in &cols {
                out.push_str(&format!(" {:>8}", f(p)));
            }
            out.push('\n');
        }
        out
    }
}
