//! Structured response handling: `<think>…</think><answer>[…]</answer>`.
//!
//! The answer body is a JSON array of objects with the keys `"label"`,
//! `"bbox_2d"` (four integers) and `"point_2d"` (two integers). Parsing
//! accepts the keys in any order; serialization writes the canonical form
//!
//! ```text
//! <think>…</think>
//! <answer>[{"label": "chair", "bbox_2d": [10,100,200,210], "point_2d": [30,110]}]</answer>
//! ```
//!
//! with the label moved last under [`LabelOrder::LabelLast`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::{BBox, ImageDims, Point};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub bbox: BBox,
    pub point: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOrder {
    #[default]
    LabelFirst,
    LabelLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingThink,
    MissingAnswer,
    DuplicateTag,
    TagOrder,
    BadJson,
    BadArity,
    OutOfBounds,
    InvertedBox,
    PointOutsideBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

fn fail(kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
    ParseError {
        kind,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    /// Serialization order; parsing itself is order-agnostic.
    pub order: LabelOrder,
    /// Clamp out-of-frame coordinates (recording `clamped`) instead of failing.
    pub clamp: bool,
    pub strict_point_in_box: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            order: LabelOrder::LabelFirst,
            clamp: true,
            strict_point_in_box: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Raw text between the think tags; empty when the block is missing.
    pub think_text: String,
    pub predictions: Vec<Prediction>,
    pub is_empty_answer: bool,
    pub parse_ok: bool,
    pub parse_error: Option<ParseError>,
    /// Some coordinate was moved into the frame.
    pub clamped: bool,
}

impl ParsedResponse {
    fn failed(think_text: String, err: ParseError) -> Self {
        Self {
            think_text,
            predictions: Vec::new(),
            is_empty_answer: false,
            parse_ok: false,
            parse_error: Some(err),
            clamped: false,
        }
    }
}

/// Locate the single `open…close` block. `Ok(None)` when neither tag occurs.
fn find_block<'a>(
    text: &'a str,
    open: &str,
    close: &str,
) -> Result<Option<(usize, &'a str, usize)>, ParseErrorKind> {
    let opens = text.matches(open).count();
    let closes = text.matches(close).count();
    if opens == 0 && closes == 0 {
        return Ok(None);
    }
    if opens > 1 || closes > 1 {
        return Err(ParseErrorKind::DuplicateTag);
    }
    let (Some(start), Some(end)) = (text.find(open), text.find(close)) else {
        return Ok(None);
    };
    let body_start = start + open.len();
    if end < body_start {
        return Err(ParseErrorKind::TagOrder);
    }
    Ok(Some((start, &text[body_start..end], end + close.len())))
}

fn think_block(text: &str) -> Result<Option<(usize, &str, usize)>, ParseErrorKind> {
    find_block(text, THINK_OPEN, THINK_CLOSE)
}

fn int_array(v: &Value, key: &str, arity: usize) -> Result<Vec<i64>, ParseError> {
    let arr = v
        .as_array()
        .ok_or_else(|| fail(ParseErrorKind::BadJson, format!("\"{key}\" is not an array")))?;
    if arr.len() != arity {
        return Err(fail(
            ParseErrorKind::BadArity,
            format!("\"{key}\" has {} values, expected {arity}", arr.len()),
        ));
    }
    arr.iter()
        .map(|x| {
            x.as_i64().ok_or_else(|| {
                fail(
                    ParseErrorKind::BadJson,
                    format!("\"{key}\" contains non-integer {x}"),
                )
            })
        })
        .collect()
}

fn parse_prediction(
    obj: &Value,
    index: usize,
    dims: ImageDims,
    opts: &ParseOptions,
    clamped: &mut bool,
) -> Result<Prediction, ParseError> {
    let map = obj.as_object().ok_or_else(|| {
        fail(ParseErrorKind::BadJson, format!("answer item {index} is not an object"))
    })?;
    let get = |key: &str| {
        map.get(key).ok_or_else(|| {
            fail(ParseErrorKind::BadJson, format!("answer item {index} lacks \"{key}\""))
        })
    };
    let label = get("label")?
        .as_str()
        .ok_or_else(|| fail(ParseErrorKind::BadJson, format!("item {index}: label is not a string")))?
        .to_string();
    let b = int_array(get("bbox_2d")?, "bbox_2d", 4)?;
    let p = int_array(get("point_2d")?, "point_2d", 2)?;

    let bbox = BBox::new(b[0], b[1], b[2], b[3]).map_err(|_| {
        fail(
            ParseErrorKind::InvertedBox,
            format!("item {index}: bbox {b:?} has inverted corners"),
        )
    })?;
    let point = Point::new(p[0], p[1]);
    let (bbox, point) = if dims.contains_box(&bbox) && dims.contains_point(&point) {
        (bbox, point)
    } else if opts.clamp {
        *clamped = true;
        (bbox.clamp_to(dims), point.clamp_to(dims))
    } else {
        return Err(fail(
            ParseErrorKind::OutOfBounds,
            format!("item {index}: coordinates outside {dims}"),
        ));
    };
    if opts.strict_point_in_box && !bbox.contains(&point) {
        return Err(fail(
            ParseErrorKind::PointOutsideBox,
            format!("item {index}: point ({}, {}) outside its bbox", point.x, point.y),
        ));
    }
    Ok(Prediction { label, bbox, point })
}

pub fn parse_response(text: &str, dims: ImageDims, opts: &ParseOptions) -> ParsedResponse {
    let think = match think_block(text) {
        Ok(Some(t)) => t,
        Ok(None) => {
            return ParsedResponse::failed(
                String::new(),
                fail(ParseErrorKind::MissingThink, "no <think> block"),
            )
        }
        Err(kind) => return ParsedResponse::failed(String::new(), fail(kind, "malformed <think> tags")),
    };
    let think_text = think.1.to_string();
    let answer = match find_block(text, ANSWER_OPEN, ANSWER_CLOSE) {
        Ok(Some(a)) => a,
        Ok(None) => {
            return ParsedResponse::failed(
                think_text,
                fail(ParseErrorKind::MissingAnswer, "no <answer> block"),
            )
        }
        Err(kind) => return ParsedResponse::failed(think_text, fail(kind, "malformed <answer> tags")),
    };
    if answer.0 < think.2 {
        return ParsedResponse::failed(
            think_text,
            fail(ParseErrorKind::TagOrder, "<answer> must follow </think>"),
        );
    }

    let value: Value = match serde_json::from_str(answer.1.trim()) {
        Ok(v) => v,
        Err(e) => {
            return ParsedResponse::failed(think_text, fail(ParseErrorKind::BadJson, e.to_string()))
        }
    };
    let Some(items) = value.as_array() else {
        return ParsedResponse::failed(
            think_text,
            fail(ParseErrorKind::BadJson, "answer is not a JSON array"),
        );
    };
    let mut clamped = false;
    let mut predictions = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        match parse_prediction(item, i, dims, opts, &mut clamped) {
            Ok(p) => predictions.push(p),
            Err(e) => return ParsedResponse::failed(think_text, e),
        }
    }
    ParsedResponse {
        think_text,
        is_empty_answer: predictions.is_empty(),
        predictions,
        parse_ok: true,
        parse_error: None,
        clamped,
    }
}

fn write_prediction(out: &mut String, p: &Prediction, order: LabelOrder) {
    let label = serde_json::to_string(&p.label).expect("string serializes");
    let [x1, y1, x2, y2] = p.bbox.coords();
    let coords = format!(
        "\"bbox_2d\": [{x1},{y1},{x2},{y2}], \"point_2d\": [{},{}]",
        p.point.x, p.point.y
    );
    match order {
        LabelOrder::LabelFirst => out.push_str(&format!("{{\"label\": {label}, {coords}}}")),
        LabelOrder::LabelLast => out.push_str(&format!("{{{coords}, \"label\": {label}}}")),
    }
}

/// Canonical answer JSON: `", "` between members and items, no spaces inside
/// coordinate arrays.
pub fn serialize_answer(preds: &[Prediction], order: LabelOrder) -> String {
    let mut out = String::from("[");
    for (i, p) in preds.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_prediction(&mut out, p, order);
    }
    out.push(']');
    out
}

pub fn serialize_response(think: &str, preds: &[Prediction], order: LabelOrder) -> String {
    format!(
        "{THINK_OPEN}{think}{THINK_CLOSE}\n{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        serialize_answer(preds, order)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatRewards {
    pub thinking: u8,
    pub answer: u8,
    pub non_repeat: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    /// A sentence occurring this many times in the think text fails the
    /// non-repeat check.
    pub repeat_threshold: usize,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self { repeat_threshold: 3 }
    }
}

/// Sentences are maximal runs ending at `.`, `!`, `?` or a newline, trimmed;
/// empty fragments are ignored.
pub fn max_sentence_repeats(text: &str) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in text.split(['.', '!', '?', '\n']) {
        let s = s.trim();
        if !s.is_empty() {
            *counts.entry(s).or_default() += 1;
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

pub fn format_rewards(text: &str, parsed: &ParsedResponse) -> FormatRewards {
    format_rewards_with(text, parsed, &FormatConfig::default())
}

pub fn format_rewards_with(text: &str, parsed: &ParsedResponse, cfg: &FormatConfig) -> FormatRewards {
    let think = think_block(text).ok().flatten();
    let thinking = think.is_some_and(|(_, body, _)| !body.trim().is_empty());
    let non_repeat = think.is_none_or(|(_, body, _)| max_sentence_repeats(body) < cfg.repeat_threshold);
    FormatRewards {
        thinking: thinking as u8,
        answer: parsed.parse_ok as u8,
        non_repeat: non_repeat as u8,
    }
}
