//! Command-line surface. Every subcommand is a thin wrapper over a `run_*`
//! function that maps input text to output text, so the binary and the
//! library produce the same bytes.
//!
//! All JSONL records carry `"schema": "v1"`. Exit codes: 0 success,
//! 1 internal error, 2 input error.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{ImageDims, Mask, RleMask};
use crate::grpo::{advantages, grpo_objective, rest_select, GrpoConfig, ObjectiveTerms, RestConfig, RolloutGroup};
use crate::metrics::{report, EvalSample, ReasoningType};
use crate::response::{format_rewards_with, parse_response, ParseOptions, ParsedResponse};
use crate::reward::{score_rollout, GtInstance, RewardBreakdown, RewardConfig};
use crate::sim::{ExperimentConfig, ExperimentReport};
use crate::voting::{aggregate_summaries, CandidateMask, ResponseSummary, SelectedCluster, TargetDecision, VotingConfig};

pub const SCHEMA: &str = "v1";
pub const SEED_ENV: &str = "RLVRSEG_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rlvrseg", version, about = "Verifiable rewards, GRPO advantages, mask voting and evaluation for reasoning segmentation")]
pub struct CliConfig {
    /// Pipeline config (TOML) with [parse], [reward], [grpo], [rest] and [voting] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the experiment seed.
    #[arg(long, env = SEED_ENV, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score rollouts against ground truth; one breakdown per rollout.
    Reward {
        #[arg(long)]
        rollouts: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Group-normalized advantages, plus objective terms when ratios are given.
    Advantage {
        #[arg(long)]
        groups: PathBuf,
        /// Also emit REST indices selecting this many rollouts per group.
        #[arg(long, value_name = "M")]
        rest: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Majority vote over pooled candidate masks.
    Vote {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        /// Frame size for parsing; inferred from the pool when omitted.
        #[arg(long, requires = "height")]
        width: Option<u32>,
        #[arg(long, requires = "width")]
        height: Option<u32>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// gIoU / cIoU report; JSON to --out (or stdout), table to --table (or stderr).
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Run the simulator experiments and write CSV + JSON tables.
    Simulate {
        /// Experiment config (TOML); defaults when omitted.
        #[arg(long)]
        experiment: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write gnuplot .dat files.
        #[arg(long)]
        gnuplot: bool,
    },
}

/// Settings shared by the record-processing subcommands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub parse: ParseOptions,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub rest: RestConfig,
    pub voting: VotingConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.grpo.validate()?;
        self.rest.validate()?;
        self.voting.validate()
    }
}

pub fn experiment_from_toml(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Output of a per-record subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub output: String,
    pub records: usize,
    pub failed: usize,
}

impl Batch {
    pub fn all_failed(&self) -> bool {
        self.records > 0 && self.failed == self.records
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn check_schema(v: &Value) -> Result<()> {
    match v.get("schema") {
        None => Ok(()),
        Some(Value::String(s)) if s == SCHEMA => Ok(()),
        Some(other) => Err(Error::Parse(format!("unsupported schema {other}"))),
    }
}

fn decode<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T> {
    let v: Value = serde_json::from_str(line)?;
    check_schema(&v)?;
    Ok(serde_json::from_value(v)?)
}

fn at_line(line: usize, e: Error) -> Error {
    Error::Parse(format!("line {line}: {e}"))
}

fn push_json<T: Serialize>(out: &mut String, v: &T) {
    out.push_str(&serde_json::to_string(v).expect("serializable"));
    out.push('\n');
}

#[derive(Debug, Deserialize)]
struct GtRecord {
    id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    instances: Vec<RleMask>,
}

#[derive(Debug, Deserialize)]
struct RolloutRecord {
    id: String,
    text: String,
    /// One mask per prediction; box rasters are used when absent.
    masks: Option<Vec<RleMask>>,
}

#[derive(Debug, Serialize)]
struct RewardOut<'a> {
    schema: &'static str,
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    breakdown: Option<RewardBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn load_gts(text: &str) -> Result<HashMap<String, (ImageDims, Vec<GtInstance>)>> {
    let mut gts = HashMap::new();
    for (line, l) in records(text) {
        let rec: GtRecord = decode(l).map_err(|e| at_line(line, e))?;
        let dims = ImageDims::new(rec.width, rec.height).map_err(|e| at_line(line, e))?;
        let mut instances = Vec::with_capacity(rec.instances.len());
        for rle in &rec.instances {
            if rle.dims != dims {
                return Err(at_line(line, Error::DimsMismatch(dims, rle.dims)));
            }
            let inst = rle.decode().and_then(GtInstance::from_mask).map_err(|e| at_line(line, e))?;
            instances.push(inst);
        }
        if gts.insert(rec.id.clone(), (dims, instances)).is_some() {
            return Err(at_line(line, Error::Parse(format!("duplicate ground-truth id {:?}", rec.id))));
        }
    }
    Ok(gts)
}

fn score_record(rec: &RolloutRecord, dims: ImageDims, gts: &[GtInstance], cfg: &PipelineConfig) -> Result<RewardBreakdown> {
    let parsed = parse_response(&rec.text, dims, &cfg.parse);
    let format = format_rewards_with(&rec.text, &parsed, &cfg.reward.format);
    let masks: Vec<Mask> = match (&rec.masks, parsed.parse_ok) {
        (_, false) => Vec::new(),
        (Some(rles), true) => rles.iter().map(RleMask::decode).collect::<Result<_>>()?,
        (None, true) => parsed.predictions.iter().map(|p| p.bbox.rasterize(dims)).collect(),
    };
    score_rollout(&parsed, format, gts, &masks, &cfg.reward)
}

/// Rollout ids missing from the ground truth are an input error for the whole
/// batch; other malformed records become per-record error entries.
pub fn run_reward(rollouts: &str, gts: &str, cfg: &PipelineConfig) -> Result<Batch> {
    let gts = load_gts(gts)?;
    let mut parsed = Vec::new();
    for (line, l) in records(rollouts) {
        let rec = decode::<RolloutRecord>(l);
        if let Ok(r) = &rec {
            if !gts.contains_key(&r.id) {
                return Err(at_line(line, Error::Parse(format!("rollout id {:?} has no ground truth", r.id))));
            }
        }
        parsed.push((line, rec));
    }
    let mut batch = Batch {
        output: String::new(),
        records: parsed.len(),
        failed: 0,
    };
    for (line, rec) in &parsed {
        let (id, result) = match rec {
            Ok(r) => {
                let (dims, inst) = &gts[&r.id];
                (Some(r.id.as_str()), score_record(r, *dims, inst, cfg))
            }
            Err(e) => (None, Err(e.clone())),
        };
        let (breakdown, error) = match result {
            Ok(b) => (Some(b), None),
            Err(e) => {
                batch.failed += 1;
                (None, Some(e.to_string()))
            }
        };
        push_json(
            &mut batch.output,
            &RewardOut {
                schema: SCHEMA,
                line: *line,
                id,
                breakdown,
                error,
            },
        );
    }
    Ok(batch)
}

#[derive(Debug, Serialize)]
struct AdvantageOut {
    schema: &'static str,
    line: usize,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    group: Option<RolloutGroup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantages: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degenerate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<ObjectiveTerms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rest: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn advantage_record(group: RolloutGroup, line: usize, rest: Option<usize>, cfg: &GrpoConfig) -> Result<AdvantageOut> {
    let adv = advantages(&group, cfg)?;
    let objective = match group.ratios {
        Some(_) => Some(grpo_objective(&group, &adv.values, cfg)?),
        None => None,
    };
    let rest = rest.map(|m| rest_select(&adv.values, m)).transpose()?;
    Ok(AdvantageOut {
        schema: SCHEMA,
        line,
        group: Some(group),
        advantages: Some(adv.values),
        degenerate: Some(adv.degenerate),
        objective,
        rest,
        error: None,
    })
}

pub fn run_advantage(groups: &str, rest: Option<usize>, cfg: &PipelineConfig) -> Result<Batch> {
    cfg.grpo.validate()?;
    let mut batch = Batch {
        output: String::new(),
        records: 0,
        failed: 0,
    };
    for (line, l) in records(groups) {
        batch.records += 1;
        let out = decode::<RolloutGroup>(l).and_then(|g| advantage_record(g, line, rest, &cfg.grpo));
        let out = out.unwrap_or_else(|e| {
            batch.failed += 1;
            AdvantageOut {
                schema: SCHEMA,
                line,
                group: None,
                advantages: None,
                degenerate: None,
                objective: None,
                rest: None,
                error: Some(e.to_string()),
            }
        });
        push_json(&mut batch.output, &out);
    }
    Ok(batch)
}

#[derive(Debug, Deserialize)]
struct ResponseRecord {
    response_id: usize,
    text: String,
}

#[derive(Debug, Deserialize)]
struct PoolRecord {
    response_id: usize,
    pred_index: usize,
    quality: f64,
    mask: RleMask,
}

#[derive(Debug, Serialize)]
struct Member {
    response_id: usize,
    pred_index: usize,
    quality: f64,
}

#[derive(Debug, Serialize)]
struct ClusterOut {
    #[serde(flatten)]
    selected: SelectedCluster,
    members: Vec<Member>,
}

#[derive(Debug, Serialize)]
struct VoteOut {
    schema: &'static str,
    decision: &'static str,
    n_valid: usize,
    target: TargetDecision,
    reverted_to_unfiltered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<RleMask>,
    clusters: Vec<ClusterOut>,
}

/// Responses are parsed against `dims`, or the frame of the first pooled mask.
pub fn run_vote(responses: &str, pool: &str, dims: Option<ImageDims>, cfg: &PipelineConfig) -> Result<String> {
    cfg.voting.validate()?;
    let mut candidates = Vec::new();
    for (line, l) in records(pool) {
        let r: PoolRecord = decode(l).map_err(|e| at_line(line, e))?;
        candidates.push(CandidateMask {
            response_id: r.response_id,
            source_pred_index: r.pred_index,
            quality: r.quality,
            mask: r.mask.decode().map_err(|e| at_line(line, e))?,
        });
    }
    let dims = dims.or_else(|| candidates.first().map(|c| c.mask.dims()));
    let mut summaries = Vec::new();
    for (line, l) in records(responses) {
        let r: ResponseRecord = decode(l).map_err(|e| at_line(line, e))?;
        let parsed = match dims {
            Some(d) => parse_response(&r.text, d, &cfg.parse),
            None => return Err(Error::InvalidConfig("frame size unknown: pass --width/--height or a non-empty pool".into())),
        };
        if summaries.iter().any(|s: &ResponseSummary| s.response_id == r.response_id) {
            return Err(at_line(line, Error::Parse(format!("duplicate response_id {}", r.response_id))));
        }
        summaries.push(summary(r.response_id, &parsed));
    }
    if summaries.is_empty() {
        return Err(Error::NoValidResponses);
    }
    let result = aggregate_summaries(&summaries, &candidates, &cfg.voting)?;
    let clusters = result
        .selected
        .iter()
        .map(|s| ClusterOut {
            selected: s.clone(),
            members: result.clusters[s.cluster]
                .members
                .iter()
                .map(|c| Member {
                    response_id: c.response_id,
                    pred_index: c.source_pred_index,
                    quality: c.quality,
                })
                .collect(),
        })
        .collect();
    let out = VoteOut {
        schema: SCHEMA,
        decision: if result.is_no_target() { "no_target" } else { "mask" },
        n_valid: result.n_valid,
        target: result.target,
        reverted_to_unfiltered: result.reverted_to_unfiltered,
        mask: result.mask.as_ref().map(RleMask::from),
        clusters,
    };
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}

fn summary(response_id: usize, p: &ParsedResponse) -> ResponseSummary {
    ResponseSummary {
        response_id,
        parse_ok: p.parse_ok,
        predicted_count: p.predictions.len(),
        is_empty: p.parse_ok && p.is_empty_answer,
    }
}

#[derive(Debug, Deserialize)]
struct EvalRecord {
    sample_id: String,
    #[serde(rename = "type", default = "untyped")]
    reasoning_type: ReasoningType,
    gt: RleMask,
    pred: Option<RleMask>,
    #[serde(default)]
    no_target: bool,
}

fn untyped() -> ReasoningType {
    ReasoningType::Untyped
}

fn eval_sample(rec: EvalRecord) -> Result<EvalSample> {
    let gt_mask = rec.gt.decode()?;
    let (pred_mask, pred_is_no_target) = match (rec.pred, rec.no_target) {
        (Some(_), true) => return Err(Error::Parse("record has both \"pred\" and \"no_target\"".into())),
        (Some(p), false) => (p.decode()?, false),
        (None, true) => (Mask::empty(gt_mask.dims()), true),
        (None, false) => return Err(Error::Parse("record needs \"pred\" or \"no_target\": true".into())),
    };
    let s = EvalSample {
        sample_id: rec.sample_id,
        reasoning_type: rec.reasoning_type,
        gt_mask,
        pred_mask,
        pred_is_no_target,
    };
    s.intersection_union()?;
    Ok(s)
}

/// Returns the report as pretty JSON and as an aligned text table.
pub fn run_eval(dataset: &str) -> Result<(String, String)> {
    let mut samples = Vec::new();
    for (line, l) in records(dataset) {
        let rec: EvalRecord = decode(l).map_err(|e| at_line(line, e))?;
        samples.push(eval_sample(rec).map_err(|e| at_line(line, e))?);
    }
    let r = report(&samples)?;
    let mut json = serde_json::to_value(&r)?;
    json.as_object_mut().expect("object").insert("schema".into(), SCHEMA.into());
    Ok((serde_json::to_string_pretty(&json)? + "\n", r.to_table()))
}

pub fn run_simulate(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.run()
}

/// File name and contents for every simulate output.
pub fn simulate_outputs(report: &ExperimentReport, gnuplot: bool) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        ("zero_variance.csv".to_string(), report.zero_variance_csv()),
        ("voting.csv".to_string(), report.voting_csv()),
        ("rest.csv".to_string(), report.rest_csv()),
        ("report.json".to_string(), serde_json::to_string_pretty(report)? + "\n"),
    ];
    if gnuplot {
        files.extend(report.gnuplot_tables().into_iter().map(|(stem, t)| (format!("{stem}.dat"), t)));
    }
    Ok(files)
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_to(path: Option<&Path>, text: &str) -> std::result::Result<(), Failure> {
    let res = match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    res.map_err(Failure::Internal)
}

fn finish_batch(batch: Batch, out: Option<&Path>) -> std::result::Result<(), Failure> {
    write_to(out, &batch.output)?;
    if batch.all_failed() {
        return Err(Failure::Input(format!("all {} records failed", batch.records)));
    }
    if batch.failed > 0 {
        eprintln!("{} of {} records failed", batch.failed, batch.records);
    }
    Ok(())
}

fn execute(cli: CliConfig) -> std::result::Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::from_toml(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Reward { rollouts, gts, out } => {
            let batch = run_reward(&read(&rollouts)?, &read(&gts)?, &cfg)?;
            finish_batch(batch, out.as_deref())
        }
        Command::Advantage { groups, rest, out } => {
            let batch = run_advantage(&read(&groups)?, rest, &cfg)?;
            finish_batch(batch, out.as_deref())
        }
        Command::Vote {
            responses,
            pool,
            width,
            height,
            out,
        } => {
            let dims = match (width, height) {
                (Some(w), Some(h)) => Some(ImageDims::new(w, h)?),
                _ => None,
            };
            let text = run_vote(&read(&responses)?, &read(&pool)?, dims, &cfg)?;
            write_to(out.as_deref(), &text)
        }
        Command::Eval { dataset, out, table } => {
            let (json, text) = run_eval(&read(&dataset)?)?;
            write_to(out.as_deref(), &json)?;
            match table {
                Some(p) => write_to(Some(&p), &text),
                None => {
                    eprint!("{text}");
                    Ok(())
                }
            }
        }
        Command::Simulate {
            experiment,
            out_dir,
            gnuplot,
        } => {
            let exp = match &experiment {
                Some(p) => experiment_from_toml(&read(p)?)?,
                None => ExperimentConfig::default(),
            };
            let report = run_simulate(&exp, cli.seed)?;
            fs::create_dir_all(&out_dir).map_err(|e| Failure::Internal(format!("{}: {e}", out_dir.display())))?;
            for (name, text) in simulate_outputs(&report, gnuplot)? {
                write_to(Some(&out_dir.join(name)), &text)?;
            }
            println!("config_hash {}", report.config_hash);
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}
