//! Command-line front end: experiment configuration, the `generate`, `select`,
//! `train`, `eval` and `sweep` commands, and their on-disk outputs.
//!
//! # Config file
//!
//! One `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored. Lists are comma separated. Recognized keys:
//!
//! | key | value |
//! |-----|-------|
//! | `data` | `synthetic` or `files` |
//! | `synth.classes`, `synth.dim`, `synth.n_source`, `synth.n_target` | counts |
//! | `synth.sigma`, `synth.shift`, `synth.target_like_frac` | reals |
//! | `target`, `source`, `model` | paths (feature files, source checkpoint) |
//! | `classes` | class count for CSV feature files without one |
//! | `strategies` | list of `mhpl random entropy bvsb lc ctc coreset` |
//! | `budgets` | list; `0.05` or `5%` is a fraction, `30` an absolute count |
//! | `ablations` | list of `none no_np no_na no_ndr no_nf_weight query_epoch:N` |
//! | `seeds` | list of integers or half-open ranges `a..b` |
//! | `out`, `workers` | output directory, sweep worker threads |
//! | `train.<field>` | any [`TrainConfig`] field; `lr_schedule` is `constant` or `power:GAMMA:POWER`, `labeled_weight` is `neighbor_purity` or `uniform`, `iterations_per_epoch` is `auto` or a count |
//! | `source.<field>` | `lr`, `momentum`, `batch_size`, `epochs`, `label_smoothing` for fitting a source head |
//!
//! Relative paths are resolved against the working directory.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DomainTag, FeatureSet};
use crate::error::{Error, Result};
use crate::io::{decode_fmx, encode_fmx, load_feature_set, FileFormat};
use crate::model::AdaptModel;
use crate::query::{
    parse_annotations, target_like_fraction, MhplOptions, QueryContext, RankScore,
    SelectionRecord, Strategy,
};
use crate::synth::{accuracy_on_tag, generate, train_source_head, ShiftSpec, SourceTraining};
use crate::train::{
    run_adaptation, AnnotationOracle, GroundTruth, LabelOracle, LabeledWeight, LrSchedule,
    QueryPlan, RunReport, TrainConfig,
};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Annotation budget as a fraction of the target set or an absolute count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Fraction(f64),
    Count(usize),
}

impl Budget {
    pub fn resolve(self, n: usize) -> Result<usize> {
        let m = match self {
            Budget::Fraction(f) => (f * n as f64).round() as usize,
            Budget::Count(m) => m,
        };
        if m > n {
            return Err(Error::BudgetExceedsSamples { m, n });
        }
        Ok(m)
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("bad budget {s:?}"));
        let fraction = |f: f64| {
            if f > 0.0 && f <= 1.0 {
                Ok(Budget::Fraction(f))
            } else {
                Err(Error::InvalidConfig(format!("budget fraction {f} outside (0, 1]")))
            }
        };
        if let Some(pct) = s.strip_suffix('%') {
            return fraction(pct.trim().parse::<f64>().map_err(|_| bad())? / 100.0);
        }
        if s.contains(['.', 'e', 'E']) {
            return fraction(s.parse().map_err(|_| bad())?);
        }
        s.parse().map(Budget::Count).map_err(|_| bad())
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Fraction(x) => write!(f, "{x:?}"),
            Budget::Count(m) => write!(f, "{m}"),
        }
    }
}

/// A single switch applied on top of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Rank by affinity only.
    NoNp,
    /// Rank by purity only.
    NoNa,
    /// Plain top-m, no nearest-neighbor skipping.
    NoNdr,
    /// Labeled cross-entropy with weight 1 instead of `α·NP`.
    NoNfWeight,
    /// Query at the start of this epoch instead of on the source model.
    QueryEpoch(usize),
}

impl Ablation {
    pub fn apply(self, plan: &mut QueryPlan, cfg: &mut TrainConfig) {
        match self {
            Ablation::None => {}
            Ablation::NoNp => plan.options.rank = RankScore::AffinityOnly,
            Ablation::NoNa => plan.options.rank = RankScore::PurityOnly,
            Ablation::NoNdr => plan.options.diversity_relaxation = false,
            Ablation::NoNfWeight => cfg.labeled_weight = LabeledWeight::Uniform,
            Ablation::QueryEpoch(e) => plan.query_epoch = e,
        }
    }

    fn options(self) -> MhplOptions {
        let mut plan = QueryPlan::new(Strategy::Mhpl, 0);
        self.apply(&mut plan, &mut TrainConfig::default());
        plan.options
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Ok(match norm.as_str() {
            "none" => Ablation::None,
            "no_np" => Ablation::NoNp,
            "no_na" => Ablation::NoNa,
            "no_ndr" => Ablation::NoNdr,
            "no_nf_weight" => Ablation::NoNfWeight,
            other => {
                let epoch = other
                    .strip_prefix("query_epoch:")
                    .and_then(|e| e.parse().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation {s:?}")))?;
                Ablation::QueryEpoch(epoch)
            }
        })
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::None => f.write_str("none"),
            Ablation::NoNp => f.write_str("no_np"),
            Ablation::NoNa => f.write_str("no_na"),
            Ablation::NoNdr => f.write_str("no_ndr"),
            Ablation::NoNfWeight => f.write_str("no_nf_weight"),
            Ablation::QueryEpoch(e) => write!(f, "query_epoch:{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated in memory; the spec's seed is replaced by the run seed.
    Synthetic(ShiftSpec),
    Files {
        target: PathBuf,
        classes: Option<usize>,
        /// Labeled source features to fit a head on.
        source: Option<PathBuf>,
        /// Source model checkpoint; takes precedence over `source`.
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<Budget>,
    pub ablations: Vec<Ablation>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub source: SourceTraining,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(ShiftSpec::default()),
            strategies: vec![Strategy::Mhpl],
            budgets: vec![Budget::Fraction(0.05)],
            ablations: vec![Ablation::None],
            seeds: vec![0],
            train: TrainConfig::default(),
            source: SourceTraining::default(),
            out: None,
            workers: None,
        }
    }
}

fn list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect()
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::InvalidConfig(format!("bad seed {item:?}"));
        match item.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                out.extend(a..b);
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

fn parse_schedule(v: &str) -> Result<LrSchedule> {
    if v == "constant" {
        return Ok(LrSchedule::Constant);
    }
    let bad = || Error::InvalidConfig(format!("bad lr_schedule {v:?}"));
    let rest = v.strip_prefix("power:").ok_or_else(bad)?;
    let (g, p) = rest.split_once(':').ok_or_else(bad)?;
    Ok(LrSchedule::PowerDecay {
        gamma: g.parse().map_err(|_| bad())?,
        power: p.parse().map_err(|_| bad())?,
    })
}

fn schedule_text(s: LrSchedule) -> String {
    match s {
        LrSchedule::Constant => "constant".into(),
        LrSchedule::PowerDecay { gamma, power } => format!("power:{gamma:?}:{power:?}"),
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut spec = ShiftSpec::default();
        let mut kind: Option<String> = None;
        let (mut target, mut source, mut model, mut classes) = (None, None, None, None);

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigSyntax {
                    line,
                    reason: format!("expected key = value, got {content:?}"),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            let at_line = |e: Error| Error::ConfigSyntax {
                line,
                reason: e.to_string(),
            };
            let t = &mut cfg.train;
            let s = &mut cfg.source;
            let r: Result<()> = (|| {
                match key {
                    "data" => kind = Some(v.to_string()),
                    "synth.classes" => spec.classes = parse_value(key, v)?,
                    "synth.dim" => spec.dim = parse_value(key, v)?,
                    "synth.n_source" => spec.n_source = parse_value(key, v)?,
                    "synth.n_target" => spec.n_target = parse_value(key, v)?,
                    "synth.sigma" => spec.sigma = parse_value(key, v)?,
                    "synth.shift" => spec.shift = parse_value(key, v)?,
                    "synth.target_like_frac" => spec.target_like_frac = parse_value(key, v)?,
                    "target" => target = Some(PathBuf::from(v)),
                    "source" => source = Some(PathBuf::from(v)),
                    "model" => model = Some(PathBuf::from(v)),
                    "classes" => classes = Some(parse_value(key, v)?),
                    "strategies" => cfg.strategies = list(v)?,
                    "budgets" => cfg.budgets = list(v)?,
                    "ablations" => cfg.ablations = list(v)?,
                    "seeds" => cfg.seeds = parse_seeds(v)?,
                    "out" => cfg.out = Some(PathBuf::from(v)),
                    "workers" => cfg.workers = Some(parse_value(key, v)?),
                    "train.alpha" => t.alpha = parse_value(key, v)?,
                    "train.beta" => t.beta = parse_value(key, v)?,
                    "train.lr" => t.lr = parse_value(key, v)?,
                    "train.momentum" => t.momentum = parse_value(key, v)?,
                    "train.batch_size" => t.batch_size = parse_value(key, v)?,
                    "train.epochs" => t.epochs = parse_value(key, v)?,
                    "train.iterations_per_epoch" => {
                        t.iterations_per_epoch = match v {
                            "auto" => None,
                            _ => Some(parse_value(key, v)?),
                        }
                    }
                    "train.q" => t.q = parse_value(key, v)?,
                    "train.seed" => t.seed = parse_value(key, v)?,
                    "train.recluster_each_epoch" => t.recluster_each_epoch = parse_value(key, v)?,
                    "train.cluster_rounds" => t.cluster_rounds = parse_value(key, v)?,
                    "train.lr_schedule" => t.lr_schedule = parse_schedule(v)?,
                    "train.hidden" => t.hidden = parse_value(key, v)?,
                    "train.labeled_weight" => {
                        t.labeled_weight = match v {
                            "neighbor_purity" => LabeledWeight::NeighborPurity,
                            "uniform" => LabeledWeight::Uniform,
                            _ => return Err(Error::InvalidConfig(format!("bad labeled_weight {v:?}"))),
                        }
                    }
                    "source.lr" => s.lr = parse_value(key, v)?,
                    "source.momentum" => s.momentum = parse_value(key, v)?,
                    "source.batch_size" => s.batch_size = parse_value(key, v)?,
                    "source.epochs" => s.epochs = parse_value(key, v)?,
                    "source.label_smoothing" => s.label_smoothing = parse_value(key, v)?,
                    _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
                }
                Ok(())
            })();
            r.map_err(at_line)?;
        }

        let files = match kind.as_deref() {
            Some("files") => true,
            Some("synthetic") => false,
            None => target.is_some(),
            Some(other) => {
                return Err(Error::InvalidConfig(format!("unknown data source {other:?}")))
            }
        };
        cfg.data = if files {
            DataSource::Files {
                target: target.ok_or_else(|| {
                    Error::InvalidConfig("data = files needs a `target` path".into())
                })?,
                classes,
                source,
                model,
            }
        } else {
            DataSource::Synthetic(spec)
        };
        Ok(cfg)
    }

    /// Render in the config-file syntax; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        match &self.data {
            DataSource::Synthetic(s) => {
                kv("data", "synthetic".into());
                kv("synth.classes", s.classes.to_string());
                kv("synth.dim", s.dim.to_string());
                kv("synth.n_source", s.n_source.to_string());
                kv("synth.n_target", s.n_target.to_string());
                kv("synth.sigma", format!("{:?}", s.sigma));
                kv("synth.shift", format!("{:?}", s.shift));
                kv("synth.target_like_frac", format!("{:?}", s.target_like_frac));
            }
            DataSource::Files {
                target,
                classes,
                source,
                model,
            } => {
                kv("data", "files".into());
                kv("target", target.display().to_string());
                if let Some(c) = classes {
                    kv("classes", c.to_string());
                }
                if let Some(p) = source {
                    kv("source", p.display().to_string());
                }
                if let Some(p) = model {
                    kv("model", p.display().to_string());
                }
            }
        }
        kv("strategies", join(&self.strategies));
        kv("budgets", join(&self.budgets));
        kv("ablations", join(&self.ablations));
        kv("seeds", join(&self.seeds));
        if let Some(o) = &self.out {
            kv("out", o.display().to_string());
        }
        if let Some(w) = self.workers {
            kv("workers", w.to_string());
        }
        let t = &self.train;
        kv("train.alpha", format!("{:?}", t.alpha));
        kv("train.beta", format!("{:?}", t.beta));
        kv("train.lr", format!("{:?}", t.lr));
        kv("train.momentum", format!("{:?}", t.momentum));
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv(
            "train.iterations_per_epoch",
            t.iterations_per_epoch.map_or("auto".into(), |n| n.to_string()),
        );
        kv("train.q", t.q.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.recluster_each_epoch", t.recluster_each_epoch.to_string());
        kv("train.cluster_rounds", t.cluster_rounds.to_string());
        kv("train.lr_schedule", schedule_text(t.lr_schedule));
        kv("train.hidden", t.hidden.to_string());
        kv(
            "train.labeled_weight",
            match t.labeled_weight {
                LabeledWeight::NeighborPurity => "neighbor_purity".into(),
                LabeledWeight::Uniform => "uniform".into(),
            },
        );
        let s = &self.source;
        kv("source.lr", format!("{:?}", s.lr));
        kv("source.momentum", format!("{:?}", s.momentum));
        kv("source.batch_size", s.batch_size.to_string());
        kv("source.epochs", s.epochs.to_string());
        kv("source.label_smoothing", format!("{:?}", s.label_smoothing));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Usage("at least one strategy is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Usage("at least one seed is required".into()));
        }
        if self.budgets.is_empty() {
            return Err(Error::Usage("at least one budget is required".into()));
        }
        if self.ablations.is_empty() {
            return Err(Error::Usage("at least one ablation (or `none`) is required".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.train.validate()
    }
}

/// Target set plus the source model used to query and initialize adaptation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub target: FeatureSet,
    pub source_model: AdaptModel,
    /// Set when the head was fit here rather than loaded.
    pub fitted: bool,
}

fn fit_head(source: &FeatureSet, opts: SourceTraining, seed: u64, quiet: bool) -> Result<AdaptModel> {
    let fit = train_source_head(source, SourceTraining { seed, ..opts })?;
    if !fit.converged && !quiet {
        eprintln!(
            "warning: source head reached only {:.2}% training accuracy",
            100.0 * fit.train_accuracy
        );
    }
    Ok(fit.model)
}

fn load_features(path: &Path, classes: Option<usize>) -> Result<FeatureSet> {
    let format = match FileFormat::from_path(path) {
        FileFormat::Csv { .. } => FileFormat::Csv { classes },
        f => f,
    };
    load_feature_set(path, format)
}

pub fn prepare(data: &DataSource, source_opts: SourceTraining, seed: u64, quiet: bool) -> Result<Prepared> {
    match data {
        DataSource::Synthetic(spec) => {
            let bench = generate(&ShiftSpec {
                seed,
                ..spec.clone()
            })?;
            let source_model = fit_head(&bench.source, source_opts, seed, quiet)?;
            Ok(Prepared {
                target: bench.target,
                source_model,
                fitted: true,
            })
        }
        DataSource::Files {
            target,
            classes,
            source,
            model,
        } => {
            let target = load_features(target, *classes)?;
            let (source_model, fitted) = match (model, source) {
                (Some(ckpt), _) => (AdaptModel::load(ckpt)?, false),
                (None, Some(src)) => {
                    let src = load_features(src, *classes)?;
                    (fit_head(&src, source_opts, seed, quiet)?, true)
                }
                (None, None) => {
                    return Err(Error::Usage(
                        "a source model is required: pass --model CHECKPOINT or --train-source FEATURES"
                            .into(),
                    ))
                }
            };
            Ok(Prepared {
                target,
                source_model,
                fitted,
            })
        }
    }
}

/// Write, read back, and compare.
fn write_checked(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let back = fs::read(path).map_err(|e| Error::io(path, e))?;
    if back != bytes {
        return Err(Error::io(
            path,
            std::io::Error::other("read-back does not match written bytes"),
        ));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_checked(path, text.as_bytes())?;
    serde_json::from_slice::<serde_json::Value>(&fs::read(path).map_err(|e| Error::io(path, e))?)?;
    Ok(())
}

fn write_fmx(path: &Path, fs_: &FeatureSet) -> Result<()> {
    let bytes = encode_fmx(fs_);
    write_checked(path, &bytes)?;
    decode_fmx(&bytes).map(|_| ())
}

fn write_model(path: &Path, model: &AdaptModel) -> Result<()> {
    let bytes = model.to_bytes();
    write_checked(path, &bytes)?;
    AdaptModel::from_bytes(&bytes).map(|_| ())
}

// ---------------------------------------------------------------------------
// Command-line surface

#[derive(Debug, Parser)]
#[command(name = "mhpl", version, about = "Neighbor-uncertainty querying and source-free adaptation")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, short = 'q', global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target benchmark.
    Generate(GenerateArgs),
    /// Select samples for annotation.
    Select(SelectArgs),
    /// Query, annotate and adapt; writes a run report and a checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Strategy x budget x ablation x seed grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    /// Number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Source sample count.
    #[arg(long)]
    pub n_source: Option<usize>,
    /// Target sample count.
    #[arg(long)]
    pub n_target: Option<usize>,
    /// Per-dimension noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Displacement of target-like means, in units of sigma.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Fraction of target samples drawn from shifted means.
    #[arg(long)]
    pub target_like_frac: Option<f64>,
}

/// Where the target features and the source model come from. Without
/// `--features` the config's data source is used (synthetic by default).
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Target feature file (`.fmx` or `.csv`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Class count for CSV files that do not declare one.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Source model checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Fit a source head on this labeled feature file.
    #[arg(long)]
    pub train_source: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Query strategy (`mhpl`, `random`, `entropy`, `bvsb`, `lc`, `ctc`, `coreset`).
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Fraction (`0.05`, `5%`) or absolute count (`30`).
    #[arg(long)]
    pub budget: Option<Budget>,
    /// Neighbors per sample in the target graph.
    #[arg(long)]
    pub q: Option<usize>,
    /// Selection-side ablation (`no_np`, `no_na`, `no_ndr`).
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Also write an `index,label` template for the selected samples.
    #[arg(long)]
    pub annotate_template: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Query strategy (`mhpl`, `random`, `entropy`, `bvsb`, `lc`, `ctc`, `coreset`).
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Fraction (`0.05`, `5%`) or absolute count (`30`).
    #[arg(long)]
    pub budget: Option<Budget>,
    /// Reuse a selection written by `select`.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// `index,label` file; defaults to labels embedded in the features.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Ablation (`no_np`, `no_na`, `no_ndr`, `no_nf_weight`, `query_epoch_N`).
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Optimizer steps per epoch; defaults to one pass over the target set.
    #[arg(long)]
    pub iterations_per_epoch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight of the labeled loss.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the pseudo-labeled loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Neighbors per sample in the target graph.
    #[arg(long)]
    pub q: Option<usize>,
    /// Width of the residual adapter branch; 0 for a purely affine adapter.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Query and label but take no optimizer steps.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    /// Comma-separated; overrides the config.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Comma-separated budgets.
    #[arg(long)]
    pub budgets: Option<String>,
    /// Comma-separated ablations.
    #[arg(long)]
    pub ablations: Option<String>,
    /// Comma-separated seeds or a range `a..b`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Global {
    pub seed: u64,
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub quiet: bool,
}

impl Global {
    fn say(&self, msg: impl fmt::Display) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

fn data_source(g: &Global, args: &DataArgs) -> DataSource {
    match &args.features {
        Some(target) => DataSource::Files {
            target: target.clone(),
            classes: args.classes,
            source: args.train_source.clone(),
            model: args.model.clone(),
        },
        None => match g.config.data.clone() {
            DataSource::Files {
                target,
                classes,
                source,
                model,
            } => DataSource::Files {
                target,
                classes: args.classes.or(classes),
                source: args.train_source.clone().or(source),
                model: args.model.clone().or(model),
            },
            synthetic => synthetic,
        },
    }
}

pub fn cmd_generate(g: &Global, args: &GenerateArgs) -> Result<()> {
    let mut spec = match &g.config.data {
        DataSource::Synthetic(s) => s.clone(),
        DataSource::Files { .. } => ShiftSpec::default(),
    };
    spec.classes = args.k.unwrap_or(spec.classes);
    spec.dim = args.d.unwrap_or(spec.dim);
    spec.n_source = args.n_source.unwrap_or(spec.n_source);
    spec.n_target = args.n_target.unwrap_or(spec.n_target);
    spec.sigma = args.sigma.unwrap_or(spec.sigma);
    spec.shift = args.shift.unwrap_or(spec.shift);
    spec.target_like_frac = args.target_like_frac.unwrap_or(spec.target_like_frac);
    spec.seed = g.seed;

    let bench = generate(&spec)?;
    ensure_dir(&g.out)?;
    write_fmx(&g.out.join("source.fmx"), &bench.source)?;
    write_fmx(&g.out.join("target.fmx"), &bench.target)?;
    write_json(&g.out.join("manifest.json"), &bench.manifest(&spec))?;
    g.say(format_args!(
        "wrote {} source and {} target samples (K={}, d={}) to {}",
        spec.n_source,
        spec.n_target,
        spec.classes,
        spec.dim,
        g.out.display()
    ));
    Ok(())
}

fn train_config(g: &Global) -> TrainConfig {
    TrainConfig {
        seed: g.seed,
        ..g.config.train.clone()
    }
}

pub fn cmd_select(g: &Global, args: &SelectArgs) -> Result<()> {
    let prepared = prepare(&data_source(g, &args.data), g.config.source, g.seed, g.quiet)?;
    let cfg = train_config(g);
    let strategy = args.strategy.unwrap_or(g.config.strategies.first().copied().unwrap_or(Strategy::Mhpl));
    let budget = args.budget.unwrap_or(g.config.budgets.first().copied().unwrap_or(Budget::Fraction(0.05)));
    let m = budget.resolve(prepared.target.n())?;
    let opts = args.ablation.unwrap_or(Ablation::None).options();

    let ctx = QueryContext::build(
        &prepared.target,
        &prepared.source_model,
        args.q.unwrap_or(cfg.q),
        cfg.cluster_rounds,
    )?;
    let sel = ctx.select(strategy, opts, m, g.seed)?;

    ensure_dir(&g.out)?;
    write_json(&g.out.join("selection.json"), &sel.to_record())?;
    if args.annotate_template {
        write_checked(&g.out.join("annotations.csv"), sel.annotation_template().as_bytes())?;
    }
    if prepared.fitted {
        write_model(&g.out.join("source_model.mhc"), &prepared.source_model)?;
    }
    let tl = target_like_fraction(&sel, &prepared.target)
        .map(|f| format!(", {:.1}% target-like", 100.0 * f))
        .unwrap_or_default();
    g.say(format_args!("{strategy}: selected {m} of {}{tl}", prepared.target.n()));
    Ok(())
}

pub fn cmd_train(g: &Global, args: &TrainArgs) -> Result<RunReport> {
    let prepared = prepare(&data_source(g, &args.data), g.config.source, g.seed, g.quiet)?;
    let mut cfg = train_config(g);
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.iterations_per_epoch = args.iterations_per_epoch.or(cfg.iterations_per_epoch);
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.momentum = args.momentum.unwrap_or(cfg.momentum);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.beta = args.beta.unwrap_or(cfg.beta);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.q = args.q.unwrap_or(cfg.q);
    cfg.hidden = args.hidden.unwrap_or(cfg.hidden);
    if args.dry_run {
        cfg.iterations_per_epoch = Some(0);
    }

    let strategy = args.strategy.unwrap_or(g.config.strategies.first().copied().unwrap_or(Strategy::Mhpl));
    let budget = args.budget.unwrap_or(g.config.budgets.first().copied().unwrap_or(Budget::Fraction(0.05)));
    let mut plan = QueryPlan::new(strategy, budget.resolve(prepared.target.n())?);
    args.ablation.unwrap_or(Ablation::None).apply(&mut plan, &mut cfg);
    if let Some(path) = &args.selection {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record = SelectionRecord::from_json(&text)?;
        plan.strategy = record.strategy;
        plan.budget = record.selected.len();
        plan.preselected = Some(record);
    }

    let annotations;
    let truth = GroundTruth(&prepared.target);
    let oracle: &dyn LabelOracle = match &args.annotations {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            annotations = AnnotationOracle::from_pairs(parse_annotations(&text)?);
            &annotations
        }
        None => &truth,
    };

    let outcome = run_adaptation(&prepared.target, &prepared.source_model, &cfg, &plan, oracle)?;
    ensure_dir(&g.out)?;
    write_json(&g.out.join("report.json"), &outcome.report)?;
    write_model(&g.out.join("model.mhc"), &outcome.model)?;
    if prepared.fitted {
        write_model(&g.out.join("source_model.mhc"), &prepared.source_model)?;
    }
    let pct = |a: Option<f64>| a.map_or("n/a".to_string(), |a| format!("{:.2}%", 100.0 * a));
    g.say(format_args!(
        "{}: source accuracy {}, final accuracy {}",
        plan.strategy,
        pct(outcome.report.source_acc),
        pct(outcome.report.final_acc)
    ));
    Ok(outcome.report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n: usize,
    pub classes: usize,
    pub predicted_counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_like_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_like_acc: Option<f64>,
}

pub fn evaluate(model: &AdaptModel, fs_: &FeatureSet) -> Result<EvalReport> {
    if fs_.d() != model.dim() || fs_.classes() != model.classes() {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} classes vs model {}x{} classes",
            fs_.d(),
            fs_.classes(),
            model.dim(),
            model.classes()
        )));
    }
    let mut predicted_counts = vec![0; fs_.classes()];
    for p in model.predict(fs_) {
        predicted_counts[p] += 1;
    }
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        n: fs_.n(),
        classes: fs_.classes(),
        predicted_counts,
        accuracy: model.accuracy(fs_),
        source_like_acc: accuracy_on_tag(model, fs_, DomainTag::SourceLike),
        target_like_acc: accuracy_on_tag(model, fs_, DomainTag::TargetLike),
    })
}

pub fn cmd_eval(g: &Global, args: &EvalArgs) -> Result<EvalReport> {
    let prepared = prepare(&data_source(g, &args.data), g.config.source, g.seed, g.quiet)?;
    let report = evaluate(&prepared.source_model, &prepared.target)?;
    ensure_dir(&g.out)?;
    write_json(&g.out.join("eval.json"), &report)?;
    if let Some(a) = report.accuracy {
        g.say(format_args!("accuracy {:.2}% on {} samples", 100.0 * a, report.n));
    } else {
        g.say(format_args!("predicted class counts {:?}", report.predicted_counts));
    }
    Ok(report)
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub budget: Budget,
    pub seed: u64,
    pub ablation: Ablation,
    pub final_acc: Option<f64>,
    pub target_like_frac_selected: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub budget: Budget,
    pub ablation: Ablation,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub tl_mean: f64,
    pub tl_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Strategy, Budget, Ablation)> = Vec::new();
    for r in rows {
        let key = (r.strategy, r.budget, r.ablation);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, budget, ablation)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.budget == budget && r.ablation == ablation)
                .collect();
            let accs: Vec<f64> = cell.iter().filter_map(|r| r.final_acc).collect();
            let tls: Vec<f64> = cell.iter().filter_map(|r| r.target_like_frac_selected).collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            let (tl_mean, tl_std) = mean_std(&tls);
            SummaryRow {
                strategy,
                budget,
                ablation,
                runs: cell.len(),
                acc_mean,
                acc_std,
                tl_mean,
                tl_std,
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn finite(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "strategy,budget,seed,ablation,final_acc,target_like_frac_selected,wall_ms\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.strategy,
            r.budget,
            r.seed,
            r.ablation,
            opt(r.final_acc),
            opt(r.target_like_frac_selected),
            r.wall_ms
        ));
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "strategy,budget,ablation,runs,final_acc_mean,final_acc_std,target_like_frac_mean,target_like_frac_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.budget,
            r.ablation,
            r.runs,
            finite(r.acc_mean),
            finite(r.acc_std),
            finite(r.tl_mean),
            finite(r.tl_std)
        ));
    }
    out
}

fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:>7} {:<16} {:>4} {:>18} {:>18}\n",
        "strategy", "budget", "ablation", "runs", "final acc (%)", "target-like (%)"
    );
    let pm = |m: f64, s: f64| {
        if m.is_finite() {
            format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s)
        } else {
            "n/a".into()
        }
    };
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:>7} {:<16} {:>4} {:>18} {:>18}\n",
            r.strategy.to_string(),
            r.budget.to_string(),
            r.ablation.to_string(),
            r.runs,
            pm(r.acc_mean, r.acc_std),
            pm(r.tl_mean, r.tl_std)
        ));
    }
    out
}

/// Run every cell of the grid. Cells run in parallel, each single-threaded;
/// the returned rows follow strategy, budget, ablation, seed order.
pub fn run_sweep(cfg: &ExperimentConfig, quiet: bool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let work = || -> Result<Vec<SweepRow>> {
        let prepared: Vec<Prepared> = cfg
            .seeds
            .par_iter()
            .map(|&seed| prepare(&cfg.data, cfg.source, seed, quiet))
            .collect::<Result<_>>()?;
        let mut cells = Vec::new();
        for &strategy in &cfg.strategies {
            for &budget in &cfg.budgets {
                for &ablation in &cfg.ablations {
                    for (slot, &seed) in cfg.seeds.iter().enumerate() {
                        cells.push((strategy, budget, ablation, slot, seed));
                    }
                }
            }
        }
        cells
            .par_iter()
            .map(|&(strategy, budget, ablation, slot, seed)| {
                let p = &prepared[slot];
                let mut train = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let mut plan = QueryPlan::new(strategy, budget.resolve(p.target.n())?);
                ablation.apply(&mut plan, &mut train);
                let out = run_adaptation(&p.target, &p.source_model, &train, &plan, &GroundTruth(&p.target))?;
                Ok(SweepRow {
                    strategy,
                    budget,
                    seed,
                    ablation,
                    final_acc: out.report.final_acc,
                    target_like_frac_selected: out.report.target_like_frac_selected,
                    wall_ms: out.report.wall_ms,
                })
            })
            .collect()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    }
}

pub fn cmd_sweep(g: &Global, args: &SweepArgs) -> Result<Vec<SummaryRow>> {
    let mut cfg = g.config.clone();
    if let Some(v) = &args.strategies {
        cfg.strategies = list(v)?;
    }
    if let Some(v) = &args.budgets {
        cfg.budgets = list(v)?;
    }
    if let Some(v) = &args.ablations {
        cfg.ablations = list(v)?;
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = parse_seeds(v)?;
    }
    cfg.workers = args.workers.or(cfg.workers);

    let rows = run_sweep(&cfg, g.quiet)?;
    let summary = summarize(&rows);
    ensure_dir(&g.out)?;
    write_checked(&g.out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    write_checked(&g.out.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    if !g.quiet {
        print!("{}", summary_table(&summary));
    }
    Ok(summary)
}

/// Parse arguments, run the command, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: mhpl [--seed N] [--out DIR] [--config FILE] [--quiet] <generate|select|train|eval|sweep> [OPTIONS]");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // Without a config file the global seed is also the sweep's seed list.
    if let (None, Some(seed)) = (&cli.config, cli.seed) {
        config.seeds = vec![seed];
    }
    let seed = cli
        .seed
        .unwrap_or_else(|| config.seeds.first().copied().unwrap_or(0));
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let g = Global {
        seed,
        out,
        config,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&g, a),
        Command::Select(a) => cmd_select(&g, a),
        Command::Train(a) => cmd_train(&g, a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&g, a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&g, a).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_parsing() {
        assert_eq!("0.05".parse::<Budget>().unwrap(), Budget::Fraction(0.05));
        assert_eq!("5%".parse::<Budget>().unwrap(), Budget::Fraction(0.05));
        assert_eq!("30".parse::<Budget>().unwrap(), Budget::Count(30));
        assert!("0.0".parse::<Budget>().is_err());
        assert!("1.5".parse::<Budget>().is_err());
        assert!("abc".parse::<Budget>().is_err());
        assert_eq!(Budget::Fraction(0.05).resolve(600).unwrap(), 30);
        assert_eq!(Budget::Fraction(1.0).resolve(600).unwrap(), 600);
        assert!(matches!(
            Budget::Count(601).resolve(600),
            Err(Error::BudgetExceedsSamples { m: 601, n: 600 })
        ));
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in [
            Ablation::None,
            Ablation::NoNp,
            Ablation::NoNa,
            Ablation::NoNdr,
            Ablation::NoNfWeight,
            Ablation::QueryEpoch(10),
        ] {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("query-epoch:5".parse::<Ablation>().unwrap(), Ablation::QueryEpoch(5));
        assert!("no_such".parse::<Ablation>().is_err());
    }

    #[test]
    fn seeds_accept_ranges_and_lists() {
        assert_eq!(parse_seeds("0..3, 7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn config_round_trips_through_text() {
        let text = "\
# grid
strategies = mhpl, random
budgets = 1%, 0.03, 30
ablations = none, no_ndr, query_epoch:10
seeds = 0..4
workers = 2
train.lr = 0.005
train.lr_schedule = power:10:0.75
train.iterations_per_epoch = 3
synth.shift = 2.5
source.label_smoothing = 0.0
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.strategies, vec![Strategy::Mhpl, Strategy::Random]);
        assert_eq!(
            cfg.budgets,
            vec![Budget::Fraction(0.01), Budget::Fraction(0.03), Budget::Count(30)]
        );
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3]);
        assert_eq!(cfg.train.iterations_per_epoch, Some(3));
        assert_eq!(
            cfg.train.lr_schedule,
            LrSchedule::PowerDecay {
                gamma: 10.0,
                power: 0.75
            }
        );
        let DataSource::Synthetic(spec) = &cfg.data else {
            panic!("expected synthetic data")
        };
        assert_eq!(spec.shift, 2.5);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors_name_the_line() {
        let err = ExperimentConfig::parse("seeds = 1\nbogus line\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 2, .. }));
        let err = ExperimentConfig::parse("\ntrain.lr = fast\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 2, .. }));
        let err = ExperimentConfig::parse("nope = 1").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 1, .. }));
        assert!(ExperimentConfig::parse("data = files").is_err());
    }

    #[test]
    fn empty_strategy_list_is_a_usage_error() {
        let cfg = ExperimentConfig::parse("strategies =").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
    }

    #[test]
    fn summary_statistics() {
        let row = |seed, acc| SweepRow {
            strategy: Strategy::Mhpl,
            budget: Budget::Count(3),
            seed,
            ablation: Ablation::None,
            final_acc: Some(acc),
            target_like_frac_selected: None,
            wall_ms: 0,
        };
        let s = summarize(&[row(0, 0.5), row(1, 0.7)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].runs, 2);
        assert!((s[0].acc_mean - 0.6).abs() < 1e-12);
        assert!((s[0].acc_std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(s[0].tl_mean.is_nan());
        assert!(summary_csv(&s).lines().nth(1).unwrap().ends_with(",,"));
    }
}
