//! Adaptation loop: one-shot query, then epochs of pseudo-label refresh and
//! minibatch SGD with momentum on the full objective.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_assign, PseudoLabels, DEFAULT_ROUNDS};
use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LabeledSample, LossBreakdown, LossWeights, PseudoSample};
use crate::model::AdaptModel;
use crate::query::{
    target_like_fraction, MhplOptions, QueryContext, SelectionRecord, SelectionResult, Strategy,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 + gamma · t/T)^(−power)` over the `T` total steps.
    PowerDecay { gamma: f64, power: f64 },
}

/// Per-sample weight of the labeled cross-entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabeledWeight {
    /// `α · NP(x)` with the query-time purity.
    NeighborPurity,
    /// Plain cross-entropy, weight 1.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` means `ceil(n / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    pub q: usize,
    pub seed: u64,
    pub recluster_each_epoch: bool,
    pub cluster_rounds: usize,
    pub lr_schedule: LrSchedule,
    pub hidden: usize,
    pub labeled_weight: LabeledWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 3.0,
            beta: 0.3,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            iterations_per_epoch: None,
            q: 9,
            seed: 0,
            recluster_each_epoch: true,
            cluster_rounds: DEFAULT_ROUNDS,
            lr_schedule: LrSchedule::Constant,
            hidden: 0,
            labeled_weight: LabeledWeight::NeighborPurity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.q == 0 {
            return bad("q must be >= 1");
        }
        Ok(())
    }

    pub fn iterations(&self, n: usize) -> usize {
        self.iterations_per_epoch
            .unwrap_or_else(|| n.div_ceil(self.batch_size))
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::PowerDecay { gamma, power } => {
                let t = step as f64 / total.max(1) as f64;
                self.lr * (1.0 + gamma * t).powf(-power)
            }
        }
    }
}

/// Momentum buffer for the adapter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Vec<f64>);

impl Velocity {
    pub fn zeros(model: &AdaptModel) -> Self {
        Velocity(vec![0.0; model.params().len()])
    }
}

/// `v ← momentum·v + g; θ ← θ − lr·v`. The head is never touched.
pub fn sgd_momentum_step(
    model: &mut AdaptModel,
    grad: &[f64],
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    let np = model.params().len();
    if grad.len() != np || velocity.0.len() != np {
        return Err(Error::ShapeMismatch(format!(
            "gradient {} / velocity {} for {np} parameters",
            grad.len(),
            velocity.0.len()
        )));
    }
    for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity.0).zip(grad) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Cycles through a fresh permutation of `0..n` each epoch, reshuffling on wrap.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    perm: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = EpochSampler {
            perm: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        for i in (1..self.perm.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.perm.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn start_epoch(&mut self) {
        self.reshuffle();
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.perm.len() {
                self.reshuffle();
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Supplies ground-truth labels for queried samples.
pub trait LabelOracle {
    fn label(&self, index: usize) -> Result<usize>;
}

/// Reads labels stored in the feature set.
pub struct GroundTruth<'a>(pub &'a FeatureSet);

impl LabelOracle for GroundTruth<'_> {
    fn label(&self, index: usize) -> Result<usize> {
        let labels = self
            .0
            .labels()
            .ok_or_else(|| Error::Oracle("feature set carries no labels".into()))?;
        labels.get(index).copied().ok_or(Error::IndexOutOfRange {
            index,
            n: labels.len(),
        })
    }
}

/// Labels from an external `index,label` annotation file.
#[derive(Debug, Clone, Default)]
pub struct AnnotationOracle(pub HashMap<usize, usize>);

impl AnnotationOracle {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        AnnotationOracle(pairs.into_iter().collect())
    }
}

impl LabelOracle for AnnotationOracle {
    fn label(&self, index: usize) -> Result<usize> {
        self.0
            .get(&index)
            .copied()
            .ok_or(Error::MissingLabel { index })
    }
}

/// Queried indices with their frozen purity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QueriedSet {
    pub indices: Vec<usize>,
    pub np: Vec<f64>,
}

impl QueriedSet {
    pub fn from_result(r: &SelectionResult) -> Self {
        QueriedSet {
            indices: r.selected.clone(),
            np: r.selected.iter().map(|&i| r.scores.np[i]).collect(),
        }
    }

    pub fn from_record(r: &SelectionRecord) -> Self {
        QueriedSet {
            indices: r.indices(),
            np: r.selected.iter().map(|s| s.np).collect(),
        }
    }
}

/// How and when the annotation budget is spent.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub strategy: Strategy,
    pub budget: usize,
    pub options: MhplOptions,
    /// Epoch at whose start the query happens; 0 is one-shot on the source model.
    pub query_epoch: usize,
    /// Use this selection instead of running a strategy.
    pub preselected: Option<SelectionRecord>,
}

impl QueryPlan {
    pub fn new(strategy: Strategy, budget: usize) -> Self {
        QueryPlan {
            strategy,
            budget,
            options: MhplOptions::default(),
            query_epoch: 0,
            preselected: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nf_labeled: f64,
    pub nf_unlabeled: f64,
    pub ent: f64,
    pub div: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub selection: Option<SelectionRecord>,
    pub epochs: Vec<EpochRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_like_frac_selected: Option<f64>,
    /// Only non-deterministic field.
    pub wall_ms: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: AdaptModel,
    pub report: RunReport,
}

fn pseudo_labels(fs: &FeatureSet, model: &AdaptModel, rounds: usize) -> Result<PseudoLabels> {
    cluster_assign(&model.embed(fs)?, &model.predict_proba(fs), rounds)
}

struct LabeledPool {
    labels: HashMap<usize, (usize, f64)>,
}

impl LabeledPool {
    fn build(
        queried: &QueriedSet,
        oracle: &dyn LabelOracle,
        classes: usize,
        weighting: LabeledWeight,
    ) -> Result<Self> {
        let mut labels = HashMap::with_capacity(queried.indices.len());
        for (&i, &np) in queried.indices.iter().zip(&queried.np) {
            let y = oracle.label(i)?;
            if y >= classes {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    label: y,
                    classes,
                });
            }
            if !(np.is_finite() && np >= 0.0) {
                return Err(Error::MissingWeight { index: i });
            }
            let w = match weighting {
                LabeledWeight::NeighborPurity => np,
                LabeledWeight::Uniform => 1.0,
            };
            labels.insert(i, (y, w));
        }
        Ok(LabeledPool { labels })
    }
}

fn select_now(
    fs: &FeatureSet,
    model: &AdaptModel,
    cfg: &TrainConfig,
    plan: &QueryPlan,
) -> Result<(SelectionResult, PseudoLabels)> {
    let ctx = QueryContext::build(fs, model, cfg.q, cfg.cluster_rounds)?;
    let sel = ctx.select(plan.strategy, plan.options, plan.budget, cfg.seed)?;
    Ok((sel, ctx.pseudo_labels))
}

/// Full adaptation run for any strategy and query timing.
pub fn run_adaptation(
    fs: &FeatureSet,
    source_model: &AdaptModel,
    cfg: &TrainConfig,
    plan: &QueryPlan,
    oracle: &dyn LabelOracle,
) -> Result<RunOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let n = fs.n();
    if plan.budget > n {
        return Err(Error::BudgetExceedsSamples { m: plan.budget, n });
    }
    if fs.d() != source_model.dim() || fs.classes() != source_model.classes() {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} classes vs model {}x{} classes",
            fs.d(),
            fs.classes(),
            source_model.dim(),
            source_model.classes()
        )));
    }
    if plan.query_epoch >= cfg.epochs && plan.budget > 0 && plan.preselected.is_none() {
        return Err(Error::InvalidConfig(format!(
            "query epoch {} is not before the last epoch ({})",
            plan.query_epoch, cfg.epochs
        )));
    }

    let mut model = if cfg.hidden > 0 {
        source_model.with_hidden(cfg.hidden, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)
    } else {
        source_model.clone()
    };
    let source_acc = model.accuracy(fs);
    let weights = cfg.weights();
    let n_b = cfg.iterations(n);
    let total_steps = n_b * cfg.epochs;

    let mut selection: Option<SelectionRecord> = None;
    let mut target_like = None;
    let mut pool = LabeledPool {
        labels: HashMap::new(),
    };
    let mut current_pl: Option<PseudoLabels> = None;

    if let Some(pre) = &plan.preselected {
        if pre.selected.len() > n {
            return Err(Error::BudgetExceedsSamples {
                m: pre.selected.len(),
                n,
            });
        }
        if let Some(&bad) = pre.indices().iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        pool = LabeledPool::build(&QueriedSet::from_record(pre), oracle, fs.classes(), cfg.labeled_weight)?;
        selection = Some(pre.clone());
    }

    let mut velocity = Velocity::zeros(&model);
    let mut sampler = EpochSampler::new(n, cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let query_now = plan.preselected.is_none() && epoch == plan.query_epoch;
        if query_now {
            let (sel, pl) = select_now(fs, &model, cfg, plan)?;
            pool = LabeledPool::build(&QueriedSet::from_result(&sel), oracle, fs.classes(), cfg.labeled_weight)?;
            target_like = target_like_fraction(&sel, fs);
            selection = Some(sel.to_record());
            current_pl = Some(pl);
        }
        if current_pl.is_none() || (cfg.recluster_each_epoch && !query_now) {
            current_pl = Some(pseudo_labels(fs, &model, cfg.cluster_rounds)?);
        }
        let pl = current_pl.as_ref().expect("pseudo-labels computed above");

        sampler.start_epoch();
        let mut sum = LossBreakdown::default();
        for _ in 0..n_b {
            let batch = sampler.next_batch(cfg.batch_size);
            let mut labeled = Vec::new();
            let mut unlabeled = Vec::new();
            for &i in &batch {
                match pool.labels.get(&i) {
                    Some(&(label, np_weight)) => labeled.push(LabeledSample {
                        features: fs.row(i),
                        label,
                        np_weight,
                    }),
                    None => unlabeled.push(PseudoSample {
                        features: fs.row(i),
                        pseudo_label: pl.labels()[i],
                    }),
                }
            }
            let (parts, grad) = total_loss(&model, &labeled, &unlabeled, weights)?;
            sgd_momentum_step(
                &mut model,
                &grad,
                cfg.lr_at(step, total_steps),
                cfg.momentum,
                &mut velocity,
            )?;
            step += 1;
            sum.nf_labeled += parts.nf_labeled;
            sum.nf_unlabeled += parts.nf_unlabeled;
            sum.ent += parts.ent;
            sum.div += parts.div;
            sum.total += parts.total;
        }
        let scale = if n_b == 0 { 0.0 } else { 1.0 / n_b as f64 };
        epochs.push(EpochRecord {
            epoch,
            nf_labeled: sum.nf_labeled * scale,
            nf_unlabeled: sum.nf_unlabeled * scale,
            ent: sum.ent * scale,
            div: sum.div * scale,
            total: sum.total * scale,
            target_acc: model.accuracy(fs),
        });
    }

    let final_acc = model.accuracy(fs);
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        selection,
        epochs,
        source_acc,
        final_acc,
        target_like_frac_selected: target_like,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    Ok(RunOutcome { model, report })
}

/// The full method: NAU scoring on the source model, diversity-relaxed one-shot
/// query of `m` samples, then adaptation.
pub fn run_mhpl(
    fs: &FeatureSet,
    source_model: &AdaptModel,
    cfg: &TrainConfig,
    m: usize,
    oracle: &dyn LabelOracle,
) -> Result<RunOutcome> {
    run_adaptation(fs, source_model, cfg, &QueryPlan::new(Strategy::Mhpl, m), oracle)
}
