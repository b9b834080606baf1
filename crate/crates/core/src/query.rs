//! Neighbor ambient uncertainty, diversity-relaxed one-shot querying and
//! the classical baseline strategies.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_assign, PseudoLabels, DEFAULT_ROUNDS};
use crate::data::{DomainTag, FeatureSet, Matrix};
use crate::error::{Error, Result};
use crate::graph::{build_graph, similarity, NeighborGraph};
use crate::model::AdaptModel;

pub const SELECTION_SCHEMA_VERSION: u32 = 1;
const PROB_TOL: f64 = 1e-9;

/// Entropy (nats) of the neighbor pseudo-label distribution.
pub fn neighbor_purity(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::NotAProbability("empty vector".into()));
    }
    if dist.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::NotAProbability(format!("{dist:?} has negative or non-finite entries")));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::NotAProbability(format!("entries sum to {s}")));
    }
    let h: f64 = -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Mean similarity to the neighbors.
pub fn neighbor_affinity(sims: &[f64]) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::EmptyInput("neighbor similarities"));
    }
    if let Some(s) = sims.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::ShapeMismatch(format!("similarity {s} outside [0, 1]")));
    }
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    pub np: Vec<f64>,
    pub na: Vec<f64>,
    pub nau: Vec<f64>,
}

impl UncertaintyScores {
    pub fn zeros(n: usize) -> Self {
        UncertaintyScores {
            np: vec![0.0; n],
            na: vec![0.0; n],
            nau: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nau.is_empty()
    }
}

pub fn compute_nau(fs: &FeatureSet, g: &NeighborGraph, pl: &PseudoLabels) -> Result<UncertaintyScores> {
    let n = fs.n();
    if g.n() != n || pl.labels().len() != n {
        return Err(Error::ShapeMismatch(format!(
            "features {n}, graph {}, pseudo-labels {}",
            g.n(),
            pl.labels().len()
        )));
    }
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let np = neighbor_purity(&g.neighbor_label_distribution(pl, i)?)?;
            let na = neighbor_affinity(g.similarities(i))?;
            Ok((np, na))
        })
        .collect::<Result<_>>()?;
    let (np, na): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let nau = np.iter().zip(&na).map(|(p, a)| p * a).collect();
    Ok(UncertaintyScores { np, na, nau })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mhpl,
    Random,
    Entropy,
    Bvsb,
    Lc,
    Ctc,
    Coreset,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Mhpl,
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Bvsb,
        Strategy::Lc,
        Strategy::Ctc,
        Strategy::Coreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mhpl => "mhpl",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Bvsb => "bvsb",
            Strategy::Lc => "lc",
            Strategy::Ctc => "ctc",
            Strategy::Coreset => "coreset",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

/// Which factors of NAU rank the candidates (ablation switch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankScore {
    #[default]
    Nau,
    /// Purity only.
    PurityOnly,
    /// Affinity only.
    AffinityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhplOptions {
    pub rank: RankScore,
    pub diversity_relaxation: bool,
}

impl Default for MhplOptions {
    fn default() -> Self {
        MhplOptions {
            rank: RankScore::Nau,
            diversity_relaxation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    NearestSelected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub index: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: Option<u64>,
    /// Insertion order.
    pub selected: Vec<usize>,
    /// Parallel to `selected`: admitted by the fallback pass.
    pub fallback: Vec<bool>,
    pub skipped: Vec<Skip>,
    pub scores: UncertaintyScores,
}

/// Descending score, ties to the lower index.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

fn check_budget(m: usize, n: usize) -> Result<()> {
    if m > n {
        return Err(Error::BudgetExceedsSamples { m, n });
    }
    Ok(())
}

/// Admission over `ranking` (descending): a candidate is admitted unless its
/// nearest neighbor is already selected. If candidates run out below budget,
/// skipped candidates are admitted in ranking order and flagged.
fn relaxed_admission(
    ranking: &[f64],
    g: &NeighborGraph,
    m: usize,
) -> Result<(Vec<usize>, Vec<bool>, Vec<Skip>)> {
    let n = ranking.len();
    check_budget(m, n)?;
    if g.n() != n {
        return Err(Error::ShapeMismatch(format!("{n} scores for a {}-node graph", g.n())));
    }
    let mut in_set = vec![false; n];
    let mut selected = Vec::with_capacity(m);
    let mut skipped = Vec::new();
    for i in descending(ranking) {
        if selected.len() == m {
            break;
        }
        if in_set[g.nearest(i)?] {
            skipped.push(Skip {
                index: i,
                reason: SkipReason::NearestSelected,
            });
        } else {
            in_set[i] = true;
            selected.push(i);
        }
    }
    let mut fallback = vec![false; selected.len()];
    for s in &skipped {
        if selected.len() == m {
            break;
        }
        selected.push(s.index);
        fallback.push(true);
    }
    Ok((selected, fallback, skipped))
}

/// Neighbor diversity relaxation over the NAU ranking.
pub fn ndr_select(scores: &UncertaintyScores, g: &NeighborGraph, m: usize) -> Result<SelectionResult> {
    let (selected, fallback, skipped) = relaxed_admission(&scores.nau, g, m)?;
    Ok(SelectionResult {
        strategy: Strategy::Mhpl,
        budget: m,
        seed: None,
        selected,
        fallback,
        skipped,
        scores: scores.clone(),
    })
}

/// MHPL selection with ablation switches.
pub fn mhpl_select(
    scores: &UncertaintyScores,
    g: &NeighborGraph,
    m: usize,
    opts: MhplOptions,
) -> Result<SelectionResult> {
    let ranking = match opts.rank {
        RankScore::Nau => &scores.nau,
        RankScore::PurityOnly => &scores.np,
        RankScore::AffinityOnly => &scores.na,
    };
    let (selected, fallback, skipped) = if opts.diversity_relaxation {
        relaxed_admission(ranking, g, m)?
    } else {
        check_budget(m, ranking.len())?;
        let selected: Vec<usize> = descending(ranking).into_iter().take(m).collect();
        (selected.clone(), vec![false; selected.len()], Vec::new())
    };
    Ok(SelectionResult {
        strategy: Strategy::Mhpl,
        budget: m,
        seed: None,
        selected,
        fallback,
        skipped,
        scores: scores.clone(),
    })
}

/// Everything a strategy may look at. Missing pieces are reported per strategy.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionInputs<'a> {
    pub features: Option<&'a FeatureSet>,
    pub probs: Option<&'a Matrix>,
    pub graph: Option<&'a NeighborGraph>,
    pub pseudo_labels: Option<&'a PseudoLabels>,
}

fn prediction_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn top_two_margin(p: &[f64]) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > a {
            b = a;
            a = v;
        } else if v > b {
            b = v;
        }
    }
    if b.is_finite() {
        a - b
    } else {
        a
    }
}

fn random_subset(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

fn ctc_select(fs: &FeatureSet, pl: &PseudoLabels, m: usize) -> Result<Vec<usize>> {
    let centroids = pl.centroids();
    if centroids.cols() != fs.d() {
        return Err(Error::MissingInput {
            strategy: "ctc",
            input: "cluster centroids",
        });
    }
    let k = pl.classes();
    let mut members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for (i, &l) in pl.labels().iter().enumerate() {
        members[l].push((i, similarity(fs.row(i), centroids.row(l))));
    }
    for list in &mut members {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    let mut cursor = vec![0usize; k];
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let mut progressed = false;
        for c in 0..k {
            if out.len() == m {
                break;
            }
            if let Some(&(i, _)) = members[c].get(cursor[c]) {
                out.push(i);
                cursor[c] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(out)
}

/// Cosine distance `1 − clamped similarity`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - similarity(a, b)
}

fn coreset_select(fs: &FeatureSet, m: usize) -> Vec<usize> {
    let (n, d) = (fs.n(), fs.d());
    if m == 0 {
        return Vec::new();
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (acc, v) in mean.iter_mut().zip(fs.row(i)) {
            *acc += v / n as f64;
        }
    }
    let mn = crate::data::norm(&mean);
    if mn > 0.0 {
        mean.iter_mut().for_each(|v| *v /= mn);
    }
    let far = |dist: &[f64], taken: &[bool]| {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| dist[i] > dist[b]) {
                best = Some(i);
            }
        }
        best
    };
    let mut taken = vec![false; n];
    let to_mean: Vec<f64> = (0..n).map(|i| cosine_distance(fs.row(i), &mean)).collect();
    let first = far(&to_mean, &taken).expect("n >= 1");
    taken[first] = true;
    let mut out = vec![first];
    let mut min_dist: Vec<f64> = (0..n).map(|i| cosine_distance(fs.row(i), fs.row(first))).collect();
    while out.len() < m {
        let Some(next) = far(&min_dist, &taken) else {
            break;
        };
        taken[next] = true;
        out.push(next);
        for i in 0..n {
            let dd = cosine_distance(fs.row(i), fs.row(next));
            if dd < min_dist[i] {
                min_dist[i] = dd;
            }
        }
    }
    out
}

/// Classical strategies. The NAU snapshot is attached whenever a graph and
/// pseudo-labels are supplied so that training can weight the queried samples.
pub fn baseline_select(
    strategy: Strategy,
    inputs: SelectionInputs,
    m: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let n = inputs
        .features
        .map(FeatureSet::n)
        .or(inputs.probs.map(Matrix::rows))
        .or(inputs.graph.map(NeighborGraph::n))
        .ok_or(Error::MissingInput {
            strategy: strategy.name(),
            input: "sample data",
        })?;
    check_budget(m, n)?;
    let probs = || {
        inputs.probs.ok_or(Error::MissingInput {
            strategy: strategy.name(),
            input: "prediction probabilities",
        })
    };
    let features = || {
        inputs.features.ok_or(Error::MissingInput {
            strategy: strategy.name(),
            input: "features",
        })
    };
    let selected: Vec<usize> = match strategy {
        Strategy::Random => random_subset(n, m, seed),
        Strategy::Entropy => {
            let s: Vec<f64> = probs()?.iter_rows().map(prediction_entropy).collect();
            descending(&s).into_iter().take(m).collect()
        }
        Strategy::Bvsb => {
            let s: Vec<f64> = probs()?.iter_rows().map(top_two_margin).collect();
            ascending(&s).into_iter().take(m).collect()
        }
        Strategy::Lc => {
            let s: Vec<f64> = probs()?
                .iter_rows()
                .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            ascending(&s).into_iter().take(m).collect()
        }
        Strategy::Ctc => {
            let pl = inputs.pseudo_labels.ok_or(Error::MissingInput {
                strategy: "ctc",
                input: "pseudo-labels",
            })?;
            ctc_select(features()?, pl, m)?
        }
        Strategy::Coreset => coreset_select(features()?, m),
        Strategy::Mhpl => {
            let g = inputs.graph.ok_or(Error::MissingInput {
                strategy: "mhpl",
                input: "neighbor graph",
            })?;
            let pl = inputs.pseudo_labels.ok_or(Error::MissingInput {
                strategy: "mhpl",
                input: "pseudo-labels",
            })?;
            let scores = compute_nau(features()?, g, pl)?;
            return ndr_select(&scores, g, m).map(|mut r| {
                r.seed = Some(seed);
                r
            });
        }
    };
    let scores = match (inputs.features, inputs.graph, inputs.pseudo_labels) {
        (Some(fs), Some(g), Some(pl)) => compute_nau(fs, g, pl)?,
        _ => UncertaintyScores::zeros(n),
    };
    Ok(SelectionResult {
        strategy,
        budget: m,
        seed: Some(seed),
        fallback: vec![false; selected.len()],
        selected,
        skipped: Vec::new(),
        scores,
    })
}

/// Everything derived from one model on one target set: normalized adapter
/// features, predictions, pseudo-labels, neighbor graph and NAU scores.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub embedded: FeatureSet,
    pub probs: Matrix,
    pub pseudo_labels: PseudoLabels,
    pub graph: NeighborGraph,
    pub scores: UncertaintyScores,
}

impl QueryContext {
    pub fn build(fs: &FeatureSet, model: &AdaptModel, q: usize, rounds: usize) -> Result<Self> {
        let embedded = model.embed(fs)?;
        let probs = model.predict_proba(fs);
        let pseudo_labels = cluster_assign(&embedded, &probs, rounds)?;
        let graph = build_graph(&embedded, q)?;
        let scores = compute_nau(&embedded, &graph, &pseudo_labels)?;
        Ok(QueryContext {
            embedded,
            probs,
            pseudo_labels,
            graph,
            scores,
        })
    }

    pub fn select(
        &self,
        strategy: Strategy,
        opts: MhplOptions,
        m: usize,
        seed: u64,
    ) -> Result<SelectionResult> {
        match strategy {
            Strategy::Mhpl => mhpl_select(&self.scores, &self.graph, m, opts).map(|mut r| {
                r.seed = Some(seed);
                r
            }),
            _ => baseline_select(strategy, self.inputs(), m, seed),
        }
    }

    pub fn inputs(&self) -> SelectionInputs<'_> {
        SelectionInputs {
            features: Some(&self.embedded),
            probs: Some(&self.probs),
            graph: Some(&self.graph),
            pseudo_labels: Some(&self.pseudo_labels),
        }
    }
}

/// Select `m` samples at once from the raw source model's view of the target set.
pub fn one_shot_query(fs: &FeatureSet, source_model: &AdaptModel, q: usize, m: usize) -> Result<SelectionResult> {
    check_budget(m, fs.n())?;
    let ctx = QueryContext::build(fs, source_model, q, DEFAULT_ROUNDS)?;
    ndr_select(&ctx.scores, &ctx.graph, m)
}

/// Fraction of selected samples tagged target-like, when tags exist.
pub fn target_like_fraction(sel: &SelectionResult, fs: &FeatureSet) -> Option<f64> {
    let tags = fs.tags()?;
    if sel.selected.is_empty() {
        return None;
    }
    let hits = sel
        .selected
        .iter()
        .filter(|&&i| tags[i] == DomainTag::TargetLike)
        .count();
    Some(hits as f64 / sel.selected.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRecord {
    pub index: usize,
    pub nau: f64,
    pub np: f64,
    pub na: f64,
    pub fallback: bool,
}

/// Serialized form of a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: Option<u64>,
    pub selected: Vec<SelectedRecord>,
    pub skipped: Vec<Skip>,
}

impl SelectionResult {
    pub fn to_record(&self) -> SelectionRecord {
        SelectionRecord {
            schema_version: SELECTION_SCHEMA_VERSION,
            strategy: self.strategy,
            budget: self.budget,
            seed: self.seed,
            selected: self
                .selected
                .iter()
                .zip(&self.fallback)
                .map(|(&i, &fb)| SelectedRecord {
                    index: i,
                    nau: self.scores.nau[i],
                    np: self.scores.np[i],
                    na: self.scores.na[i],
                    fallback: fb,
                })
                .collect(),
            skipped: self.skipped.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("selection serializes")
    }

    /// `index,label` skeleton with empty labels for external annotators.
    pub fn annotation_template(&self) -> String {
        let mut out = String::from("index,label\n");
        for i in &self.selected {
            out.push_str(&format!("{i},\n"));
        }
        out
    }
}

impl SelectionRecord {
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: SelectionRecord = serde_json::from_str(text)?;
        if rec.schema_version != SELECTION_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported selection schema_version {}",
                rec.schema_version
            )));
        }
        Ok(rec)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.index).collect()
    }
}

/// Parse an `index,label` annotation file; blank labels are rejected.
pub fn parse_annotations(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("index,label") => {}
        other => {
            return Err(Error::MalformedHeader(format!(
                "annotation header should be \"index,label\", got {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(row, line)| {
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: 2,
                    found: line.split(',').count(),
                });
            };
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    row,
                    value: s.to_string(),
                })
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}
