//! Paired-seed runs on the default synthetic benchmark.

use std::collections::BTreeMap;

use mhpl::harness::Ablation;
use mhpl::query::Strategy;
use mhpl::synth::{generate, train_source_head, ShiftSpec, SourceTraining};
use mhpl::train::{run_adaptation, GroundTruth, QueryPlan, TrainConfig};
use rayon::prelude::*;

pub const BUDGET: usize = 30;

pub type Trends = BTreeMap<&'static str, Series>;

/// Variants compared in the trend criteria, keyed by a short name.
pub const VARIANTS: &[(&str, Strategy, usize, Ablation)] = &[
    ("mhpl", Strategy::Mhpl, BUDGET, Ablation::None),
    ("random", Strategy::Random, BUDGET, Ablation::None),
    ("entropy", Strategy::Entropy, BUDGET, Ablation::None),
    ("m0", Strategy::Mhpl, 0, Ablation::None),
    ("query_epoch_10", Strategy::Mhpl, BUDGET, Ablation::QueryEpoch(10)),
    ("no_ndr", Strategy::Mhpl, BUDGET, Ablation::NoNdr),
    ("no_na", Strategy::Mhpl, BUDGET, Ablation::NoNa),
    ("no_nf_weight", Strategy::Mhpl, BUDGET, Ablation::NoNfWeight),
];

#[derive(Debug, Default, Clone)]
pub struct Series {
    pub acc: Vec<f64>,
    pub target_like: Vec<f64>,
    pub max_wall_ms: u64,
}

impl Series {
    pub fn mean_acc(&self) -> f64 {
        super::mean(&self.acc)
    }

    pub fn mean_target_like(&self) -> f64 {
        super::mean(&self.target_like)
    }
}

/// Runs every variant on seeds `0..seeds`; each seed has its own benchmark and
/// source head, shared by all variants.
pub fn run(seeds: u64) -> Trends {
    let benches: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let b = generate(&ShiftSpec { seed, ..Default::default() }).unwrap();
            let fit = train_source_head(&b.source, SourceTraining { seed, ..Default::default() }).unwrap();
            (b.target, fit.model)
        })
        .collect();
    let jobs: Vec<(usize, u64)> = (0..VARIANTS.len())
        .flat_map(|v| (0..seeds).map(move |s| (v, s)))
        .collect();
    let results: Vec<(usize, f64, Option<f64>, u64)> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (_, strategy, m, ablation) = VARIANTS[v];
            let (target, source) = &benches[seed as usize];
            let mut cfg = TrainConfig { seed, ..Default::default() };
            let mut plan = QueryPlan::new(strategy, m);
            ablation.apply(&mut plan, &mut cfg);
            let out = run_adaptation(target, source, &cfg, &plan, &GroundTruth(target)).unwrap();
            let r = out.report;
            (v, r.final_acc.unwrap(), r.target_like_frac_selected, r.wall_ms)
        })
        .collect();
    let mut out: BTreeMap<&'static str, Series> = BTreeMap::new();
    for (v, acc, tl, ms) in results {
        let s = out.entry(VARIANTS[v].0).or_default();
        s.acc.push(acc);
        if let Some(t) = tl {
            s.target_like.push(t);
        }
        s.max_wall_ms = s.max_wall_ms.max(ms);
    }
    out
}
