mod common;

use mhpl::query::Strategy;
use mhpl::synth::{generate, train_source_head, ShiftSpec, SourceTraining};
use mhpl::train::{run_adaptation, run_mhpl, GroundTruth, QueryPlan, TrainConfig};

fn benchmark(seed: u64) -> (mhpl::data::FeatureSet, mhpl::model::AdaptModel) {
    let spec = ShiftSpec {
        seed,
        n_source: 300,
        n_target: 300,
        ..Default::default()
    };
    let b = generate(&spec).unwrap();
    let model = train_source_head(&b.source, SourceTraining { seed, ..Default::default() })
        .unwrap()
        .model;
    (b.target, model)
}

fn short(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs: 4,
        ..Default::default()
    }
}

#[test]
fn head_stays_frozen_and_adapter_moves() {
    let (target, source) = benchmark(1);
    for hidden in [0, 4] {
        let cfg = TrainConfig { hidden, ..short(1) };
        let out = run_mhpl(&target, &source, &cfg, 15, &GroundTruth(&target)).unwrap();
        let (a, b) = (out.model.head_weights(), source.head_weights());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (a, b) = (out.model.head_bias(), source.head_bias());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(&out.model.params()[..source.params().len()], source.params());
    }
}

#[test]
fn no_steps_reproduces_source_predictions() {
    let (target, source) = benchmark(2);
    let cfg = TrainConfig {
        iterations_per_epoch: Some(0),
        ..short(2)
    };
    let out = run_mhpl(&target, &source, &cfg, 15, &GroundTruth(&target)).unwrap();
    assert_eq!(out.model.predict_proba(&target), source.predict_proba(&target));
    assert_eq!(out.report.final_acc, out.report.source_acc);
}

#[test]
fn zero_budget_and_beta_leave_only_entropy_and_diversity() {
    let (target, source) = benchmark(3);
    let cfg = TrainConfig {
        beta: 0.0,
        ..short(3)
    };
    let out = run_mhpl(&target, &source, &cfg, 0, &GroundTruth(&target)).unwrap();
    assert_eq!(out.report.epochs.len(), 4);
    for e in &out.report.epochs {
        assert_eq!(e.nf_labeled, 0.0);
        assert_eq!(e.nf_unlabeled, 0.0);
        assert!((e.total - (e.ent + e.div)).abs() <= 1e-12);
    }
}

#[test]
fn identical_inputs_give_bitwise_identical_parameters() {
    let (target, source) = benchmark(4);
    for strategy in [Strategy::Mhpl, Strategy::Random, Strategy::Coreset] {
        let plan = QueryPlan::new(strategy, 15);
        let cfg = TrainConfig { hidden: 3, ..short(4) };
        let a = run_adaptation(&target, &source, &cfg, &plan, &GroundTruth(&target)).unwrap();
        let b = run_adaptation(&target, &source, &cfg, &plan, &GroundTruth(&target)).unwrap();
        let bits = |m: &mhpl::model::AdaptModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model), "{strategy}");
        let strip = |r: &mhpl::train::RunReport| mhpl::train::RunReport { wall_ms: 0, ..r.clone() }.to_json();
        assert_eq!(strip(&a.report), strip(&b.report));
    }
}

#[test]
fn late_query_and_budget_checks() {
    let (target, source) = benchmark(5);
    let cfg = short(5);
    let late = QueryPlan {
        query_epoch: 2,
        ..QueryPlan::new(Strategy::Mhpl, 10)
    };
    let out = run_adaptation(&target, &source, &cfg, &late, &GroundTruth(&target)).unwrap();
    assert_eq!(out.report.epochs[0].nf_labeled, 0.0);
    assert!(out.report.epochs[3].nf_labeled > 0.0);
    assert_eq!(out.report.selection.unwrap().selected.len(), 10);

    let too_late = QueryPlan {
        query_epoch: 4,
        ..QueryPlan::new(Strategy::Mhpl, 10)
    };
    assert!(run_adaptation(&target, &source, &cfg, &too_late, &GroundTruth(&target)).is_err());
    assert!(run_mhpl(&target, &source, &cfg, 301, &GroundTruth(&target)).is_err());
}
