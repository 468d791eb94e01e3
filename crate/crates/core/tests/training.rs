mod common;

use wfp_core::dataset::{ProcessedDataset, UnmonitoredPools};
use wfp_core::model::{ModelConfig, Variant};
use wfp_core::training::{evaluate_accuracy, train_model_with, TrainedModel, TrainingConfig};

fn separable_dataset() -> ProcessedDataset {
    common::dataset_with_len(&common::separable_corpus(200, 1), 128, UnmonitoredPools::default(), 1)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        seq_len: 128,
        stem_filters: 8,
        stage_filters: vec![8, 8, 16, 16],
        metadata_units: 8,
        combined_units: 32,
        ..ModelConfig::new(2)
    }
}

fn run(dataset: &ProcessedDataset, variant: Variant, max_epochs: usize, seed: u64) -> TrainedModel {
    let config = TrainingConfig {
        batch_size: 16,
        max_epochs,
        seed,
        ..TrainingConfig::default()
    };
    train_model_with(variant, dataset, &small_config(), &config, |_| {}).unwrap()
}

#[test]
fn separable_classes_are_learned_within_ten_epochs() {
    let ds = separable_dataset();
    let trained = run(&ds, Variant::Direction, 10, 3);
    let acc = evaluate_accuracy(&trained.network, &ds, Variant::Direction, &ds.manifest.splits.train).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert!(trained.history.epochs.len() <= 10);
}

#[test]
fn returned_weights_reproduce_best_validation_accuracy() {
    let ds = separable_dataset();
    let trained = run(&ds, Variant::Time, 6, 4);
    let acc = evaluate_accuracy(&trained.network, &ds, Variant::Time, &ds.manifest.splits.val).unwrap();
    assert!((acc - trained.best_val_acc).abs() <= 1e-6);
    let best = trained
        .history
        .epochs
        .iter()
        .map(|e| e.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, trained.best_val_acc);
    let first_best = trained.history.epochs.iter().find(|e| e.val_acc == best).unwrap();
    assert_eq!(first_best.epoch, trained.best_epoch);
}

#[test]
fn learning_rate_never_increases() {
    let ds = separable_dataset();
    let trained = run(&ds, Variant::Direction, 4, 5);
    let lrs: Vec<f64> = trained.history.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(lrs.iter().all(|&lr| lr >= TrainingConfig::default().min_lr));
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let ds = separable_dataset();
    let trained = run(&ds, Variant::Direction, 0, 6);
    assert!(trained.history.epochs.is_empty());
    assert_eq!(trained.best_epoch, 0);
    let again = run(&ds, Variant::Direction, 0, 6);
    for (a, b) in trained.network.state().iter().zip(again.network.state()) {
        assert_eq!(a.data, b.data);
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let ds = separable_dataset();
    let a = run(&ds, Variant::Time, 3, 7);
    let b = run(&ds, Variant::Time, 3, 7);
    assert_eq!(a.history, b.history);
    for (x, y) in a.network.state().iter().zip(b.network.state()) {
        assert_eq!(x.data, y.data);
    }
}

#[test]
fn mismatched_sequence_length_is_rejected() {
    let ds = separable_dataset();
    let config = TrainingConfig {
        max_epochs: 1,
        ..TrainingConfig::default()
    };
    let err = train_model_with(Variant::Direction, &ds, &ModelConfig::miniature(2), &config, |_| {});
    assert!(err.is_err());
}
