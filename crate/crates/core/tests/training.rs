mod common;

use carp_core::corpus::{PreprocessConfig, SplitConfig};
use carp_core::evaluation::model_mse;
use carp_core::training::EpochRecord;
use carp_core::{train, Model, PreparedDataset, SplitKind, TrainConfig};
use common::synthetic_corpus;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        embed_dim: 12,
        filters: 8,
        latent: 6,
        slots: 2,
        iterations: 2,
        batch_size: 10,
        max_epochs: 3,
        seed,
        ..Default::default()
    }
}

fn dataset(records: usize, users: usize, items: usize) -> PreparedDataset {
    let corpus = synthetic_corpus(records, users, items, 7);
    PreparedDataset::prepare(&corpus, &PreprocessConfig::default(), &SplitConfig { seed: 3, ..Default::default() }).unwrap()
}

fn curve(log: &[EpochRecord]) -> Vec<(f64, f64, f64, f64)> {
    log.iter().map(|r| (r.train_loss, r.sqr, r.stm, r.val_mse)).collect()
}

#[test]
fn fixed_seed_gives_identical_loss_curve() {
    let data = dataset(120, 15, 12);
    let a = train(&data, &small_config(9), |_| {}).unwrap();
    let b = train(&data, &small_config(9), |_| {}).unwrap();
    assert_eq!(curve(&a.log), curve(&b.log));
    assert_eq!(a.last.params, b.last.params);
    let c = train(&data, &small_config(10), |_| {}).unwrap();
    assert_ne!(curve(&a.log), curve(&c.log));
}

#[test]
fn toy_corpus_overfits() {
    let data = dataset(50, 10, 8);
    let cfg = TrainConfig {
        keep_prob: 1.0,
        max_epochs: 200,
        patience: 200,
        learning_rate: 0.003,
        ..small_config(1)
    };
    let examples = data.split.examples(SplitKind::Train);
    let before = model_mse(&Model::new(cfg.model_config(&data.meta), cfg.seed), &data.bank, &examples).unwrap();
    let out = train(&data, &cfg, |_| {}).unwrap();
    let after = model_mse(&out.last, &data.bank, &examples).unwrap();
    println!("train MSE {before:.4} -> {after:.4} over {} pairs", examples.len());
    assert!(after <= 0.1 * before, "{before} -> {after}");
    assert!(out.log.iter().all(|r| r.train_loss.is_finite()));
}
