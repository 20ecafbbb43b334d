//! Optimiser, regularisation, training loop and cross-validation behaviour.

use std::collections::BTreeSet;

use tfn_core::cv::{ablate, cross_validate, grid_search, speaker_folds};
use tfn_core::data::{synth_generate, Dataset, SynthSpec};
use tfn_core::fusion::FusionVariant;
use tfn_core::inference::Task;
use tfn_core::model::{ArchConfig, TfnModel};
use tfn_core::regularize::{apply_dropout, l2_penalty};
use tfn_core::rng::{derive_seed, Rng};
use tfn_core::train::{adam_step, train, AdamState, TrainConfig};
use tfn_core::{Tensor, TfnError};

fn data(n: usize) -> Dataset {
    synth_generate(&SynthSpec {
        n_utterances: n,
        n_speakers: 6,
        word_dim: 8,
        visual_dim: 4,
        acoustic_dim: 4,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        arch: ArchConfig {
            projection_dim: 6,
            lstm_hidden: 6,
            language_dim: 4,
            t_max: 10,
            subnet_width: 4,
            trunk_width: 16,
        },
        ..TrainConfig::default()
    }
}

fn weights(m: &TfnModel) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    m.for_each_param(|p| out.push(p.tensor.data().iter().map(|v| v.to_bits()).collect()));
    out
}

#[test]
fn adam_two_steps_match_hand_computation() {
    let mut p = Tensor::vector(vec![1.0, -2.0]);
    let mut state = AdamState::new([&p]);
    let names = vec!["w".to_string()];
    let (g1, g2) = ([0.5, -1.0], [0.25, 3.0]);
    let lr = 0.01;
    adam_step(&mut [&mut p], &[Some(Tensor::vector(g1.to_vec()))], &names, &mut state, lr).unwrap();
    adam_step(&mut [&mut p], &[Some(Tensor::vector(g2.to_vec()))], &names, &mut state, lr).unwrap();
    for i in 0..2 {
        let (mut th, mut m, mut v) = ([1.0, -2.0][i], 0.0, 0.0);
        for (t, g) in [(1, g1[i]), (2, g2[i])] {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.data()[i] - th).abs() < 1e-15);
    }
    assert_eq!(state.step, 2);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let d = data(60);
    let config = TrainConfig {
        learning_rate: 0.0,
        ..small(2)
    };
    let out = train(&config, &d, &d.subset(&[0, 1])).unwrap();
    let init = TfnModel::new(config.model_config(&d), derive_seed(config.seed, "init")).unwrap();
    assert_eq!(weights(&out.model), weights(&init));
}

#[test]
fn training_is_deterministic() {
    let d = data(60);
    let config = small(3);
    let a = train(&config, &d, &d.subset(&[0, 1, 2])).unwrap();
    let b = train(&config, &d, &d.subset(&[0, 1, 2])).unwrap();
    assert_eq!(weights(&a.model), weights(&b.model));
    assert_eq!(a.history, b.history);
    let c = train(&TrainConfig { seed: 1, ..config }, &d, &d.subset(&[0, 1, 2])).unwrap();
    assert_ne!(weights(&a.model), weights(&c.model));
}

#[test]
fn training_reduces_loss() {
    let d = data(120);
    let config = TrainConfig {
        learning_rate: 2e-3,
        dropout_p: 0.0,
        ..small(15)
    };
    let out = train(&config, &d, &Dataset { header: d.header.clone(), utterances: vec![] }).unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(out.best_epoch, 15);
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = Rng::new(5);
    let p = 0.15;
    let x = [2.0; 1];
    let n = 200_000;
    let (mut sum, mut zeros) = (0.0, 0);
    for _ in 0..n {
        let y = apply_dropout(&x, p, &mut rng, true).unwrap()[0];
        if y == 0.0 {
            zeros += 1;
        } else {
            assert!((y - 2.0 / 0.85).abs() < 1e-12);
        }
        sum += y;
    }
    assert!((sum / n as f64 - 2.0).abs() < 0.01);
    assert!((zeros as f64 / n as f64 - p).abs() < 0.005);
    assert_eq!(apply_dropout(&[1.0, 2.0], p, &mut rng, false).unwrap(), vec![1.0, 2.0]);
    assert!(apply_dropout(&x, 1.0, &mut rng, true).is_err());
}

#[test]
fn l2_penalty_value_and_shrinkage() {
    let a = Tensor::vector(vec![1.0, -2.0]);
    let b = Tensor::matrix(1, 2, vec![3.0, 0.5]).unwrap();
    assert_eq!(l2_penalty([&a, &b], 0.1).unwrap(), 0.1 * (1.0 + 4.0 + 9.0 + 0.25));

    let d = data(60);
    let norm = |m: &TfnModel| {
        let mut s = 0.0;
        m.for_each_param(|p| {
            if p.regularized {
                s += p.tensor.sum_squares();
            }
        });
        s
    };
    let base = TrainConfig {
        learning_rate: 1e-2,
        dropout_p: 0.0,
        ..small(5)
    };
    let empty = Dataset { header: d.header.clone(), utterances: vec![] };
    let free = train(&TrainConfig { l2_coeff: 0.0, ..base.clone() }, &d, &empty).unwrap();
    let decayed = train(&TrainConfig { l2_coeff: 1.0, ..base }, &d, &empty).unwrap();
    assert!(norm(&decayed.model) < norm(&free.model));
}

#[test]
fn grid_search_prefers_training_over_frozen_weights() {
    let d = data(120);
    let folds = speaker_folds(&d, 3, 0).unwrap();
    let f = &folds[0];
    let grid = [
        TrainConfig { learning_rate: 0.0, ..small(8) },
        TrainConfig { learning_rate: 5e-3, ..small(8) },
    ];
    let out = grid_search(&grid, &d.subset(&f.train), &d.subset(&f.validation)).unwrap();
    assert_eq!(out.best, 1, "{:?}", out.scores);
    assert!(matches!(grid_search(&[], &d, &d), Err(TfnError::Config(_))));
}

#[test]
fn folds_partition_speakers() {
    let d = data(120);
    let folds = speaker_folds(&d, 3, 7).unwrap();
    let mut tested = BTreeSet::new();
    for f in &folds {
        let mut all: Vec<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for &i in &f.test {
            tested.insert(d.utterances[i].speaker_id.clone());
        }
        assert_eq!(f.validation_videos.len(), 4);
    }
    assert_eq!(tested.len(), 6);
    assert_eq!(speaker_folds(&d, 3, 7).unwrap().iter().map(|f| f.test.clone()).collect::<Vec<_>>(), folds.iter().map(|f| f.test.clone()).collect::<Vec<_>>());
    assert!(matches!(speaker_folds(&d, 7, 0), Err(TfnError::TooFewSpeakers { speakers: 6, folds: 7 })));
    assert!(matches!(speaker_folds(&d, 1, 0), Err(TfnError::Config(_))));
}

#[test]
fn cross_validation_reports_every_fold() {
    let d = data(90);
    let config = TrainConfig {
        task: Task::Binary,
        ..small(2)
    };
    let r = cross_validate(&d, 3, &config).unwrap();
    assert_eq!(r.folds.len(), 3);
    assert_eq!(r.folds.iter().map(|f| f.test_size).sum::<usize>(), 90);
    assert!(r.mean.binary_acc.value().is_some());
    assert!(r.mean.mae.value().is_none());
    assert_eq!(r.to_json(), cross_validate(&d, 3, &config).unwrap().to_json());
}

#[test]
fn ablation_covers_every_variant_in_order() {
    let d = data(90);
    let r = ablate(&d, 3, &small(1)).unwrap();
    let order: Vec<FusionVariant> = r.rows.iter().map(|x| x.variant).collect();
    assert_eq!(order, FusionVariant::ABLATION_ORDER);
    assert_eq!(r.table().lines().filter(|l| l.starts_with("TFN")).count(), 8);
}
