//! Speaker-independent cross-validation, grid search and the ablation sweep.

use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::error::{Result, TfnError};
use crate::fusion::FusionVariant;
use crate::metrics::MetricRow;
use crate::report::{AblationReport, ExperimentReport, FoldReport};
use crate::rng::{derive_seed, Rng};
use crate::train::{evaluate, train, TrainConfig, TrainOutcome};

/// Number of videos held out of each training fold for model selection.
pub const VALIDATION_VIDEOS: usize = 4;

/// Utterance indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test_speakers: Vec<String>,
    pub validation_videos: Vec<String>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits speakers into `k` folds: sorted ids are shuffled with a stream
/// derived from `seed`, then dealt round-robin. Within each training fold the
/// lexicographically last [`VALIDATION_VIDEOS`] video ids become validation.
pub fn speaker_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(TfnError::Config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    let mut speakers = dataset.speakers();
    if speakers.len() < k {
        return Err(TfnError::TooFewSpeakers {
            speakers: speakers.len(),
            folds: k,
        });
    }
    Rng::derived(seed, "folds").shuffle(&mut speakers);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test_speakers: BTreeSet<&str> = speakers.iter().skip(f).step_by(k).map(String::as_str).collect();
        let (test, rest): (Vec<usize>, Vec<usize>) =
            (0..dataset.len()).partition(|&i| test_speakers.contains(dataset.utterances[i].speaker_id.as_str()));
        let (train, validation, validation_videos) = validation_split(dataset, &rest)?;
        let fold = Fold {
            index: f,
            test_speakers: test_speakers.into_iter().map(str::to_string).collect(),
            validation_videos,
            train,
            validation,
            test,
        };
        check_disjoint(dataset, &fold)?;
        folds.push(fold);
    }
    Ok(folds)
}

/// Splits `indices` into (train, validation, validation video ids).
pub fn validation_split(dataset: &Dataset, indices: &[usize]) -> Result<(Vec<usize>, Vec<usize>, Vec<String>)> {
    let videos: BTreeSet<&str> = indices.iter().map(|&i| dataset.utterances[i].video_id.as_str()).collect();
    if videos.len() <= VALIDATION_VIDEOS {
        return Err(TfnError::Config(format!(
            "training fold has {} videos; more than {VALIDATION_VIDEOS} are needed to hold out validation videos",
            videos.len()
        )));
    }
    let held: BTreeSet<&str> = videos.iter().rev().take(VALIDATION_VIDEOS).copied().collect();
    let (validation, train): (Vec<usize>, Vec<usize>) =
        indices.iter().partition(|&&i| held.contains(dataset.utterances[i].video_id.as_str()));
    Ok((train, validation, held.into_iter().map(str::to_string).collect()))
}

/// Fails if any speaker of the test fold also occurs in training or validation.
pub fn check_disjoint(dataset: &Dataset, fold: &Fold) -> Result<()> {
    let test: BTreeSet<&str> = fold.test.iter().map(|&i| dataset.utterances[i].speaker_id.as_str()).collect();
    for &i in fold.train.iter().chain(&fold.validation) {
        let s = dataset.utterances[i].speaker_id.as_str();
        if test.contains(s) {
            return Err(TfnError::SpeakerLeak(format!("{s} (fold {})", fold.index)));
        }
    }
    Ok(())
}

/// Result of a grid search.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: usize,
    pub outcome: TrainOutcome,
    /// Best validation score per grid entry; `None` for diverged entries.
    pub scores: Vec<Option<f64>>,
}

/// Trains every configuration and keeps the best validation score (MAE for
/// regression, accuracy otherwise); ties go to the earlier grid entry.
/// Diverged configurations are skipped.
pub fn grid_search(grid: &[TrainConfig], train_set: &Dataset, validation: &Dataset) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(TfnError::Config("empty configuration grid".into()));
    }
    if validation.is_empty() {
        return Err(TfnError::Empty("grid search needs a validation set".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64, TrainOutcome)> = None;
    for (i, config) in grid.iter().enumerate() {
        let outcome = match train(config, train_set, validation) {
            Ok(o) => o,
            Err(TfnError::Diverged { .. } | TfnError::NonFiniteGradient(_)) => {
                scores.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let score = outcome.history[outcome.best_epoch - 1]
            .validation_score
            .ok_or_else(|| TfnError::Empty("validation metric undefined".into()))?;
        scores.push(Some(score));
        let lower = config.task == crate::inference::Task::Regression;
        let better = match &best {
            None => true,
            Some((_, s, _)) => (lower && score < *s) || (!lower && score > *s),
        };
        if better {
            best = Some((i, score, outcome));
        }
    }
    let (best, _, outcome) = best.ok_or(TfnError::AllConfigsDiverged)?;
    Ok(GridOutcome { best, outcome, scores })
}

/// Cross-validation with a single configuration.
pub fn cross_validate(dataset: &Dataset, k: usize, config: &TrainConfig) -> Result<ExperimentReport> {
    cross_validate_grid(dataset, k, std::slice::from_ref(config))
}

/// Cross-validation with per-fold grid search. Folds are drawn from the first
/// configuration's seed; each fold trains with a seed derived from it.
pub fn cross_validate_grid(dataset: &Dataset, k: usize, grid: &[TrainConfig]) -> Result<ExperimentReport> {
    let base = grid.first().ok_or_else(|| TfnError::Config("empty configuration grid".into()))?;
    if grid.iter().any(|c| c.task != base.task || c.variant != base.variant) {
        return Err(TfnError::Config("grid entries must share task and variant".into()));
    }
    let folds = speaker_folds(dataset, k, base.seed)?;
    let mut reports = Vec::with_capacity(k);
    for fold in &folds {
        check_disjoint(dataset, fold)?;
        let fold_grid: Vec<TrainConfig> = grid
            .iter()
            .map(|c| TrainConfig {
                seed: derive_seed(c.seed, &format!("fold/{}", fold.index)),
                ..c.clone()
            })
            .collect();
        let train_set = dataset.subset(&fold.train);
        let validation = dataset.subset(&fold.validation);
        let test = dataset.subset(&fold.test);
        let chosen = grid_search(&fold_grid, &train_set, &validation)?;
        let (_, metrics) = evaluate(&chosen.outcome.model, &test)?;
        reports.push(FoldReport {
            fold: fold.index,
            test_speakers: fold.test_speakers.clone(),
            validation_videos: fold.validation_videos.clone(),
            train_size: fold.train.len(),
            validation_size: fold.validation.len(),
            test_size: fold.test.len(),
            selected_config: chosen.best,
            best_epoch: chosen.outcome.best_epoch,
            metrics,
        });
    }
    let mean = MetricRow::mean(&reports.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(ExperimentReport {
        variant: base.variant,
        task: base.task,
        folds: reports,
        mean,
        config: base.clone(),
    })
}

/// Cross-validates every ablation variant in table order.
pub fn ablate(dataset: &Dataset, k: usize, config: &TrainConfig) -> Result<AblationReport> {
    let rows = FusionVariant::ABLATION_ORDER
        .iter()
        .map(|&variant| cross_validate(dataset, k, &TrainConfig { variant, ..config.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { task: config.task, rows })
}
