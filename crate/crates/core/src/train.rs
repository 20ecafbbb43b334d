//! Mini-batch Adam training with dropout, L2 and best-validation checkpointing.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Result, TfnError};
use crate::fusion::FusionVariant;
use crate::inference::{Prediction, Task};
use crate::metrics::{metrics, MetricRow};
use crate::model::{ArchConfig, ModelConfig, PreparedUtterance, TfnModel};
use crate::regularize::{l2_on_tape, Dropout};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_p: f64,
    pub l2_coeff: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: Task,
    pub variant: FusionVariant,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            dropout_p: 0.15,
            l2_coeff: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            task: Task::Regression,
            variant: FusionVariant::Full,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TfnError::Config(format!("learning_rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TfnError::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if !(self.l2_coeff.is_finite() && self.l2_coeff >= 0.0) {
            return Err(TfnError::Config(format!("l2_coeff must be ≥ 0, got {}", self.l2_coeff)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TfnError::Config("epochs and batch_size must be positive".into()));
        }
        self.arch.validate()
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig::for_dataset(&dataset.header, self.arch.clone(), self.variant, self.task)
    }
}

/// First/second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A `None` gradient counts as zero.
///
/// All gradients are checked before any parameter moves, so a non-finite
/// gradient leaves both `params` and `state` untouched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<Tensor>],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TfnError::dim("adam parameter count", state.m.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or_else(|| format!("#{i}"), Clone::clone);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(TfnError::dim(format!("gradient of {name}"), format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
            if !g.is_finite() {
                return Err(TfnError::NonFiniteGradient(name));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let theta = p.data_mut();
        match g {
            Some(g) => {
                for (((th, &g), m), v) in theta.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *th -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                }
            }
            None => {
                for ((th, m), v) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m *= ADAM_BETA1;
                    *v *= ADAM_BETA2;
                    *th -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's batches (without the L2 term).
    pub train_loss: f64,
    /// MAE for regression, binary or five-class accuracy otherwise.
    pub validation_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TfnModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
}

/// The selection metric for `task` and whether lower is better.
pub fn selection_score(task: Task, row: &MetricRow) -> (Option<f64>, bool) {
    match task {
        Task::Regression => (row.mae.value(), true),
        Task::Binary => (row.binary_acc.value(), false),
        Task::FiveClass => (row.five_class_acc.value(), false),
    }
}

/// Trains a fresh model. With a non-empty `validation` set, the returned
/// weights are those of the epoch with the best validation score (earliest on
/// ties); otherwise the final epoch's weights.
pub fn train(config: &TrainConfig, train_set: &Dataset, validation: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TfnError::Empty("training set".into()));
    }
    let model = TfnModel::new(config.model_config(train_set), derive_seed(config.seed, "init"))?;
    train_from(config, model, train_set, validation)
}

/// As [`train`], starting from the given weights.
pub fn train_from(
    config: &TrainConfig,
    mut model: TfnModel,
    train_set: &Dataset,
    validation: &Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_dataset(&train_set.header)?;
    let items = model.prepare_all(&train_set.utterances)?;
    if items.is_empty() {
        return Err(TfnError::Empty("training set".into()));
    }
    let val_items = model.prepare_all(&validation.utterances)?;
    let names = model.param_names();
    let mut adam = AdamState::new(model.params_mut().into_iter().map(|t| &*t));
    let mut shuffle = Rng::derived(config.seed, "shuffle");
    let mut dropout = if config.dropout_p > 0.0 {
        Some(Dropout::new(config.dropout_p, Rng::derived(config.seed, "dropout"))?)
    } else {
        None
    };
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TfnModel)> = None;

    for epoch in 1..=config.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedUtterance> = chunk.iter().map(|&i| &items[i]).collect();
            let (loss, grads) = step_gradients(&model, &batch, dropout.as_mut(), config.l2_coeff)
                .map_err(|e| diverged(e, epoch, b + 1))?;
            if !loss.is_finite() {
                return Err(TfnError::Diverged { epoch, batch: b + 1, loss });
            }
            adam_step(&mut model.params_mut(), &grads, &names, &mut adam, config.learning_rate)?;
            total += loss;
            batches += 1;
        }
        let validation_score = if val_items.is_empty() {
            None
        } else {
            let preds = model.predict_prepared(&val_items, config.batch_size)?;
            let labels: Vec<f64> = val_items.iter().map(|p| p.label).collect();
            selection_score(config.task, &metrics(&preds, &labels, config.task)?).0
        };
        if let Some(score) = validation_score {
            let lower = config.task == Task::Regression;
            let improved = match &best {
                None => true,
                Some((s, _, _)) => (lower && score < *s) || (!lower && score > *s),
            };
            if improved {
                best = Some((score, epoch, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            validation_score,
        });
    }
    Ok(match best {
        Some((_, best_epoch, model)) => TrainOutcome {
            model,
            history,
            best_epoch,
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: config.epochs,
        },
    })
}

fn diverged(e: TfnError, epoch: usize, batch: usize) -> TfnError {
    match e {
        TfnError::NonFinite(_) => TfnError::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Data loss (without L2) and gradients of the penalized loss for one batch,
/// in parameter storage order.
pub fn step_gradients(
    model: &TfnModel,
    batch: &[&PreparedUtterance],
    dropout: Option<&mut Dropout>,
    l2_coeff: f64,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = model.forward_batch(&mut tape, &bound, batch, dropout)?;
    let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
    let data_loss = bound.inference.loss(&mut tape, out, &labels)?;
    let loss_value = tape.value(data_loss).data()[0];
    let total = if l2_coeff > 0.0 {
        l2_on_tape(&mut tape, data_loss, &bound.regularized, l2_coeff)?
    } else {
        data_loss
    };
    let mut grads = tape.backward(total)?;
    Ok((loss_value, bound.params.iter().map(|&id| grads.take(id)).collect()))
}

/// Mean task loss over `dataset` in evaluation mode.
pub fn dataset_loss(model: &TfnModel, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    let items = model.prepare_all(&dataset.utterances)?;
    if items.is_empty() {
        return Err(TfnError::Empty("dataset".into()));
    }
    let mut sum = 0.0;
    for chunk in items.chunks(batch_size.max(1)) {
        let refs: Vec<&PreparedUtterance> = chunk.iter().collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward_batch(&mut tape, &bound, &refs, None)?;
        let labels: Vec<f64> = chunk.iter().map(|p| p.label).collect();
        let l = bound.inference.loss(&mut tape, out, &labels)?;
        sum += tape.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(sum / items.len() as f64)
}

/// Predictions and metrics of `model` on `dataset`.
pub fn evaluate(model: &TfnModel, dataset: &Dataset) -> Result<(Vec<Prediction>, MetricRow)> {
    model.check_dataset(&dataset.header)?;
    let items = model.prepare_all(&dataset.utterances)?;
    let preds = model.predict_prepared(&items, 64)?;
    let labels: Vec<f64> = dataset.utterances.iter().map(|u| u.label).collect();
    let row = metrics(&preds, &labels, model.config.task)?;
    Ok((preds, row))
}
