//! Sentiment inference network: two ReLU layers and a task-specific head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, BoundDense, DenseLayer, NodeId, Tape, LOG_CLAMP};
use crate::error::{Result, TfnError};
use crate::labels::{binarize_label, class_index, index_class, map_to_five_class};
use crate::regularize::Dropout;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const TRUNK_DEPTH: usize = 2;
pub const DEFAULT_TRUNK_WIDTH: usize = 128;
pub const FIVE_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Binary,
    FiveClass,
    Regression,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Binary, Task::FiveClass, Task::Regression];

    pub fn name(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::FiveClass => "five-class",
            Task::Regression => "regression",
        }
    }

    pub fn head_width(self) -> usize {
        match self {
            Task::FiveClass => FIVE_CLASSES,
            _ => 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = TfnError;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TfnError::Config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    /// Probability of the positive class.
    Binary(f64),
    /// Distribution over classes -2..=2.
    FiveClass([f64; FIVE_CLASSES]),
    /// Score in [-3, 3].
    Regression(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Binary(bool),
    Class(i8),
    Score(f64),
}

/// Positive iff `p >= 0.5`; argmax with ties to the lowest class; raw score.
pub fn decide(pred: &Prediction) -> Decision {
    match *pred {
        Prediction::Binary(p) => Decision::Binary(p >= 0.5),
        Prediction::FiveClass(dist) => {
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            Decision::Class(index_class(best))
        }
        Prediction::Regression(s) => Decision::Score(s),
    }
}

/// Per-example loss; labels are mapped to the prediction's task first.
pub fn loss(pred: &Prediction, label: f64) -> Result<f64> {
    match *pred {
        Prediction::Binary(p) => {
            let y = if binarize_label(label)? { 1.0 } else { 0.0 };
            Ok(-(y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln()))
        }
        Prediction::FiveClass(dist) => {
            let c = class_index(map_to_five_class(label)?);
            Ok(-dist[c].max(LOG_CLAMP).ln())
        }
        Prediction::Regression(s) => {
            binarize_label(label)?;
            Ok((s - label) * (s - label))
        }
    }
}

/// Output layer plus the task's squashing: sigmoid, softmax, or `6 σ(x) - 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub task: Task,
    pub layer: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNetwork {
    pub trunk: Vec<DenseLayer>,
    pub head: TaskHead,
}

impl InferenceNetwork {
    pub fn new(trunk: Vec<DenseLayer>, head: TaskHead) -> Result<Self> {
        if trunk.len() != TRUNK_DEPTH || trunk.iter().any(|l| l.activation != Activation::Relu) {
            return Err(TfnError::Config(format!("inference trunk needs exactly {TRUNK_DEPTH} ReLU layers")));
        }
        if trunk[1].input_dim() != trunk[0].output_dim() || head.layer.input_dim() != trunk[1].output_dim() {
            return Err(TfnError::dim("inference chaining", trunk[1].output_dim(), head.layer.input_dim()));
        }
        if head.layer.output_dim() != head.task.head_width() || head.layer.activation != Activation::Identity {
            return Err(TfnError::dim("task head", head.task.head_width(), head.layer.output_dim()));
        }
        Ok(InferenceNetwork { trunk, head })
    }

    pub fn xavier(input: usize, width: usize, task: Task, rng: &mut Rng) -> Self {
        let trunk = vec![
            DenseLayer::xavier(input, width, Activation::Relu, rng),
            DenseLayer::xavier(width, width, Activation::Relu, rng),
        ];
        let layer = DenseLayer::xavier(width, task.head_width(), Activation::Identity, rng);
        InferenceNetwork {
            trunk,
            head: TaskHead { task, layer },
        }
    }

    pub fn zeros(input: usize, width: usize, task: Task) -> Self {
        InferenceNetwork {
            trunk: vec![
                DenseLayer::zeros(input, width, Activation::Relu),
                DenseLayer::zeros(width, width, Activation::Relu),
            ],
            head: TaskHead {
                task,
                layer: DenseLayer::zeros(width, task.head_width(), Activation::Identity),
            },
        }
    }

    pub fn task(&self) -> Task {
        self.head.task
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].input_dim()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundInference {
        BoundInference {
            trunk: self.trunk.iter().map(|l| l.bind(tape)).collect(),
            head: self.head.layer.bind(tape),
            task: self.head.task,
        }
    }

    pub fn infer(&self, fused: &[f64]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(Tensor::row_vector(fused.to_vec()));
        let out = bound.forward(&mut tape, x, None)?;
        Ok(predictions(self.task(), tape.value(out)).remove(0))
    }
}

#[derive(Debug, Clone)]
pub struct BoundInference {
    pub trunk: Vec<BoundDense>,
    pub head: BoundDense,
    pub task: Task,
}

impl BoundInference {
    /// Returns probabilities (`[B, 1]` or `[B, 5]`) or regression scores (`[B, 1]`).
    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId, mut dropout: Option<&mut Dropout>) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.trunk {
            h = layer.forward(tape, h)?;
            if let Some(d) = dropout.as_deref_mut() {
                h = d.apply(tape, h)?;
            }
        }
        let logits = self.head.forward(tape, h)?;
        match self.task {
            Task::Binary => tape.sigmoid(logits),
            Task::FiveClass => tape.softmax(logits),
            Task::Regression => {
                let s = tape.sigmoid(logits)?;
                tape.affine(s, 6.0, -3.0)
            }
        }
    }

    /// Mean task loss of `output` (from [`BoundInference::forward`]) against raw labels.
    pub fn loss(&self, tape: &mut Tape<'_>, output: NodeId, labels: &[f64]) -> Result<NodeId> {
        match self.task {
            Task::Binary => {
                let t = labels
                    .iter()
                    .map(|&y| binarize_label(y).map(|b| if b { 1.0 } else { 0.0 }))
                    .collect::<Result<Vec<_>>>()?;
                tape.bce_mean(output, t)
            }
            Task::FiveClass => {
                let c = labels
                    .iter()
                    .map(|&y| map_to_five_class(y).map(class_index))
                    .collect::<Result<Vec<_>>>()?;
                tape.cross_entropy_mean(output, c)
            }
            Task::Regression => {
                for &y in labels {
                    binarize_label(y)?;
                }
                tape.mse_mean(output, labels.to_vec())
            }
        }
    }
}

/// Splits a batched head output into per-example predictions.
pub fn predictions(task: Task, output: &Tensor) -> Vec<Prediction> {
    (0..output.rows())
        .map(|r| {
            let row = output.row(r);
            match task {
                Task::Binary => Prediction::Binary(row[0]),
                Task::Regression => Prediction::Regression(row[0]),
                Task::FiveClass => {
                    let mut d = [0.0; FIVE_CLASSES];
                    d.copy_from_slice(row);
                    Prediction::FiveClass(d)
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_networks() {
        let b = InferenceNetwork::zeros(7, 4, Task::Binary).infer(&[1.0; 7]).unwrap();
        assert_eq!(b, Prediction::Binary(0.5));
        let f = InferenceNetwork::zeros(7, 4, Task::FiveClass).infer(&[1.0; 7]).unwrap();
        match f {
            Prediction::FiveClass(d) => {
                assert!(d.iter().all(|&p| (p - 0.2).abs() < 1e-15));
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let r = InferenceNetwork::zeros(7, 4, Task::Regression).infer(&[1.0; 7]).unwrap();
        assert_eq!(r, Prediction::Regression(0.0));
        assert!(InferenceNetwork::zeros(7, 4, Task::Regression).infer(&[1.0; 6]).is_err());
    }

    #[test]
    fn loss_values() {
        assert!((loss(&Prediction::Binary(0.5), 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss(&Prediction::Regression(1.0), -3.0).unwrap(), 16.0);
        let l = loss(&Prediction::FiveClass([0.2; 5]), -1.7).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!(loss(&Prediction::Regression(0.0), 3.5).is_err());
        assert!(loss(&Prediction::Binary(0.0), 1.0).unwrap().is_finite());
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(&Prediction::Binary(0.5)), Decision::Binary(true));
        assert_eq!(decide(&Prediction::Binary(0.4999)), Decision::Binary(false));
        assert_eq!(decide(&Prediction::FiveClass([0.2; 5])), Decision::Class(-2));
        assert_eq!(decide(&Prediction::FiveClass([0.1, 0.5, 0.2, 0.1, 0.1])), Decision::Class(-1));
        assert_eq!(decide(&Prediction::Regression(-0.3)), Decision::Score(-0.3));
    }

    #[test]
    fn structure_checks() {
        let mut rng = Rng::new(1);
        let net = InferenceNetwork::xavier(5, 8, Task::FiveClass, &mut rng);
        assert!(InferenceNetwork::new(net.trunk.clone(), net.head.clone()).is_ok());
        assert!(InferenceNetwork::new(net.trunk[..1].to_vec(), net.head.clone()).is_err());
        let wrong = TaskHead {
            task: Task::Binary,
            layer: net.head.layer.clone(),
        };
        assert!(InferenceNetwork::new(net.trunk.clone(), wrong).is_err());
    }
}
