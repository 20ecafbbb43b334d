//! Modality embedding subnetworks.
//!
//! * Language: LSTM over word vectors, the hidden states `h_1..h_T` stacked
//!   and zero-padded (or truncated, keeping the first words) to `t_max` rows,
//!   flattened, then one sigmoid affine layer.
//! * Visual and acoustic: mean-pooled frame features through three ReLU
//!   layers.

use crate::autodiff::{Activation, BoundDense, BoundLstm, DenseLayer, LstmCell, NodeId, Tape};
use crate::error::{DataError, Result, TfnError};
use crate::regularize::Dropout;
use crate::rng::Rng;
use crate::tensor::{Tensor, Vector};

pub const DEFAULT_T_MAX: usize = 20;
pub const SUBNET_DEPTH: usize = 3;

/// Componentwise mean over frames.
pub fn mean_pool<F: AsRef<[f64]>>(frames: &[F]) -> Result<Vector> {
    let first = frames
        .first()
        .ok_or_else(|| TfnError::Empty("mean_pool needs at least one frame".into()))?;
    let d = first.as_ref().len();
    let mut acc = vec![0.0; d];
    for (index, f) in frames.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != d {
            return Err(DataError::RaggedFrames {
                index,
                expected: d,
                actual: f.len(),
            }
            .into());
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    Ok(Tensor::vector(acc.into_iter().map(|s| s / n).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbeddings {
    pub z_l: Vector,
    pub z_v: Vector,
    pub z_a: Vector,
}

/// Batched word sequences, time-major: `steps[t]` is `[B, word_dim]` and
/// `masks[t]` is `[B, hidden]` with 1 where example `b` has a word at `t`.
#[derive(Debug, Clone)]
pub struct WordBatch {
    pub steps: Vec<Tensor>,
    pub masks: Vec<Tensor>,
    pub batch: usize,
}

impl WordBatch {
    /// Sequences longer than `t_max` are truncated to their first `t_max` words.
    pub fn new<W: AsRef<[f64]>>(sequences: &[&[W]], word_dim: usize, hidden: usize, t_max: usize) -> Result<Self> {
        let batch = sequences.len();
        if batch == 0 {
            return Err(TfnError::Empty("word batch".into()));
        }
        let mut longest = 0;
        for s in sequences {
            if s.is_empty() {
                return Err(TfnError::Empty("utterance with no words".into()));
            }
            if let Some(w) = s.iter().find(|w| w.as_ref().len() != word_dim) {
                return Err(TfnError::dim("word vector", word_dim, w.as_ref().len()));
            }
            longest = longest.max(s.len());
        }
        let steps_n = longest.min(t_max);
        let mut steps = Vec::with_capacity(steps_n);
        let mut masks = Vec::with_capacity(steps_n);
        for t in 0..steps_n {
            let mut x = vec![0.0; batch * word_dim];
            let mut m = vec![0.0; batch * hidden];
            for (b, s) in sequences.iter().enumerate() {
                if let Some(w) = s.get(t) {
                    x[b * word_dim..(b + 1) * word_dim].copy_from_slice(w.as_ref());
                    m[b * hidden..(b + 1) * hidden].fill(1.0);
                }
            }
            steps.push(Tensor::new(vec![batch, word_dim], x)?);
            masks.push(Tensor::new(vec![batch, hidden], m)?);
        }
        Ok(WordBatch { steps, masks, batch })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSubnetwork {
    pub lstm: LstmCell,
    /// Sigmoid layer from the flattened `[t_max * hidden]` states to `z_l`.
    pub fc: DenseLayer,
    pub t_max: usize,
}

impl LanguageSubnetwork {
    pub fn new(lstm: LstmCell, fc: DenseLayer, t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(TfnError::Config("t_max must be positive".into()));
        }
        if fc.input_dim() != t_max * lstm.hidden() {
            return Err(TfnError::dim("language fc input", t_max * lstm.hidden(), fc.input_dim()));
        }
        if fc.activation != Activation::Sigmoid {
            return Err(TfnError::Config("language fc must use a sigmoid".into()));
        }
        Ok(LanguageSubnetwork { lstm, fc, t_max })
    }

    pub fn xavier(word_dim: usize, projection: usize, hidden: usize, out: usize, t_max: usize, rng: &mut Rng) -> Self {
        LanguageSubnetwork {
            lstm: LstmCell::xavier(word_dim, projection, hidden, rng),
            fc: DenseLayer::xavier(t_max * hidden, out, Activation::Sigmoid, rng),
            t_max,
        }
    }

    pub fn zeros(word_dim: usize, projection: usize, hidden: usize, out: usize, t_max: usize) -> Self {
        LanguageSubnetwork {
            lstm: LstmCell::zeros(word_dim, projection, hidden),
            fc: DenseLayer::zeros(t_max * hidden, out, Activation::Sigmoid),
            t_max,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fc.output_dim()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundLanguage {
        BoundLanguage {
            lstm: self.lstm.bind(tape),
            fc: self.fc.bind(tape),
            t_max: self.t_max,
            word_dim: self.lstm.word_dim(),
        }
    }

    pub fn word_batch<W: AsRef<[f64]>>(&self, sequences: &[&[W]]) -> Result<WordBatch> {
        WordBatch::new(sequences, self.lstm.word_dim(), self.lstm.hidden(), self.t_max)
    }

    /// `z_l` for one word sequence.
    pub fn embed<W: AsRef<[f64]>>(&self, words: &[W]) -> Result<Vector> {
        let batch = self.word_batch(&[words])?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let z = bound.forward(&mut tape, &batch)?;
        Ok(Tensor::vector(tape.value(z).data().to_vec()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLanguage {
    pub lstm: BoundLstm,
    pub fc: BoundDense,
    t_max: usize,
    word_dim: usize,
}

impl BoundLanguage {
    pub fn forward(&self, tape: &mut Tape<'_>, words: &WordBatch) -> Result<NodeId> {
        let hd = self.lstm.hidden();
        let b = words.batch;
        let mut h = tape.constant(Tensor::zeros(&[b, hd]));
        let mut c = tape.constant(Tensor::zeros(&[b, hd]));
        let mut rows = Vec::with_capacity(self.t_max + 1);
        for (x, mask) in words.steps.iter().zip(&words.masks) {
            if x.cols() != self.word_dim {
                return Err(TfnError::dim("word vector", self.word_dim, x.cols()));
            }
            let xn = tape.constant(x.clone());
            (h, c) = self.lstm.step(tape, xn, h, c)?;
            let m = tape.constant(mask.clone());
            rows.push(tape.mul(h, m)?);
        }
        let used = rows.len();
        if used < self.t_max {
            rows.push(tape.constant(Tensor::zeros(&[b, (self.t_max - used) * hd])));
        }
        let flat = tape.concat_cols(&rows)?;
        self.fc.forward(tape, flat)
    }
}

/// Three ReLU layers over a pooled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySubnetwork {
    pub layers: Vec<DenseLayer>,
}

impl ModalitySubnetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != SUBNET_DEPTH {
            return Err(TfnError::Config(format!(
                "modality subnetwork needs exactly {SUBNET_DEPTH} layers, got {}",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(TfnError::dim("subnetwork chaining", pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        if layers.iter().any(|l| l.activation != Activation::Relu) {
            return Err(TfnError::Config("modality subnetwork layers must be ReLU".into()));
        }
        Ok(ModalitySubnetwork { layers })
    }

    pub fn xavier(input: usize, width: usize, rng: &mut Rng) -> Self {
        let layers = (0..SUBNET_DEPTH)
            .map(|i| DenseLayer::xavier(if i == 0 { input } else { width }, width, Activation::Relu, rng))
            .collect();
        ModalitySubnetwork { layers }
    }

    pub fn zeros(input: usize, width: usize) -> Self {
        let layers = (0..SUBNET_DEPTH)
            .map(|i| DenseLayer::zeros(if i == 0 { input } else { width }, width, Activation::Relu))
            .collect();
        ModalitySubnetwork { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[SUBNET_DEPTH - 1].output_dim()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundModality {
        BoundModality {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Embedding of one pooled feature vector (visual_embed / acoustic_embed).
    pub fn embed(&self, x: &[f64]) -> Result<Vector> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xn = tape.constant(Tensor::row_vector(x.to_vec()));
        let z = bound.forward(&mut tape, xn, None)?;
        Ok(Tensor::vector(tape.value(z).data().to_vec()))
    }
}

#[derive(Debug, Clone)]
pub struct BoundModality {
    pub layers: Vec<BoundDense>,
}

impl BoundModality {
    /// Applies dropout after every hidden layer when `dropout` is given.
    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId, mut dropout: Option<&mut Dropout>) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h)?;
            if let Some(d) = dropout.as_deref_mut() {
                h = d.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}
