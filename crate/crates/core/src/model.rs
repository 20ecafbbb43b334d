//! The complete network: three embedding subnetworks, tensor fusion and the
//! inference network.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::data::{DatasetHeader, Utterance};
use crate::embeddings::{
    mean_pool, BoundLanguage, BoundModality, LanguageSubnetwork, ModalityEmbeddings, ModalitySubnetwork,
    DEFAULT_T_MAX,
};
use crate::error::{Result, TfnError};
use crate::fusion::{fuse_on_tape, FusionVariant};
use crate::inference::{predictions, BoundInference, InferenceNetwork, Prediction, Task, DEFAULT_TRUNK_WIDTH};
use crate::regularize::Dropout;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Layer sizes. Defaults follow the reference architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Width of the word projection fed to the LSTM gates.
    pub projection_dim: usize,
    pub lstm_hidden: usize,
    /// Size of `z_l`.
    pub language_dim: usize,
    pub t_max: usize,
    /// Width of every visual/acoustic layer, hence the size of `z_v`, `z_a`.
    pub subnet_width: usize,
    pub trunk_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            projection_dim: 128,
            lstm_hidden: 128,
            language_dim: 128,
            t_max: DEFAULT_T_MAX,
            subnet_width: 32,
            trunk_width: DEFAULT_TRUNK_WIDTH,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.projection_dim,
            self.lstm_hidden,
            self.language_dim,
            self.t_max,
            self.subnet_width,
            self.trunk_width,
        ];
        if sizes.contains(&0) {
            return Err(TfnError::Config("architecture sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub word_dim: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    pub variant: FusionVariant,
    pub task: Task,
}

impl ModelConfig {
    pub fn for_dataset(header: &DatasetHeader, arch: ArchConfig, variant: FusionVariant, task: Task) -> Self {
        ModelConfig {
            arch,
            word_dim: header.word_dim,
            visual_dim: header.p,
            acoustic_dim: header.q,
            variant,
            task,
        }
    }

    pub fn fused_dim(&self) -> usize {
        let w = self.arch.subnet_width;
        self.variant.fused_dim(self.arch.language_dim, w, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfnModel {
    pub config: ModelConfig,
    pub language: LanguageSubnetwork,
    pub visual: ModalitySubnetwork,
    pub acoustic: ModalitySubnetwork,
    pub inference: InferenceNetwork,
}

/// A parameter tensor with its stable name.
#[derive(Debug, Clone, Copy)]
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub tensor: &'a Tensor,
    /// Whether the L2 penalty applies (weights of the visual, acoustic and
    /// inference networks).
    pub regularized: bool,
}

/// Utterance reduced to model inputs: words truncated to `t_max`, frames
/// mean-pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUtterance {
    pub words: Vec<Arc<[f64]>>,
    pub visual: Vec<f64>,
    pub acoustic: Vec<f64>,
    pub label: f64,
}

impl TfnModel {
    /// Xavier-initialized model; the initialization stream is derived from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.arch.validate()?;
        let a = &config.arch;
        let mut rng = Rng::derived(seed, "model/init");
        let language = LanguageSubnetwork::xavier(
            config.word_dim,
            a.projection_dim,
            a.lstm_hidden,
            a.language_dim,
            a.t_max,
            &mut rng,
        );
        let visual = ModalitySubnetwork::xavier(config.visual_dim, a.subnet_width, &mut rng);
        let acoustic = ModalitySubnetwork::xavier(config.acoustic_dim, a.subnet_width, &mut rng);
        let inference = InferenceNetwork::xavier(config.fused_dim(), a.trunk_width, config.task, &mut rng);
        Ok(TfnModel {
            config,
            language,
            visual,
            acoustic,
            inference,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.arch.validate()?;
        let a = &config.arch;
        Ok(TfnModel {
            language: LanguageSubnetwork::zeros(config.word_dim, a.projection_dim, a.lstm_hidden, a.language_dim, a.t_max),
            visual: ModalitySubnetwork::zeros(config.visual_dim, a.subnet_width),
            acoustic: ModalitySubnetwork::zeros(config.acoustic_dim, a.subnet_width),
            inference: InferenceNetwork::zeros(config.fused_dim(), a.trunk_width, config.task),
            config,
        })
    }

    /// Parameter names in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "language.lstm.input_projection".to_string(),
            "language.lstm.gate_weights".into(),
            "language.lstm.gate_bias".into(),
            "language.fc.weight".into(),
            "language.fc.bias".into(),
        ];
        for net in ["visual", "acoustic"] {
            for i in 0..self.visual.layers.len() {
                names.push(format!("{net}.{i}.weight"));
                names.push(format!("{net}.{i}.bias"));
            }
        }
        for i in 0..self.inference.trunk.len() {
            names.push(format!("inference.trunk.{i}.weight"));
            names.push(format!("inference.trunk.{i}.bias"));
        }
        names.push("inference.head.weight".into());
        names.push("inference.head.bias".into());
        names
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = vec![
            &self.language.lstm.input_projection,
            &self.language.lstm.gate_weights,
            &self.language.lstm.gate_bias,
            &self.language.fc.weight,
            &self.language.fc.bias,
        ];
        for l in self.visual.layers.iter().chain(&self.acoustic.layers).chain(&self.inference.trunk) {
            t.push(&l.weight);
            t.push(&l.bias);
        }
        t.push(&self.inference.head.layer.weight);
        t.push(&self.inference.head.layer.bias);
        t
    }

    /// Mutable parameters in storage order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = vec![
            &mut self.language.lstm.input_projection,
            &mut self.language.lstm.gate_weights,
            &mut self.language.lstm.gate_bias,
            &mut self.language.fc.weight,
            &mut self.language.fc.bias,
        ];
        for l in self
            .visual
            .layers
            .iter_mut()
            .chain(self.acoustic.layers.iter_mut())
            .chain(self.inference.trunk.iter_mut())
        {
            t.push(&mut l.weight);
            t.push(&mut l.bias);
        }
        t.push(&mut self.inference.head.layer.weight);
        t.push(&mut self.inference.head.layer.bias);
        t
    }

    /// Calls `f` with every parameter in storage order.
    pub fn for_each_param(&self, mut f: impl FnMut(ParamRef<'_>)) {
        let names = self.param_names();
        for (name, tensor) in names.iter().zip(self.tensors()) {
            let regularized = !name.starts_with("language.") && name.ends_with(".weight");
            f(ParamRef {
                name,
                tensor,
                regularized,
            });
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Fails with a message naming both sides if `header` does not fit the model.
    pub fn check_dataset(&self, header: &DatasetHeader) -> Result<()> {
        let c = &self.config;
        let want = (c.word_dim, c.visual_dim, c.acoustic_dim);
        let got = (header.word_dim, header.p, header.q);
        if want != got {
            return Err(TfnError::ModelDataMismatch {
                model: format!(
                    "variant {} with word/visual/acoustic dims {}/{}/{}",
                    c.variant, want.0, want.1, want.2
                ),
                data: format!("word/visual/acoustic dims {}/{}/{}", got.0, got.1, got.2),
            });
        }
        Ok(())
    }

    pub fn prepare(&self, u: &Utterance) -> Result<PreparedUtterance> {
        let words: Vec<Arc<[f64]>> = u
            .words
            .iter()
            .take(self.config.arch.t_max)
            .map(|w| Arc::clone(&w.vector))
            .collect();
        if words.is_empty() {
            return Err(TfnError::Empty(format!("utterance `{}` has no words", u.id)));
        }
        Ok(PreparedUtterance {
            words,
            visual: mean_pool(&u.visual_frames)?.into_data(),
            acoustic: mean_pool(&u.acoustic_frames)?.into_data(),
            label: u.label,
        })
    }

    pub fn prepare_all(&self, utterances: &[Utterance]) -> Result<Vec<PreparedUtterance>> {
        utterances.iter().map(|u| self.prepare(u)).collect()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundModel {
        let language = self.language.bind(tape);
        let visual = self.visual.bind(tape);
        let acoustic = self.acoustic.bind(tape);
        let inference = self.inference.bind(tape);
        let mut params = vec![
            language.lstm.input_projection,
            language.lstm.gate_weights,
            language.lstm.gate_bias,
            language.fc.weight,
            language.fc.bias,
        ];
        for l in visual.layers.iter().chain(&acoustic.layers).chain(&inference.trunk) {
            params.push(l.weight);
            params.push(l.bias);
        }
        params.push(inference.head.weight);
        params.push(inference.head.bias);
        let mut regularized = Vec::new();
        self.for_each_param(|p| regularized.push(p.regularized));
        let regularized = params
            .iter()
            .zip(regularized)
            .filter_map(|(&id, r)| r.then_some(id))
            .collect();
        BoundModel {
            language,
            visual,
            acoustic,
            inference,
            params,
            regularized,
        }
    }

    /// Embeddings `[B, d]` for a batch; `None` for modalities the variant skips.
    pub fn embed_batch(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundModel,
        batch: &[&PreparedUtterance],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<[Option<NodeId>; 3]> {
        let variant = self.config.variant;
        let zl = if variant.uses_language() {
            let seqs: Vec<&[Arc<[f64]>]> = batch.iter().map(|p| p.words.as_slice()).collect();
            let words = self.language.word_batch(&seqs)?;
            Some(bound.language.forward(tape, &words)?)
        } else {
            None
        };
        let mut pooled = |pick: fn(&PreparedUtterance) -> &Vec<f64>,
                          net: &BoundModality,
                          tape: &mut Tape<'_>|
         -> Result<NodeId> {
            let rows: Vec<Vec<f64>> = batch.iter().map(|p| pick(p).clone()).collect();
            let x = tape.constant(Tensor::from_rows(&rows)?);
            net.forward(tape, x, dropout.as_deref_mut())
        };
        let zv = if variant.uses_visual() {
            Some(pooled(|p| &p.visual, &bound.visual, tape)?)
        } else {
            None
        };
        let za = if variant.uses_acoustic() {
            Some(pooled(|p| &p.acoustic, &bound.acoustic, tape)?)
        } else {
            None
        };
        Ok([zl, zv, za])
    }

    /// Head output node for a batch (see [`BoundInference::forward`]).
    pub fn forward_batch(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundModel,
        batch: &[&PreparedUtterance],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<NodeId> {
        let [zl, zv, za] = self.embed_batch(tape, bound, batch, dropout.as_deref_mut())?;
        let fused = fuse_on_tape(tape, self.config.variant, zl, zv, za)?;
        bound.inference.forward(tape, fused, dropout)
    }

    /// All three embeddings of one utterance, regardless of variant.
    pub fn embed_utterance(&self, u: &Utterance) -> Result<ModalityEmbeddings> {
        let p = self.prepare(u)?;
        Ok(ModalityEmbeddings {
            z_l: self.language.embed(&p.words)?,
            z_v: self.visual.embed(&p.visual)?,
            z_a: self.acoustic.embed(&p.acoustic)?,
        })
    }

    pub fn predict(&self, u: &Utterance) -> Result<Prediction> {
        let p = self.prepare(u)?;
        Ok(self.predict_prepared(std::slice::from_ref(&p), 1)?.remove(0))
    }

    /// Evaluation-mode predictions in input order.
    pub fn predict_prepared(&self, items: &[PreparedUtterance], batch_size: usize) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(batch_size.max(1)) {
            let refs: Vec<&PreparedUtterance> = chunk.iter().collect();
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let y = self.forward_batch(&mut tape, &bound, &refs, None)?;
            out.extend(predictions(self.config.task, tape.value(y)));
        }
        Ok(out)
    }
}

/// Node handles for a model bound to one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub language: BoundLanguage,
    pub visual: BoundModality,
    pub acoustic: BoundModality,
    pub inference: BoundInference,
    /// Every parameter, in storage order.
    pub params: Vec<NodeId>,
    /// The parameters the L2 penalty applies to.
    pub regularized: Vec<NodeId>,
}
